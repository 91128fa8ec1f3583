#pragma once

// Corpus ingestion (JSONL records), vocabulary management, deterministic
// labeled splits, and a synthetic generator with known ground truth.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwl/common.hpp"
#include "dwl/ot.hpp"

namespace dwl {

enum class TokenKind { generic, disease, procedure };

inline const char* token_kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::disease: return "disease";
    case TokenKind::procedure: return "procedure";
    default: return "generic";
  }
}

struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<TokenKind> kinds;
  std::unordered_map<std::string, Eigen::Index> index;

  Eigen::Index size() const { return static_cast<Eigen::Index>(tokens.size()); }

  Eigen::Index find(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? -1 : it->second;
  }

  static Vocabulary from_tokens(std::vector<std::string> toks,
                                std::vector<TokenKind> kinds = {}) {
    Vocabulary v;
    v.tokens = std::move(toks);
    v.kinds = kinds.empty() ? std::vector<TokenKind>(v.tokens.size(), TokenKind::generic)
                            : std::move(kinds);
    if (v.kinds.size() != v.tokens.size())
      throw ShapeError("Vocabulary: kinds/tokens length mismatch");
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
      if (!v.index.emplace(v.tokens[i], static_cast<Eigen::Index>(i)).second)
        throw DataError("Vocabulary: duplicate token " + v.tokens[i]);
    }
    return v;
  }
};

struct Splits {
  std::vector<Eigen::Index> train, validation, test;
  bool empty() const { return train.empty() && validation.empty() && test.empty(); }
};

struct Corpus {
  Vocabulary vocab;
  Mat counts;  // N x M raw token counts
  Mat Y;       // N x M, columns are word distributions
  std::vector<std::string> ids;
  std::map<std::string, std::vector<int>> labels;                 // name -> class id per doc
  std::map<std::string, std::vector<std::string>> label_classes;  // name -> class names
  Splits splits;
  std::vector<std::string> rejections;  // human-readable rejection report

  Eigen::Index num_words() const { return Y.rows(); }
  Eigen::Index num_docs() const { return Y.cols(); }
};

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file: " + path);
  std::vector<std::string> toks;
  std::vector<TokenKind> kinds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    std::string tok = line.substr(0, tab);
    TokenKind kind = TokenKind::generic;
    if (tab != std::string::npos) {
      std::string k = line.substr(tab + 1);
      if (k == "disease") kind = TokenKind::disease;
      else if (k == "procedure") kind = TokenKind::procedure;
      else throw DataError("vocabulary: unknown kind '" + k + "' for token " + tok);
    }
    toks.push_back(std::move(tok));
    kinds.push_back(kind);
  }
  return Vocabulary::from_tokens(std::move(toks), std::move(kinds));
}

// Records file: one JSON object per line with "id", "tokens" and optional
// "labels". Vocabulary is inferred (lexicographic) when not supplied.
inline Corpus load_corpus(const std::string& records_path,
                          const std::string& vocab_path = "") {
  std::ifstream in(records_path);
  if (!in) throw DataError("cannot open records file: " + records_path);

  struct RawDoc {
    std::string id;
    std::vector<std::string> tokens;
    std::map<std::string, std::string> labels;
  };
  std::vector<RawDoc> raw;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("records line " + std::to_string(lineno) + ": " + e.what());
    }
    RawDoc d;
    d.id = j.at("id").get<std::string>();
    if (!seen_ids.insert(d.id).second)
      throw DataError("duplicate record id: " + d.id);
    for (const auto& t : j.at("tokens")) d.tokens.push_back(t.get<std::string>());
    if (j.contains("labels")) {
      for (auto it = j["labels"].begin(); it != j["labels"].end(); ++it) {
        if (it.value().is_string())
          d.labels[it.key()] = it.value().get<std::string>();
        else
          d.labels[it.key()] = it.value().dump();
      }
    }
    raw.push_back(std::move(d));
  }
  if (raw.empty()) throw DataError("empty corpus: " + records_path);

  Corpus corpus;
  const bool fixed_vocab = !vocab_path.empty();
  if (fixed_vocab) {
    corpus.vocab = load_vocabulary(vocab_path);
  } else {
    std::set<std::string> uniq;
    for (const auto& d : raw)
      for (const auto& t : d.tokens) uniq.insert(t);
    corpus.vocab = Vocabulary::from_tokens({uniq.begin(), uniq.end()});
  }

  const Eigen::Index n = corpus.vocab.size();
  std::vector<Vec> cols;
  std::vector<const RawDoc*> kept;
  for (const auto& d : raw) {
    Vec c = Vec::Zero(n);
    bool reject = false;
    for (const auto& t : d.tokens) {
      Eigen::Index idx = corpus.vocab.find(t);
      if (idx < 0) {
        corpus.rejections.push_back("record " + d.id + ": unknown token '" + t + "'");
        reject = true;
      } else {
        c(idx) += 1.0;
      }
    }
    if (reject) continue;
    if (c.sum() == 0.0) {
      corpus.rejections.push_back("record " + d.id + ": empty document, skipped");
      continue;
    }
    cols.push_back(std::move(c));
    kept.push_back(&d);
  }
  if (kept.empty()) throw DataError("empty corpus after rejection: " + records_path);

  const Eigen::Index m = static_cast<Eigen::Index>(kept.size());
  corpus.counts = Mat::Zero(n, m);
  corpus.Y = Mat::Zero(n, m);
  for (Eigen::Index c = 0; c < m; ++c) {
    corpus.counts.col(c) = cols[static_cast<std::size_t>(c)];
    corpus.Y.col(c) = cols[static_cast<std::size_t>(c)] / cols[static_cast<std::size_t>(c)].sum();
    corpus.ids.push_back(kept[static_cast<std::size_t>(c)]->id);
  }

  // Label classes: sorted unique raw values per label name. Documents
  // missing a label get class id -1.
  std::set<std::string> label_names;
  for (const auto* d : kept)
    for (const auto& [name, _] : d->labels) label_names.insert(name);
  for (const auto& name : label_names) {
    std::set<std::string> values;
    for (const auto* d : kept) {
      auto it = d->labels.find(name);
      if (it != d->labels.end()) values.insert(it->second);
    }
    std::vector<std::string> classes(values.begin(), values.end());
    std::vector<int> ids;
    for (const auto* d : kept) {
      auto it = d->labels.find(name);
      if (it == d->labels.end()) {
        ids.push_back(-1);
      } else {
        auto pos = std::lower_bound(classes.begin(), classes.end(), it->second);
        ids.push_back(static_cast<int>(pos - classes.begin()));
      }
    }
    corpus.label_classes[name] = std::move(classes);
    corpus.labels[name] = std::move(ids);
  }
  return corpus;
}

// Deterministic JSONL serialization; save followed by load reproduces the
// corpus exactly.
inline void save_corpus(const Corpus& corpus, const std::string& records_path,
                        const std::string& vocab_path = "") {
  std::ofstream out(records_path);
  if (!out) throw DataError("cannot write records file: " + records_path);
  for (Eigen::Index m = 0; m < corpus.num_docs(); ++m) {
    nlohmann::ordered_json j;
    j["id"] = corpus.ids[static_cast<std::size_t>(m)];
    std::vector<std::string> toks;
    for (Eigen::Index n = 0; n < corpus.num_words(); ++n) {
      long c = static_cast<long>(corpus.counts(n, m));
      for (long r = 0; r < c; ++r) toks.push_back(corpus.vocab.tokens[static_cast<std::size_t>(n)]);
    }
    j["tokens"] = toks;
    nlohmann::ordered_json labels = nlohmann::ordered_json::object();
    for (const auto& [name, ids] : corpus.labels) {
      int id = ids[static_cast<std::size_t>(m)];
      if (id >= 0) labels[name] = corpus.label_classes.at(name)[static_cast<std::size_t>(id)];
    }
    j["labels"] = labels;
    out << j.dump() << "\n";
  }
  if (!vocab_path.empty()) {
    std::ofstream vout(vocab_path);
    if (!vout) throw DataError("cannot write vocabulary file: " + vocab_path);
    for (std::size_t i = 0; i < corpus.vocab.tokens.size(); ++i) {
      vout << corpus.vocab.tokens[i];
      if (corpus.vocab.kinds[i] != TokenKind::generic)
        vout << "\t" << token_kind_name(corpus.vocab.kinds[i]);
      vout << "\n";
    }
  }
}

namespace detail {

// Cut a shuffled index list at cumulative-rounded boundaries; every split
// size is within one document of the exact ratio.
inline void cut_by_ratios(const std::vector<Eigen::Index>& order, double r1, double r2,
                          Splits* splits) {
  const double m = static_cast<double>(order.size());
  std::size_t b1 = static_cast<std::size_t>(std::llround(r1 * m));
  std::size_t b2 = static_cast<std::size_t>(std::llround((r1 + r2) * m));
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < b1) splits->train.push_back(order[i]);
    else if (i < b2) splits->validation.push_back(order[i]);
    else splits->test.push_back(order[i]);
  }
}

}  // namespace detail

inline Corpus split_corpus(Corpus corpus, double train_ratio, double val_ratio,
                           double test_ratio, std::uint64_t seed,
                           const std::string& stratify_label = "") {
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw ParameterError("split_corpus: ratios must sum to 1");
  std::mt19937_64 rng(seed);
  Splits splits;
  if (stratify_label.empty()) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(corpus.num_docs()));
    for (Eigen::Index i = 0; i < corpus.num_docs(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    detail::cut_by_ratios(order, train_ratio, val_ratio, &splits);
  } else {
    auto it = corpus.labels.find(stratify_label);
    if (it == corpus.labels.end())
      throw ParameterError("split_corpus: unknown stratification label " + stratify_label);
    std::map<int, std::vector<Eigen::Index>> by_class;
    for (Eigen::Index i = 0; i < corpus.num_docs(); ++i)
      by_class[it->second[static_cast<std::size_t>(i)]].push_back(i);
    for (auto& [cls, order] : by_class) {
      std::shuffle(order.begin(), order.end(), rng);
      detail::cut_by_ratios(order, train_ratio, val_ratio, &splits);
    }
    std::sort(splits.train.begin(), splits.train.end());
    std::sort(splits.validation.begin(), splits.validation.end());
    std::sort(splits.test.begin(), splits.test.end());
  }
  corpus.splits = std::move(splits);
  return corpus;
}

struct SyntheticGroundTruth {
  Mat true_topics;   // N x K
  Mat true_weights;  // K x M
  std::vector<int> true_cluster;
  std::uint64_t generator_seed = 0;
};

// K planted topics with disjoint dominant support blocks; documents are
// multinomial draws from B * lambda_m with Dirichlet(concentration) weights.
// Roughly the first 70% of the vocabulary is tagged disease, the rest
// procedure, so the recommendation path is exercisable on synthetic data.
inline std::pair<Corpus, SyntheticGroundTruth> generate_synthetic(
    Eigen::Index n, Eigen::Index k, Eigen::Index m, long doc_length,
    double concentration, std::uint64_t seed) {
  if (n < k || k < 2) throw ParameterError("generate_synthetic: need N >= K >= 2");
  if (doc_length < 1) throw ParameterError("generate_synthetic: doc_length must be positive");
  std::mt19937_64 rng(seed);

  const Eigen::Index n_disease = (7 * n + 9) / 10;
  std::vector<std::string> toks;
  std::vector<TokenKind> kinds;
  char buf[32];
  for (Eigen::Index i = 0; i < n; ++i) {
    bool dis = i < n_disease;
    std::snprintf(buf, sizeof(buf), "%c_%04d", dis ? 'd' : 'p', static_cast<int>(i));
    toks.emplace_back(buf);
    kinds.push_back(dis ? TokenKind::disease : TokenKind::procedure);
  }

  SyntheticGroundTruth truth;
  truth.generator_seed = seed;
  truth.true_topics = Mat::Zero(n, k);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  for (Eigen::Index t = 0; t < k; ++t) {
    Eigen::Index lo = t * n / k, hi = (t + 1) * n / k;
    Vec in_block = Vec::Zero(n), out_block = Vec::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double draw = unif(rng);
      if (i >= lo && i < hi) in_block(i) = draw;
      else out_block(i) = draw;
    }
    truth.true_topics.col(t) =
        0.95 * in_block / in_block.sum() + 0.05 * out_block / out_block.sum();
  }

  truth.true_weights = Mat::Zero(k, m);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::uniform_int_distribution<Eigen::Index> pick(0, k - 1);
  for (Eigen::Index d = 0; d < m; ++d) {
    Vec w(k);
    for (Eigen::Index t = 0; t < k; ++t) w(t) = gamma(rng);
    if (w.sum() <= 0.0) w(pick(rng)) = 1.0;  // degenerate gamma draws at tiny concentration
    truth.true_weights.col(d) = w / w.sum();
    Eigen::Index arg;
    truth.true_weights.col(d).maxCoeff(&arg);
    truth.true_cluster.push_back(static_cast<int>(arg));
  }

  Corpus corpus;
  corpus.vocab = Vocabulary::from_tokens(toks, kinds);
  corpus.counts = Mat::Zero(n, m);
  corpus.Y = Mat::Zero(n, m);
  for (Eigen::Index d = 0; d < m; ++d) {
    Vec mix = truth.true_topics * truth.true_weights.col(d);
    std::discrete_distribution<Eigen::Index> draw(mix.data(), mix.data() + n);
    for (long t = 0; t < doc_length; ++t) corpus.counts(draw(rng), d) += 1.0;
    corpus.Y.col(d) = corpus.counts.col(d) / corpus.counts.col(d).sum();
    std::snprintf(buf, sizeof(buf), "doc_%06d", static_cast<int>(d));
    corpus.ids.emplace_back(buf);
  }

  std::vector<std::string> classes;
  for (Eigen::Index t = 0; t < k; ++t) {
    std::snprintf(buf, sizeof(buf), "c%02d", static_cast<int>(t));
    classes.emplace_back(buf);
  }
  corpus.labels["true_cluster"] = truth.true_cluster;
  corpus.label_classes["true_cluster"] = classes;
  return {std::move(corpus), std::move(truth)};
}

// Pretrained-embedding import: one row per word, `<token> <v1> ... <vD>`.
// Tokens must biject with the corpus vocabulary.
inline Mat load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file: " + path);
  Mat theta;
  std::vector<bool> seen(static_cast<std::size_t>(vocab.size()), false);
  std::string line;
  Eigen::Index dim = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    Eigen::Index idx = vocab.find(tok);
    if (idx < 0) throw DataError("embedding file: token '" + tok + "' not in vocabulary");
    if (dim < 0) {
      dim = static_cast<Eigen::Index>(vals.size());
      if (dim == 0) throw DataError("embedding file: no values for token " + tok);
      theta = Mat::Zero(dim, vocab.size());
    }
    if (static_cast<Eigen::Index>(vals.size()) != dim)
      throw DataError("embedding file: inconsistent dimension at token " + tok);
    if (seen[static_cast<std::size_t>(idx)])
      throw DataError("embedding file: duplicate token " + tok);
    seen[static_cast<std::size_t>(idx)] = true;
    for (Eigen::Index d = 0; d < dim; ++d) theta(d, idx) = vals[static_cast<std::size_t>(d)];
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw DataError("embedding file: missing token " + vocab.tokens[i]);
  return theta;
}

}  // namespace dwl
