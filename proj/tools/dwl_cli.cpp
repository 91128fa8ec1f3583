// Command-line front end: training, evaluation, recommendation, graph
// export and synthetic corpus generation, each producing a run manifest.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dwl/corpus.hpp"
#include "dwl/eval.hpp"
#include "dwl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dwl::DataError("cannot open input for digest: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return dwl::fnv1a_hex(ss.str());
}

// Write-then-rename so readers never observe a partial file.
void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw dwl::DataError("cannot write output file: " + path.string());
    out << content;
  }
  fs::rename(tmp, path);
}

struct ManifestBuilder {
  ordered_json j;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  explicit ManifestBuilder(const std::string& command) {
    j["manifest_version"] = "dwl-run-1";
    j["checkpoint_format"] = dwl::kCheckpointFormat;
    j["command"] = command;
    j["inputs"] = ordered_json::object();
    j["outputs"] = ordered_json::array();
  }
  void input(const std::string& path) { j["inputs"][path] = file_digest(path); }
  void output(const fs::path& path) { j["outputs"].push_back(path.string()); }
  void write(const fs::path& out_dir) {
    j["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    atomic_write(out_dir / "manifest.json", j.dump(2) + "\n");
  }
};

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::logic_error&) {
      throw dwl::ParameterError(std::string(what) + ": bad integer '" + item + "'");
    }
  }
  if (out.empty()) throw dwl::ParameterError(std::string(what) + ": empty list");
  return out;
}

void require_vocab_match(const dwl::Checkpoint& ckpt, const dwl::Corpus& corpus) {
  if (ckpt.vocab_tokens != corpus.vocab.tokens)
    throw dwl::DataError("checkpoint vocabulary does not match the corpus vocabulary");
}

void report_rejections(const dwl::Corpus& corpus) {
  for (const auto& r : corpus.rejections) std::cerr << "note: " << r << "\n";
}

char fmt_buf[64];
std::string num6(double v) {
  std::snprintf(fmt_buf, sizeof(fmt_buf), "%.6g", v);
  return fmt_buf;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string records, vocab, config, out;
  dwl::TrainConfig cfg;
};

int cmd_train(const TrainArgs& a) {
  fs::path out_dir = prepare_out_dir(a.out);
  ManifestBuilder manifest("train");
  manifest.input(a.records);
  if (!a.vocab.empty()) manifest.input(a.vocab);
  if (!a.config.empty()) manifest.input(a.config);
  if (!a.cfg.init_embeddings.empty()) manifest.input(a.cfg.init_embeddings);

  dwl::Corpus corpus = dwl::load_corpus(a.records, a.vocab);
  report_rejections(corpus);
  dwl::TrainResult result = dwl::train(corpus, a.cfg);

  fs::path ckpt_path = out_dir / "checkpoint.json";
  dwl::save_checkpoint(ckpt_path.string(), result.checkpoint);
  manifest.output(ckpt_path);

  fs::path telemetry_path = out_dir / "telemetry.csv";
  dwl::write_telemetry_csv(telemetry_path.string(), result.telemetry);
  manifest.output(telemetry_path);

  manifest.j["config"] = dwl::config_to_json(a.cfg);
  manifest.j["diverged"] = result.diverged;
  manifest.write(out_dir);
  if (result.diverged) {
    std::cerr << "training diverged; checkpoint holds the last stable state\n";
    return kExitDiverged;
  }
  std::cout << "trained " << a.cfg.epochs << " epochs on " << corpus.num_docs()
            << " documents -> " << ckpt_path.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, records, vocab, out, label;
  std::string features = "ave_pool";
  std::string metric = "euclidean";
  std::string knn = "1";
  double train_ratio = 0.7;
  double epsilon = 0.01;
  std::uint64_t seed = 0;
  bool allow_overlap = false;
};

int cmd_eval(const EvalArgs& a) {
  fs::path out_dir = prepare_out_dir(a.out);
  ManifestBuilder manifest("eval");
  manifest.input(a.checkpoint);
  manifest.input(a.records);
  if (!a.vocab.empty()) manifest.input(a.vocab);

  dwl::Checkpoint ckpt = dwl::load_checkpoint(a.checkpoint);
  dwl::Corpus corpus = dwl::load_corpus(a.records, a.vocab);
  report_rejections(corpus);
  require_vocab_match(ckpt, corpus);
  if (a.label.empty()) throw dwl::ParameterError("eval: --label is required");
  auto label_it = corpus.labels.find(a.label);
  if (label_it == corpus.labels.end())
    throw dwl::DataError("eval: label '" + a.label + "' not present in the corpus");
  const std::vector<int>& labels = label_it->second;

  dwl::Metric metric = dwl::metric_from_name(a.metric);
  std::vector<dwl::FeatureMode> modes;
  {
    std::stringstream ss(a.features);
    std::string item;
    while (std::getline(ss, item, ',')) modes.push_back(dwl::feature_mode_from_name(item));
    if (modes.empty()) throw dwl::ParameterError("eval: empty feature list");
  }
  std::vector<int> ks = parse_int_list(a.knn, "eval --knn");

  // train/test document indices
  std::vector<Eigen::Index> train_idx, test_idx;
  if (a.allow_overlap) {
    for (Eigen::Index i = 0; i < corpus.num_docs(); ++i) {
      train_idx.push_back(i);
      test_idx.push_back(i);
    }
  } else {
    if (a.train_ratio <= 0.0 || a.train_ratio >= 1.0)
      throw dwl::ParameterError("eval: --train-ratio must lie strictly inside (0,1)");
    dwl::Corpus split =
        dwl::split_corpus(corpus, a.train_ratio, 0.0, 1.0 - a.train_ratio, a.seed);
    train_idx = split.splits.train;
    test_idx = split.splits.test;
    if (train_idx.empty() || test_idx.empty())
      throw dwl::DataError("eval: split produced an empty train or test set");
  }

  dwl::Mat lambda;
  for (dwl::FeatureMode mode : modes)
    if (mode == dwl::FeatureMode::topic_weight) {
      if (ckpt.A.cols() != corpus.num_docs())
        throw dwl::DataError(
            "eval: topic_weight features need the corpus the checkpoint was trained on");
      dwl::TopicLogits logits{ckpt.R, ckpt.A};
      lambda = dwl::state_from_logits(logits).Lambda;
    }

  dwl::Mat wass_cost = dwl::cost_matrix(ckpt.theta);

  std::string csv = "feature,metric,k,accuracy\n";
  for (dwl::FeatureMode mode : modes) {
    dwl::Mat features = dwl::doc_features(corpus, ckpt.theta, lambda, mode);
    dwl::Mat train_f(features.rows(), static_cast<Eigen::Index>(train_idx.size()));
    dwl::Mat test_f(features.rows(), static_cast<Eigen::Index>(test_idx.size()));
    std::vector<int> train_l, test_l;
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
      train_f.col(static_cast<Eigen::Index>(i)) = features.col(train_idx[i]);
      train_l.push_back(labels[static_cast<std::size_t>(train_idx[i])]);
    }
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
      test_f.col(static_cast<Eigen::Index>(i)) = features.col(test_idx[i]);
      test_l.push_back(labels[static_cast<std::size_t>(test_idx[i])]);
    }
    const char* mode_name = mode == dwl::FeatureMode::ave_pool ? "ave_pool"
                            : mode == dwl::FeatureMode::topic_weight ? "topic_weight"
                                                                     : "word_distribution";
    for (int k : ks) {
      dwl::KnnResult r = dwl::knn_classify(train_f, train_l, test_f, test_l, metric, k,
                                           &wass_cost, a.epsilon);
      csv += std::string(mode_name) + "," + a.metric + "," + std::to_string(k) + "," +
             num6(r.accuracy) + "\n";
      std::cout << mode_name << " " << a.metric << " k=" << k << " accuracy "
                << num6(r.accuracy) << "\n";
    }
  }
  fs::path metrics_path = out_dir / "metrics.csv";
  atomic_write(metrics_path, csv);
  manifest.output(metrics_path);
  manifest.write(out_dir);
  return kExitOk;
}

struct RecommendArgs {
  std::string checkpoint, records, vocab, out;
  std::string top = "1,3,5";
  bool min_distance = false;
};

int cmd_recommend(const RecommendArgs& a) {
  fs::path out_dir = prepare_out_dir(a.out);
  ManifestBuilder manifest("recommend");
  manifest.input(a.checkpoint);
  manifest.input(a.records);
  if (!a.vocab.empty()) manifest.input(a.vocab);

  dwl::Checkpoint ckpt = dwl::load_checkpoint(a.checkpoint);
  dwl::Corpus corpus = dwl::load_corpus(a.records, a.vocab);
  report_rejections(corpus);
  require_vocab_match(ckpt, corpus);
  std::vector<int> tops = parse_int_list(a.top, "recommend --top");

  // admissions usable for recommendation: at least one disease token and at
  // least one ground-truth procedure token
  struct Admission {
    Eigen::Index doc;
    std::vector<Eigen::Index> diseases, procedures;
  };
  std::vector<Admission> admissions;
  for (Eigen::Index m = 0; m < corpus.num_docs(); ++m) {
    Admission adm;
    adm.doc = m;
    for (Eigen::Index n = 0; n < corpus.num_words(); ++n) {
      if (corpus.counts(n, m) <= 0.0) continue;
      if (corpus.vocab.kinds[static_cast<std::size_t>(n)] == dwl::TokenKind::disease)
        adm.diseases.push_back(n);
      else if (corpus.vocab.kinds[static_cast<std::size_t>(n)] == dwl::TokenKind::procedure)
        adm.procedures.push_back(n);
    }
    if (!adm.diseases.empty() && !adm.procedures.empty()) admissions.push_back(adm);
  }
  if (admissions.empty())
    throw dwl::DataError("recommend: no admission has both disease and procedure tokens");

  std::string csv = "top_l,precision,recall,f1\n";
  std::string jsonl;
  int max_top = *std::max_element(tops.begin(), tops.end());
  for (const auto& adm : admissions) {
    auto ranked = dwl::recommend_procedures(adm.diseases, ckpt.theta, corpus.vocab, max_top,
                                            a.min_distance);
    ordered_json rec;
    rec["id"] = corpus.ids[static_cast<std::size_t>(adm.doc)];
    rec["recommended"] = ordered_json::array();
    for (Eigen::Index p : ranked)
      rec["recommended"].push_back(corpus.vocab.tokens[static_cast<std::size_t>(p)]);
    rec["truth"] = ordered_json::array();
    for (Eigen::Index p : adm.procedures)
      rec["truth"].push_back(corpus.vocab.tokens[static_cast<std::size_t>(p)]);
    jsonl += rec.dump() + "\n";
  }
  for (int top : tops) {
    std::vector<dwl::Prf> per_admission;
    for (const auto& adm : admissions) {
      auto ranked = dwl::recommend_procedures(adm.diseases, ckpt.theta, corpus.vocab, top,
                                              a.min_distance);
      per_admission.push_back(dwl::prf_single(ranked, adm.procedures));
    }
    dwl::Prf mean = dwl::topn_prf(per_admission);
    csv += std::to_string(top) + "," + num6(mean.precision) + "," + num6(mean.recall) + "," +
           num6(mean.f1) + "\n";
    std::cout << "top-" << top << " precision " << num6(mean.precision) << " recall "
              << num6(mean.recall) << " f1 " << num6(mean.f1) << "\n";
  }

  fs::path rec_path = out_dir / "recommendations.jsonl";
  atomic_write(rec_path, jsonl);
  manifest.output(rec_path);
  fs::path metrics_path = out_dir / "metrics.csv";
  atomic_write(metrics_path, csv);
  manifest.output(metrics_path);
  manifest.write(out_dir);
  return kExitOk;
}

struct GraphArgs {
  std::string checkpoint, out;
  int k = 4;
};

int cmd_export_graph(const GraphArgs& a) {
  fs::path out_dir = prepare_out_dir(a.out);
  ManifestBuilder manifest("export-graph");
  manifest.input(a.checkpoint);
  dwl::Checkpoint ckpt = dwl::load_checkpoint(a.checkpoint);
  dwl::Vocabulary vocab = dwl::Vocabulary::from_tokens(ckpt.vocab_tokens, ckpt.vocab_kinds);
  auto edges = dwl::knn_graph(ckpt.theta, vocab, a.k);
  fs::path graph_path = out_dir / "graph.json";
  atomic_write(graph_path, dwl::knn_graph_json(edges, vocab).dump(2) + "\n");
  manifest.output(graph_path);
  manifest.write(out_dir);
  std::cout << "wrote " << edges.size() << " edges -> " << graph_path.string() << "\n";
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  int words = 30, topics = 4, docs = 500;
  long doc_length = 100;
  double concentration = 0.1;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  fs::path out_dir = prepare_out_dir(a.out);
  ManifestBuilder manifest("synth");
  auto [corpus, truth] =
      dwl::generate_synthetic(a.words, a.topics, a.docs, a.doc_length, a.concentration, a.seed);
  fs::path records_path = out_dir / "records.jsonl";
  fs::path vocab_path = out_dir / "vocab.txt";
  dwl::save_corpus(corpus, records_path.string(), vocab_path.string());
  manifest.output(records_path);
  manifest.output(vocab_path);

  ordered_json t;
  t["generator_seed"] = truth.generator_seed;
  t["true_topics"] = {{"rows", truth.true_topics.rows()},
                      {"cols", truth.true_topics.cols()},
                      {"data", dwl::encode_matrix(truth.true_topics)}};
  t["true_weights"] = {{"rows", truth.true_weights.rows()},
                       {"cols", truth.true_weights.cols()},
                       {"data", dwl::encode_matrix(truth.true_weights)}};
  t["true_cluster"] = truth.true_cluster;
  fs::path truth_path = out_dir / "truth.json";
  atomic_write(truth_path, t.dump(2) + "\n");
  manifest.output(truth_path);
  manifest.write(out_dir);
  std::cout << "generated " << a.docs << " documents over " << a.words << " tokens -> "
            << records_path.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint word-embedding and Wasserstein topic-model toolkit"};
  app.require_subcommand(1);

  std::string out = ".";
  std::uint64_t seed = 0;
  std::string config_file;
  app.add_option("--out", out, "Output directory for all artifacts");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--config", config_file, "key=value config file");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train embeddings and topic model");
  train->add_option("--records", train_args.records, "JSONL corpus")->required();
  train->add_option("--vocab", train_args.vocab, "Fixed vocabulary file");
  train->add_option("--epochs", train_args.cfg.epochs);
  train->add_option("--batch-size", train_args.cfg.batch_size);
  train->add_option("--topics", train_args.cfg.topics);
  train->add_option("--embed-dim", train_args.cfg.embed_dim);
  train->add_option("--epsilon", train_args.cfg.epsilon);
  train->add_option("--tau", train_args.cfg.tau);
  train->add_option("--learning-rate", train_args.cfg.learning_rate);
  train->add_option("--beta", train_args.cfg.beta);
  train->add_option("--inner-iters", train_args.cfg.inner_iters);
  train->add_option("--init-scale", train_args.cfg.init_scale,
                    "Std-dev of the weight-logit initialization (0 = uniform start)");
  train->add_option("--workers", train_args.cfg.workers);
  train->add_option("--supervised", train_args.cfg.supervised);
  train->add_option("--init-embeddings", train_args.cfg.init_embeddings);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "k-NN document classification");
  eval->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval->add_option("--records", eval_args.records)->required();
  eval->add_option("--vocab", eval_args.vocab);
  eval->add_option("--label", eval_args.label, "Label name to classify");
  eval->add_option("--feature", eval_args.features,
                   "Comma list of ave_pool,topic_weight,word_distribution");
  eval->add_option("--metric", eval_args.metric, "euclidean or wasserstein");
  eval->add_option("--knn", eval_args.knn, "Comma list of k values");
  eval->add_option("--train-ratio", eval_args.train_ratio);
  eval->add_option("--epsilon", eval_args.epsilon, "Entropic scale for wasserstein metric");
  eval->add_flag("--allow-overlap", eval_args.allow_overlap,
                 "Use the full corpus as both train and test");

  RecommendArgs rec_args;
  auto* recommend = app.add_subcommand("recommend", "Procedure recommendation");
  recommend->add_option("--checkpoint", rec_args.checkpoint)->required();
  recommend->add_option("--records", rec_args.records)->required();
  recommend->add_option("--vocab", rec_args.vocab);
  recommend->add_option("--top", rec_args.top, "Comma list of L values");
  recommend->add_flag("--min-distance", rec_args.min_distance,
                      "Rank by closest disease instead of the mean distance");

  GraphArgs graph_args;
  auto* graph = app.add_subcommand("export-graph", "Token k-NN graph JSON");
  graph->add_option("--checkpoint", graph_args.checkpoint)->required();
  graph->add_option("--k", graph_args.k, "Neighbors per token");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--words", synth_args.words);
  synth->add_option("--topics", synth_args.topics);
  synth->add_option("--docs", synth_args.docs);
  synth->add_option("--doc-length", synth_args.doc_length);
  synth->add_option("--concentration", synth_args.concentration);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      // precedence: defaults < config file < explicit flags
      dwl::TrainConfig flags = train_args.cfg;
      dwl::TrainConfig cfg;
      if (!config_file.empty()) cfg = dwl::load_config_file(config_file);
      if (train->count("--epochs")) cfg.epochs = flags.epochs;
      if (train->count("--batch-size")) cfg.batch_size = flags.batch_size;
      if (train->count("--topics")) cfg.topics = flags.topics;
      if (train->count("--embed-dim")) cfg.embed_dim = flags.embed_dim;
      if (train->count("--epsilon")) cfg.epsilon = flags.epsilon;
      if (train->count("--tau")) cfg.tau = flags.tau;
      if (train->count("--learning-rate")) cfg.learning_rate = flags.learning_rate;
      if (train->count("--beta")) cfg.beta = flags.beta;
      if (train->count("--inner-iters")) cfg.inner_iters = flags.inner_iters;
      if (train->count("--init-scale")) cfg.init_scale = flags.init_scale;
      if (train->count("--workers")) cfg.workers = flags.workers;
      if (train->count("--supervised")) cfg.supervised = flags.supervised;
      if (train->count("--init-embeddings")) cfg.init_embeddings = flags.init_embeddings;
      if (app.count("--seed") > 0) cfg.seed = seed;
      cfg.validate();
      train_args.cfg = cfg;
      train_args.config = config_file;
      train_args.out = out;
      return cmd_train(train_args);
    }
    if (*eval) {
      eval_args.out = out;
      eval_args.seed = seed;
      return cmd_eval(eval_args);
    }
    if (*recommend) {
      rec_args.out = out;
      return cmd_recommend(rec_args);
    }
    if (*graph) {
      graph_args.out = out;
      return cmd_export_graph(graph_args);
    }
    if (*synth) {
      synth_args.out = out;
      synth_args.seed = seed;
      return cmd_synth(synth_args);
    }
  } catch (const dwl::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
