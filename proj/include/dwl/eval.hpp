#pragma once

// Evaluation protocol: document features, Wasserstein document distance,
// k-NN classification, top-L procedure recommendation, topic reports and
// k-NN graph export.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwl/common.hpp"
#include "dwl/corpus.hpp"
#include "dwl/ot.hpp"

namespace dwl {

enum class FeatureMode { ave_pool, topic_weight, word_distribution };

inline FeatureMode feature_mode_from_name(const std::string& name) {
  if (name == "ave_pool") return FeatureMode::ave_pool;
  if (name == "topic_weight") return FeatureMode::topic_weight;
  if (name == "word_distribution") return FeatureMode::word_distribution;
  throw ParameterError("unknown feature mode: " + name);
}

// One feature column per document: count-weighted mean embedding, the
// document's topic weights, or its word distribution.
inline Mat doc_features(const Corpus& corpus, const Mat& theta, const Mat& lambda,
                        FeatureMode mode) {
  switch (mode) {
    case FeatureMode::ave_pool:
      if (theta.cols() != corpus.num_words())
        throw ShapeError("doc_features: embedding/vocabulary mismatch");
      return theta * corpus.Y;
    case FeatureMode::topic_weight:
      if (lambda.cols() != corpus.num_docs())
        throw ShapeError("doc_features: weights/corpus mismatch");
      return lambda;
    case FeatureMode::word_distribution:
      return corpus.Y;
  }
  throw ParameterError("doc_features: unknown mode");
}

// Sinkhorn transport cost at the converged plan; the entropic term is
// excluded from the reported value.
inline double wasserstein_doc_distance(const Vec& ya, const Vec& yb, const Mat& cost,
                                       double epsilon, int max_iters = 5000) {
  return sinkhorn_distance(ya, yb, cost, epsilon, max_iters, 1e-6, true).transport_cost;
}

enum class Metric { euclidean, wasserstein };

inline Metric metric_from_name(const std::string& name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "wasserstein") return Metric::wasserstein;
  throw ParameterError("unknown metric: " + name);
}

struct KnnResult {
  std::vector<int> predictions;
  double accuracy = 0.0;
};

// Majority vote among the k nearest training columns. Distance ties break
// toward the lower train index, vote ties toward the smallest class id.
inline KnnResult knn_classify(const Mat& train_features, const std::vector<int>& train_labels,
                              const Mat& test_features, const std::vector<int>& test_labels,
                              Metric metric, int k, const Mat* wass_cost = nullptr,
                              double epsilon = 0.01) {
  const Eigen::Index n_train = train_features.cols();
  const Eigen::Index n_test = test_features.cols();
  if (n_train == 0) throw DataError("knn_classify: empty training set");
  if (static_cast<Eigen::Index>(train_labels.size()) != n_train ||
      static_cast<Eigen::Index>(test_labels.size()) != n_test)
    throw ShapeError("knn_classify: label/feature count mismatch");
  if (k < 1) throw ParameterError("knn_classify: k must be >= 1");
  if (metric == Metric::wasserstein && !wass_cost)
    throw ParameterError("knn_classify: wasserstein metric needs a cost matrix");

  KnnResult out;
  out.predictions.resize(static_cast<std::size_t>(n_test));
  int correct = 0;
  const int kk = static_cast<int>(std::min<Eigen::Index>(k, n_train));
  for (Eigen::Index t = 0; t < n_test; ++t) {
    std::vector<std::pair<double, Eigen::Index>> dists;
    dists.reserve(static_cast<std::size_t>(n_train));
    for (Eigen::Index i = 0; i < n_train; ++i) {
      double d = metric == Metric::euclidean
                     ? (train_features.col(i) - test_features.col(t)).norm()
                     : wasserstein_doc_distance(train_features.col(i),
                                                test_features.col(t), *wass_cost, epsilon);
      dists.emplace_back(d, i);
    }
    std::partial_sort(dists.begin(), dists.begin() + kk, dists.end());
    std::vector<std::pair<int, int>> votes;  // class id -> count
    for (int i = 0; i < kk; ++i) {
      int cls = train_labels[static_cast<std::size_t>(dists[static_cast<std::size_t>(i)].second)];
      auto it = std::find_if(votes.begin(), votes.end(),
                             [cls](const auto& v) { return v.first == cls; });
      if (it == votes.end()) votes.emplace_back(cls, 1);
      else ++it->second;
    }
    int best_cls = votes.front().first, best_count = votes.front().second;
    for (const auto& [cls, count] : votes)
      if (count > best_count || (count == best_count && cls < best_cls)) {
        best_cls = cls;
        best_count = count;
      }
    out.predictions[static_cast<std::size_t>(t)] = best_cls;
    if (best_cls == test_labels[static_cast<std::size_t>(t)]) ++correct;
  }
  out.accuracy = n_test > 0 ? static_cast<double>(correct) / static_cast<double>(n_test) : 0.0;
  return out;
}

// Rank procedures by their mean Euclidean embedding distance to the
// admission's diseases; return the L closest, ties by token order.
inline std::vector<Eigen::Index> recommend_procedures(
    const std::vector<Eigen::Index>& disease_tokens, const Mat& theta,
    const Vocabulary& vocab, int top_l, bool use_min_distance = false) {
  if (disease_tokens.empty())
    throw DataError("recommend_procedures: admission has no disease tokens");
  std::vector<Eigen::Index> procedures;
  for (Eigen::Index i = 0; i < vocab.size(); ++i)
    if (vocab.kinds[static_cast<std::size_t>(i)] == TokenKind::procedure)
      procedures.push_back(i);
  if (procedures.empty()) throw DataError("recommend_procedures: no procedures in vocabulary");
  if (top_l < 1 || static_cast<std::size_t>(top_l) > procedures.size())
    throw ParameterError("recommend_procedures: top_l exceeds procedure count");

  std::vector<std::pair<double, Eigen::Index>> scored;
  scored.reserve(procedures.size());
  for (Eigen::Index p : procedures) {
    double score = use_min_distance ? std::numeric_limits<double>::infinity() : 0.0;
    for (Eigen::Index d : disease_tokens) {
      double dist = (theta.col(p) - theta.col(d)).norm();
      if (use_min_distance) score = std::min(score, dist);
      else score += dist;
    }
    if (!use_min_distance) score /= static_cast<double>(disease_tokens.size());
    scored.emplace_back(score, p);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<Eigen::Index> out;
  for (int i = 0; i < top_l; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
  return out;
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Prf prf_single(const std::vector<Eigen::Index>& recommended,
                      const std::vector<Eigen::Index>& truth) {
  if (recommended.empty() || truth.empty())
    throw ParameterError("prf_single: empty recommendation or truth set");
  std::size_t hits = 0;
  for (Eigen::Index r : recommended)
    if (std::find(truth.begin(), truth.end(), r) != truth.end()) ++hits;
  Prf out;
  out.precision = static_cast<double>(hits) / static_cast<double>(recommended.size());
  out.recall = static_cast<double>(hits) / static_cast<double>(truth.size());
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

// Means over the test admissions.
inline Prf topn_prf(const std::vector<Prf>& results) {
  if (results.empty()) throw DataError("topn_prf: empty result set");
  Prf mean;
  for (const auto& r : results) {
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.f1 += r.f1;
  }
  const double m = static_cast<double>(results.size());
  mean.precision /= m;
  mean.recall /= m;
  mean.f1 /= m;
  return mean;
}

struct TopicEntry {
  std::string token;
  double probability = 0.0;
};

// Top-n tokens per topic, ties by token order.
inline std::vector<std::vector<TopicEntry>> topic_report(const Mat& topics,
                                                         const Vocabulary& vocab,
                                                         int top_n = 3) {
  if (topics.rows() != vocab.size()) throw ShapeError("topic_report: vocabulary mismatch");
  std::vector<std::vector<TopicEntry>> out;
  for (Eigen::Index t = 0; t < topics.cols(); ++t) {
    std::vector<std::pair<double, Eigen::Index>> scored;
    for (Eigen::Index i = 0; i < topics.rows(); ++i) scored.emplace_back(-topics(i, t), i);
    std::sort(scored.begin(), scored.end());
    std::vector<TopicEntry> entries;
    for (int i = 0; i < std::min<int>(top_n, static_cast<int>(scored.size())); ++i)
      entries.push_back({vocab.tokens[static_cast<std::size_t>(scored[static_cast<std::size_t>(i)].second)],
                         -scored[static_cast<std::size_t>(i)].first});
    out.push_back(std::move(entries));
  }
  return out;
}

struct GraphEdge {
  Eigen::Index src = 0;
  Eigen::Index dst = 0;
  double dist = 0.0;
};

// Directed edges from each token to its k nearest tokens (self excluded).
inline std::vector<GraphEdge> knn_graph(const Mat& theta, const Vocabulary& vocab, int k = 4) {
  const Eigen::Index n = theta.cols();
  if (n != vocab.size()) throw ShapeError("knn_graph: embedding/vocabulary mismatch");
  if (k < 1 || k >= n) throw ParameterError("knn_graph: need 1 <= k < N");
  std::vector<GraphEdge> edges;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Eigen::Index>> dists;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dists.emplace_back((theta.col(i) - theta.col(j)).norm(), j);
    }
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    for (int t = 0; t < k; ++t)
      edges.push_back({i, dists[static_cast<std::size_t>(t)].second,
                       dists[static_cast<std::size_t>(t)].first});
  }
  return edges;
}

inline nlohmann::ordered_json knn_graph_json(const std::vector<GraphEdge>& edges,
                                             const Vocabulary& vocab) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < vocab.size(); ++i)
    j["nodes"].push_back({{"id", vocab.tokens[static_cast<std::size_t>(i)]},
                          {"kind", token_kind_name(vocab.kinds[static_cast<std::size_t>(i)])}});
  j["edges"] = nlohmann::ordered_json::array();
  char buf[32];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof(buf), "%.6g", e.dist);
    j["edges"].push_back({{"src", vocab.tokens[static_cast<std::size_t>(e.src)]},
                          {"dst", vocab.tokens[static_cast<std::size_t>(e.dst)]},
                          {"dist", std::stod(buf)}});
  }
  return j;
}

}  // namespace dwl
