#pragma once

// Batched alternating training: distilled Sinkhorn gradients for the topic
// logits, transport-aggregated Laplacian steps for the embeddings,
// checkpointing and telemetry.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwl/common.hpp"
#include "dwl/corpus.hpp"
#include "dwl/embedding.hpp"
#include "dwl/ot.hpp"
#include "dwl/topic_model.hpp"

namespace dwl {

struct TrainConfig {
  int batch_size = 256;
  double beta = 0.01;
  double epsilon = 0.01;
  int topics = 8;
  int embed_dim = 50;
  double learning_rate = 0.05;
  int epochs = 5;
  double tau = 0.5;
  int inner_iters = 50;
  std::uint64_t seed = 0;
  // Standard deviation of the Gaussian initialization of the per-document
  // weight logits. Zero starts every document at uniform weights, so the
  // learned weight features reflect accumulated gradient signal instead of
  // initialization noise; the topic logits always draw from N(0,1) to break
  // the symmetry between topics.
  double init_scale = 0.0;
  std::string supervised;       // label name fixing each document's topic
  std::string init_embeddings;  // optional pretrained embedding file
  int workers = 1;

  void validate() const {
    if (batch_size < 1) throw ParameterError("config: batch_size must be >= 1");
    if (epsilon <= 0.0) throw ParameterError("config: epsilon must be positive");
    if (tau <= 0.0 || tau > 1.0) throw ParameterError("config: tau must lie in (0,1]");
    if (learning_rate <= 0.0) throw ParameterError("config: learning_rate must be positive");
    if (topics < 2) throw ParameterError("config: topics must be >= 2");
    if (embed_dim < 1) throw ParameterError("config: embed_dim must be >= 1");
    if (epochs < 0) throw ParameterError("config: epochs must be >= 0");
    if (inner_iters < 1) throw ParameterError("config: inner_iters must be >= 1");
    if (init_scale < 0.0) throw ParameterError("config: init_scale must be >= 0");
    if (workers < 1) throw ParameterError("config: workers must be >= 1");
  }
};

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["beta"] = c.beta;
  j["epsilon"] = c.epsilon;
  j["topics"] = c.topics;
  j["embed_dim"] = c.embed_dim;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["tau"] = c.tau;
  j["inner_iters"] = c.inner_iters;
  j["seed"] = c.seed;
  j["init_scale"] = c.init_scale;
  j["supervised"] = c.supervised;
  j["init_embeddings"] = c.init_embeddings;
  j["workers"] = c.workers;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta = j.value("beta", c.beta);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.topics = j.value("topics", c.topics);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.tau = j.value("tau", c.tau);
  c.inner_iters = j.value("inner_iters", c.inner_iters);
  c.seed = j.value("seed", c.seed);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.supervised = j.value("supervised", c.supervised);
  c.init_embeddings = j.value("init_embeddings", c.init_embeddings);
  c.workers = j.value("workers", c.workers);
  return c;
}

// Flat key=value config file; keys are exactly the TrainConfig field names.
inline void apply_config_line(TrainConfig* c, const std::string& key,
                              const std::string& value) {
  try {
    if (key == "batch_size") c->batch_size = std::stoi(value);
    else if (key == "beta") c->beta = std::stod(value);
    else if (key == "epsilon") c->epsilon = std::stod(value);
    else if (key == "topics") c->topics = std::stoi(value);
    else if (key == "embed_dim") c->embed_dim = std::stoi(value);
    else if (key == "learning_rate") c->learning_rate = std::stod(value);
    else if (key == "epochs") c->epochs = std::stoi(value);
    else if (key == "tau") c->tau = std::stod(value);
    else if (key == "inner_iters") c->inner_iters = std::stoi(value);
    else if (key == "seed") c->seed = std::stoull(value);
    else if (key == "init_scale") c->init_scale = std::stod(value);
    else if (key == "supervised") c->supervised = value;
    else if (key == "init_embeddings") c->init_embeddings = value;
    else if (key == "workers") c->workers = std::stoi(value);
    else throw ParameterError("config: unknown key '" + key + "'");
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ParameterError*>(&e)) throw;
    throw ParameterError("config: bad value for " + key + ": " + value);
  }
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("config: expected key=value, got " + line);
    apply_config_line(&base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

inline int closest_topic(const Vec& lambda, int supervised_label = -1) {
  if (supervised_label >= 0) return supervised_label;
  int best = 0;
  for (Eigen::Index i = 1; i < lambda.size(); ++i)
    if (lambda(i) > lambda(best)) best = static_cast<int>(i);
  return best;
}

struct Checkpoint {
  Mat theta;
  Mat R;
  Mat A;
  TrainConfig config;
  int epoch = 0;
  std::string rng_state;
  std::vector<std::string> vocab_tokens;
  std::vector<TokenKind> vocab_kinds;
};

inline constexpr const char* kCheckpointFormat = "dwl-ckpt-1";

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["epoch"] = ckpt.epoch;
  j["config"] = config_to_json(ckpt.config);
  auto put = [&](const char* name, const Mat& m) {
    nlohmann::ordered_json e;
    e["rows"] = m.rows();
    e["cols"] = m.cols();
    e["data"] = encode_matrix(m);
    j[name] = e;
  };
  put("theta", ckpt.theta);
  put("R", ckpt.R);
  put("A", ckpt.A);
  j["rng_state"] = ckpt.rng_state;
  j["rng_state_digest"] = fnv1a_hex(ckpt.rng_state);
  std::vector<std::string> kinds;
  for (TokenKind k : ckpt.vocab_kinds) kinds.emplace_back(token_kind_name(k));
  j["vocab"] = {{"tokens", ckpt.vocab_tokens}, {"kinds", kinds}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint " + path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw DataError("checkpoint " + path + ": unsupported format version");
    Checkpoint ckpt;
    ckpt.epoch = j.at("epoch").get<int>();
    ckpt.config = config_from_json(j.at("config"));
    auto get = [&](const char* name) {
      const auto& e = j.at(name);
      return decode_matrix(e.at("data").get<std::string>(), e.at("rows").get<Eigen::Index>(),
                           e.at("cols").get<Eigen::Index>());
    };
    ckpt.theta = get("theta");
    ckpt.R = get("R");
    ckpt.A = get("A");
    ckpt.rng_state = j.at("rng_state").get<std::string>();
    for (const auto& t : j.at("vocab").at("tokens"))
      ckpt.vocab_tokens.push_back(t.get<std::string>());
    for (const auto& k : j.at("vocab").at("kinds")) {
      std::string s = k.get<std::string>();
      ckpt.vocab_kinds.push_back(s == "disease" ? TokenKind::disease
                                 : s == "procedure" ? TokenKind::procedure
                                                    : TokenKind::generic);
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint " + path + ": " + e.what());
  }
}

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double embed_grad_norm = 0.0;  // mean per-batch ||2 theta L||_F
  double wall_seconds = 0.0;
};

using Telemetry = std::vector<EpochStats>;

inline void write_telemetry_csv(const std::string& path, const Telemetry& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write telemetry: " + path);
  out << "epoch,mean_loss,embed_grad_norm,wall_seconds\n";
  char buf[160];
  for (const auto& e : t) {
    std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g\n", e.epoch, e.mean_loss,
                  e.embed_grad_norm, e.wall_seconds);
    out << buf;
  }
}

struct TrainResult {
  EmbeddingModel model;
  TopicLogits logits;
  TopicModelState state;
  Telemetry telemetry;
  bool diverged = false;
  Checkpoint checkpoint;  // final state, or the last good one on divergence
};

namespace detail {

// Static contiguous partition; results land in caller-owned slots, so the
// outcome is identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    std::size_t lo = count * t / w, hi = count * (t + 1) / w;
    pool.emplace_back([lo, hi, t, &fn, &errors] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

}  // namespace detail

inline TrainResult train(const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.num_docs() == 0) throw DataError("train: empty corpus");
  const Eigen::Index n = corpus.num_words();
  const Eigen::Index m = corpus.num_docs();
  const Eigen::Index k = cfg.topics;

  const std::vector<int>* supervised_ids = nullptr;
  if (!cfg.supervised.empty()) {
    auto it = corpus.labels.find(cfg.supervised);
    if (it == corpus.labels.end())
      throw ParameterError("train: unknown supervised label " + cfg.supervised);
    for (int id : it->second)
      if (id < 0 || id >= k)
        throw ParameterError("train: supervised label class outside topic range");
    supervised_ids = &it->second;
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TrainResult res;
  res.model.theta = Mat(cfg.embed_dim, n);
  if (!cfg.init_embeddings.empty()) {
    res.model.theta = load_pretrained_embeddings(cfg.init_embeddings, corpus.vocab);
  } else {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    for (Eigen::Index i = 0; i < res.model.theta.rows(); ++i)
      for (Eigen::Index j = 0; j < res.model.theta.cols(); ++j)
        res.model.theta(i, j) = scale * gauss(rng);
  }
  res.model.theta_current = res.model.theta;
  res.logits.A = Mat(k, m);
  res.logits.R = Mat(n, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < m; ++j) res.logits.A(i, j) = cfg.init_scale * gauss(rng);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) res.logits.R(i, j) = gauss(rng);
  res.state = state_from_logits(res.logits);

  auto make_checkpoint = [&](int epoch) {
    Checkpoint c;
    c.theta = res.model.theta;
    c.R = res.logits.R;
    c.A = res.logits.A;
    c.config = cfg;
    // the worker count is an execution detail with no effect on the result;
    // normalizing it keeps checkpoints byte-identical across worker configs
    c.config.workers = 1;
    c.epoch = epoch;
    c.rng_state = detail::rng_to_string(rng);
    c.vocab_tokens = corpus.vocab.tokens;
    c.vocab_kinds = corpus.vocab.kinds;
    return c;
  };
  res.checkpoint = make_checkpoint(0);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double grad_norm_sum = 0.0;
    int batches = 0;
    bool bad = false;

    for (std::size_t start = 0; start < order.size() && !bad; start += cfg.batch_size) {
      std::vector<Eigen::Index> batch(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(
                              std::min(start + cfg.batch_size, order.size())));
      std::sort(batch.begin(), batch.end());  // fixed reduction order

      Mat cost = cost_matrix(res.model.theta);
      Mat kernel = gibbs_kernel(distill(cost, cfg.tau, nullptr), cfg.epsilon);

      std::vector<SinkhornGradResult> grads(batch.size());
      try {
        detail::parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
          Eigen::Index doc = batch[i];
          int sup = supervised_ids ? (*supervised_ids)[static_cast<std::size_t>(doc)] : -1;
          grads[i] = sinkhorn_grad(corpus.Y.col(doc), res.state.B,
                                   res.state.Lambda.col(doc), kernel, cfg.inner_iters, sup);
        });
      } catch (const NumericalError&) {
        bad = true;
        break;
      }

      Mat grad_basis = Mat::Zero(n, k);
      std::vector<std::pair<Eigen::Index, Vec>> grad_weights;
      grad_weights.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        grad_basis += grads[i].grad_basis;
        grad_weights.emplace_back(batch[i], grads[i].grad_weights);
        loss_sum += grads[i].loss;
      }
      grad_basis /= static_cast<double>(batch.size());
      if (!grad_basis.allFinite() || !std::isfinite(loss_sum)) {
        bad = true;
        break;
      }

      res.logits = apply_logit_updates(res.logits, grad_basis, grad_weights,
                                       cfg.learning_rate);
      res.state = state_from_logits(res.logits);

      // Plans to the closest topics under the refreshed weights, then the
      // Laplacian-driven embedding step.
      std::vector<Mat> plans(batch.size());
      try {
        detail::parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
          Eigen::Index doc = batch[i];
          int sup = supervised_ids ? (*supervised_ids)[static_cast<std::size_t>(doc)] : -1;
          int km = closest_topic(res.state.Lambda.col(doc), sup);
          BarycenterTrace trace;
          barycenter_forward(res.state.B, res.state.Lambda.col(doc), kernel,
                             cfg.inner_iters, &trace);
          plans[i] = recover_plan(res.state.B.col(km), trace.beta.back().col(km), kernel);
        });
      } catch (const NumericalError&) {
        bad = true;
        break;
      }
      // average over the batch so the embedding step size, like the logit
      // step, is independent of the batch size
      Mat lap = laplacian(aggregate_transports(plans, n) /
                          static_cast<double>(batch.size()));

      res.model.theta_current = res.model.theta;
      grad_norm_sum += (2.0 * res.model.theta * lap).norm();
      ++batches;
      try {
        res.model = embedding_gradient_step(res.model, lap, cfg.beta, cfg.learning_rate);
      } catch (const NumericalError&) {
        bad = true;
        break;
      }
    }

    if (bad) {
      res.diverged = true;
      // roll back to the last good checkpoint
      res.model.theta = res.checkpoint.theta;
      res.model.theta_current = res.checkpoint.theta;
      res.logits.R = res.checkpoint.R;
      res.logits.A = res.checkpoint.A;
      res.state = state_from_logits(res.logits);
      return res;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(m);
    stats.embed_grad_norm = batches > 0 ? grad_norm_sum / batches : 0.0;
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.telemetry.push_back(stats);
    res.checkpoint = make_checkpoint(epoch);
  }
  return res;
}

}  // namespace dwl
