#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "dwl/corpus.hpp"
#include "test_util.hpp"

using namespace dwl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dwl_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("load_corpus basics") {
  TempDir dir;
  write_file(dir.file("r.jsonl"),
             R"({"id":"m1","tokens":["a","a","b"],"labels":{"mortality":"1"}})"
             "\n"
             R"({"id":"m2","tokens":["c"],"labels":{"mortality":"0"}})"
             "\n");
  Corpus c = load_corpus(dir.file("r.jsonl"));
  CHECK(c.num_words() == 3);
  CHECK(c.num_docs() == 2);
  CHECK(c.vocab.tokens == std::vector<std::string>{"a", "b", "c"});
  CHECK(c.Y(0, 0) == doctest::Approx(2.0 / 3));
  CHECK(c.Y(1, 0) == doctest::Approx(1.0 / 3));
  CHECK(c.Y(2, 0) == 0.0);
  CHECK(c.labels.at("mortality") == std::vector<int>{1, 0});
  CHECK(c.label_classes.at("mortality") == std::vector<std::string>{"0", "1"});
}

TEST_CASE("load_corpus error paths") {
  TempDir dir;
  write_file(dir.file("dup.jsonl"),
             R"({"id":"x","tokens":["a"]})"
             "\n"
             R"({"id":"x","tokens":["b"]})"
             "\n");
  CHECK_THROWS_WITH_AS(load_corpus(dir.file("dup.jsonl")), doctest::Contains("x"), DataError);

  write_file(dir.file("empty.jsonl"), "");
  CHECK_THROWS_AS(load_corpus(dir.file("empty.jsonl")), DataError);

  CHECK_THROWS_AS(load_corpus(dir.file("missing.jsonl")), DataError);

  // unknown token under a fixed vocabulary lands in the rejection report
  write_file(dir.file("v.txt"), "a\nb\n");
  write_file(dir.file("u.jsonl"),
             R"({"id":"ok","tokens":["a","b"]})"
             "\n"
             R"({"id":"bad","tokens":["zzz"]})"
             "\n");
  Corpus c = load_corpus(dir.file("u.jsonl"), dir.file("v.txt"));
  CHECK(c.num_docs() == 1);
  REQUIRE(c.rejections.size() == 1);
  CHECK(c.rejections[0].find("zzz") != std::string::npos);
}

TEST_CASE("vocabulary kinds parse") {
  TempDir dir;
  write_file(dir.file("v.txt"), "d_1\tdisease\np_1\tprocedure\nw\n");
  Vocabulary v = load_vocabulary(dir.file("v.txt"));
  CHECK(v.kinds[0] == TokenKind::disease);
  CHECK(v.kinds[1] == TokenKind::procedure);
  CHECK(v.kinds[2] == TokenKind::generic);
  write_file(dir.file("bad.txt"), "t\tweird\n");
  CHECK_THROWS_AS(load_vocabulary(dir.file("bad.txt")), DataError);
}

TEST_CASE("save then load round-trips the corpus") {
  auto [corpus, truth] = generate_synthetic(8, 2, 12, 30, 0.5, 99);
  TempDir dir;
  save_corpus(corpus, dir.file("c.jsonl"), dir.file("v.txt"));
  Corpus again = load_corpus(dir.file("c.jsonl"), dir.file("v.txt"));
  CHECK(again.num_docs() == corpus.num_docs());
  CHECK(again.vocab.tokens == corpus.vocab.tokens);
  CHECK((again.counts - corpus.counts).cwiseAbs().maxCoeff() == 0.0);
  CHECK((again.Y - corpus.Y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(again.ids == corpus.ids);
  CHECK(again.labels == corpus.labels);

  // a second save emits byte-identical files
  save_corpus(again, dir.file("c2.jsonl"), dir.file("v2.txt"));
  CHECK(read_file(dir.file("c.jsonl")) == read_file(dir.file("c2.jsonl")));
  CHECK(read_file(dir.file("v.txt")) == read_file(dir.file("v2.txt")));
}

TEST_CASE("split_corpus sizes and determinism") {
  auto [corpus, truth] = generate_synthetic(6, 2, 8, 20, 0.5, 1);
  Corpus s1 = split_corpus(corpus, 0.5, 0.25, 0.25, 42);
  CHECK(s1.splits.train.size() == 4);
  CHECK(s1.splits.validation.size() == 2);
  CHECK(s1.splits.test.size() == 2);

  Corpus s2 = split_corpus(corpus, 0.5, 0.25, 0.25, 42);
  CHECK(s1.splits.train == s2.splits.train);
  CHECK(s1.splits.test == s2.splits.test);

  Corpus s3 = split_corpus(corpus, 0.5, 0.25, 0.25, 43);
  CHECK(s3.splits.train.size() == 4);
  CHECK(s1.splits.train != s3.splits.train);

  CHECK_THROWS_AS(split_corpus(corpus, 0.5, 0.2, 0.2, 1), ParameterError);

  // all documents covered exactly once
  std::vector<Eigen::Index> all;
  for (auto v : {s1.splits.train, s1.splits.validation, s1.splits.test})
    all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end());
  for (Eigen::Index i = 0; i < 8; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("stratified split keeps class proportions within one document") {
  auto [corpus, truth] = generate_synthetic(10, 2, 40, 20, 0.05, 3);
  Corpus s = split_corpus(corpus, 0.5, 0.25, 0.25, 7, "true_cluster");
  const auto& labels = corpus.labels.at("true_cluster");
  for (int cls = 0; cls < 2; ++cls) {
    int total = 0;
    for (int l : labels) total += (l == cls);
    int in_train = 0;
    for (Eigen::Index i : s.splits.train) in_train += (labels[static_cast<std::size_t>(i)] == cls);
    CHECK(std::abs(in_train - 0.5 * total) <= 1.0);
  }
}

TEST_CASE("generate_synthetic determinism and structure") {
  auto [c1, t1] = generate_synthetic(10, 2, 20, 50, 0.1, 77);
  auto [c2, t2] = generate_synthetic(10, 2, 20, 50, 0.1, 77);
  CHECK((c1.counts - c2.counts).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t1.true_cluster == t2.true_cluster);

  auto [c3, t3] = generate_synthetic(10, 2, 20, 50, 0.1, 78);
  CHECK((c1.counts - c3.counts).cwiseAbs().maxCoeff() > 0.0);

  for (Eigen::Index k = 0; k < 2; ++k) CHECK(is_distribution(t1.true_topics.col(k)));
  for (Eigen::Index m = 0; m < 20; ++m) {
    CHECK(is_distribution(t1.true_weights.col(m)));
    Eigen::Index arg;
    t1.true_weights.col(m).maxCoeff(&arg);
    CHECK(t1.true_cluster[static_cast<std::size_t>(m)] == static_cast<int>(arg));
  }
  CHECK_THROWS_AS(generate_synthetic(3, 4, 5, 10, 0.1, 1), ParameterError);
}

TEST_CASE("synthetic near-zero concentration yields near one-hot weights") {
  auto [corpus, truth] = generate_synthetic(10, 2, 50, 20, 1e-4, 5);
  int sharp = 0;
  for (Eigen::Index m = 0; m < 50; ++m)
    if (truth.true_weights.col(m).maxCoeff() > 0.999) ++sharp;
  CHECK(sharp >= 45);
}

TEST_CASE("synthetic cluster means approach the planted topics") {
  // law of large numbers at long documents and sharp weights
  auto [corpus, truth] = generate_synthetic(10, 2, 100, 10000, 0.02, 11);
  for (int cls = 0; cls < 2; ++cls) {
    Vec mean = Vec::Zero(10);
    int count = 0;
    for (Eigen::Index m = 0; m < 100; ++m)
      if (truth.true_cluster[static_cast<std::size_t>(m)] == cls) {
        mean += corpus.Y.col(m);
        ++count;
      }
    REQUIRE(count > 0);
    mean /= count;
    CHECK(dwltest::total_variation(mean, truth.true_topics.col(cls)) <= 0.05);
  }
}

TEST_CASE("pretrained embedding import") {
  TempDir dir;
  Vocabulary v = Vocabulary::from_tokens({"a", "b"});
  write_file(dir.file("e.txt"), "b 1.0 2.0\na 3.0 4.0\n");
  Mat theta = load_pretrained_embeddings(dir.file("e.txt"), v);
  CHECK(theta(0, 0) == 3.0);
  CHECK(theta(1, 1) == 2.0);

  write_file(dir.file("miss.txt"), "a 1.0 2.0\n");
  CHECK_THROWS_AS(load_pretrained_embeddings(dir.file("miss.txt"), v), DataError);
  write_file(dir.file("extra.txt"), "a 1.0\nb 2.0\nq 3.0\n");
  CHECK_THROWS_AS(load_pretrained_embeddings(dir.file("extra.txt"), v), DataError);
  write_file(dir.file("dim.txt"), "a 1.0 2.0\nb 2.0\n");
  CHECK_THROWS_AS(load_pretrained_embeddings(dir.file("dim.txt"), v), DataError);
}
