#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "regnet/pipeline.hpp"

using namespace regnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("regnet_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::vector<Example> random_examples(int count, int classes, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < count; ++i) {
    Example ex;
    ex.label = static_cast<int>(rng() % static_cast<std::uint32_t>(classes));
    ex.coarse_label = static_cast<int>(rng() % 20u);
    ex.image = Tensor<float>(Shape{1, 3, 32, 32});
    for (auto& v : ex.image.data) v = static_cast<float>(rng() % 256u) / 255.0f;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("loader rejects files whose length is not a record multiple") {
  TempDir dir;
  const std::string path = dir.str() + "/test_batch.bin";
  std::ofstream f(path, std::ios::binary);
  std::vector<char> bytes(3073 + 100, 7);  // one full record plus garbage
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.close();
  CHECK_THROWS_AS(load_cifar_file(path, CifarVariant::c10), IoError);
}

TEST_CASE("loader reports out-of-range labels with an offset") {
  TempDir dir;
  const std::string path = dir.str() + "/bad.bin";
  std::ofstream f(path, std::ios::binary);
  std::vector<char> rec(3073, 0);
  rec[0] = 11;  // label 11 in a 10-class file
  f.write(rec.data(), 3073);
  f.close();
  try {
    load_cifar_file(path, CifarVariant::c10);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("synthetic records round-trip exactly through write + load (c10 and c100)") {
  TempDir dir;
  for (CifarVariant v : {CifarVariant::c10, CifarVariant::c100}) {
    const int classes = v == CifarVariant::c10 ? 10 : 100;
    auto recs = random_examples(7, classes, 91);
    recs[0].label = 0;
    recs[1].label = classes - 1;
    const std::string path = dir.str() + "/roundtrip.bin";
    write_cifar_file(path, recs, v);
    const auto bytes1 = slurp(path);
    auto loaded = load_cifar_file(path, v);
    REQUIRE(loaded.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) CHECK(loaded[i].label == recs[i].label);
    write_cifar_file(path, loaded, v);
    CHECK(slurp(path) == bytes1);  // ingestion is lossless
  }
}

TEST_CASE("synthetic corpus: balanced classes, loadable through the standard path") {
  TempDir dir;
  write_synthetic_cifar10(dir.str(), 20, 6, 123);
  CHECK(cifar_files_present(dir.str(), CifarVariant::c10));
  Dataset ds = load_cifar(dir.str(), CifarVariant::c10);
  CHECK(ds.train.size() == 200);
  CHECK(ds.test.size() == 60);
  std::array<int, 10> hist{};
  for (const auto& ex : ds.train) hist[static_cast<std::size_t>(ex.label)]++;
  for (int c : hist) CHECK(c == 20);  // dataset census
}

TEST_CASE("augment: center crop of the padded image is the identity") {
  auto recs = random_examples(1, 10, 92);
  AugmentDraws d;  // (4,4), no flip
  Example out = augment(recs[0], d);
  CHECK(out.label == recs[0].label);
  CHECK(out.image.data == recs[0].image.data);
}

TEST_CASE("augment: flipping twice restores the original") {
  auto recs = random_examples(1, 10, 93);
  AugmentDraws d;
  d.flip = true;
  Example once = augment(recs[0], d);
  Example twice = augment(once, d);
  CHECK(twice.image.data == recs[0].image.data);
  CHECK(once.image.data != recs[0].image.data);
}

TEST_CASE("augment: corner crop shifts content and zero-fills the border") {
  auto recs = random_examples(1, 10, 94);
  AugmentDraws d;
  d.dy = 0;
  d.dx = 0;  // output pixel (y,x) reads input (y-4, x-4)
  Example out = augment(recs[0], d);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const float expect =
            (y >= 4 && x >= 4) ? recs[0].image.at(0, c, y - 4, x - 4) : 0.0f;
        CHECK(out.image.at(0, c, y, x) == expect);
      }
    }
  }
}

TEST_CASE("batcher: sizes 4,4,2 for ten examples at batch 4, full coverage") {
  auto recs = random_examples(10, 10, 95);
  BatchPlan plan;
  plan.batch = 4;
  plan.pad_crop = false;
  plan.hflip = false;
  Batcher b(&recs, plan);
  CHECK(b.num_batches() == 3);
  auto ep = b.plan_epoch(0);
  std::vector<int> seen(10, 0);
  const std::int64_t sizes[3] = {4, 4, 2};
  for (int i = 0; i < 3; ++i) {
    Batch batch = b.assemble(ep, i);
    CHECK(batch.images.shape.n == sizes[i]);
  }
  for (int idx : ep.order) seen[static_cast<std::size_t>(idx)]++;
  for (int s : seen) CHECK(s == 1);  // every index exactly once per epoch
}

TEST_CASE("batcher: same seed twice gives identical index sequences and draws") {
  auto recs = random_examples(32, 10, 96);
  BatchPlan plan;
  plan.seed = 555;
  Batcher b(&recs, plan);
  auto e1 = b.plan_epoch(3);
  auto e2 = b.plan_epoch(3);
  CHECK(e1.order == e2.order);
  for (std::size_t i = 0; i < e1.draws.size(); ++i) {
    CHECK(e1.draws[i].dy == e2.draws[i].dy);
    CHECK(e1.draws[i].dx == e2.draws[i].dx);
    CHECK(e1.draws[i].flip == e2.draws[i].flip);
  }
  auto e3 = b.plan_epoch(4);
  CHECK(e1.order != e3.order);  // epochs differ
}

TEST_CASE("normalization: measured statistics recenter the training set") {
  TempDir dir;
  write_synthetic_cifar10(dir.str(), 50, 5, 321);
  Dataset ds = load_cifar(dir.str(), CifarVariant::c10);
  const Normalization norm = measure_normalization(ds.train);
  BatchPlan plan;
  plan.batch = 64;
  plan.shuffle = false;
  plan.pad_crop = false;
  plan.hflip = false;
  plan.norm = norm;
  Batcher b(&ds.train, plan);
  auto ep = b.plan_epoch(0);
  double sum[3] = {0, 0, 0};
  std::int64_t count = 0;
  for (int i = 0; i < b.num_batches(); ++i) {
    Batch batch = b.assemble(ep, i);
    for (std::int64_t s = 0; s < batch.images.shape.n; ++s) {
      for (int c = 0; c < 3; ++c) {
        const float* p = batch.images.ptr() + (s * 3 + c) * 1024;
        for (int j = 0; j < 1024; ++j) sum[c] += p[j];
      }
      ++count;
    }
  }
  for (int c = 0; c < 3; ++c) {
    CHECK(std::fabs(sum[c] / (static_cast<double>(count) * 1024.0)) < 1e-2);
  }
}

TEST_CASE("normalization cache: CSV written once and reused") {
  TempDir dir;
  write_synthetic_cifar10(dir.str(), 10, 2, 77);
  Dataset ds = load_cifar(dir.str(), CifarVariant::c10);
  const std::string cache = dir.str() + "/normalization.csv";
  const Normalization a = load_or_measure_normalization(cache, ds.train);
  CHECK(fs::exists(cache));
  // poison the dataset reference; the cache must win
  const Normalization b = load_or_measure_normalization(cache, {});
  for (int c = 0; c < 3; ++c) {
    CHECK(a.mean[static_cast<std::size_t>(c)] == b.mean[static_cast<std::size_t>(c)]);
    CHECK(a.stddev[static_cast<std::size_t>(c)] == b.stddev[static_cast<std::size_t>(c)]);
  }
}
