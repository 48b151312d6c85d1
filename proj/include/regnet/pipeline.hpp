#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "regnet/tensor.hpp"

namespace regnet {

// One image-label pair. Pixels are stored in [0,1]; normalization happens at
// batch assembly. coarse_label keeps the CIFAR-100 superclass byte so parsed
// records re-serialize losslessly (-1 when absent).
struct Example {
  Tensor<float> image;  // (1, 3, 32, 32)
  int label = 0;
  int coarse_label = -1;
};

enum class CifarVariant { c10, c100 };

struct Dataset {
  std::vector<Example> train, test;
};

// Reads the standard binary layout: 1 label byte + 3072 pixel bytes (R, G, B
// planes, row-major) per record for CIFAR-10; 2 label bytes (coarse, fine)
// for CIFAR-100. Throws IoError naming the file and byte offset on
// truncation or label-range violations.
Dataset load_cifar(const std::string& dir, CifarVariant variant);
std::vector<Example> load_cifar_file(const std::string& path, CifarVariant variant);

// Inverse of the parser; pixel bytes are round(v*255).
void write_cifar_file(const std::string& path, const std::vector<Example>& records,
                      CifarVariant variant);

// Deterministic class-structured stand-in corpus in the CIFAR-10 file layout
// (5 train shards + test shard), for desk-scale runs without the real data.
void write_synthetic_cifar10(const std::string& dir, int train_per_class, int test_per_class,
                             std::uint64_t seed);

// True if dir contains the real-layout binary files for the variant.
bool cifar_files_present(const std::string& dir, CifarVariant variant);

// Pad 4 / crop 32 offsets in [0,8]; (4,4) with no flip is the identity.
struct AugmentDraws {
  int dy = 4, dx = 4;
  bool flip = false;
};

Example augment(const Example& ex, const AugmentDraws& draws);

struct Normalization {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stddev{1.f, 1.f, 1.f};
};

Normalization measure_normalization(const std::vector<Example>& train);
// Cached as CSV (channel,mean,std) next to the data.
Normalization load_or_measure_normalization(const std::string& cache_path,
                                            const std::vector<Example>& train);

struct BatchPlan {
  std::uint64_t seed = 1;
  int batch = 64;
  bool shuffle = true;
  bool pad_crop = true;
  bool hflip = true;
  Normalization norm{};
};

struct Batch {
  Tensor<float> images;  // (B, 3, 32, 32), normalized
  std::vector<int> labels;
};

// Deterministic batch stream: the index order and augmentation draws of an
// epoch are a pure function of (plan.seed, epoch).
class Batcher {
 public:
  Batcher(const std::vector<Example>* data, BatchPlan plan);

  int num_batches() const;

  struct EpochPlan {
    std::vector<std::int32_t> order;
    std::vector<AugmentDraws> draws;
  };
  EpochPlan plan_epoch(int epoch) const;
  Batch assemble(const EpochPlan& ep, int batch_index) const;

 private:
  const std::vector<Example>* data_;
  BatchPlan plan_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace regnet
