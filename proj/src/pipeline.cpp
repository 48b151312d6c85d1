#include "regnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace regnet {

namespace {

constexpr std::int64_t kPixels = 3 * 32 * 32;

int label_bytes(CifarVariant v) { return v == CifarVariant::c10 ? 1 : 2; }
int num_classes(CifarVariant v) { return v == CifarVariant::c10 ? 10 : 100; }

}  // namespace

std::vector<Example> load_cifar_file(const std::string& path, CifarVariant variant) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cifar: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  const std::int64_t record = label_bytes(variant) + kPixels;
  if (bytes.empty() || static_cast<std::int64_t>(bytes.size()) % record != 0) {
    throw IoError("cifar: " + path + " truncated at offset " + std::to_string(bytes.size()) +
                  " (record size " + std::to_string(record) + ")");
  }
  const std::int64_t count = static_cast<std::int64_t>(bytes.size()) / record;
  std::vector<Example> out(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    Example& ex = out[static_cast<std::size_t>(i)];
    if (variant == CifarVariant::c10) {
      ex.label = rec[0];
    } else {
      ex.coarse_label = rec[0];
      ex.label = rec[1];
    }
    if (ex.label >= num_classes(variant)) {
      throw IoError("cifar: " + path + " label " + std::to_string(ex.label) +
                    " out of range at offset " + std::to_string(i * record));
    }
    ex.image = Tensor<float>(Shape{1, 3, 32, 32});
    const unsigned char* px = rec + label_bytes(variant);
    for (std::int64_t j = 0; j < kPixels; ++j) {
      ex.image.data[static_cast<std::size_t>(j)] = static_cast<float>(px[j]) / 255.0f;
    }
  }
  return out;
}

Dataset load_cifar(const std::string& dir, CifarVariant variant) {
  Dataset ds;
  if (variant == CifarVariant::c10) {
    for (int i = 1; i <= 5; ++i) {
      auto part = load_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin", variant);
      ds.train.insert(ds.train.end(), part.begin(), part.end());
    }
    ds.test = load_cifar_file(dir + "/test_batch.bin", variant);
  } else {
    ds.train = load_cifar_file(dir + "/train.bin", variant);
    ds.test = load_cifar_file(dir + "/test.bin", variant);
  }
  return ds;
}

void write_cifar_file(const std::string& path, const std::vector<Example>& records,
                      CifarVariant variant) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cifar: cannot write " + path);
  for (const Example& ex : records) {
    unsigned char lb[2];
    if (variant == CifarVariant::c10) {
      lb[0] = static_cast<unsigned char>(ex.label);
      f.write(reinterpret_cast<const char*>(lb), 1);
    } else {
      lb[0] = static_cast<unsigned char>(ex.coarse_label < 0 ? 0 : ex.coarse_label);
      lb[1] = static_cast<unsigned char>(ex.label);
      f.write(reinterpret_cast<const char*>(lb), 2);
    }
    unsigned char px[kPixels];
    for (std::int64_t j = 0; j < kPixels; ++j) {
      const float v = ex.image.data[static_cast<std::size_t>(j)];
      const long q = std::lround(static_cast<double>(v) * 255.0);
      px[j] = static_cast<unsigned char>(std::clamp(q, 0L, 255L));
    }
    f.write(reinterpret_cast<const char*>(px), kPixels);
  }
  if (!f) throw IoError("cifar: write failed for " + path);
}

bool cifar_files_present(const std::string& dir, CifarVariant variant) {
  namespace fs = std::filesystem;
  if (variant == CifarVariant::c10) {
    for (int i = 1; i <= 5; ++i) {
      if (!fs::exists(dir + "/data_batch_" + std::to_string(i) + ".bin")) return false;
    }
    return fs::exists(dir + "/test_batch.bin");
  }
  return fs::exists(dir + "/train.bin") && fs::exists(dir + "/test.bin");
}

namespace {

// Smooth class-dependent pattern: each class owns a frequency/orientation
// pair, each sample jitters phase, gain, offset and adds pixel noise.
Example synthesize_example(int cls, std::mt19937& rng) {
  auto unit = [&rng]() { return static_cast<float>(rng()) * (1.0f / 4294967296.0f); };
  Example ex;
  ex.label = cls;
  ex.image = Tensor<float>(Shape{1, 3, 32, 32});
  const float fx = 0.25f + 0.13f * static_cast<float>(cls % 5);
  const float fy = 0.20f + 0.28f * static_cast<float>(cls / 5);
  const float phase_x = unit() * 6.2832f;
  const float phase_y = unit() * 6.2832f;
  const float gain = 0.28f + 0.10f * unit();
  const int shift_x = static_cast<int>(unit() * 7.0f) - 3;
  const int shift_y = static_cast<int>(unit() * 7.0f) - 3;
  const float color[3] = {0.45f + 0.08f * static_cast<float>((cls * 3) % 5) / 4.0f,
                          0.45f + 0.08f * static_cast<float>((cls * 5 + 1) % 5) / 4.0f,
                          0.45f + 0.08f * static_cast<float>((cls * 7 + 2) % 5) / 4.0f};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const float yy = static_cast<float>(y + shift_y);
        const float xx = static_cast<float>(x + shift_x);
        const float wave = std::sin(fx * xx + phase_x + 0.6f * static_cast<float>(c)) *
                           std::cos(fy * yy + phase_y - 0.4f * static_cast<float>(c));
        const float noise = (unit() - 0.5f) * 0.24f;
        float v = color[c] + gain * wave + noise;
        ex.image.at(0, c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return ex;
}

}  // namespace

void write_synthetic_cifar10(const std::string& dir, int train_per_class, int test_per_class,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(mix_seed(seed, 71)));
  std::vector<Example> train, test;
  for (int cls = 0; cls < 10; ++cls) {
    for (int i = 0; i < train_per_class; ++i) train.push_back(synthesize_example(cls, rng));
    for (int i = 0; i < test_per_class; ++i) test.push_back(synthesize_example(cls, rng));
  }
  // interleave classes so subsets stay balanced
  std::mt19937 shuf(static_cast<std::mt19937::result_type>(mix_seed(seed, 72)));
  for (std::size_t i = train.size(); i > 1; --i) {
    std::swap(train[i - 1], train[shuf() % i]);
  }
  for (std::size_t i = test.size(); i > 1; --i) {
    std::swap(test[i - 1], test[shuf() % i]);
  }
  const std::size_t shard = (train.size() + 4) / 5;
  for (int s = 0; s < 5; ++s) {
    const std::size_t b = static_cast<std::size_t>(s) * shard;
    const std::size_t e = std::min(train.size(), b + shard);
    std::vector<Example> part(train.begin() + static_cast<std::ptrdiff_t>(b),
                              train.begin() + static_cast<std::ptrdiff_t>(e));
    write_cifar_file(dir + "/data_batch_" + std::to_string(s + 1) + ".bin", part,
                     CifarVariant::c10);
  }
  write_cifar_file(dir + "/test_batch.bin", test, CifarVariant::c10);
}

Example augment(const Example& ex, const AugmentDraws& draws) {
  Example out;
  out.label = ex.label;
  out.coarse_label = ex.coarse_label;
  out.image = Tensor<float>(Shape{1, 3, 32, 32});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        // crop window (dy,dx) in the zero-padded 40x40 canvas
        const int sy = y + draws.dy - 4;
        const int sx = x + draws.dx - 4;
        float v = 0.0f;
        if (sy >= 0 && sy < 32 && sx >= 0 && sx < 32) v = ex.image.at(0, c, sy, sx);
        out.image.at(0, c, y, x) = v;
      }
    }
  }
  if (draws.flip) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 16; ++x) {
          std::swap(out.image.at(0, c, y, x), out.image.at(0, c, y, 31 - x));
        }
      }
    }
  }
  return out;
}

Normalization measure_normalization(const std::vector<Example>& train) {
  Normalization n;
  if (train.empty()) return n;
  double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
  for (const Example& ex : train) {
    for (int c = 0; c < 3; ++c) {
      const float* p = ex.image.ptr() + c * 1024;
      for (int i = 0; i < 1024; ++i) {
        sum[c] += p[i];
        sumsq[c] += static_cast<double>(p[i]) * p[i];
      }
    }
  }
  const double count = static_cast<double>(train.size()) * 1024.0;
  for (int c = 0; c < 3; ++c) {
    const double m = sum[c] / count;
    const double var = std::max(sumsq[c] / count - m * m, 1e-8);
    n.mean[c] = static_cast<float>(m);
    n.stddev[c] = static_cast<float>(std::sqrt(var));
  }
  return n;
}

Normalization load_or_measure_normalization(const std::string& cache_path,
                                            const std::vector<Example>& train) {
  {
    std::ifstream f(cache_path);
    if (f) {
      Normalization n;
      std::string header;
      std::getline(f, header);
      int seen = 0;
      std::string line;
      while (std::getline(f, line) && seen < 3) {
        int ch = 0;
        float m = 0, s = 1;
        if (std::sscanf(line.c_str(), "%d,%f,%f", &ch, &m, &s) == 3 && ch >= 0 && ch < 3) {
          n.mean[ch] = m;
          n.stddev[ch] = s;
          ++seen;
        }
      }
      if (seen == 3) return n;
    }
  }
  Normalization n = measure_normalization(train);
  std::ofstream f(cache_path);
  if (f) {
    f << "channel,mean,std\n";
    f.precision(9);  // float32 round-trips at 9 significant digits
    for (int c = 0; c < 3; ++c) f << c << "," << n.mean[c] << "," << n.stddev[c] << "\n";
  }
  return n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Batcher::Batcher(const std::vector<Example>* data, BatchPlan plan) : data_(data), plan_(plan) {
  if (!data_ || data_->empty()) throw InvalidArgument("batcher: empty dataset");
  if (plan_.batch < 1) throw InvalidArgument("batcher: batch size must be >= 1");
}

int Batcher::num_batches() const {
  const auto n = static_cast<std::int64_t>(data_->size());
  return static_cast<int>((n + plan_.batch - 1) / plan_.batch);
}

Batcher::EpochPlan Batcher::plan_epoch(int epoch) const {
  EpochPlan ep;
  const auto n = static_cast<std::int32_t>(data_->size());
  ep.order.resize(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) ep.order[static_cast<std::size_t>(i)] = i;
  std::mt19937 rng(static_cast<std::mt19937::result_type>(
      mix_seed(plan_.seed, 0x100 + static_cast<std::uint64_t>(epoch))));
  if (plan_.shuffle) {
    for (std::int32_t i = n - 1; i > 0; --i) {
      const std::int32_t j = static_cast<std::int32_t>(rng() % static_cast<std::uint32_t>(i + 1));
      std::swap(ep.order[static_cast<std::size_t>(i)], ep.order[static_cast<std::size_t>(j)]);
    }
  }
  ep.draws.resize(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) {
    AugmentDraws d;
    if (plan_.pad_crop) {
      d.dy = static_cast<int>(rng() % 9);
      d.dx = static_cast<int>(rng() % 9);
    }
    if (plan_.hflip) d.flip = (rng() & 1u) != 0;
    ep.draws[static_cast<std::size_t>(i)] = d;
  }
  return ep;
}

Batch Batcher::assemble(const EpochPlan& ep, int batch_index) const {
  const auto n = static_cast<std::int64_t>(data_->size());
  const std::int64_t begin = static_cast<std::int64_t>(batch_index) * plan_.batch;
  if (begin < 0 || begin >= n) throw InvalidArgument("batcher: batch index out of range");
  const std::int64_t count = std::min<std::int64_t>(plan_.batch, n - begin);
  Batch b;
  b.images = Tensor<float>(Shape{count, 3, 32, 32});
  b.labels.resize(static_cast<std::size_t>(count));
  const bool augmenting = plan_.pad_crop || plan_.hflip;
#pragma omp parallel for
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int32_t idx = ep.order[static_cast<std::size_t>(begin + i)];
    const Example& src = (*data_)[static_cast<std::size_t>(idx)];
    Example tmp;
    const Example& ex = augmenting
                            ? (tmp = augment(src, ep.draws[static_cast<std::size_t>(begin + i)]))
                            : src;
    b.labels[static_cast<std::size_t>(i)] = ex.label;
    for (int c = 0; c < 3; ++c) {
      const float m = plan_.norm.mean[static_cast<std::size_t>(c)];
      const float s = plan_.norm.stddev[static_cast<std::size_t>(c)];
      const float inv = s > 0 ? 1.0f / s : 1.0f;
      const float* p = ex.image.ptr() + c * 1024;
      float* dst = b.images.ptr() + (i * 3 + c) * 1024;
      for (int j = 0; j < 1024; ++j) dst[j] = (p[j] - m) * inv;
    }
  }
  return b;
}

}  // namespace regnet
