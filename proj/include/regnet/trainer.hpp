#pragma once

#include <iosfwd>

#include "regnet/arch.hpp"
#include "regnet/pipeline.hpp"

namespace regnet {

struct TrainConfig {
  double lr = 0.1;
  std::vector<int> decay_epochs = {80};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 150;
  int batch = 64;
  std::uint64_t seed = 1;
  int eval_every = 1;                    // test evaluation cadence, in epochs
  bool augment = true;
  std::int64_t train_subset = 0;         // 0 = all examples
  std::int64_t test_subset = 0;

  void validate() const;
};

// initial * factor^(number of decay epochs <= epoch)
double lr_at(int epoch, const TrainConfig& cfg);

// v <- momentum*v + (grad + wd*param); param <- param - lr*v. Weight decay
// covers every trainable tensor, batchnorm scale/shift and biases included.
// A non-finite gradient aborts the step naming the parameter.
template <typename T>
void sgd_step(ParamSet<T>& params, const TrainConfig& cfg, double lr);

struct MetricsRow {
  int epoch = 0;
  double lr = 0, train_loss = 0, train_acc = 0;
  double test_err = -1;  // <0 = not evaluated this epoch
};

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);

struct TrainResult {
  std::vector<MetricsRow> log;
  bool aborted = false;
  std::string abort_reason;
};

// Per-epoch loop: forward/backward in train mode, SGD update, optional test
// evaluation and checkpointing. A non-finite loss aborts with the last-good
// checkpoint left on disk. start_epoch > 0 resumes a loaded network.
TrainResult train(Network<float>& net, const std::vector<Example>& train_data,
                  const std::vector<Example>& test_data, const TrainConfig& cfg,
                  const Normalization& norm, const std::string& checkpoint_path = "",
                  int start_epoch = 0, std::ostream* progress = nullptr);

// Top-1 accuracy in eval mode. subset = 0 evaluates everything.
double evaluate(Network<float>& net, const std::vector<Example>& data, const Normalization& norm,
                int batch, std::int64_t subset = 0);

// Classifies from global_avgpool(block output) through the trained head for
// each listed 1-based block index; returns (block, accuracy) pairs.
std::vector<std::pair<int, double>> probe_blocks(Network<float>& net,
                                                 const std::vector<Example>& data,
                                                 const Normalization& norm,
                                                 const std::vector<int>& blocks, int batch,
                                                 std::int64_t subset = 0);

void write_probe_csv(std::ostream& os, const std::vector<std::pair<int, double>>& probes);

// ---- checkpoints -----------------------------------------------------------

// Single binary file: versioned header, serialized ArchSpec config, epoch,
// RNG state, then a manifest of named little-endian float32 tensors
// (parameter values, momentum buffers, BN running stats).
void save_checkpoint(const std::string& path, const Network<float>& net, int epoch,
                     const std::string& rng_state);

struct CheckpointMeta {
  std::uint32_t version = 0;
  std::string config;
  int epoch = 0;
  std::string rng_state;
};

// Restores tensors into net; fails if the stored config does not match
// net.spec().
CheckpointMeta load_checkpoint(const std::string& path, Network<float>& net);
CheckpointMeta read_checkpoint_meta(const std::string& path);

// ---- feature export --------------------------------------------------------

// Writes <prefix>.bin (raw little-endian float32) and <prefix>.manifest
// (lines: name=<...> shape=<n,c,h,w> dtype=f32 offset=<bytes> bytes=<len>)
// holding, per listed block, the input I, hidden H (regulated stages only)
// and output O feature maps of one eval-mode forward pass.
void export_features(Network<float>& net, const Tensor<float>& images,
                     const std::vector<int>& blocks, const std::string& prefix);

struct FeatureEntry {
  std::string name;
  Shape shape;
  Tensor<float> data;
};

std::vector<FeatureEntry> read_feature_dump(const std::string& prefix);

}  // namespace regnet
