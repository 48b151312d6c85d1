#pragma once

#include <memory>

#include "regnet/blocks.hpp"

namespace regnet {

enum class Family { resnet, regnet, se_resnet, se_regnet };

const char* family_name(Family f);
Family family_from_name(const std::string& s);

// Declarative description of a network. The same spec drives both the
// executable graph (build) and the analytic cost reports.
struct ArchSpec {
  Family family = Family::resnet;
  CellKind cell = CellKind::gru;        // used by regulated families only
  int n = 3;                            // small-image nets: 6n+2 layers
  std::vector<int> stage_blocks;        // nonempty selects the bottleneck family
  std::vector<std::int64_t> widths;     // per-stage working width
  int classes = 10;
  Shape input{1, 3, 32, 32};            // batch entry ignored
  std::vector<bool> regulated;          // per-stage regulator placement mask
  std::int64_t se_reduction = 8;

  bool bottleneck() const { return !stage_blocks.empty(); }
  bool se() const { return family == Family::se_resnet || family == Family::se_regnet; }
  bool regulated_family() const { return family == Family::regnet || family == Family::se_regnet; }
  std::size_t num_stages() const { return widths.size(); }
  std::vector<int> blocks_per_stage() const;
  bool stage_regulated(std::size_t i) const;

  // Fills widths/regulated defaults, then checks the family invariants.
  void finalize();
  void validate() const;

  // Plain-text key=value config (family, cell, n or stage_blocks, widths,
  // classes, input, regulated_stages, se_reduction).
  std::string to_config() const;
  static ArchSpec from_config_text(const std::string& text);
  static ArchSpec from_config_file(const std::string& path);

  // Convenience presets.
  static ArchSpec cifar(Family family, CellKind cell, int n, int classes);
  static ArchSpec imagenet50(Family family, CellKind cell, int classes);
};

// Weighted layers on the main path (stem + per-block bracket convs + final
// linear); this is the "(6n+2)" count for the small-image family.
int main_path_layers(const ArchSpec& spec);

template <typename T>
class Network {
 public:
  explicit Network(const ArchSpec& spec);

  void init(std::uint64_t seed);

  struct BlockTrace {
    int index = 0;  // 1-based across stages
    Var input, hidden, output;
  };

  // images: (n, in_c, h, w). Returns logits (n, classes, 1, 1).
  Var forward(Tape<T>& g, Var images, Mode mode, std::vector<BlockTrace>* trace = nullptr);

  // Applies the trained pooling + linear head to an arbitrary feature map.
  Var head_logits(Tape<T>& g, Var features);

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::int64_t param_count() const;
  const ArchSpec& spec() const { return spec_; }
  int num_blocks() const;

 private:
  struct Stage {
    std::vector<BasicBlock<T>> basic;
    std::vector<RegNetBlock<T>> reg;
    std::vector<BottleneckBlock<T>> bneck;
    std::vector<BottleneckRegNetBlock<T>> bneck_reg;
    std::optional<StageRegulator<T>> regulator;
    int blocks() const {
      return static_cast<int>(basic.size() + reg.size() + bneck.size() + bneck_reg.size());
    }
  };

  ArchSpec spec_;
  Conv2dLayer<T> stem_;
  BatchNorm2dLayer<T> stem_bn_;
  bool stem_pool_ = false;
  std::vector<Stage> stages_;
  LinearLayer<T> head_;
  ParamSet<T> params_;
};

template <typename T>
std::unique_ptr<Network<T>> build(const ArchSpec& spec) {
  return std::make_unique<Network<T>>(spec);
}

}  // namespace regnet
