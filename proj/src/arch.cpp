#include "regnet/arch.hpp"

#include <fstream>
#include <sstream>

namespace regnet {

const char* family_name(Family f) {
  switch (f) {
    case Family::resnet: return "resnet";
    case Family::regnet: return "regnet";
    case Family::se_resnet: return "se-resnet";
    case Family::se_regnet: return "se-regnet";
  }
  return "?";
}

Family family_from_name(const std::string& s) {
  if (s == "resnet") return Family::resnet;
  if (s == "regnet") return Family::regnet;
  if (s == "se-resnet" || s == "se_resnet") return Family::se_resnet;
  if (s == "se-regnet" || s == "se_regnet") return Family::se_regnet;
  throw InvalidArgument("unknown family '" + s + "' (expected resnet|regnet|se-resnet|se-regnet)");
}

std::vector<int> ArchSpec::blocks_per_stage() const {
  if (bottleneck()) return stage_blocks;
  return std::vector<int>(num_stages(), n);
}

bool ArchSpec::stage_regulated(std::size_t i) const {
  if (!regulated_family()) return false;
  if (regulated.empty()) return true;
  return i < regulated.size() && regulated[i];
}

void ArchSpec::finalize() {
  if (widths.empty()) {
    widths = bottleneck() ? std::vector<std::int64_t>{64, 128, 256, 512}
                          : std::vector<std::int64_t>{16, 32, 64};
  }
  if (regulated.empty()) regulated.assign(num_stages(), true);
  validate();
}

void ArchSpec::validate() const {
  if (classes < 2) throw InvalidArgument("spec: classes must be >= 2, got " + std::to_string(classes));
  if (input.c < 1 || input.h < 8 || input.w < 8) {
    throw InvalidArgument("spec: implausible input geometry " + input.str());
  }
  if (bottleneck()) {
    if (widths != std::vector<std::int64_t>{64, 128, 256, 512}) {
      throw InvalidArgument("spec: bottleneck stage widths must be 64,128,256,512");
    }
    if (stage_blocks.size() != 4) {
      throw InvalidArgument("spec: bottleneck nets take 4 stage block counts, got " +
                            std::to_string(stage_blocks.size()));
    }
    for (int b : stage_blocks) {
      if (b < 1) throw InvalidArgument("spec: stage block counts must be >= 1");
    }
  } else {
    if (n < 1) throw InvalidArgument("spec: n must be >= 1, got " + std::to_string(n));
    if (widths != std::vector<std::int64_t>{16, 32, 64}) {
      throw InvalidArgument("spec: small-image stage widths must be 16,32,64");
    }
  }
  if (!regulated.empty() && regulated.size() != num_stages()) {
    throw InvalidArgument("spec: regulated_stages mask has " + std::to_string(regulated.size()) +
                          " entries for " + std::to_string(num_stages()) + " stages");
  }
  if (se()) {
    for (std::int64_t w : widths) {
      const std::int64_t out_c = bottleneck() ? w * 4 : w;
      if (se_reduction < 1 || out_c % se_reduction != 0) {
        throw InvalidArgument("spec: se_reduction " + std::to_string(se_reduction) +
                              " does not divide block width " + std::to_string(out_c));
      }
    }
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace

std::string ArchSpec::to_config() const {
  std::ostringstream os;
  os << "family = " << family_name(family) << "\n";
  if (regulated_family()) os << "cell = " << cell_kind_name(cell) << "\n";
  if (bottleneck()) {
    os << "stage_blocks = ";
    for (std::size_t i = 0; i < stage_blocks.size(); ++i) os << (i ? "," : "") << stage_blocks[i];
    os << "\n";
  } else {
    os << "n = " << n << "\n";
  }
  os << "widths = ";
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << "\n";
  os << "classes = " << classes << "\n";
  os << "input = " << input.c << "x" << input.h << "x" << input.w << "\n";
  if (regulated_family()) {
    os << "regulated_stages = ";
    for (std::size_t i = 0; i < regulated.size(); ++i) os << (i ? "," : "") << (regulated[i] ? 1 : 0);
    os << "\n";
  }
  if (se()) os << "se_reduction = " << se_reduction << "\n";
  return os.str();
}

ArchSpec ArchSpec::from_config_text(const std::string& text) {
  ArchSpec spec;
  spec.widths.clear();
  bool saw_n = false, saw_blocks = false;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config: expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "family") {
      spec.family = family_from_name(val);
    } else if (key == "cell") {
      spec.cell = cell_kind_from_name(val);
    } else if (key == "n") {
      spec.n = std::stoi(val);
      saw_n = true;
    } else if (key == "stage_blocks") {
      spec.stage_blocks.clear();
      for (const auto& tok : split(val, ',')) spec.stage_blocks.push_back(std::stoi(tok));
      saw_blocks = true;
    } else if (key == "widths") {
      spec.widths.clear();
      for (const auto& tok : split(val, ',')) spec.widths.push_back(std::stoll(tok));
    } else if (key == "classes") {
      spec.classes = std::stoi(val);
    } else if (key == "input") {
      const auto parts = split(val, 'x');
      if (parts.size() != 3) throw InvalidArgument("config: input must be CxHxW, got '" + val + "'");
      spec.input = Shape{1, std::stoll(parts[0]), std::stoll(parts[1]), std::stoll(parts[2])};
    } else if (key == "regulated_stages") {
      spec.regulated.clear();
      for (const auto& tok : split(val, ',')) spec.regulated.push_back(tok == "1" || tok == "true");
    } else if (key == "se_reduction") {
      spec.se_reduction = std::stoll(val);
    } else {
      throw InvalidArgument("config: unknown key '" + key + "'");
    }
  }
  if (saw_n && saw_blocks) throw InvalidArgument("config: give n or stage_blocks, not both");
  spec.finalize();
  return spec;
}

ArchSpec ArchSpec::from_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return from_config_text(os.str());
}

ArchSpec ArchSpec::cifar(Family family, CellKind cell, int n, int classes) {
  ArchSpec s;
  s.family = family;
  s.cell = cell;
  s.n = n;
  s.classes = classes;
  s.input = Shape{1, 3, 32, 32};
  s.finalize();
  return s;
}

ArchSpec ArchSpec::imagenet50(Family family, CellKind cell, int classes) {
  ArchSpec s;
  s.family = family;
  s.cell = cell;
  s.stage_blocks = {3, 4, 6, 3};
  s.classes = classes;
  s.input = Shape{1, 3, 224, 224};
  s.finalize();
  return s;
}

int main_path_layers(const ArchSpec& spec) {
  const auto blocks = spec.blocks_per_stage();
  int total = 0;
  for (int b : blocks) total += b * (spec.bottleneck() ? 3 : 2);
  return total + 2;  // stem conv + final linear
}

// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(const ArchSpec& spec) : spec_(spec) {
  spec_.finalize();
  const bool bneck = spec_.bottleneck();
  const std::int64_t stem_out = spec_.widths[0];
  if (bneck) {
    stem_ = Conv2dLayer<T>("stem.conv", spec_.input.c, stem_out, 7, 2, 3, 1, false);
    stem_pool_ = true;
  } else {
    stem_ = Conv2dLayer<T>("stem.conv", spec_.input.c, stem_out, 3, 1, 1, 1, false);
  }
  stem_bn_ = BatchNorm2dLayer<T>("stem.bn", stem_out);

  const auto blocks = spec_.blocks_per_stage();
  std::int64_t in_c = stem_out;
  stages_.resize(spec_.num_stages());
  for (std::size_t si = 0; si < spec_.num_stages(); ++si) {
    Stage& st = stages_[si];
    const std::int64_t width = spec_.widths[si];
    const std::string sname = "stage" + std::to_string(si + 1);
    const bool reg = spec_.stage_regulated(si);
    if (reg) st.regulator.emplace(sname + ".regulator", spec_.cell, width);
    for (int bi = 0; bi < blocks[si]; ++bi) {
      const int stride = (si > 0 && bi == 0) ? 2 : 1;
      const std::string bname = sname + ".block" + std::to_string(bi + 1);
      if (bneck && reg) {
        st.bneck_reg.emplace_back(bname, in_c, width, stride, spec_.se(), spec_.se_reduction);
        in_c = width * BottleneckRegNetBlock<T>::kExpansion;
      } else if (bneck) {
        st.bneck.emplace_back(bname, in_c, width, stride, spec_.se(), spec_.se_reduction);
        in_c = width * BottleneckBlock<T>::kExpansion;
      } else if (reg) {
        st.reg.emplace_back(bname, in_c, width, stride, spec_.se(), spec_.se_reduction);
        in_c = width;
      } else {
        st.basic.emplace_back(bname, in_c, width, stride, spec_.se(), spec_.se_reduction);
        in_c = width;
      }
    }
  }
  head_ = LinearLayer<T>("head.fc", in_c, spec_.classes);

  stem_.collect(params_);
  stem_bn_.collect(params_);
  for (auto& st : stages_) {
    for (auto& b : st.basic) b.collect(params_);
    for (auto& b : st.reg) b.collect(params_);
    for (auto& b : st.bneck) b.collect(params_);
    for (auto& b : st.bneck_reg) b.collect(params_);
    if (st.regulator) st.regulator->collect(params_);
  }
  head_.collect(params_);
}

template <typename T>
void Network<T>::init(std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  stem_.init(rng);
  for (auto& st : stages_) {
    for (auto& b : st.basic) b.init(rng);
    for (auto& b : st.reg) b.init(rng);
    for (auto& b : st.bneck) b.init(rng);
    for (auto& b : st.bneck_reg) b.init(rng);
    if (st.regulator) st.regulator->init(rng);
  }
  head_.init(rng);
}

template <typename T>
Var Network<T>::forward(Tape<T>& g, Var images, Mode mode, std::vector<BlockTrace>* trace) {
  if (g.shape(images).c != spec_.input.c) {
    throw InvalidArgument("forward: expected " + std::to_string(spec_.input.c) +
                          " input channels, got " + std::to_string(g.shape(images).c));
  }
  Var x = relu(g, stem_bn_.forward(g, stem_.forward(g, images), mode));
  if (stem_pool_) x = maxpool2d(g, x, 3, 2, 1);
  int block_index = 0;
  for (auto& st : stages_) {
    std::optional<CellState> state;
    const int nb = st.blocks();
    for (int bi = 0; bi < nb; ++bi) {
      ++block_index;
      Var in = x;
      Var hidden{};
      if (!st.basic.empty()) {
        x = st.basic[static_cast<std::size_t>(bi)].forward(g, x, mode);
      } else if (!st.bneck.empty()) {
        x = st.bneck[static_cast<std::size_t>(bi)].forward(g, x, mode);
      } else if (!st.reg.empty()) {
        auto [y, s2] = st.reg[static_cast<std::size_t>(bi)].forward(g, x, *st.regulator, state, mode);
        x = y;
        state = s2;
        hidden = s2.h;
      } else {
        auto [y, s2] =
            st.bneck_reg[static_cast<std::size_t>(bi)].forward(g, x, *st.regulator, state, mode);
        x = y;
        state = s2;
        hidden = s2.h;
      }
      if (trace) trace->push_back(BlockTrace{block_index, in, hidden, x});
    }
  }
  return head_logits(g, x);
}

template <typename T>
Var Network<T>::head_logits(Tape<T>& g, Var features) {
  Var pooled = global_avgpool(g, features);
  const Shape& s = g.shape(pooled);
  if (s.c != head_.weight.value.shape.c) {
    throw InvalidArgument("head: feature channels " + std::to_string(s.c) +
                          " do not match classifier input " +
                          std::to_string(head_.weight.value.shape.c));
  }
  return head_.forward(g, pooled);
}

template <typename T>
std::int64_t Network<T>::param_count() const {
  std::int64_t total = 0;
  for (const auto* p : params_.params) total += p->value.numel();
  return total;
}

template <typename T>
int Network<T>::num_blocks() const {
  int total = 0;
  for (const auto& st : stages_) total += st.blocks();
  return total;
}

template class Network<float>;
template class Network<double>;

}  // namespace regnet
