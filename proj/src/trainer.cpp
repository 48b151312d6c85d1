#include "regnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

namespace regnet {

void TrainConfig::validate() const {
  if (decay_factor <= 0) throw InvalidArgument("train config: decay factor must be > 0");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) {
      throw InvalidArgument("train config: decay epochs must be strictly increasing");
    }
  }
  if (epochs < 0 || batch < 1) throw InvalidArgument("train config: bad epochs/batch");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw InvalidArgument("lr_at: epoch must be >= 0");
  int hits = 0;
  for (int d : cfg.decay_epochs) {
    if (d <= epoch) ++hits;
  }
  return cfg.lr * std::pow(cfg.decay_factor, hits);
}

template <typename T>
void sgd_step(ParamSet<T>& params, const TrainConfig& cfg, double lr) {
  const T mom = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T rate = static_cast<T>(lr);
  for (Parameter<T>* p : params.params) {
    if (!p->grad.all_finite()) {
      throw NumericError("sgd_step: non-finite gradient in parameter '" + p->name + "'");
    }
    T* v = p->momentum.ptr();
    T* g = p->grad.ptr();
    T* x = p->value.ptr();
    const std::int64_t total = p->value.numel();
    for (std::int64_t i = 0; i < total; ++i) {
      v[i] = mom * v[i] + (g[i] + wd * x[i]);
      x[i] -= rate * v[i];
    }
  }
}

template void sgd_step<float>(ParamSet<float>&, const TrainConfig&, double);
template void sgd_step<double>(ParamSet<double>&, const TrainConfig&, double);

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "epoch,lr,train_loss,train_acc,test_err\n";
  for (const auto& r : rows) {
    os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.train_acc << ",";
    if (r.test_err >= 0) os << r.test_err;
    os << "\n";
  }
}

namespace {

std::vector<Example> take_subset(const std::vector<Example>& data, std::int64_t subset,
                                 std::uint64_t seed) {
  if (subset <= 0 || subset >= static_cast<std::int64_t>(data.size())) return data;
  // seed-pinned choice: shuffle indices, take the prefix
  std::vector<std::int64_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(mix_seed(seed, 0x5u)));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(subset));
  for (std::int64_t i = 0; i < subset; ++i) out.push_back(data[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  return out;
}

int argmax_row(const float* p, std::int64_t m) {
  int best = 0;
  for (std::int64_t j = 1; j < m; ++j) {
    if (p[j] > p[best]) best = static_cast<int>(j);
  }
  return best;
}

std::string rng_state_for(std::uint64_t seed, int epoch) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(
      mix_seed(seed, 0x100 + static_cast<std::uint64_t>(epoch))));
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

double evaluate(Network<float>& net, const std::vector<Example>& data, const Normalization& norm,
                int batch, std::int64_t subset) {
  const std::vector<Example> eval_set = take_subset(data, subset, 0xE7A1u);
  BatchPlan plan;
  plan.batch = batch;
  plan.shuffle = false;
  plan.pad_crop = false;
  plan.hflip = false;
  plan.norm = norm;
  Batcher batcher(&eval_set, plan);
  const auto ep = batcher.plan_epoch(0);
  std::int64_t correct = 0, total = 0;
  for (int bi = 0; bi < batcher.num_batches(); ++bi) {
    Batch b = batcher.assemble(ep, bi);
    Tape<float> g;
    Var logits = net.forward(g, g.leaf(std::move(b.images)), Mode::eval);
    const Tensor<float>& lv = g.value(logits);
    const std::int64_t m = lv.shape.c;
    for (std::int64_t s = 0; s < lv.shape.n; ++s) {
      if (argmax_row(lv.ptr() + s * m, m) == b.labels[static_cast<std::size_t>(s)]) ++correct;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainResult train(Network<float>& net, const std::vector<Example>& train_data,
                  const std::vector<Example>& test_data, const TrainConfig& cfg,
                  const Normalization& norm, const std::string& checkpoint_path, int start_epoch,
                  std::ostream* progress) {
  cfg.validate();
  TrainResult result;
  const std::vector<Example> train_set = take_subset(train_data, cfg.train_subset, cfg.seed);
  BatchPlan plan;
  plan.seed = cfg.seed;
  plan.batch = cfg.batch;
  plan.shuffle = true;
  plan.pad_crop = cfg.augment;
  plan.hflip = cfg.augment;
  plan.norm = norm;
  Batcher batcher(&train_set, plan);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double rate = lr_at(epoch, cfg);
    const auto ep = batcher.plan_epoch(epoch);
    double loss_sum = 0;
    std::int64_t seen = 0, correct = 0;
    for (int bi = 0; bi < batcher.num_batches(); ++bi) {
      Batch b = batcher.assemble(ep, bi);
      const std::int64_t bs = b.images.shape.n;
      try {
        Tape<float> g;
        Var logits = net.forward(g, g.leaf(std::move(b.images)), Mode::train);
        Var loss = softmax_xent(g, logits, b.labels);
        const double loss_val = static_cast<double>(g.value(loss).data[0]);
        const Tensor<float>& lv = g.value(logits);
        for (std::int64_t s = 0; s < bs; ++s) {
          if (argmax_row(lv.ptr() + s * lv.shape.c, lv.shape.c) ==
              b.labels[static_cast<std::size_t>(s)]) {
            ++correct;
          }
        }
        g.backward(loss);
        sgd_step(net.params(), cfg, rate);
        loss_sum += loss_val * static_cast<double>(bs);
        seen += bs;
      } catch (const NumericError& e) {
        result.aborted = true;
        result.abort_reason = std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(bi) + "); last-good checkpoint retained";
        return result;
      }
    }
    MetricsRow row;
    row.epoch = epoch;
    row.lr = rate;
    row.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    row.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    const bool eval_now =
        !test_data.empty() && (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 ||
                                                      epoch + 1 == cfg.epochs));
    if (eval_now) {
      row.test_err = 1.0 - evaluate(net, test_data, norm, cfg.batch, cfg.test_subset);
    }
    result.log.push_back(row);
    if (progress) {
      (*progress) << "epoch " << epoch << " lr " << rate << " loss " << row.train_loss << " acc "
                  << row.train_acc;
      if (row.test_err >= 0) (*progress) << " test_err " << row.test_err;
      (*progress) << std::endl;
    }
    if (!checkpoint_path.empty()) {
      save_checkpoint(checkpoint_path, net, epoch + 1, rng_state_for(cfg.seed, epoch + 1));
    }
  }
  return result;
}

std::vector<std::pair<int, double>> probe_blocks(Network<float>& net,
                                                 const std::vector<Example>& data,
                                                 const Normalization& norm,
                                                 const std::vector<int>& blocks, int batch,
                                                 std::int64_t subset) {
  for (int b : blocks) {
    if (b < 1 || b > net.num_blocks()) {
      throw InvalidArgument("probe: block index " + std::to_string(b) + " outside [1," +
                            std::to_string(net.num_blocks()) + "]");
    }
  }
  const std::vector<Example> eval_set = take_subset(data, subset, 0xE7A1u);
  BatchPlan plan;
  plan.batch = batch;
  plan.shuffle = false;
  plan.pad_crop = false;
  plan.hflip = false;
  plan.norm = norm;
  Batcher batcher(&eval_set, plan);
  const auto ep = batcher.plan_epoch(0);
  std::vector<std::int64_t> correct(blocks.size(), 0);
  std::int64_t total = 0;
  for (int bi = 0; bi < batcher.num_batches(); ++bi) {
    Batch b = batcher.assemble(ep, bi);
    Tape<float> g;
    std::vector<Network<float>::BlockTrace> trace;
    net.forward(g, g.leaf(std::move(b.images)), Mode::eval, &trace);
    for (std::size_t pi = 0; pi < blocks.size(); ++pi) {
      const auto& tr = trace[static_cast<std::size_t>(blocks[pi] - 1)];
      Var logits = net.head_logits(g, tr.output);
      const Tensor<float>& lv = g.value(logits);
      for (std::int64_t s = 0; s < lv.shape.n; ++s) {
        if (argmax_row(lv.ptr() + s * lv.shape.c, lv.shape.c) ==
            b.labels[static_cast<std::size_t>(s)]) {
          ++correct[pi];
        }
      }
    }
    total += b.images.shape.n;
  }
  std::vector<std::pair<int, double>> out;
  for (std::size_t pi = 0; pi < blocks.size(); ++pi) {
    out.emplace_back(blocks[pi],
                     total ? static_cast<double>(correct[pi]) / static_cast<double>(total) : 0.0);
  }
  return out;
}

void write_probe_csv(std::ostream& os, const std::vector<std::pair<int, double>>& probes) {
  os << "block,accuracy\n";
  for (const auto& [b, acc] : probes) os << b << "," << acc << "\n";
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'G', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::string& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw IoError("checkpoint: truncated read in " + path);
  }
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& path) {
  const auto len = get<std::uint64_t>(is, path);
  std::string s(len, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(len))) {
    throw IoError("checkpoint: truncated string in " + path);
  }
  return s;
}

struct TensorRef {
  std::string name;
  const Tensor<float>* tensor;
};

std::vector<TensorRef> checkpoint_tensors(const Network<float>& net) {
  std::vector<TensorRef> refs;
  for (const Parameter<float>* p : net.params().params) {
    refs.push_back({p->name, &p->value});
    refs.push_back({p->name + ".momentum", &p->momentum});
  }
  for (const auto& [name, buf] : net.params().buffers) refs.push_back({name, buf});
  return refs;
}

}  // namespace

void save_checkpoint(const std::string& path, const Network<float>& net, int epoch,
                     const std::string& rng_state) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot write " + tmp);
    f.write(kMagic, 4);
    put<std::uint32_t>(f, kVersion);
    put_string(f, net.spec().to_config());
    put<std::int32_t>(f, epoch);
    put_string(f, rng_state);
    const auto refs = checkpoint_tensors(net);
    put<std::uint64_t>(f, refs.size());
    std::uint64_t offset = 0;
    for (const auto& r : refs) {
      put_string(f, r.name);
      put<std::uint8_t>(f, 0);  // dtype f32
      put<std::int64_t>(f, r.tensor->shape.n);
      put<std::int64_t>(f, r.tensor->shape.c);
      put<std::int64_t>(f, r.tensor->shape.h);
      put<std::int64_t>(f, r.tensor->shape.w);
      put<std::uint64_t>(f, offset);
      offset += static_cast<std::uint64_t>(r.tensor->numel()) * sizeof(float);
    }
    put<std::uint64_t>(f, offset);
    for (const auto& r : refs) {
      f.write(reinterpret_cast<const char*>(r.tensor->ptr()),
              static_cast<std::streamsize>(r.tensor->numel() * sizeof(float)));
    }
    if (!f) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("checkpoint: cannot move " + tmp + " to " + path);
  }
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("checkpoint: " + path + " is not a checkpoint file");
  }
  CheckpointMeta meta;
  meta.version = get<std::uint32_t>(f, path);
  if (meta.version != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(meta.version));
  }
  meta.config = get_string(f, path);
  meta.epoch = get<std::int32_t>(f, path);
  meta.rng_state = get_string(f, path);
  return meta;
}

CheckpointMeta load_checkpoint(const std::string& path, Network<float>& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("checkpoint: " + path + " is not a checkpoint file");
  }
  CheckpointMeta meta;
  meta.version = get<std::uint32_t>(f, path);
  if (meta.version != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(meta.version));
  }
  meta.config = get_string(f, path);
  meta.epoch = get<std::int32_t>(f, path);
  meta.rng_state = get_string(f, path);
  if (meta.config != net.spec().to_config()) {
    throw InvalidArgument("checkpoint: stored architecture does not match target network:\n" +
                          meta.config + "-- target --\n" + net.spec().to_config());
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  const auto count = get<std::uint64_t>(f, path);
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    e.name = get_string(f, path);
    const auto dtype = get<std::uint8_t>(f, path);
    if (dtype != 0) throw IoError("checkpoint: unsupported dtype tag " + std::to_string(dtype));
    e.shape.n = get<std::int64_t>(f, path);
    e.shape.c = get<std::int64_t>(f, path);
    e.shape.h = get<std::int64_t>(f, path);
    e.shape.w = get<std::int64_t>(f, path);
    e.offset = get<std::uint64_t>(f, path);
  }
  get<std::uint64_t>(f, path);  // total data bytes
  const auto data_start = f.tellg();

  auto refs = checkpoint_tensors(net);
  if (refs.size() != entries.size()) {
    throw IoError("checkpoint: tensor count mismatch (" + std::to_string(entries.size()) +
                  " stored, " + std::to_string(refs.size()) + " expected)");
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& e = entries[i];
    auto* dst = const_cast<Tensor<float>*>(refs[i].tensor);
    if (e.name != refs[i].name || !(e.shape == dst->shape)) {
      throw IoError("checkpoint: entry '" + e.name + "' does not match network tensor '" +
                    refs[i].name + "'");
    }
    f.seekg(data_start + static_cast<std::streamoff>(e.offset));
    if (!f.read(reinterpret_cast<char*>(dst->ptr()),
                static_cast<std::streamsize>(dst->numel() * sizeof(float)))) {
      throw IoError("checkpoint: truncated tensor data for '" + e.name + "'");
    }
  }
  return meta;
}

// ---- feature export --------------------------------------------------------

void export_features(Network<float>& net, const Tensor<float>& images,
                     const std::vector<int>& blocks, const std::string& prefix) {
  Tape<float> g;
  std::vector<Network<float>::BlockTrace> trace;
  net.forward(g, g.leaf(images), Mode::eval, &trace);

  std::ofstream bin(prefix + ".bin", std::ios::binary);
  std::ofstream man(prefix + ".manifest");
  if (!bin || !man) throw IoError("export: cannot write " + prefix + ".bin/.manifest");
  std::uint64_t offset = 0;
  auto dump = [&](const std::string& name, const Tensor<float>& t) {
    bin.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
    man << "name=" << name << " shape=" << t.shape.n << "," << t.shape.c << "," << t.shape.h << ","
        << t.shape.w << " dtype=f32 offset=" << offset << " bytes=" << t.numel() * sizeof(float)
        << "\n";
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  };
  for (int b : blocks) {
    if (b < 1 || b > static_cast<int>(trace.size())) {
      throw InvalidArgument("export: block index " + std::to_string(b) + " outside [1," +
                            std::to_string(trace.size()) + "]");
    }
    const auto& tr = trace[static_cast<std::size_t>(b - 1)];
    const std::string base = "block" + std::to_string(b);
    dump(base + ".I", g.value(tr.input));
    if (tr.hidden.valid()) dump(base + ".H", g.value(tr.hidden));
    dump(base + ".O", g.value(tr.output));
  }
  if (!bin || !man) throw IoError("export: write failed for " + prefix);
}

std::vector<FeatureEntry> read_feature_dump(const std::string& prefix) {
  std::ifstream man(prefix + ".manifest");
  if (!man) throw IoError("export: cannot open " + prefix + ".manifest");
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("export: cannot open " + prefix + ".bin");
  std::vector<FeatureEntry> out;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    FeatureEntry e;
    char name[256];
    long long n, c, h, w;
    unsigned long long off, bytes;
    if (std::sscanf(line.c_str(), "name=%255s shape=%lld,%lld,%lld,%lld dtype=f32 offset=%llu bytes=%llu",
                    name, &n, &c, &h, &w, &off, &bytes) != 7) {
      throw IoError("export: malformed manifest line '" + line + "'");
    }
    e.name = name;
    e.shape = Shape{n, c, h, w};
    e.data = Tensor<float>(e.shape);
    bin.seekg(static_cast<std::streamoff>(off));
    if (!bin.read(reinterpret_cast<char*>(e.data.ptr()), static_cast<std::streamsize>(bytes))) {
      throw IoError("export: truncated data for '" + e.name + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace regnet
