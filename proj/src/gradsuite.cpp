#include "regnet/gradsuite.hpp"

#include <cmath>
#include <memory>

#include "regnet/blocks.hpp"

namespace regnet {

GradCheckReport check_gradients(const std::function<Var(Tape<double>&)>& build_loss,
                                const std::vector<Parameter<double>*>& params, double step,
                                double floor) {
  {
    Tape<double> g;
    Var loss = build_loss(g);
    g.backward(loss);
  }
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (const auto* p : params) analytic.push_back(p->grad);

  auto eval = [&build_loss]() {
    Tape<double> g;
    Var loss = build_loss(g);
    return g.value(loss).data[0];
  };

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = *params[pi];
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double keep = p.value.data[i];
      p.value.data[i] = keep + step;
      const double fp = eval();
      p.value.data[i] = keep - step;
      const double fm = eval();
      p.value.data[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = analytic[pi].data[i];
      const double err = std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), floor});
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

namespace {

// Shared scaffolding: a case owns its parameters (inputs included, so input
// gradients get checked too) and a random projection that turns tensor
// outputs into a scalar loss sensitive to every coordinate.
struct CaseContext {
  std::mt19937 rng;
  std::vector<std::unique_ptr<Parameter<double>>> owned;
  std::vector<Parameter<double>*> checked;

  explicit CaseContext(std::uint32_t seed) : rng(seed) {}

  Parameter<double>* make(const std::string& name, Shape s, bool check = true) {
    auto p = std::make_unique<Parameter<double>>(name, s);
    fill_normal(p->value, rng);
    if (check) checked.push_back(p.get());
    owned.push_back(std::move(p));
    return owned.back().get();
  }

  Tensor<double> projection(Shape s) { return random_normal<double>(s, rng); }
};

Var project_to_scalar(Tape<double>& g, Var y, const Tensor<double>& proj) {
  return sum_all(g, ewise_mul(g, y, g.leaf(proj)));
}

GradCase conv_case(const std::string& name, Shape xs, std::int64_t out_c, std::int64_t k,
                   int stride, int pad, int groups, bool bias, std::uint32_t seed) {
  return {name, [=]() {
            auto ctx = std::make_shared<CaseContext>(seed);
            auto* x = ctx->make("x", xs);
            auto* w = ctx->make("w", Shape{out_c, xs.c / groups, k, k});
            auto* b = bias ? ctx->make("b", Shape{out_c, 1, 1, 1}) : nullptr;
            const std::int64_t oh = (xs.h + 2 * pad - k) / stride + 1;
            const std::int64_t ow = (xs.w + 2 * pad - k) / stride + 1;
            auto proj = ctx->projection(Shape{xs.n, out_c, oh, ow});
            return check_gradients(
                [=](Tape<double>& g) {
                  Var y = conv2d(g, g.param(*x), g.param(*w), b ? g.param(*b) : Var{}, stride, pad,
                                 groups);
                  return project_to_scalar(g, y, proj);
                },
                ctx->checked);
          }};
}

template <typename BuildFn>
GradCase simple_case(const std::string& name, BuildFn build) {
  return {name, build};
}

GradCase cell_case(const std::string& name, CellKind kind, std::uint32_t seed) {
  return {name, [=]() {
            auto ctx = std::make_shared<CaseContext>(seed);
            const std::int64_t N = 3, H = 5, W = 5, B = 2;
            auto cell = std::make_shared<Cell<double>>("cell", kind, N);
            ParamSet<double> ps;
            cell->collect(ps);
            cell->init(ctx->rng);
            for (auto* p : ps.params) {
              fill_normal(p->value, ctx->rng);  // exercise nonzero biases too
              ctx->checked.push_back(p);
            }
            auto* x1 = ctx->make("x1", Shape{B, N, H, W});
            auto* x2 = ctx->make("x2", Shape{B, N, H, W});
            auto proj = ctx->projection(Shape{B, N, H, W});
            // two steps with shared weights: gradients accumulate across the unroll
            return check_gradients(
                [=](Tape<double>& g) {
                  CellState s = cell->make_state(g, B, H, W);
                  auto [h1, s1] = cell->step(g, g.param(*x1), s);
                  auto [h2, s2] = cell->step(g, g.param(*x2), s1);
                  return project_to_scalar(g, h2, proj);
                },
                ctx->checked);
          }};
}

// Gradient checks need a generic point: zero-init biases leave whole
// channels exactly on the ReLU kink (the initial hidden state is zero), so
// every parameter gets a random value first.
template <typename Block>
void randomize_and_check(Block& block, CaseContext& ctx) {
  ParamSet<double> ps;
  block.collect(ps);
  for (auto* p : ps.params) {
    fill_normal(p->value, ctx.rng);
    ctx.checked.push_back(p);
  }
}

GradCase regnet_block_case(const std::string& name, CellKind kind, std::uint32_t seed) {
  return {name, [=]() {
            auto ctx = std::make_shared<CaseContext>(seed);
            const std::int64_t N = 3, H = 6, W = 6, B = 2;
            auto block = std::make_shared<RegNetBlock<double>>("blk", N, N, 1, false, 1);
            auto reg = std::make_shared<StageRegulator<double>>("reg", kind, N);
            randomize_and_check(*block, *ctx);
            {
              ParamSet<double> ps;
              reg->collect(ps);
              for (auto* p : ps.params) {
                fill_normal(p->value, ctx->rng);
                ctx->checked.push_back(p);
              }
            }
            auto* x = ctx->make("x", Shape{B, N, H, W});
            auto proj = ctx->projection(Shape{B, N, H, W});
            // run the block twice with one regulator: the recurrent path and
            // the shared stage state both participate
            return check_gradients(
                [=](Tape<double>& g) {
                  std::optional<CellState> state;
                  auto [y1, s1] = block->forward(g, g.param(*x), *reg, state, Mode::train);
                  auto [y2, s2] = block->forward(g, y1, *reg, s1, Mode::train);
                  return project_to_scalar(g, y2, proj);
                },
                ctx->checked);
          }};
}

}  // namespace

std::vector<GradCase> standard_grad_suite() {
  std::vector<GradCase> cases;

  cases.push_back(conv_case("conv2d_dense_3x3", Shape{2, 3, 6, 6}, 4, 3, 1, 1, 1, true, 101));
  cases.push_back(conv_case("conv2d_strided", Shape{2, 4, 7, 7}, 4, 3, 2, 1, 1, false, 102));
  cases.push_back(conv_case("conv2d_grouped", Shape{1, 4, 5, 5}, 4, 3, 1, 1, 2, true, 103));
  cases.push_back(conv_case("conv2d_pointwise", Shape{2, 6, 4, 4}, 5, 1, 1, 0, 1, true, 104));
  cases.push_back(conv_case("conv2d_depthwise", Shape{2, 4, 5, 5}, 4, 3, 1, 1, 4, true, 105));
  cases.push_back(conv_case("conv2d_grouped_pointwise", Shape{2, 6, 4, 4}, 3, 1, 1, 0, 3, true, 106));

  cases.push_back(simple_case("batchnorm_train", []() {
    auto ctx = std::make_shared<CaseContext>(201);
    auto* x = ctx->make("x", Shape{3, 4, 5, 5});
    auto* ga = ctx->make("gamma", Shape{4, 1, 1, 1});
    auto* be = ctx->make("beta", Shape{4, 1, 1, 1});
    auto stats = std::make_shared<BatchNormStats<double>>(4);
    auto proj = ctx->projection(Shape{3, 4, 5, 5});
    return check_gradients(
        [=](Tape<double>& g) {
          Var y = batchnorm2d(g, g.param(*x), g.param(*ga), g.param(*be), *stats, Mode::train,
                              1e-5, 0.1);
          return project_to_scalar(g, y, proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("batchnorm_eval", []() {
    auto ctx = std::make_shared<CaseContext>(202);
    auto* x = ctx->make("x", Shape{2, 3, 4, 4});
    auto* ga = ctx->make("gamma", Shape{3, 1, 1, 1});
    auto* be = ctx->make("beta", Shape{3, 1, 1, 1});
    auto stats = std::make_shared<BatchNormStats<double>>(3);
    fill_normal(stats->running_mean, ctx->rng);
    for (auto& v : stats->running_var.data) {
      v = 0.5 + static_cast<double>(ctx->rng()) / 8589934592.0;  // positive variances
    }
    auto proj = ctx->projection(Shape{2, 3, 4, 4});
    return check_gradients(
        [=](Tape<double>& g) {
          Var y = batchnorm2d(g, g.param(*x), g.param(*ga), g.param(*be), *stats, Mode::eval, 1e-5,
                              0.1);
          return project_to_scalar(g, y, proj);
        },
        ctx->checked);
  }));

  struct Unary {
    const char* name;
    Var (*fn)(Tape<double>&, Var);
  };
  const Unary unary[] = {{"relu", &relu<double>},
                         {"tanh", &tanh<double>},
                         {"sigmoid", &sigmoid<double>},
                         {"global_avgpool", &global_avgpool<double>}};
  std::uint32_t seed = 300;
  for (const auto& u : unary) {
    const std::string nm = u.name;
    auto fn = u.fn;
    const std::uint32_t sd = seed++;
    cases.push_back(simple_case(nm, [nm, fn, sd]() {
      auto ctx = std::make_shared<CaseContext>(sd);
      auto* x = ctx->make("x", Shape{2, 3, 4, 4});
      Shape out_shape = (nm == "global_avgpool") ? Shape{2, 3, 1, 1} : Shape{2, 3, 4, 4};
      auto proj = ctx->projection(out_shape);
      return check_gradients(
          [=](Tape<double>& g) { return project_to_scalar(g, fn(g, g.param(*x)), proj); },
          ctx->checked);
    }));
  }

  cases.push_back(simple_case("concat_channels", []() {
    auto ctx = std::make_shared<CaseContext>(310);
    auto* a = ctx->make("a", Shape{2, 2, 4, 4});
    auto* b = ctx->make("b", Shape{2, 3, 4, 4});
    auto proj = ctx->projection(Shape{2, 5, 4, 4});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, concat_channels(g, g.param(*a), g.param(*b)), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("add_ewise_mul_affine", []() {
    auto ctx = std::make_shared<CaseContext>(311);
    auto* a = ctx->make("a", Shape{2, 3, 3, 3});
    auto* b = ctx->make("b", Shape{2, 3, 3, 3});
    auto proj = ctx->projection(Shape{2, 3, 3, 3});
    return check_gradients(
        [=](Tape<double>& g) {
          Var y = add(g, ewise_mul(g, g.param(*a), g.param(*b)), affine(g, g.param(*a), 0.5, -1.0));
          return project_to_scalar(g, y, proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("maxpool2d", []() {
    auto ctx = std::make_shared<CaseContext>(312);
    auto* x = ctx->make("x", Shape{2, 3, 7, 7});
    auto proj = ctx->projection(Shape{2, 3, 4, 4});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, maxpool2d(g, g.param(*x), 3, 2, 1), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("linear", []() {
    auto ctx = std::make_shared<CaseContext>(313);
    auto* x = ctx->make("x", Shape{3, 5, 1, 1});
    auto* w = ctx->make("w", Shape{4, 5, 1, 1});
    auto* b = ctx->make("b", Shape{4, 1, 1, 1});
    auto proj = ctx->projection(Shape{3, 4, 1, 1});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, linear(g, g.param(*x), g.param(*w), g.param(*b)), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("channel_scale", []() {
    auto ctx = std::make_shared<CaseContext>(314);
    auto* x = ctx->make("x", Shape{2, 3, 4, 4});
    auto* s = ctx->make("s", Shape{2, 3, 1, 1});
    auto proj = ctx->projection(Shape{2, 3, 4, 4});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, channel_scale(g, g.param(*x), g.param(*s)), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("softmax_xent", []() {
    auto ctx = std::make_shared<CaseContext>(315);
    auto* x = ctx->make("logits", Shape{4, 6, 1, 1});
    const std::vector<int> labels = {0, 3, 5, 2};
    return check_gradients(
        [=](Tape<double>& g) { return softmax_xent(g, g.param(*x), labels); }, ctx->checked);
  }));

  cases.push_back(simple_case("factorized_conv", []() {
    auto ctx = std::make_shared<CaseContext>(316);
    const std::int64_t N = 4;
    auto fc = std::make_shared<FactorizedConv<double>>("fc", N, true);
    fc->init(ctx->rng);
    ParamSet<double> ps;
    fc->collect(ps);
    for (auto* p : ps.params) {
      fill_normal(p->value, ctx->rng);
      ctx->checked.push_back(p);
    }
    auto* x = ctx->make("x", Shape{2, 2 * N, 5, 5});
    auto proj = ctx->projection(Shape{2, N, 5, 5});
    return check_gradients(
        [=](Tape<double>& g) { return project_to_scalar(g, fc->forward(g, g.param(*x)), proj); },
        ctx->checked);
  }));

  cases.push_back(cell_case("cell_vanilla_unroll2", CellKind::vanilla, 401));
  cases.push_back(cell_case("cell_gru_unroll2", CellKind::gru, 402));
  cases.push_back(cell_case("cell_lstm_unroll2", CellKind::lstm, 403));

  cases.push_back(simple_case("block_basic", []() {
    auto ctx = std::make_shared<CaseContext>(501);
    auto blk = std::make_shared<BasicBlock<double>>("blk", 3, 3, 1, false, 1);
    randomize_and_check(*blk, *ctx);
    auto* x = ctx->make("x", Shape{2, 3, 6, 6});
    auto proj = ctx->projection(Shape{2, 3, 6, 6});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, blk->forward(g, g.param(*x), Mode::train), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("block_basic_downsample", []() {
    auto ctx = std::make_shared<CaseContext>(502);
    auto blk = std::make_shared<BasicBlock<double>>("blk", 3, 6, 2, false, 1);
    randomize_and_check(*blk, *ctx);
    auto* x = ctx->make("x", Shape{2, 3, 6, 6});
    auto proj = ctx->projection(Shape{2, 6, 3, 3});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, blk->forward(g, g.param(*x), Mode::train), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("block_bottleneck", []() {
    auto ctx = std::make_shared<CaseContext>(503);
    auto blk = std::make_shared<BottleneckBlock<double>>("blk", 8, 2, 1, false, 1);
    randomize_and_check(*blk, *ctx);
    auto* x = ctx->make("x", Shape{2, 8, 5, 5});
    auto proj = ctx->projection(Shape{2, 8, 5, 5});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, blk->forward(g, g.param(*x), Mode::train), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("block_se_basic", []() {
    auto ctx = std::make_shared<CaseContext>(504);
    auto blk = std::make_shared<BasicBlock<double>>("blk", 4, 4, 1, true, 2);
    randomize_and_check(*blk, *ctx);
    auto* x = ctx->make("x", Shape{2, 4, 5, 5});
    auto proj = ctx->projection(Shape{2, 4, 5, 5});
    return check_gradients(
        [=](Tape<double>& g) {
          return project_to_scalar(g, blk->forward(g, g.param(*x), Mode::train), proj);
        },
        ctx->checked);
  }));

  cases.push_back(simple_case("se_gate", []() {
    auto ctx = std::make_shared<CaseContext>(505);
    auto se = std::make_shared<SEGate<double>>("se", 4, 2);
    se->init(ctx->rng);
    ParamSet<double> ps;
    se->collect(ps);
    for (auto* p : ps.params) {
      fill_normal(p->value, ctx->rng);
      ctx->checked.push_back(p);
    }
    auto* x = ctx->make("x", Shape{2, 4, 4, 4});
    auto proj = ctx->projection(Shape{2, 4, 4, 4});
    return check_gradients(
        [=](Tape<double>& g) { return project_to_scalar(g, se->forward(g, g.param(*x)), proj); },
        ctx->checked);
  }));

  cases.push_back(regnet_block_case("block_regnet_vanilla_2step", CellKind::vanilla, 601));
  cases.push_back(regnet_block_case("block_regnet_gru_2step", CellKind::gru, 602));
  cases.push_back(regnet_block_case("block_regnet_lstm_2step", CellKind::lstm, 603));

  cases.push_back(simple_case("block_bottleneck_regnet_2step", []() {
    auto ctx = std::make_shared<CaseContext>(604);
    const std::int64_t N = 2;
    auto blk = std::make_shared<BottleneckRegNetBlock<double>>("blk", 4 * N, N, 1, false, 1);
    auto reg = std::make_shared<StageRegulator<double>>("reg", CellKind::lstm, N);
    randomize_and_check(*blk, *ctx);
    {
      ParamSet<double> ps;
      reg->collect(ps);
      for (auto* p : ps.params) {
        fill_normal(p->value, ctx->rng);
        ctx->checked.push_back(p);
      }
    }
    auto* x = ctx->make("x", Shape{2, 4 * N, 5, 5});
    auto proj = ctx->projection(Shape{2, 4 * N, 5, 5});
    return check_gradients(
        [=](Tape<double>& g) {
          std::optional<CellState> state;
          auto [y1, s1] = blk->forward(g, g.param(*x), *reg, state, Mode::train);
          auto [y2, s2] = blk->forward(g, y1, *reg, s1, Mode::train);
          return project_to_scalar(g, y2, proj);
        },
        ctx->checked);
  }));

  return cases;
}

}  // namespace regnet
