// Baseline-recovery configuration: aligns a regulated network (or block) so
// its forward pass reproduces the plain residual baseline exactly. Used by
// the block tests and the acceptance suite.
//
// Recipe: copy the shared weights across (conv12<-conv1 ...), zero the
// regulated variant's extra biases, zero every regulator parameter (the
// hidden map becomes relu(bn(0)) = 0 under fresh running stats), and make
// the fusion stage an identity: fusion conv = [I | 0] over the channel
// concat, fusion BN with running_var = 1 - eps so invstd is exactly 1.
// Comparisons run in eval mode at double precision.
#pragma once

#include <unordered_map>

#include "regnet/arch.hpp"

namespace equivalence {

using namespace regnet;

template <typename T>
std::unordered_map<std::string, Parameter<T>*> param_map(ParamSet<T>& ps) {
  std::unordered_map<std::string, Parameter<T>*> m;
  for (auto* p : ps.params) m[p->name] = p;
  return m;
}

template <typename T>
std::unordered_map<std::string, Tensor<T>*> buffer_map(ParamSet<T>& ps) {
  std::unordered_map<std::string, Tensor<T>*> m;
  for (auto& [name, t] : ps.buffers) m[name] = t;
  return m;
}

inline std::string replace_segment(std::string name, const std::string& from,
                                   const std::string& to) {
  const auto pos = name.find("." + from + ".");
  if (pos != std::string::npos) name.replace(pos + 1, from.size(), to);
  return name;
}

// plain layer name -> regulated layer name
inline std::string to_regulated_name(std::string name, bool bottleneck) {
  if (bottleneck) {
    name = replace_segment(name, "conv1", "conv12");
    name = replace_segment(name, "conv2", "conv23");
    name = replace_segment(name, "conv3", "conv45");
    name = replace_segment(name, "bn1", "bn12");
    name = replace_segment(name, "bn2", "bn23");
    name = replace_segment(name, "bn3", "bn45");
  } else {
    name = replace_segment(name, "conv1", "conv12");
    name = replace_segment(name, "conv2", "conv34");
    name = replace_segment(name, "bn1", "bn12");
    name = replace_segment(name, "bn2", "bn34");
  }
  return name;
}

// Makes `fusion conv + BN + ReLU` the identity on the first `width` channels
// (eval mode, non-negative inputs).
template <typename T>
void make_fusion_identity(Conv2dLayer<T>& fusion_conv, BatchNorm2dLayer<T>& fusion_bn) {
  fusion_conv.weight.value.zero();
  const auto& ws = fusion_conv.weight.value.shape;  // (N, 2N, 1, 1)
  for (std::int64_t oc = 0; oc < ws.n; ++oc) fusion_conv.weight.value.at(oc, oc, 0, 0) = T(1);
  fusion_bn.gamma.value.fill(T(1));
  fusion_bn.beta.value.zero();
  fusion_bn.stats.running_mean.zero();
  fusion_bn.stats.running_var.fill(T(1) - fusion_bn.eps);
}

template <typename T>
void zero_params(ParamSet<T>& ps, const std::string& prefix) {
  for (auto* p : ps.params) {
    if (p->name.rfind(prefix, 0) == 0) p->value.zero();
  }
}

// Copies every plain-network tensor into the regulated network (renaming the
// block layers), zeroes the regulator and the regulated-only biases, and
// sets each fusion stage to the identity.
template <typename T>
void align_regulated_to_plain(Network<T>& regulated, Network<T>& plain) {
  const bool bneck = plain.spec().bottleneck();
  auto reg_params = param_map(regulated.params());
  auto reg_buffers = buffer_map(regulated.params());

  for (auto* p : plain.params().params) {
    const std::string target = to_regulated_name(p->name, bneck);
    auto it = reg_params.find(target);
    if (it == reg_params.end()) {
      throw std::logic_error("equivalence: no regulated counterpart for " + p->name);
    }
    it->second->value = p->value;
  }
  for (auto& [name, buf] : plain.params().buffers) {
    const std::string target = to_regulated_name(name, bneck);
    auto it = reg_buffers.find(target);
    if (it == reg_buffers.end()) {
      throw std::logic_error("equivalence: no regulated counterpart for buffer " + name);
    }
    *it->second = *buf;
  }

  // regulated-only pieces: biases off, regulator off, fusion = identity
  for (auto* p : regulated.params().params) {
    const bool extra_bias =
        p->name.find(".conv12.bias") != std::string::npos ||
        p->name.find(".conv23.bias") != std::string::npos ||
        p->name.find(".conv34.bias") != std::string::npos ||
        p->name.find(".conv45.bias") != std::string::npos;
    if (extra_bias || p->name.find(".regulator.") != std::string::npos) p->value.zero();
  }
  for (auto& [name, buf] : regulated.params().buffers) {
    if (name.find(".regulator.bn") != std::string::npos) {
      if (name.find("running_mean") != std::string::npos) buf->zero();
      if (name.find("running_var") != std::string::npos) buf->fill(T(1));
    }
  }
  const std::string fusion_conv = bneck ? ".conv34." : ".conv23.";
  const std::string fusion_bn = bneck ? ".bn34." : ".bn23.";
  for (auto* p : regulated.params().params) {
    if (p->name.find(fusion_conv + "weight") != std::string::npos) {
      p->value.zero();
      const auto& ws = p->value.shape;
      for (std::int64_t oc = 0; oc < ws.n; ++oc) p->value.at(oc, oc, 0, 0) = T(1);
    }
    if (p->name.find(fusion_bn + "gamma") != std::string::npos) p->value.fill(T(1));
    if (p->name.find(fusion_bn + "beta") != std::string::npos) p->value.zero();
  }
  for (auto& [name, buf] : regulated.params().buffers) {
    if (name.find(fusion_bn) == std::string::npos) continue;
    if (name.find("running_mean") != std::string::npos) buf->zero();
    if (name.find("running_var") != std::string::npos) buf->fill(T(1) - T(1e-5));
  }
}

}  // namespace equivalence
