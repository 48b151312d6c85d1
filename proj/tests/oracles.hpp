// Test-only reference implementations, independent of the library's
// execution paths.
#pragma once

#include <vector>

#include "regnet/tensor.hpp"

namespace oracles {

// Direct six-loop cross-correlation.
template <typename T>
regnet::Tensor<T> direct_conv(const regnet::Tensor<T>& x, const regnet::Tensor<T>& w,
                              const regnet::Tensor<T>* bias, int stride, int pad, int groups) {
  using regnet::Shape;
  const auto n = x.shape.n, in_c = x.shape.c, h = x.shape.h, wd = x.shape.w;
  const auto out_c = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const auto icpg = in_c / groups, ocpg = out_c / groups;
  const auto oh = (h + 2 * pad - kh) / stride + 1;
  const auto ow = (wd + 2 * pad - kw) / stride + 1;
  regnet::Tensor<T> out(Shape{n, out_c, oh, ow});
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t oc = 0; oc < out_c; ++oc) {
      const std::int64_t g = oc / ocpg;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T acc = bias ? bias->data[static_cast<std::size_t>(oc)] : T(0);
          for (std::int64_t ic = 0; ic < icpg; ++ic) {
            for (std::int64_t r = 0; r < kh; ++r) {
              for (std::int64_t q = 0; q < kw; ++q) {
                const std::int64_t iy = oy * stride + r - pad;
                const std::int64_t ix = ox * stride + q - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(s, g * icpg + ic, iy, ix) * w.at(oc, ic, r, q);
              }
            }
          }
          out.at(s, oc, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace oracles
