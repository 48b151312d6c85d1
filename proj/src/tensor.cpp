#include "regnet/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace regnet {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

template <typename T>
bool Tensor<T>::all_finite() const {
  // branch-free so the scan vectorizes; fabs(nan) < inf and inf < inf are
  // both false
  const T inf = std::numeric_limits<T>::infinity();
  int ok = 1;
  const T* p = data.data();
  const std::size_t total = data.size();
  for (std::size_t i = 0; i < total; ++i) ok &= (std::fabs(p[i]) < inf) ? 1 : 0;
  return ok != 0;
}

template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937& rng, T lo, T hi) {
  // 32-bit mantissa worth of resolution is plenty for init draws.
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  for (T& v : t.data) {
    const double u = static_cast<double>(rng()) * (1.0 / 4294967296.0);
    v = static_cast<T>(static_cast<double>(lo) + span * u);
  }
}

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937& rng) {
  // Box-Muller, pinned so draws do not depend on the standard library's
  // distribution internals.
  std::size_t i = 0;
  while (i < t.data.size()) {
    double u1 = 0.0;
    while (u1 <= 1e-12) u1 = static_cast<double>(rng()) * (1.0 / 4294967296.0);
    const double u2 = static_cast<double>(rng()) * (1.0 / 4294967296.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    t.data[i++] = static_cast<T>(r * std::cos(a));
    if (i < t.data.size()) t.data[i++] = static_cast<T>(r * std::sin(a));
  }
}

template <typename T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  if (!(a.shape == b.shape)) {
    throw InvalidArgument("max_rel_err: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double x = static_cast<double>(a.data[i]);
    const double y = static_cast<double>(b.data[i]);
    const double denom = std::max({std::fabs(x), std::fabs(y), floor});
    worst = std::max(worst, std::fabs(x - y) / denom);
  }
  return worst;
}

template struct Tensor<float>;
template struct Tensor<double>;
template void fill_uniform<float>(Tensor<float>&, std::mt19937&, float, float);
template void fill_uniform<double>(Tensor<double>&, std::mt19937&, double, double);
template void fill_normal<float>(Tensor<float>&, std::mt19937&);
template void fill_normal<double>(Tensor<double>&, std::mt19937&);
template double max_rel_err<float>(const Tensor<float>&, const Tensor<float>&, double);
template double max_rel_err<double>(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace regnet
