#pragma once

#include <iosfwd>

#include "regnet/arch.hpp"

namespace regnet {

struct CostRow {
  std::string layer;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

// Per-layer parameter and multiply-accumulate accounting. FLOPs are reported
// as 2*MACs by declared convention; batchnorm, activations and pooling are
// excluded from MACs (their parameters are still counted).
struct CostReport {
  std::string label;
  std::vector<CostRow> rows;

  std::int64_t total_params() const;
  std::int64_t total_macs() const;
  std::int64_t total_flops() const { return 2 * total_macs(); }

  // CSV columns: layer,params,macs,flops (one row per layer plus a total).
  void to_csv(std::ostream& os) const;
};

// Analytic counts derived from the spec alone, never from a materialized
// network; the builder and this walk are cross-checked by tests.
CostReport count_params(const ArchSpec& spec);
CostReport count_flops(const ArchSpec& spec, Shape input_geometry);

// Row-aligned subtraction a - b. Rows present on only one side are carried
// through with a +/- marker.
CostReport diff_reports(const CostReport& a, const CostReport& b);

// MACs per output pixel of a dense 3x3 convolution 2N->N versus the
// factorized two-step pair: {18N^2, 11N}.
std::pair<std::int64_t, std::int64_t> factorized_vs_full_macs_per_pixel(std::int64_t width);

// Machine-written comparison of computed costs against the published
// reference figures for this architecture family, with the residuals and the
// reason they cannot be driven to zero (the published gate-level accounting
// is not recoverable).
void write_reconciliation(std::ostream& os);

}  // namespace regnet
