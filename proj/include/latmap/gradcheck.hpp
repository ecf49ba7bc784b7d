#pragma once

#include <cstdint>
#include <string>

namespace latmap {

/// Tolerances for comparing analytic gradients to central differences:
/// |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) + abs_tol.
struct GradcheckConfig {
  int cases = 100;
  double step = 1e-6;
  double rel_tol = 1e-4;
  double abs_tol = 1e-9;
  int batch = 4;
};

struct GradcheckReport {
  int cases = 0;
  std::int64_t grid_params_checked = 0;
  std::int64_t decoder_params_checked = 0;
  std::int64_t failures = 0;
  double max_rel_error = 0.0;  // over entries with max(|a|,|n|) > 1e-6
  std::string first_failure;

  bool ok() const { return failures == 0; }
};

/// Compares the composite gradient of the mean cosine loss through the
/// decoder and both levels of a two-level toy grid against central finite
/// differences, over `cfg.cases` seeded random cases. The toy grid's fine
/// level is small enough to be hashed, so collisions are exercised.
GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckConfig& cfg = {});

}  // namespace latmap
