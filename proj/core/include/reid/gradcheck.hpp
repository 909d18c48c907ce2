#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "reid/rng.hpp"
#include "reid/tensor.hpp"

namespace reid {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

/**
 * Central finite-difference check, 64-bit only.
 *
 * `forward` recomputes the scalar from the current contents of `inputs`;
 * `analytic` holds one gradient tensor per input (matching dims). Up to
 * max_coords_per_tensor coordinates per tensor are perturbed by +/-eps.
 *
 * The reported error is max |analytic - numeric| normalized by the largest
 * gradient magnitude seen, so coordinates whose true gradient is zero do
 * not drown the check in round-off noise.
 */
GradCheckReport finite_diff_check(const std::function<double()>& forward,
                                  std::span<Tensor<double>* const> inputs,
                                  const std::vector<Tensor<double>>& analytic,
                                  double eps,
                                  std::size_t max_coords_per_tensor, Rng& rng);

struct GradCheckCase {
  std::string name;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Named finite-difference checks over the differentiable surface:
// scope is one of "primitives", "block", "losses", "all". Each case runs
// `seeds` seeded repetitions and reports the worst error.
std::vector<GradCheckCase> run_gradient_suite(const std::string& scope,
                                              int seeds,
                                              std::uint64_t base_seed);

}  // namespace reid
