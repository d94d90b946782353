#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cinformer/params.hpp"

namespace cinformer::gradcheck {

struct Options {
  double eps = 1e-3;
  double tolerance = 1e-4;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  // Coordinates probed per tensor per trial (all of them when the tensor is smaller).
  std::size_t probes_per_tensor = 12;
  // Coordinates probed per parameter tensor of the end-to-end model.
  std::size_t model_probes_per_tensor = 4;
};

struct Result {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;  // probes whose +h/-h evaluations crossed a branch
  std::string worst_leaf;
  bool passed = false;
};

/// Loss builder: reads the current values of the probed leaves.
using LossFn = std::function<Tensor<double>()>;

/// Compares backward() of sum(f() * r) (fixed random r) against central
/// differences on `leaves`. Per leaf the error is
///   max_i |analytic_i - numeric_i| / max(max_all|analytic|, max_i|numeric_i|, 1e-6)
/// where i runs over the probed coordinates and max_all over the whole tensor.
/// Probes whose perturbed evaluations take a different branch pattern than
/// the unperturbed one are skipped.
void check(Result& result, const std::vector<Tensor<double>>& leaves, const LossFn& f, const Options& options,
           SeededRng& rng, std::size_t probes_per_tensor, const std::vector<std::string>& names = {});

/// Every differentiable op and layer, then the end-to-end micro model.
std::vector<Result> run_suite(const Options& options);

}  // namespace cinformer::gradcheck
