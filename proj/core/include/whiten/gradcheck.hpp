#pragma once

#include <functional>
#include <string>
#include <vector>

#include "whiten/layers.hpp"

namespace whiten {

/// Outcome of one analytic-vs-finite-difference comparison for one
/// parameter group of one seeded instance.
struct CheckReport {
  std::string spec;
  std::string group;  // "x", "gamma", "bias", "skew"
  Index n = 0;
  Index m = 0;
  std::uint64_t seed = 0;
  double max_rel_err = 0.0;
  Index worst_index = -1;
  bool pass = false;
};

/// Central differences (f(x+h_i e_i) - f(x-h_i e_i)) / (2 h_i) with
/// h_i = h * max(1, |x_i|). Throws NumericError naming the coordinate when
/// f returns a non-finite value.
Vector fd_gradient(const std::function<double(const Vector&)>& f,
                   const Vector& x0, double h);

struct CheckOptions {
  double tol = 1e-5;
  double h = 1e-5;
  int resample_cap = 200;
};

/// One generated test instance: data, parameters and the linear probe G of
/// the objective phi = <G, layer_forward(X)>.
struct CheckInstance {
  Matrix x;
  LayerParams params;
  Matrix probe;
};

/// Draws a seeded instance satisfying the spec's guards (ZCA: raw eigen-gap
/// >= 1e-3; plain/max conditioning additionally clamp-free). Throws
/// NumericError when the guards cannot be satisfied within the resample cap.
CheckInstance make_instance(const WhiteningSpec& spec, Index n, Index m,
                            std::uint64_t seed, const CheckOptions& opts);

/// Checks every parameter group of the given instance. When a clamp mask is
/// active, the grad-X comparison excludes the masked spectral coordinates
/// (both sides transformed identically) and skips probes that flip the mask.
std::vector<CheckReport> check_instance(const WhiteningSpec& spec,
                                        const CheckInstance& inst,
                                        std::uint64_t seed,
                                        const CheckOptions& opts);

/// make_instance + check_instance.
std::vector<CheckReport> check_layer(const WhiteningSpec& spec, Index n,
                                     Index m, std::uint64_t seed, double tol);

std::string report_csv_header();
std::string to_csv_row(const CheckReport& r);

}  // namespace whiten
