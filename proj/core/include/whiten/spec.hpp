#pragma once

#include <limits>
#include <string>

#include "whiten/errors.hpp"

namespace whiten {

enum class Whitener { None, BN, ZCA, LDL, PLDLP };
enum class Conditioning { Plain, Max, Entropy };

/// Declarative description of one whitening layer composition: an optional
/// parameterless standardizer ("corr" prefix), the whitener, conditioning
/// constants, and optional rotation/scale stages appended at the end.
///
/// Canonical text forms mirror the published layer names:
///   BN, BN(1e-05), BN->W, BN->W->G,
///   ZCA(0,inf), ZCAM(1e-05,1e+12,0.01), ZCAE(1e-05,1e+12),
///   ZCAcorr(0,inf), ZCAcorr(0,inf)->W->G, ZCAMcorr(1e-05,1e+12,0.1),
///   LDL(1e-05), LDLcorr(1e-05), PLDLP(1e-05), ID.
/// A trailing "np" on the base name marks the bare parameterless variant
/// (no scale, no bias), which otherwise only appears inside compositions.
struct WhiteningSpec {
  bool standardize_first = false;
  Whitener whitener = Whitener::BN;
  Conditioning conditioning = Conditioning::Plain;
  double eps = 0.0;
  double k_max = std::numeric_limits<double>::infinity();
  double c = 0.0;  // max-mode threshold fraction, in (0,1)
  bool rotate = false;
  bool scale = true;
  double alpha = 0.9;  // running-covariance moving average factor

  /// Throws SpecError when the composition is not a valid one.
  void validate() const;

  /// Canonical printable name; parse(str()) round-trips.
  std::string str() const;

  static WhiteningSpec parse(const std::string& text);

  bool operator==(const WhiteningSpec& o) const = default;
};

std::string to_string(Whitener w);
std::string to_string(Conditioning c);

}  // namespace whiten
