#pragma once

#include <optional>
#include <utility>
#include <variant>

#include "whiten/linalg.hpp"
#include "whiten/spec.hpp"

namespace whiten {

enum class Phase { Train, Eval };

/// Learnable state of one layer. gamma/bias are empty when the spec is
/// parameterless; skew_upper holds the strict upper triangle of the rotation
/// generator S (row-major), so skew-symmetry holds by construction.
struct LayerParams {
  Vector gamma;
  Vector bias;
  Vector skew_upper;

  static LayerParams init(const WhiteningSpec& spec, Index n);
  bool has_scale() const { return gamma.size() > 0; }
  bool has_rotation() const { return skew_upper.size() > 0; }
};

/// Materializes S from its strict upper triangle / extracts the triangle.
Matrix skew_to_matrix(const Vector& upper, Index n);
Vector skew_from_matrix(const Matrix& s);
Index skew_param_count(Index n);

/// Moving-average covariance used at evaluation time.
struct RunningCov {
  SymMatrix sigma_hat;
  long count = 0;
};

/// sigma_hat <- alpha*sigma_hat + (1-alpha)*sigma, exactly symmetric.
RunningCov update_running(const RunningCov& rc, const SymMatrix& sigma,
                          double alpha);

/// Effective rank: round(exp(entropy of the l1-normalized spectrum)),
/// clamped to [1, n]. Throws DataError on an all-zero spectrum.
Index erank(const Vector& lambda);

/// (X_c, mu) with X_c = X - mean(X) 1^T. Throws DataError when M < 2.
std::pair<Matrix, Vector> center(const Matrix& x);

/// (1/M) X_c X_c^T + eps I, computed from one triangle and mirrored.
SymMatrix batch_cov(const Matrix& xc, double eps);

// --- forward caches ------------------------------------------------------

struct NonePayload {};

struct BnPayload {
  Vector sigma2;  // per-channel variances actually divided by (ridge included)
};

struct ZcaPayload {
  Matrix u;
  Vector lambda;      // clamped spectrum
  Vector lambda_raw;  // spectrum before clamping (diagnostics, guards)
  std::vector<std::uint8_t> mask;
  double theta = 0.0;
  Index erank_r = 0;          // entropy mode only
  bool clamp_at_theta = false;  // true on the eps <= theta branch
  Matrix a;                   // U diag(lambda)^{-1/2} U^T (gamma-free)
};

struct LdlPayload {
  UnitLdl fact;
  Matrix a;  // Gamma D^{-1/2} L^{-1} as applied in the forward pass
};

using StagePayload = std::variant<NonePayload, BnPayload, ZcaPayload, LdlPayload>;

/// Everything one whitening stage needs to run its backward pass.
struct StageCache {
  Matrix xc;
  Vector mu;
  Vector gamma;  // empty when the stage ran parameterless
  StagePayload payload;
};

struct RotationCache {
  Matrix w;
  Matrix s;
  Matrix y;      // stage input
  Vector gamma;  // empty when the rotation stage carries no scale
};

struct ForwardCache {
  WhiteningSpec spec;  // the composition this cache was produced under
  Phase phase = Phase::Train;
  std::optional<StageCache> standardizer;  // corr prefix stage
  StageCache whitener;
  std::optional<RotationCache> rotation;

  /// Clamp mask of the whitener stage (empty when not a ZCA/pivoted stage).
  std::vector<std::uint8_t> clamp_mask() const;
};

struct GradientSet {
  Matrix grad_x;
  Vector grad_gamma;  // empty = absent (parameterless spec)
  Vector grad_bias;
  Matrix grad_skew;   // n x n, zero matrix when the spec has no rotation
};

/// Per-stage running statistics and the lazily memoized eval transform.
struct StageMemo {
  long at_count = -1;
  StagePayload payload;
};

struct LayerState {
  RunningCov main;
  RunningCov standardizer;
  StageMemo main_memo;
  StageMemo standardizer_memo;

  static LayerState init(const WhiteningSpec& spec, Index n);
};

// --- per-whitener operations (no corr prefix, no rotation stage) ---------

std::pair<Matrix, ForwardCache> bn_forward(const Matrix& x,
                                           const LayerParams& params,
                                           const WhiteningSpec& spec,
                                           LayerState& state, Phase phase);
GradientSet bn_backward(const ForwardCache& cache, const Matrix& grad_z);

std::pair<Matrix, ForwardCache> chol_forward(const Matrix& x,
                                             const LayerParams& params,
                                             const WhiteningSpec& spec,
                                             LayerState& state, Phase phase);
GradientSet chol_backward(const ForwardCache& cache, const Matrix& grad_z);

std::pair<Matrix, ForwardCache> pldlp_forward(const Matrix& x,
                                              const LayerParams& params,
                                              const WhiteningSpec& spec,
                                              LayerState& state, Phase phase);
GradientSet pldlp_backward(const ForwardCache& cache, const Matrix& grad_z);

std::pair<Matrix, ForwardCache> zca_forward(const Matrix& x,
                                            const LayerParams& params,
                                            const WhiteningSpec& spec,
                                            LayerState& state, Phase phase);
GradientSet zca_backward(const ForwardCache& cache, const Matrix& grad_z);

std::pair<Matrix, ForwardCache> corr_forward(const Matrix& x,
                                             const LayerParams& params,
                                             const WhiteningSpec& spec,
                                             LayerState& state, Phase phase);
GradientSet corr_backward(const ForwardCache& cache, const Matrix& grad_z);

// --- full composition: standardizer, whitener, rotation, scale -----------

std::pair<Matrix, ForwardCache> layer_forward(const WhiteningSpec& spec,
                                              const Matrix& x,
                                              const LayerParams& params,
                                              LayerState& state, Phase phase);
GradientSet layer_backward(const WhiteningSpec& spec,
                           const ForwardCache& cache, const Matrix& grad_z);

}  // namespace whiten
