#include "whiten/layers.hpp"

#include <cmath>
#include <sstream>

#include "whiten/rotation.hpp"

namespace whiten {

namespace {

Matrix demean_rows(const Matrix& g) {
  return g.colwise() - g.rowwise().mean().eval();
}

Matrix strictly_lower(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::StrictlyLower>();
  return out;
}

Matrix lower_with_diag(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::Lower>();
  return out;
}

void require_train_cache(const ForwardCache& cache, const char* op) {
  if (cache.phase != Phase::Train) {
    throw PhaseError(std::string(op) + ": backward needs a train-phase cache");
  }
}

void require_stats(const RunningCov& rc, const WhiteningSpec& spec) {
  if (rc.count == 0) {
    throw PhaseError(spec.str() +
                     ": eval phase with uninitialized running statistics");
  }
}

}  // namespace

LayerParams LayerParams::init(const WhiteningSpec& spec, Index n) {
  LayerParams p;
  if (spec.scale) {
    p.gamma = Vector::Ones(n);
    p.bias = Vector::Zero(n);
  }
  if (spec.rotate) p.skew_upper = Vector::Zero(skew_param_count(n));
  return p;
}

Index skew_param_count(Index n) { return n * (n - 1) / 2; }

Matrix skew_to_matrix(const Vector& upper, Index n) {
  if (upper.size() != skew_param_count(n)) {
    throw DataError("skew_to_matrix: parameter count does not match n");
  }
  Matrix s = Matrix::Zero(n, n);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j, ++k) {
      s(i, j) = upper[k];
      s(j, i) = -upper[k];
    }
  }
  return s;
}

Vector skew_from_matrix(const Matrix& s) {
  const Index n = s.rows();
  Vector upper(skew_param_count(n));
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j, ++k) upper[k] = s(i, j);
  }
  return upper;
}

RunningCov update_running(const RunningCov& rc, const SymMatrix& sigma,
                          double alpha) {
  if (rc.sigma_hat.n() != sigma.n()) {
    throw DataError("update_running: shape mismatch");
  }
  RunningCov out;
  out.sigma_hat = SymMatrix::from_lower(alpha * rc.sigma_hat.mat() +
                                        (1.0 - alpha) * sigma.mat());
  out.count = rc.count + 1;
  return out;
}

Index erank(const Vector& lambda) {
  const Index n = lambda.size();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) total += std::max(lambda[i], 0.0);
  if (!(total > 0.0)) {
    throw DataError("erank: degenerate all-zero spectrum");
  }
  double h = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double p = std::max(lambda[i], 0.0) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  Index r = static_cast<Index>(std::lround(std::exp(h)));
  return std::min(std::max(r, Index{1}), n);
}

std::pair<Matrix, Vector> center(const Matrix& x) {
  if (x.cols() < 2) {
    throw DataError("center: degenerate batch, need M >= 2 samples");
  }
  Vector mu = x.rowwise().mean();
  Matrix xc = x.colwise() - mu;
  return {std::move(xc), std::move(mu)};
}

SymMatrix batch_cov(const Matrix& xc, double eps) {
  const Index n = xc.rows();
  Matrix lower = Matrix::Zero(n, n);
  lower.selfadjointView<Eigen::Lower>().rankUpdate(
      xc, 1.0 / static_cast<double>(xc.cols()));
  lower.diagonal().array() += eps;
  return SymMatrix::from_lower(lower);
}

namespace {

// --- spectrum conditioning (ZCA) ------------------------------------------

struct ConditionedSpectrum {
  Vector lambda;
  std::vector<std::uint8_t> mask;
  double theta = 0.0;
  Index erank_r = 0;
  bool clamp_at_theta = false;
};

ConditionedSpectrum condition_spectrum(const Vector& raw,
                                       const WhiteningSpec& spec) {
  ConditionedSpectrum out;
  out.lambda = raw;
  out.mask.assign(raw.size(), 0);
  switch (spec.conditioning) {
    case Conditioning::Plain:
      out.theta = 0.0;
      break;
    case Conditioning::Max:
      out.theta = spec.c * raw[0];
      break;
    case Conditioning::Entropy:
      out.erank_r = erank(raw);
      out.theta = raw[out.erank_r - 1];
      break;
  }
  const double floor_v = spec.eps <= out.theta ? out.theta : spec.eps;
  out.clamp_at_theta = spec.eps <= out.theta;
  for (Index i = 0; i < out.lambda.size(); ++i) {
    if (out.lambda[i] < floor_v) {
      out.lambda[i] = floor_v;
      out.mask[i] = 1;
    }
  }
  return out;
}

// --- stage-level forward/backward ------------------------------------------

struct StageGrads {
  Matrix grad_x;
  Vector grad_gamma;
  Vector grad_bias;
};

Vector row_variances(const Matrix& xc) {
  return xc.rowwise().squaredNorm() / static_cast<double>(xc.cols());
}

// Applies gamma row-scaling when present.
Matrix scale_rows(const Vector& gamma, const Matrix& m) {
  if (gamma.size() == 0) return m;
  return gamma.asDiagonal() * m;
}

Matrix add_bias(Matrix z, const Vector& bias) {
  if (bias.size() > 0) z.colwise() += bias;
  return z;
}

double stage_alpha(const RunningCov& rc, const WhiteningSpec& spec) {
  // First update seeds sigma_hat with the batch covariance.
  return rc.count == 0 ? 0.0 : spec.alpha;
}

Matrix gathered_rows(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[i]);
  return out;
}

Matrix scattered_rows(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(perm[i]) = m.row(i);
  return out;
}

// Gamma-free transform pieces computed from a covariance matrix.
StagePayload make_payload(Whitener kind, const SymMatrix& sigma,
                          const WhiteningSpec& spec, double extra_ridge) {
  switch (kind) {
    case Whitener::None:
      return NonePayload{};
    case Whitener::BN: {
      BnPayload p;
      p.sigma2 = sigma.mat().diagonal().array() + extra_ridge;
      return p;
    }
    case Whitener::ZCA: {
      ZcaPayload p;
      EigPair eig = sym_eig(sigma);
      ConditionedSpectrum cs = condition_spectrum(eig.lambda, spec);
      p.u = std::move(eig.u);
      p.lambda_raw = std::move(eig.lambda);
      p.lambda = std::move(cs.lambda);
      p.mask = std::move(cs.mask);
      p.theta = cs.theta;
      p.erank_r = cs.erank_r;
      p.clamp_at_theta = cs.clamp_at_theta;
      p.a = p.u * p.lambda.cwiseSqrt().cwiseInverse().asDiagonal() *
            p.u.transpose();
      return p;
    }
    case Whitener::LDL: {
      LdlPayload p;
      p.fact = chol_unit_ldl(sigma);
      Matrix dinv_sqrt =
          Matrix(p.fact.d.cwiseSqrt().cwiseInverse().asDiagonal());
      p.a = tri_solve(p.fact.l, dinv_sqrt, Side::Right);
      return p;
    }
    case Whitener::PLDLP: {
      LdlPayload p;
      p.fact = pivoted_ldl(sigma, spec.eps);
      Matrix dinv_sqrt =
          Matrix(p.fact.d.cwiseSqrt().cwiseInverse().asDiagonal());
      p.a = tri_solve(p.fact.l, dinv_sqrt, Side::Right);
      return p;
    }
  }
  throw SpecError("make_payload: unknown whitener");
}

// The covariance (post conditioning where the algorithm prescribes it) fed
// into the running-average update.
SymMatrix running_update_matrix(Whitener kind, const SymMatrix& sigma,
                                const StagePayload& payload) {
  switch (kind) {
    case Whitener::None:
    case Whitener::BN:
    case Whitener::LDL:
      return sigma;
    case Whitener::ZCA: {
      const auto& p = std::get<ZcaPayload>(payload);
      Matrix rec = p.u * p.lambda.asDiagonal() * p.u.transpose();
      return SymMatrix::from_full(rec);
    }
    case Whitener::PLDLP: {
      // P Sigma P^T <- L D L^T with the clamped pivots
      const auto& p = std::get<LdlPayload>(payload);
      Matrix b = p.fact.l * p.fact.d.asDiagonal() * p.fact.l.transpose();
      const Index n = b.rows();
      Matrix rec(n, n);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
          rec(p.fact.perm[i], p.fact.perm[j]) = b(i, j);
        }
      }
      return SymMatrix::from_full(rec);
    }
  }
  throw SpecError("running_update_matrix: unknown whitener");
}

Matrix apply_payload(const StagePayload& payload, const Matrix& xc,
                     const Vector& gamma, const Vector& bias) {
  if (std::holds_alternative<NonePayload>(payload)) {
    return add_bias(scale_rows(gamma, xc), bias);
  }
  if (const auto* bn = std::get_if<BnPayload>(&payload)) {
    Matrix z = bn->sigma2.cwiseSqrt().cwiseInverse().asDiagonal() * xc;
    return add_bias(scale_rows(gamma, z), bias);
  }
  if (const auto* zca = std::get_if<ZcaPayload>(&payload)) {
    Matrix z = zca->a * xc;
    return add_bias(scale_rows(gamma, z), bias);
  }
  const auto& ldl = std::get<LdlPayload>(payload);
  Matrix z = ldl.a * gathered_rows(xc, ldl.fact.perm);
  return add_bias(scale_rows(gamma, z), bias);
}

Matrix stage_forward(Whitener kind, const WhiteningSpec& spec, const Matrix& x,
                     const Vector& gamma, const Vector& bias, RunningCov& rc,
                     StageMemo& memo, Phase phase, StageCache& cache) {
  auto [xc, mu] = center(x);
  cache.mu = std::move(mu);
  cache.gamma = gamma;

  if (phase == Phase::Train) {
    double ridge = 0.0;
    SymMatrix sigma(0);
    switch (kind) {
      case Whitener::None:
        cache.payload = NonePayload{};
        break;
      case Whitener::BN:
        // Only row variances are needed; the running state keeps the raw
        // (unridged) variance matrix and eval re-adds eps.
        sigma = SymMatrix::diagonal(row_variances(xc));
        ridge = spec.eps;
        break;
      case Whitener::ZCA:
      case Whitener::LDL:
        sigma = batch_cov(xc, spec.eps);
        break;
      case Whitener::PLDLP:
        sigma = batch_cov(xc, 0.0);
        break;
    }
    if (kind != Whitener::None) {
      try {
        cache.payload = make_payload(kind, sigma, spec, ridge);
      } catch (const NumericError& e) {
        throw NumericError(spec.str() + ": " + e.what());
      }
      rc = update_running(rc, running_update_matrix(kind, sigma, cache.payload),
                          stage_alpha(rc, spec));
      memo.at_count = -1;  // invalidate the eval transform
    }
    Matrix z = apply_payload(cache.payload, xc, gamma, bias);
    // In the LDL routes A multiplies with Gamma folded in; redo the cache's A
    // so the backward pass sees the matrix the algorithms call A.
    if (auto* ldl = std::get_if<LdlPayload>(&cache.payload);
        ldl && gamma.size() > 0) {
      ldl->a = gamma.asDiagonal() * ldl->a;
    }
    cache.xc = std::move(xc);
    return z;
  }

  // Eval: transform derived from sigma_hat, memoized until the state moves.
  if (kind != Whitener::None) {
    require_stats(rc, spec);
    if (memo.at_count != rc.count) {
      double ridge = kind == Whitener::BN ? spec.eps : 0.0;
      try {
        memo.payload = make_payload(kind, rc.sigma_hat, spec, ridge);
      } catch (const NumericError& e) {
        throw NumericError(spec.str() + ": " + e.what());
      }
      memo.at_count = rc.count;
    }
    cache.payload = memo.payload;
  } else {
    cache.payload = NonePayload{};
  }
  Matrix z = apply_payload(cache.payload, xc, gamma, bias);
  cache.xc = std::move(xc);
  return z;
}

StageGrads bn_stage_backward(const StageCache& cache, const Matrix& grad_z) {
  const auto& p = std::get<BnPayload>(cache.payload);
  const Matrix& xc = cache.xc;
  const double m = static_cast<double>(xc.cols());
  const Vector inv_std = p.sigma2.cwiseSqrt().cwiseInverse();

  StageGrads out;
  Matrix a_xc = inv_std.asDiagonal() * xc;
  if (cache.gamma.size() > 0) {
    out.grad_gamma = diag_of_product(a_xc, grad_z);
    out.grad_bias = grad_z.rowwise().sum();
  }
  const Matrix gz = scale_rows(cache.gamma, grad_z);
  // direct path plus the variance path (d sigma2 / d xc = 2 xc / M)
  Vector gsigma2 =
      -0.5 * diag_of_product(gz, xc).cwiseProduct(
                 p.sigma2.cwiseProduct(p.sigma2.cwiseSqrt()).cwiseInverse());
  Matrix gxc = inv_std.asDiagonal() * gz;
  gxc += (2.0 / m) * (gsigma2.asDiagonal() * xc);
  out.grad_x = demean_rows(gxc);
  return out;
}

StageGrads none_stage_backward(const StageCache& cache, const Matrix& grad_z) {
  StageGrads out;
  if (cache.gamma.size() > 0) {
    out.grad_gamma = diag_of_product(cache.xc, grad_z);
    out.grad_bias = grad_z.rowwise().sum();
  }
  out.grad_x = demean_rows(scale_rows(cache.gamma, grad_z));
  return out;
}

StageGrads ldl_stage_backward(const StageCache& cache, const Matrix& grad_z,
                              bool pivoted) {
  const auto& p = std::get<LdlPayload>(cache.payload);
  const Matrix& xc = cache.xc;
  const Matrix& l = p.fact.l;
  const Vector& d = p.fact.d;
  const Matrix& a = p.a;
  const Index n = xc.rows();
  const double m = static_cast<double>(xc.cols());

  const Matrix pxc = pivoted ? gathered_rows(xc, p.fact.perm) : xc;
  StageGrads out;

  Matrix ga = lower_with_diag(grad_z * pxc.transpose());
  if (cache.gamma.size() > 0) out.grad_bias = grad_z.rowwise().sum();

  Matrix gxc_z = a.transpose() * grad_z;
  if (pivoted) gxc_z = scattered_rows(gxc_z, p.fact.perm);

  if (cache.gamma.size() > 0) {
    Matrix linv_gat = tri_solve(l, ga.transpose(), Side::Left);
    out.grad_gamma =
        d.cwiseSqrt().cwiseInverse().cwiseProduct(linv_gat.diagonal());
  }

  Vector gd = -0.5 * d.cwiseInverse().cwiseProduct(diag_of_product(a, ga));
  if (pivoted) {
    for (Index i = 0; i < n; ++i) {
      if (p.fact.clamped[i]) gd[i] = 0.0;
    }
  }

  Matrix gl = -strictly_lower(
      tri_solve(l, a.transpose() * ga, Side::Right, /*transposed=*/true));

  Matrix inner = Matrix(gd.asDiagonal()) +
                 strictly_lower(l.transpose() * gl * d.cwiseInverse().asDiagonal());
  Matrix gb = tri_solve(l, inner, Side::Left, /*transposed=*/true);
  gb = tri_solve(l, gb, Side::Right);
  gb = 0.5 * (gb + gb.transpose()).eval();

  Matrix gsigma = gb;
  if (pivoted) {
    gsigma.resize(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        gsigma(p.fact.perm[i], p.fact.perm[j]) = gb(i, j);
      }
    }
  }

  Matrix gxc = (2.0 / m) * (gsigma * xc) + gxc_z;
  out.grad_x = demean_rows(gxc);
  return out;
}

StageGrads zca_stage_backward(const StageCache& cache, const Matrix& grad_z,
                              const WhiteningSpec& spec) {
  const auto& p = std::get<ZcaPayload>(cache.payload);
  const Matrix& xc = cache.xc;
  const Matrix& u = p.u;
  const Vector& lam = p.lambda;
  const double m = static_cast<double>(xc.cols());

  StageGrads out;
  if (cache.gamma.size() > 0) {
    out.grad_gamma = diag_of_product(p.a * xc, grad_z);
    out.grad_bias = grad_z.rowwise().sum();
  }
  const Matrix gz = scale_rows(cache.gamma, grad_z);
  Matrix gxc_z = p.a.transpose() * gz;

  Matrix ga = gz * xc.transpose();
  ga = 0.5 * (ga + ga.transpose()).eval();

  Matrix gu = 2.0 * ga * u * lam.cwiseSqrt().cwiseInverse().asDiagonal();
  gu = 0.5 * (gu - u * gu.transpose() * u).eval();

  Matrix ga_u = ga * u;
  Vector glam = -0.5 * (u.cwiseProduct(ga_u)).colwise().sum().transpose();
  glam = glam.cwiseProduct(
      lam.cwiseProduct(lam.cwiseSqrt()).cwiseInverse());

  double masked_sum = 0.0;
  for (Index i = 0; i < glam.size(); ++i) {
    if (p.mask[i]) masked_sum += glam[i];
  }
  if (p.clamp_at_theta) {
    if (spec.conditioning == Conditioning::Max) {
      glam[0] += spec.c * masked_sum;
    } else if (spec.conditioning == Conditioning::Entropy) {
      glam[p.erank_r - 1] += masked_sum;
    }
  }
  for (Index i = 0; i < glam.size(); ++i) {
    if (p.mask[i]) glam[i] = 0.0;
  }

  Matrix f = build_f(lam, spec.k_max);
  Matrix gsigma =
      u * (Matrix(glam.asDiagonal()) +
           (u.transpose() * gu).cwiseProduct(f)) *
      u.transpose();

  Matrix gxc = (2.0 / m) * (gsigma * xc) + gxc_z;
  out.grad_x = demean_rows(gxc);
  return out;
}

StageGrads stage_backward(Whitener kind, const WhiteningSpec& spec,
                          const StageCache& cache, const Matrix& grad_z) {
  switch (kind) {
    case Whitener::None: return none_stage_backward(cache, grad_z);
    case Whitener::BN: return bn_stage_backward(cache, grad_z);
    case Whitener::ZCA: return zca_stage_backward(cache, grad_z, spec);
    case Whitener::LDL: return ldl_stage_backward(cache, grad_z, false);
    case Whitener::PLDLP: return ldl_stage_backward(cache, grad_z, true);
  }
  throw SpecError("stage_backward: unknown whitener");
}

void check_params(const WhiteningSpec& spec, const LayerParams& params,
                  Index n) {
  if (spec.scale &&
      (params.gamma.size() != n || params.bias.size() != n)) {
    throw DataError(spec.str() + ": gamma/bias must have length " +
                    std::to_string(n));
  }
  if (spec.rotate && params.skew_upper.size() != skew_param_count(n)) {
    throw DataError(spec.str() + ": skew parameter count mismatch");
  }
}

std::pair<Matrix, ForwardCache> forward_impl(const WhiteningSpec& spec,
                                             const Matrix& x,
                                             const LayerParams& params,
                                             LayerState& state, Phase phase) {
  spec.validate();
  const Index n = x.rows();
  check_params(spec, params, n);

  // gamma/bias land on the last stage of the composition
  const bool whitener_owns_scale = spec.scale && !spec.rotate;
  static const Vector kEmpty;
  const Vector& wg = whitener_owns_scale ? params.gamma : kEmpty;
  const Vector& wb = whitener_owns_scale ? params.bias : kEmpty;

  ForwardCache cache;
  cache.spec = spec;
  cache.phase = phase;

  Matrix y;
  if (spec.standardize_first) {
    StageCache std_cache;
    Matrix y1 = stage_forward(Whitener::BN, spec, x, kEmpty, kEmpty,
                              state.standardizer, state.standardizer_memo,
                              phase, std_cache);
    cache.standardizer = std::move(std_cache);
    y = stage_forward(spec.whitener, spec, y1, wg, wb, state.main,
                      state.main_memo, phase, cache.whitener);
  } else {
    y = stage_forward(spec.whitener, spec, x, wg, wb, state.main,
                      state.main_memo, phase, cache.whitener);
  }

  if (spec.rotate) {
    RotationCache rot;
    Matrix s = skew_to_matrix(params.skew_upper, n);
    Matrix z = rotate_forward(y, spec.scale ? params.gamma : kEmpty,
                              spec.scale ? params.bias : kEmpty, s, rot);
    cache.rotation = std::move(rot);
    return {std::move(z), std::move(cache)};
  }
  return {std::move(y), std::move(cache)};
}

GradientSet backward_impl(const ForwardCache& cache, const Matrix& grad_z) {
  require_train_cache(cache, "layer_backward");
  const WhiteningSpec& spec = cache.spec;
  const Index n = grad_z.rows();

  GradientSet out;
  out.grad_skew = Matrix::Zero(n, n);

  Matrix g = grad_z;
  if (cache.rotation) {
    RotationGrads rg = rotate_backward(*cache.rotation, g);
    out.grad_skew = std::move(rg.grad_skew);
    if (spec.scale) {
      out.grad_gamma = std::move(rg.grad_gamma);
      out.grad_bias = std::move(rg.grad_bias);
    }
    g = std::move(rg.grad_y);
  }

  StageGrads sg = stage_backward(spec.whitener, spec, cache.whitener, g);
  if (!cache.rotation && spec.scale) {
    out.grad_gamma = std::move(sg.grad_gamma);
    out.grad_bias = std::move(sg.grad_bias);
  }
  g = std::move(sg.grad_x);

  if (cache.standardizer) {
    StageGrads sg1 = stage_backward(Whitener::BN, spec, *cache.standardizer, g);
    g = std::move(sg1.grad_x);
  }
  out.grad_x = std::move(g);
  return out;
}

void require_plain(const WhiteningSpec& spec, Whitener kind, const char* op) {
  if (spec.whitener != kind || spec.standardize_first || spec.rotate) {
    throw SpecError(std::string(op) + ": spec " + spec.str() +
                    " is not a plain " + to_string(kind) + " layer");
  }
}

}  // namespace

LayerState LayerState::init(const WhiteningSpec& spec, Index n) {
  LayerState st;
  st.main.sigma_hat = SymMatrix(n);
  if (spec.standardize_first) st.standardizer.sigma_hat = SymMatrix(n);
  return st;
}

std::vector<std::uint8_t> ForwardCache::clamp_mask() const {
  if (const auto* zca = std::get_if<ZcaPayload>(&whitener.payload)) {
    return zca->mask;
  }
  if (const auto* ldl = std::get_if<LdlPayload>(&whitener.payload)) {
    return ldl->fact.clamped;
  }
  return {};
}

std::pair<Matrix, ForwardCache> bn_forward(const Matrix& x,
                                           const LayerParams& params,
                                           const WhiteningSpec& spec,
                                           LayerState& state, Phase phase) {
  require_plain(spec, Whitener::BN, "bn_forward");
  return forward_impl(spec, x, params, state, phase);
}

GradientSet bn_backward(const ForwardCache& cache, const Matrix& grad_z) {
  require_plain(cache.spec, Whitener::BN, "bn_backward");
  return backward_impl(cache, grad_z);
}

std::pair<Matrix, ForwardCache> chol_forward(const Matrix& x,
                                             const LayerParams& params,
                                             const WhiteningSpec& spec,
                                             LayerState& state, Phase phase) {
  require_plain(spec, Whitener::LDL, "chol_forward");
  return forward_impl(spec, x, params, state, phase);
}

GradientSet chol_backward(const ForwardCache& cache, const Matrix& grad_z) {
  require_plain(cache.spec, Whitener::LDL, "chol_backward");
  return backward_impl(cache, grad_z);
}

std::pair<Matrix, ForwardCache> pldlp_forward(const Matrix& x,
                                              const LayerParams& params,
                                              const WhiteningSpec& spec,
                                              LayerState& state, Phase phase) {
  require_plain(spec, Whitener::PLDLP, "pldlp_forward");
  return forward_impl(spec, x, params, state, phase);
}

GradientSet pldlp_backward(const ForwardCache& cache, const Matrix& grad_z) {
  require_plain(cache.spec, Whitener::PLDLP, "pldlp_backward");
  return backward_impl(cache, grad_z);
}

std::pair<Matrix, ForwardCache> zca_forward(const Matrix& x,
                                            const LayerParams& params,
                                            const WhiteningSpec& spec,
                                            LayerState& state, Phase phase) {
  require_plain(spec, Whitener::ZCA, "zca_forward");
  return forward_impl(spec, x, params, state, phase);
}

GradientSet zca_backward(const ForwardCache& cache, const Matrix& grad_z) {
  require_plain(cache.spec, Whitener::ZCA, "zca_backward");
  return backward_impl(cache, grad_z);
}

std::pair<Matrix, ForwardCache> corr_forward(const Matrix& x,
                                             const LayerParams& params,
                                             const WhiteningSpec& spec,
                                             LayerState& state, Phase phase) {
  if (!spec.standardize_first) {
    throw SpecError("corr_forward: spec " + spec.str() +
                    " has no corr prefix");
  }
  if (spec.rotate) {
    throw SpecError("corr_forward: rotation handled by layer_forward");
  }
  return forward_impl(spec, x, params, state, phase);
}

GradientSet corr_backward(const ForwardCache& cache, const Matrix& grad_z) {
  if (!cache.spec.standardize_first) {
    throw SpecError("corr_backward: cache is not from a corr layer");
  }
  return backward_impl(cache, grad_z);
}

std::pair<Matrix, ForwardCache> layer_forward(const WhiteningSpec& spec,
                                              const Matrix& x,
                                              const LayerParams& params,
                                              LayerState& state, Phase phase) {
  return forward_impl(spec, x, params, state, phase);
}

GradientSet layer_backward(const WhiteningSpec& spec,
                           const ForwardCache& cache, const Matrix& grad_z) {
  if (!(spec == cache.spec)) {
    throw SpecError("layer_backward: spec " + spec.str() +
                    " does not match the cache's " + cache.spec.str());
  }
  return backward_impl(cache, grad_z);
}

}  // namespace whiten
