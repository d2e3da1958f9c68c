#include "whiten/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "whiten/rng.hpp"

namespace whiten {

namespace {

double rel_err(const Vector& analytic, const Vector& fd, Index* worst) {
  const double scale = std::max(
      {analytic.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), 1e-8});
  double best = 0.0;
  Index at = -1;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double e = std::abs(analytic[i] - fd[i]) / scale;
    if (e > best) {
      best = e;
      at = i;
    }
  }
  if (worst) *worst = at;
  return best;
}

Vector flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

double probe_phi(const WhiteningSpec& spec, const Matrix& x,
                 const LayerParams& params, const Matrix& probe,
                 ForwardCache* cache_out = nullptr) {
  LayerState state = LayerState::init(spec, x.rows());
  auto [z, cache] = layer_forward(spec, x, params, state, Phase::Train);
  if (cache_out) *cache_out = std::move(cache);
  return probe.cwiseProduct(z).sum();
}

bool spectrum_state_matches(const ForwardCache& a, const ForwardCache& b) {
  const auto* pa = std::get_if<ZcaPayload>(&a.whitener.payload);
  const auto* pb = std::get_if<ZcaPayload>(&b.whitener.payload);
  if (!pa || !pb) return true;
  return pa->mask == pb->mask && pa->erank_r == pb->erank_r &&
         pa->clamp_at_theta == pb->clamp_at_theta;
}

/// Removes the clamp-masked spectral coordinates from a channel-space
/// gradient: masked rows of U^T g are dropped and the remaining rows are
/// projected off the masked sample-profiles (U^T X_c)[masked]. Applied to
/// the analytic and FD gradients alike, so the comparison only sees the
/// coordinates where the conditioned backward pass is the exact derivative.
Matrix exclude_masked(const Matrix& g, const ZcaPayload& p, const Matrix& xc) {
  const Index n = g.rows();
  Index n_masked = 0;
  for (auto f : p.mask) n_masked += f != 0;
  if (n_masked == 0) return g;

  Matrix gt = p.u.transpose() * g;
  Matrix q(n_masked, xc.cols());
  {
    Matrix ut_xc = p.u.transpose() * xc;
    Index k = 0;
    for (Index i = 0; i < n; ++i) {
      if (p.mask[i]) q.row(k++) = ut_xc.row(i);
    }
  }
  // project rows off span(q)
  Matrix qqT = q * q.transpose();
  Matrix coeff = qqT.ldlt().solve(q * gt.transpose()).transpose();
  gt -= coeff * q;

  Matrix out(n - n_masked, g.cols());
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    if (!p.mask[i]) out.row(k++) = gt.row(i);
  }
  return out;
}

}  // namespace

Vector fd_gradient(const std::function<double(const Vector&)>& f,
                   const Vector& x0, double h) {
  Vector g(x0.size());
  Vector x = x0;
  for (Index i = 0; i < x0.size(); ++i) {
    const double hi = h * std::max(1.0, std::abs(x0[i]));
    x[i] = x0[i] + hi;
    const double fp = f(x);
    x[i] = x0[i] - hi;
    const double fm = f(x);
    x[i] = x0[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("fd_gradient: non-finite objective at coordinate " +
                         std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * hi);
  }
  return g;
}

CheckInstance make_instance(const WhiteningSpec& spec, Index n, Index m,
                            std::uint64_t seed, const CheckOptions& opts) {
  spec.validate();
  const bool zca = spec.whitener == Whitener::ZCA;
  const bool want_clamp_free = zca && spec.conditioning != Conditioning::Entropy;

  Rng rng(derive_seed(seed, 0x67726164));
  for (int attempt = 0; attempt <= opts.resample_cap; ++attempt) {
    CheckInstance inst;
    inst.x.resize(n, m);
    Vector ch_scale(n);
    for (Index i = 0; i < n; ++i) ch_scale[i] = rng.uniform(0.5, 2.0);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) inst.x(i, j) = ch_scale[i] * rng.normal();
    }
    inst.params = LayerParams::init(spec, n);
    if (spec.scale) {
      for (Index i = 0; i < n; ++i) inst.params.gamma[i] = rng.uniform(0.5, 1.5);
      for (Index i = 0; i < n; ++i) inst.params.bias[i] = 0.5 * rng.normal();
    }
    if (spec.rotate) {
      for (Index i = 0; i < inst.params.skew_upper.size(); ++i) {
        inst.params.skew_upper[i] = 0.2 * rng.normal();
      }
    }
    inst.probe.resize(n, m);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) inst.probe(i, j) = rng.normal();
    }

    if (!zca) return inst;

    ForwardCache cache;
    probe_phi(spec, inst.x, inst.params, inst.probe, &cache);
    const auto& p = std::get<ZcaPayload>(cache.whitener.payload);
    double min_gap = std::numeric_limits<double>::infinity();
    for (Index i = 0; i + 1 < p.lambda_raw.size(); ++i) {
      min_gap = std::min(min_gap, p.lambda_raw[i] - p.lambda_raw[i + 1]);
    }
    const bool clamped = std::any_of(p.mask.begin(), p.mask.end(),
                                     [](std::uint8_t f) { return f != 0; });
    if (min_gap >= 1e-3 && (!want_clamp_free || !clamped)) return inst;
  }
  std::ostringstream msg;
  msg << "make_instance: unsatisfiable instance for " << spec.str() << " (n="
      << n << ", m=" << m << ", seed=" << seed << "): guards not met within "
      << opts.resample_cap << " resamples";
  throw NumericError(msg.str());
}

std::vector<CheckReport> check_instance(const WhiteningSpec& spec,
                                        const CheckInstance& inst,
                                        std::uint64_t seed,
                                        const CheckOptions& opts) {
  const Index n = inst.x.rows();
  const Index m = inst.x.cols();

  ForwardCache base_cache;
  probe_phi(spec, inst.x, inst.params, inst.probe, &base_cache);
  GradientSet analytic = layer_backward(spec, base_cache, inst.probe);

  std::vector<CheckReport> reports;
  auto push = [&](const std::string& group, const Vector& a, const Vector& fd) {
    CheckReport r;
    r.spec = spec.str();
    r.group = group;
    r.n = n;
    r.m = m;
    r.seed = seed;
    r.max_rel_err = rel_err(a, fd, &r.worst_index);
    r.pass = r.max_rel_err <= opts.tol;
    reports.push_back(std::move(r));
  };

  // --- grad X: probes re-run the whole forward, covariance included ---
  {
    Matrix fd(n, m);
    Matrix x = inst.x;
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) {
        const double hi = opts.h * std::max(1.0, std::abs(inst.x(i, j)));
        ForwardCache cp, cm;
        x(i, j) = inst.x(i, j) + hi;
        const double fp = probe_phi(spec, x, inst.params, inst.probe, &cp);
        x(i, j) = inst.x(i, j) - hi;
        const double fm = probe_phi(spec, x, inst.params, inst.probe, &cm);
        x(i, j) = inst.x(i, j);
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
          throw NumericError("check_instance: non-finite objective at x(" +
                             std::to_string(i) + "," + std::to_string(j) + ")");
        }
        if (!spectrum_state_matches(base_cache, cp) ||
            !spectrum_state_matches(base_cache, cm)) {
          fd(i, j) = analytic.grad_x(i, j);  // probe flipped the mask: excluded
        } else {
          fd(i, j) = (fp - fm) / (2.0 * hi);
        }
      }
    }
    Matrix a_cmp = analytic.grad_x;
    Matrix f_cmp = fd;
    if (const auto* p = std::get_if<ZcaPayload>(&base_cache.whitener.payload)) {
      a_cmp = exclude_masked(a_cmp, *p, base_cache.whitener.xc);
      f_cmp = exclude_masked(f_cmp, *p, base_cache.whitener.xc);
    }
    push("x", flatten(a_cmp), flatten(f_cmp));
  }

  if (spec.scale) {
    LayerParams params = inst.params;
    auto fg = fd_gradient(
        [&](const Vector& v) {
          params.gamma = v;
          return probe_phi(spec, inst.x, params, inst.probe);
        },
        inst.params.gamma, opts.h);
    params.gamma = inst.params.gamma;
    push("gamma", analytic.grad_gamma, fg);

    auto fb = fd_gradient(
        [&](const Vector& v) {
          params.bias = v;
          return probe_phi(spec, inst.x, params, inst.probe);
        },
        inst.params.bias, opts.h);
    push("bias", analytic.grad_bias, fb);
  }

  if (spec.rotate) {
    // conjugate pairs perturbed jointly; the triangle parameters see twice
    // the antisymmetrized full-matrix gradient
    LayerParams params = inst.params;
    Vector a_tri = 2.0 * skew_from_matrix(analytic.grad_skew);
    Vector fd_tri(a_tri.size());
    for (Index k = 0; k < a_tri.size(); ++k) {
      const double s0 = inst.params.skew_upper[k];
      const double hk = opts.h * std::max(1.0, std::abs(s0));
      params.skew_upper[k] = s0 + hk;
      const double fp = probe_phi(spec, inst.x, params, inst.probe);
      params.skew_upper[k] = s0 - hk;
      const double fm = probe_phi(spec, inst.x, params, inst.probe);
      params.skew_upper[k] = s0;
      fd_tri[k] = (fp - fm) / (2.0 * hk);
    }
    push("skew", a_tri, fd_tri);
  }
  return reports;
}

std::vector<CheckReport> check_layer(const WhiteningSpec& spec, Index n,
                                     Index m, std::uint64_t seed, double tol) {
  CheckOptions opts;
  opts.tol = tol;
  CheckInstance inst = make_instance(spec, n, m, seed, opts);
  return check_instance(spec, inst, seed, opts);
}

std::string report_csv_header() { return "spec,group,N,M,seed,max_rel_err,pass"; }

std::string to_csv_row(const CheckReport& r) {
  std::ostringstream out;
  out << r.spec << ',' << r.group << ',' << r.n << ',' << r.m << ',' << r.seed
      << ',' << r.max_rel_err << ',' << (r.pass ? 1 : 0);
  return out.str();
}

}  // namespace whiten
