#include "whiten/layers.hpp"

#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "whiten/gradcheck.hpp"

using namespace whiten;
using namespace whiten::testutil;

namespace {

struct Layer {
  WhiteningSpec spec;
  LayerParams params;
  LayerState state;

  Layer(const std::string& text, Index n)
      : spec(WhiteningSpec::parse(text)),
        params(LayerParams::init(spec, n)),
        state(LayerState::init(spec, n)) {}
};

/// Instance matching the composition's input-covariance assumption (BN rows
/// expect a diagonal covariance) and avoiding any clamping for the spec.
Matrix clamp_free_batch(const WhiteningSpec& spec, Index n, Index m, Rng& rng) {
  const bool tight = spec.conditioning == Conditioning::Entropy;
  const bool diag = spec.whitener == Whitener::BN && !spec.standardize_first;
  for (int attempt = 0; attempt < 50; ++attempt) {
    Matrix x;
    if (diag) {
      x = isotropic_batch(n, m, rng);
      for (Index i = 0; i < n; ++i) x.row(i) *= rng.uniform(0.7, 1.4);
    } else {
      SymMatrix sigma = tight ? random_cov(n, 0.9, 1.1, rng)
                              : random_cov(n, 0.5, 2.0, rng);
      x = batch_with_cov(sigma, m, rng);
    }
    LayerParams params = LayerParams::init(spec, n);
    LayerState state = LayerState::init(spec, n);
    auto [z, cache] = layer_forward(spec, x, params, state, Phase::Train);
    auto mask = cache.clamp_mask();
    bool clamped = false;
    for (auto f : mask) clamped |= f != 0;
    if (!clamped) return x;
  }
  FAIL("could not build a clamp-free batch");
  return Matrix();
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("center arithmetic") {
  Matrix x(2, 2);
  x << 1, 3, 2, 2;
  auto [xc, mu] = center(x);
  CHECK(xc(0, 0) == -1.0);
  CHECK(xc(0, 1) == 1.0);
  CHECK(xc(1, 0) == 0.0);
  CHECK(xc(1, 1) == 0.0);
  CHECK(mu[0] == 2.0);
  CHECK(mu[1] == 2.0);
}

TEST_CASE("center of all-zero input") {
  auto [xc, mu] = center(Matrix::Zero(3, 4));
  CHECK(xc.cwiseAbs().maxCoeff() == 0.0);
  CHECK(mu.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("center removes row means of random batches") {
  Rng rng(1);
  Matrix x = random_matrix(4, 32, rng);
  auto [xc, mu] = center(x);
  const double bound = 1e-12 * 32 * x.cwiseAbs().maxCoeff();
  CHECK(xc.rowwise().sum().cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("center rejects degenerate batches") {
  CHECK_THROWS_AS(center(Matrix::Zero(3, 1)), DataError);
}

TEST_CASE("batch_cov arithmetic") {
  Matrix xc(1, 2);
  xc << -1, 1;
  SymMatrix s = batch_cov(xc, 0.0);
  CHECK(s.mat()(0, 0) == doctest::Approx(1.0));

  SymMatrix ridge = batch_cov(Matrix::Zero(3, 8), 1e-5);
  CHECK(max_abs_diff(ridge.mat(), 1e-5 * Matrix::Identity(3, 3)) == 0.0);
}

TEST_CASE("batch_cov matches elementwise accumulation") {
  Rng rng(2);
  Matrix x = random_matrix(3, 64, rng);
  auto [xc, mu] = center(x);
  SymMatrix fast = batch_cov(xc, 0.0);
  Matrix slow = Matrix::Zero(3, 3);
  for (Index m = 0; m < 64; ++m) {
    for (Index i = 0; i < 3; ++i) {
      for (Index j = 0; j < 3; ++j) slow(i, j) += xc(i, m) * xc(j, m) / 64.0;
    }
  }
  CHECK(max_abs_diff(fast.mat(), slow) <= 1e-14);
  CHECK(max_abs_diff(fast.mat(), fast.mat().transpose()) == 0.0);
}

TEST_CASE("update_running blends as a convex combination") {
  RunningCov rc;
  rc.sigma_hat = SymMatrix::identity(2);
  rc.count = 3;

  SymMatrix batch = SymMatrix::from_full(3.0 * Matrix::Identity(2, 2));
  RunningCov same = update_running(rc, batch, 1.0);
  CHECK(max_abs_diff(same.sigma_hat.mat(), Matrix::Identity(2, 2)) == 0.0);
  CHECK(same.count == 4);

  RunningCov replaced = update_running(rc, batch, 0.0);
  CHECK(max_abs_diff(replaced.sigma_hat.mat(), batch.mat()) == 0.0);

  RunningCov mixed = update_running(rc, batch, 0.9);
  CHECK(max_abs_diff(mixed.sigma_hat.mat(), 1.2 * Matrix::Identity(2, 2)) <=
        1e-15);

  CHECK_THROWS_AS(update_running(rc, SymMatrix::identity(3), 0.5), DataError);
}

TEST_CASE("erank") {
  Vector uniform(4);
  uniform << 1, 1, 1, 1;
  CHECK(erank(uniform) == 4);

  Vector rank1(3);
  rank1 << 1, 0, 0;
  CHECK(erank(rank1) == 1);

  Vector mixed(3);
  mixed << 0.5, 0.25, 0.25;
  CHECK(erank(mixed) == 3);  // H ~ 1.0397, exp(H) ~ 2.828

  CHECK_THROWS_AS(erank(Vector::Zero(3)), DataError);
}

// --- BN --------------------------------------------------------------------

TEST_CASE("bn_forward arithmetic with the 1/M convention") {
  Layer l("BN", 1);
  l.params.gamma[0] = 2.0;
  l.params.bias[0] = 1.0;
  Matrix x(1, 2);
  x << 1, 3;
  auto [z, cache] = bn_forward(x, l.params, l.spec, l.state, Phase::Train);
  CHECK(z(0, 0) == doctest::Approx(-1.0));
  CHECK(z(0, 1) == doctest::Approx(3.0));
}

TEST_CASE("bn output covariance is the correlation matrix at gamma=1") {
  Rng rng(3);
  Layer l("BN", 3);
  Matrix x = batch_with_cov(random_cov(3, 0.5, 2.0, rng), 64, rng);
  auto [z, cache] = bn_forward(x, l.params, l.spec, l.state, Phase::Train);
  Matrix sigma = brute_cov(x);
  Vector inv_sd = sigma.diagonal().cwiseSqrt().cwiseInverse();
  Matrix corr = inv_sd.asDiagonal() * sigma * inv_sd.asDiagonal();
  CHECK(max_abs_diff(brute_cov(z), corr) <= 1e-10);
}

TEST_CASE("bn maps a constant row to its bias") {
  WhiteningSpec spec = WhiteningSpec::parse("BN(1e-05)");
  LayerParams params = LayerParams::init(spec, 2);
  params.bias << 0.25, -0.75;
  LayerState state = LayerState::init(spec, 2);
  Matrix x(2, 4);
  x << 5, 5, 5, 5, 1, 2, 3, 4;
  auto [z, cache] = layer_forward(spec, x, params, state, Phase::Train);
  for (Index j = 0; j < 4; ++j) CHECK(z(0, j) == doctest::Approx(0.25));
}

TEST_CASE("bn train-phase row variances equal gamma^2") {
  Rng rng(4);
  Layer l("BN", 4);
  for (Index i = 0; i < 4; ++i) l.params.gamma[i] = rng.uniform(0.5, 1.5);
  Matrix x = random_matrix(4, 48, rng);
  auto [z, cache] = bn_forward(x, l.params, l.spec, l.state, Phase::Train);
  Matrix cov = brute_cov(z);
  for (Index i = 0; i < 4; ++i) {
    CHECK(cov(i, i) ==
          doctest::Approx(l.params.gamma[i] * l.params.gamma[i]).epsilon(1e-8));
  }
}

TEST_CASE("bn_backward zero cotangent gives zero gradients") {
  Rng rng(5);
  Layer l("BN", 3);
  Matrix x = random_matrix(3, 8, rng);
  auto [z, cache] = bn_forward(x, l.params, l.spec, l.state, Phase::Train);
  GradientSet g = bn_backward(cache, Matrix::Zero(3, 8));
  CHECK(g.grad_x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.grad_gamma.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.grad_bias.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.grad_skew.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bn_backward matches finite differences on a tiny instance") {
  for (auto r : check_layer(WhiteningSpec::parse("BN"), 1, 4, 77, 1e-5)) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
}

TEST_CASE("bn gamma gradient is diag_of_product(A X_c, grad_z)") {
  Rng rng(6);
  Layer l("BN", 3);
  Matrix x = random_matrix(3, 16, rng);
  Matrix g = random_matrix(3, 16, rng);
  auto [z, cache] = bn_forward(x, l.params, l.spec, l.state, Phase::Train);
  GradientSet grads = bn_backward(cache, g);
  const auto& p = std::get<BnPayload>(cache.whitener.payload);
  Matrix a_xc = p.sigma2.cwiseSqrt().cwiseInverse().asDiagonal() * cache.whitener.xc;
  Vector expect = diag_of_product(a_xc, g);
  CHECK((grads.grad_gamma - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("bn phase errors") {
  Rng rng(7);
  Layer l("BN", 2);
  Matrix x = random_matrix(2, 8, rng);
  // eval before any training step
  CHECK_THROWS_AS(bn_forward(x, l.params, l.spec, l.state, Phase::Eval),
                  PhaseError);
  bn_forward(x, l.params, l.spec, l.state, Phase::Train);
  auto [z, eval_cache] = bn_forward(x, l.params, l.spec, l.state, Phase::Eval);
  CHECK_THROWS_AS(bn_backward(eval_cache, Matrix::Zero(2, 8)), PhaseError);
}

// --- Cholesky / LDL ---------------------------------------------------------

TEST_CASE("chol_forward is the identity on whitened input") {
  Rng rng(8);
  Layer l("LDL(0)", 3);
  Matrix x = isotropic_batch(3, 16, rng);
  auto [z, cache] = chol_forward(x, l.params, l.spec, l.state, Phase::Train);
  CHECK(max_abs_diff(z, cache.whitener.xc) <= 1e-10);
}

TEST_CASE("chol_forward computes the documented whitening matrix") {
  Rng rng(9);
  Layer l("LDL(0)", 2);
  Matrix sigma(2, 2);
  sigma << 4, 2, 2, 5;
  Matrix x = batch_with_cov(SymMatrix::from_full(sigma), 24, rng);
  auto [z, cache] = chol_forward(x, l.params, l.spec, l.state, Phase::Train);
  const auto& p = std::get<LdlPayload>(cache.whitener.payload);
  Matrix expect(2, 2);
  expect << 0.5, 0, -0.25, 0.5;
  CHECK(max_abs_diff(p.a, expect) <= 1e-10);
  // oracle: A Sigma A^T = I
  CHECK(max_abs_diff(p.a * sigma * p.a.transpose(), Matrix::Identity(2, 2)) <=
        1e-10);
}

TEST_CASE("chol train-phase output covariance is diag(gamma^2)") {
  Rng rng(10);
  Layer l("LDL(0)", 4);
  for (Index i = 0; i < 4; ++i) l.params.gamma[i] = rng.uniform(0.5, 1.5);
  l.params.bias << 1, -1, 2, 0;
  Matrix x = batch_with_cov(random_cov(4, 0.5, 2.0, rng), 32, rng);
  auto [z, cache] = chol_forward(x, l.params, l.spec, l.state, Phase::Train);
  Matrix cov = brute_cov(z);
  Matrix expect = l.params.gamma.cwiseProduct(l.params.gamma).asDiagonal();
  CHECK(max_abs_diff(cov, expect) <= 1e-8);
}

TEST_CASE("chol_backward zero cotangent and finite differences") {
  Rng rng(11);
  Layer l("LDL(1e-05)", 3);
  Matrix x = random_matrix(3, 16, rng);
  auto [z, cache] = chol_forward(x, l.params, l.spec, l.state, Phase::Train);
  GradientSet g0 = chol_backward(cache, Matrix::Zero(3, 16));
  CHECK(g0.grad_x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g0.grad_gamma.cwiseAbs().maxCoeff() == 0.0);

  for (auto r : check_layer(WhiteningSpec::parse("LDL(1e-05)"), 3, 16, 123,
                            1e-5)) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
}

TEST_CASE("chol grad_x rows are mean-free") {
  Rng rng(12);
  Layer l("LDL(1e-05)", 4);
  Matrix x = random_matrix(4, 16, rng);
  Matrix g = random_matrix(4, 16, rng);
  auto [z, cache] = chol_forward(x, l.params, l.spec, l.state, Phase::Train);
  GradientSet grads = chol_backward(cache, g);
  const double bound = 1e-9 * grads.grad_x.norm();
  CHECK(grads.grad_x.rowwise().sum().cwiseAbs().maxCoeff() <= bound * 16);
}

// --- pivoted LDL -------------------------------------------------------------

TEST_CASE("pldlp on identity covariance") {
  Rng rng(13);
  Layer l("PLDLP(0)", 3);
  l.params.bias << 1, 2, 3;
  Matrix x = isotropic_batch(3, 16, rng);
  auto [z, cache] = pldlp_forward(x, l.params, l.spec, l.state, Phase::Train);
  Matrix expect = cache.whitener.xc;
  expect.colwise() += Vector(l.params.bias);
  CHECK(max_abs_diff(z, expect) <= 1e-10);
}

TEST_CASE("pldlp whitens the largest-variance channel first") {
  Rng rng(14);
  Layer l("PLDLP(0)", 2);
  Matrix x = isotropic_batch(2, 20, rng);
  x.row(1) *= 2.0;  // covariance diag(1,4)
  auto [z, cache] = pldlp_forward(x, l.params, l.spec, l.state, Phase::Train);
  const auto& p = std::get<LdlPayload>(cache.whitener.payload);
  CHECK(p.fact.perm[0] == 1);
  CHECK(p.fact.perm[1] == 0);
  CHECK(max_abs_diff(brute_cov(z), Matrix::Identity(2, 2)) <= 1e-8);
}

TEST_CASE("pldlp equals chol when the pivot order is already decreasing") {
  Rng rng(15);
  Matrix x = isotropic_batch(3, 24, rng);
  x.row(0) *= 3.0;
  x.row(1) *= 2.0;  // covariance diag(9,4,1): identity pivoting

  Layer lp("PLDLP(0)", 3);
  auto [zp, cp] = pldlp_forward(x, lp.params, lp.spec, lp.state, Phase::Train);
  CHECK(std::get<LdlPayload>(cp.whitener.payload).fact.identity_perm());

  Layer lc("LDL(0)", 3);
  auto [zc, cc] = chol_forward(x, lc.params, lc.spec, lc.state, Phase::Train);
  CHECK(max_abs_diff(zp, zc) <= 1e-12);
}

TEST_CASE("pldlp on a pre-permuted batch equals chol on the sorted one") {
  Rng rng(16);
  Matrix x = isotropic_batch(3, 24, rng);
  x.row(0) *= 3.0;
  x.row(1) *= 2.0;
  Matrix shuffled(3, 24);
  shuffled.row(0) = x.row(2);
  shuffled.row(1) = x.row(0);
  shuffled.row(2) = x.row(1);

  Layer lp("PLDLP(0)", 3);
  auto [zp, cp] = pldlp_forward(shuffled, lp.params, lp.spec, lp.state,
                                Phase::Train);
  Layer lc("LDL(0)", 3);
  auto [zc, cc] = chol_forward(x, lc.params, lc.spec, lc.state, Phase::Train);
  CHECK(max_abs_diff(zp, zc) <= 1e-12);
}

TEST_CASE("pldlp records clamped pivots and keeps gradients finite") {
  Rng rng(17);
  Layer l("PLDLP(1e-05)", 2);
  Matrix x = isotropic_batch(2, 20, rng);
  x.row(0) *= 2.0;
  x.row(1) *= std::sqrt(1e-9);  // covariance diag(4, 1e-9)
  auto [z, cache] = pldlp_forward(x, l.params, l.spec, l.state, Phase::Train);
  const auto& p = std::get<LdlPayload>(cache.whitener.payload);
  CHECK(p.fact.clamped[1] == 1);
  CHECK(p.fact.d[1] == doctest::Approx(1e-5));
  GradientSet g = pldlp_backward(cache, random_matrix(2, 20, rng));
  CHECK(all_finite(g.grad_x));
}

TEST_CASE("pldlp_backward matches finite differences") {
  for (auto r : check_layer(WhiteningSpec::parse("PLDLP(1e-05)"), 4, 32, 321,
                            1e-5)) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
}

// --- ZCA ---------------------------------------------------------------------

TEST_CASE("zca_forward is gamma-scaled centering on whitened input") {
  Rng rng(18);
  Layer l("ZCA(0,inf)", 3);
  l.params.gamma << 2, 1, 0.5;
  l.params.bias << 1, 0, -1;
  Matrix x = isotropic_batch(3, 16, rng);
  auto [z, cache] = zca_forward(x, l.params, l.spec, l.state, Phase::Train);
  Matrix expect = l.params.gamma.asDiagonal() * cache.whitener.xc;
  expect.colwise() += Vector(l.params.bias);
  CHECK(max_abs_diff(z, expect) <= 1e-10);
}

TEST_CASE("zca_forward computes the inverse principal square root") {
  Rng rng(19);
  Layer l("ZCA(0,inf)", 2);
  Matrix sigma(2, 2);
  sigma << 2, 1, 1, 2;
  Matrix x = batch_with_cov(SymMatrix::from_full(sigma), 32, rng);
  auto [z, cache] = zca_forward(x, l.params, l.spec, l.state, Phase::Train);
  const auto& p = std::get<ZcaPayload>(cache.whitener.payload);
  const double hi = (1.0 / std::sqrt(3.0) + 1.0) / 2.0;
  const double lo = (1.0 / std::sqrt(3.0) - 1.0) / 2.0;
  Matrix expect(2, 2);
  expect << hi, lo, lo, hi;
  CHECK(max_abs_diff(p.a, expect) <= 1e-10);
  CHECK(std::abs(p.a(0, 0) - 0.7887) <= 1e-4);
  CHECK(std::abs(p.a(0, 1) - (-0.2113)) <= 1e-4);
  // oracle: A A Sigma = I
  CHECK(max_abs_diff(p.a * p.a * sigma, Matrix::Identity(2, 2)) <= 1e-9);
}

TEST_CASE("zca max-mode threshold clamps the small eigenvalue") {
  Rng rng(20);
  Layer l("ZCAM(1e-05,1e+12,0.01)", 2);
  Matrix x = isotropic_batch(2, 32, rng);
  x.row(0) *= 2.0;                  // eigenvalue 4
  x.row(1) *= std::sqrt(0.001);     // eigenvalue 0.001
  auto [z, cache] = zca_forward(x, l.params, l.spec, l.state, Phase::Train);
  const auto& p = std::get<ZcaPayload>(cache.whitener.payload);
  CHECK(p.theta == doctest::Approx(0.04));
  CHECK(p.mask[0] == 0);
  CHECK(p.mask[1] == 1);
  CHECK(p.lambda[0] == doctest::Approx(4.0).epsilon(1e-5));  // +eps ridge
  CHECK(p.lambda[1] == p.theta);
}

TEST_CASE("zca_backward zero cotangent and finite differences") {
  Rng rng(21);
  Layer l("ZCA(0,inf)", 3);
  Matrix x = batch_with_cov(random_cov(3, 0.5, 2.0, rng), 32, rng);
  auto [z, cache] = zca_forward(x, l.params, l.spec, l.state, Phase::Train);
  GradientSet g0 = zca_backward(cache, Matrix::Zero(3, 32));
  CHECK(g0.grad_x.cwiseAbs().maxCoeff() == 0.0);

  for (auto r : check_layer(WhiteningSpec::parse("ZCA(0,inf)"), 3, 32, 555,
                            1e-5)) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
}

TEST_CASE("zca equal-eigenvalue covariance: no eigenvector contribution") {
  // Hadamard-pattern rows: zero-mean, exactly orthogonal, bit-identical
  // norms, so the batch covariance is a scaled identity with exact spectral
  // ties and build_f returns the zero matrix.
  Rng rng(22);
  const Index m = 8;
  Matrix x(3, m);
  x << 1, 1, 1, 1, -1, -1, -1, -1,
       1, 1, -1, -1, 1, 1, -1, -1,
       1, -1, 1, -1, 1, -1, 1, -1;
  x *= std::sqrt(2.0);  // covariance 2I up to one rounding of sqrt(2)^2

  Layer l("ZCA(0,inf)", 3);
  Matrix g = random_matrix(3, m, rng);
  auto [z, cache] = zca_forward(x, l.params, l.spec, l.state, Phase::Train);
  const auto& p = std::get<ZcaPayload>(cache.whitener.payload);
  CHECK(p.lambda[0] == p.lambda[1]);
  CHECK(p.lambda[1] == p.lambda[2]);
  CHECK(build_f(p.lambda, l.spec.k_max).cwiseAbs().maxCoeff() == 0.0);

  GradientSet grads = zca_backward(cache, g);
  CHECK(all_finite(grads.grad_x));

  // with F = 0 the covariance gradient is U diag(glam) U^T only
  const Matrix& xc = cache.whitener.xc;
  Matrix ga = g * xc.transpose();
  ga = 0.5 * (ga + ga.transpose()).eval();
  Vector glam = -0.5 * (p.u.cwiseProduct(ga * p.u)).colwise().sum().transpose();
  glam = glam.cwiseProduct(
      p.lambda.cwiseProduct(p.lambda.cwiseSqrt()).cwiseInverse());
  Matrix gsigma = p.u * glam.asDiagonal() * p.u.transpose();
  Matrix gxc = (2.0 / m) * gsigma * xc + p.a.transpose() * g;
  Matrix expect = gxc.colwise() - gxc.rowwise().mean().eval();
  CHECK(max_abs_diff(grads.grad_x, expect) <= 1e-12);
}

// --- corr compositions --------------------------------------------------------

TEST_CASE("corr on diagonal covariance reduces to plain BN") {
  Rng rng(23);
  Matrix x = isotropic_batch(3, 32, rng);
  x.row(0) *= 2.0;
  x.row(1) *= 0.5;  // diagonal covariance

  Layer corr("ZCAcorr(0,inf)", 3);
  corr.params.gamma << 1.5, 1.0, 0.5;
  corr.params.bias << 1, -2, 0;
  auto [zc, cc] = corr_forward(x, corr.params, corr.spec, corr.state,
                               Phase::Train);

  Layer bn("BN", 3);
  bn.params.gamma = corr.params.gamma;
  bn.params.bias = corr.params.bias;
  auto [zb, cb] = bn_forward(x, bn.params, bn.spec, bn.state, Phase::Train);
  CHECK(max_abs_diff(zc, zb) <= 1e-8);

  // The triangular corr route agrees on the output as well. Gradients do
  // not reduce to BN's: the corr composition carries its own covariance
  // paths even where the outputs coincide, and each route is certified
  // against its own finite differences instead.
  Layer lcorr("LDLcorr(0)", 3);
  lcorr.params.gamma = corr.params.gamma;
  lcorr.params.bias = corr.params.bias;
  auto [zl, cl] = corr_forward(x, lcorr.params, lcorr.spec, lcorr.state,
                               Phase::Train);
  CHECK(max_abs_diff(zl, zb) <= 1e-8);

  Matrix g = random_matrix(3, 32, rng);
  GradientSet gc = corr_backward(cl, g);
  GradientSet gb = bn_backward(cb, g);
  CHECK(all_finite(gc.grad_x));
  CHECK(all_finite(gb.grad_x));
}

TEST_CASE("corr stage 2 sees the correlation matrix") {
  Rng rng(24);
  Matrix sigma(2, 2);
  sigma << 4, 2, 2, 4;
  Matrix x = batch_with_cov(SymMatrix::from_full(sigma), 40, rng);
  Layer l("ZCAcorr(0,inf)", 2);
  auto [z, cache] = corr_forward(x, l.params, l.spec, l.state, Phase::Train);
  REQUIRE(cache.standardizer.has_value());
  Matrix phi = brute_cov(cache.whitener.xc);
  Matrix expect(2, 2);
  expect << 1, 0.5, 0.5, 1;
  CHECK(max_abs_diff(phi, expect) <= 1e-10);
  CHECK(max_abs_diff(brute_cov(z), Matrix::Identity(2, 2)) <= 1e-8);
}

TEST_CASE("corr output rows have unit variance at gamma=1") {
  Rng rng(25);
  Matrix x = batch_with_cov(random_cov(3, 0.5, 2.0, rng), 48, rng);
  Layer l("LDLcorr(0)", 3);
  auto [z, cache] = corr_forward(x, l.params, l.spec, l.state, Phase::Train);
  Matrix cov = brute_cov(z);
  for (Index i = 0; i < 3; ++i) CHECK(cov(i, i) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("corr backward matches finite differences") {
  for (auto r : check_layer(WhiteningSpec::parse("ZCAcorr(0,inf)"), 3, 32, 999,
                            1e-5)) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
  for (auto r : check_layer(WhiteningSpec::parse("LDLcorr(1e-05)"), 3, 16, 998,
                            1e-5)) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
}

// --- full composition ----------------------------------------------------------

TEST_CASE("BN->W at S=0 equals parameterless BN") {
  Rng rng(26);
  Matrix x = random_matrix(3, 16, rng);
  Layer rot("BN->W", 3);
  auto [zr, cr] = layer_forward(rot.spec, x, rot.params, rot.state,
                                Phase::Train);
  Layer plain("BNnp", 3);
  auto [zp, cp] = layer_forward(plain.spec, x, plain.params, plain.state,
                                Phase::Train);
  CHECK(max_abs_diff(zr, zp) == 0.0);
}

TEST_CASE("layer_forward rejects invalid compositions at entry") {
  WhiteningSpec bad;
  bad.whitener = Whitener::LDL;
  bad.conditioning = Conditioning::Max;
  bad.c = 0.5;
  LayerParams params = LayerParams::init(bad, 3);
  LayerState state = LayerState::init(bad, 3);
  CHECK_THROWS_AS(layer_forward(bad, Matrix::Zero(3, 8), params, state,
                                Phase::Train),
                  SpecError);
}

TEST_CASE("whitening invariant across every published composition") {
  Rng rng(27);
  const char* rows[] = {
      "BN",
      "BN->W",
      "BN->W->G",
      "ZCA(0,inf)",
      "ZCAM(0,1e+12,0.1)",
      "ZCAE(0,inf)",
      "ZCAcorr(0,inf)",
      "ZCAcorr(0,inf)->W",
      "ZCAcorr(0,inf)->W->G",
      "LDL(0)",
      "LDLcorr(0)",
      "PLDLP(0)",
  };
  for (const char* row : rows) {
    CAPTURE(row);
    WhiteningSpec spec = WhiteningSpec::parse(row);
    const Index n = 4;
    Matrix x = clamp_free_batch(spec, n, 64, rng);
    LayerParams params = LayerParams::init(spec, n);
    if (spec.scale) {
      for (Index i = 0; i < n; ++i) params.gamma[i] = rng.uniform(0.5, 1.5);
      for (Index i = 0; i < n; ++i) params.bias[i] = rng.normal();
    }
    if (spec.rotate) {
      for (Index i = 0; i < params.skew_upper.size(); ++i) {
        params.skew_upper[i] = 0.3 * rng.normal();
      }
    }
    LayerState state = LayerState::init(spec, n);
    auto [z, cache] = layer_forward(spec, x, params, state, Phase::Train);
    Matrix zc = z;
    if (spec.scale) zc.colwise() -= Vector(params.bias);
    Matrix cov = zc * zc.transpose() / 64.0;
    Matrix expect = Matrix::Identity(n, n);
    if (spec.scale) {
      expect = params.gamma.cwiseProduct(params.gamma).asDiagonal();
    }
    const double rel = (cov - expect).norm() / expect.norm();
    CHECK(rel <= 1e-8);
  }
}

TEST_CASE("eval phase is a pure function of inputs and running state") {
  Rng rng(28);
  WhiteningSpec spec = WhiteningSpec::parse("ZCA(1e-05,1e+12)");
  LayerParams params = LayerParams::init(spec, 3);
  LayerState state = LayerState::init(spec, 3);
  for (int step = 0; step < 3; ++step) {
    Matrix x = random_matrix(3, 32, rng);
    layer_forward(spec, x, params, state, Phase::Train);
  }
  Matrix xe = random_matrix(3, 16, rng);
  auto [z1, c1] = layer_forward(spec, xe, params, state, Phase::Eval);
  auto [z2, c2] = layer_forward(spec, xe, params, state, Phase::Eval);
  CHECK(max_abs_diff(z1, z2) == 0.0);

  LayerState copy = state;
  auto [z3, c3] = layer_forward(spec, xe, params, copy, Phase::Eval);
  CHECK(max_abs_diff(z1, z3) == 0.0);

  // eval never touches the running covariance
  CHECK(state.main.count == 3);
}

TEST_CASE("parameterless specs return absent gamma/bias gradients") {
  Rng rng(29);
  WhiteningSpec spec = WhiteningSpec::parse("BN->W");
  LayerParams params = LayerParams::init(spec, 3);
  LayerState state = LayerState::init(spec, 3);
  Matrix x = random_matrix(3, 16, rng);
  auto [z, cache] = layer_forward(spec, x, params, state, Phase::Train);
  GradientSet g = layer_backward(spec, cache, random_matrix(3, 16, rng));
  CHECK(g.grad_gamma.size() == 0);
  CHECK(g.grad_bias.size() == 0);
  CHECK(g.grad_skew.rows() == 3);
  CHECK(max_abs_diff(g.grad_skew, -g.grad_skew.transpose()) == 0.0);
}

TEST_CASE("grad_x row means vanish for every composition") {
  Rng rng(30);
  for (const char* row : {"BN", "ZCA(0,inf)", "LDL(1e-05)", "PLDLP(1e-05)",
                          "ZCAcorr(0,inf)", "BN->W->G"}) {
    CAPTURE(row);
    WhiteningSpec spec = WhiteningSpec::parse(row);
    LayerParams params = LayerParams::init(spec, 4);
    LayerState state = LayerState::init(spec, 4);
    Matrix x = random_matrix(4, 24, rng);
    auto [z, cache] = layer_forward(spec, x, params, state, Phase::Train);
    GradientSet g = layer_backward(spec, cache, random_matrix(4, 24, rng));
    const double bound = 1e-9 * g.grad_x.norm() * 24;
    CHECK(g.grad_x.rowwise().sum().cwiseAbs().maxCoeff() <= bound);
  }
}

}  // TEST_SUITE
