#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lvg/latentae.hpp"
#include "test_helpers.hpp"

using namespace lvg;

namespace {

// D -> D identity stub with no context stacking.
Autoencoder identity_ae(std::size_t d, double dec_bias = 0.0) {
  Autoencoder ae;
  ae.feat_dim = d;
  ae.bottleneck = d;
  ae.context = 0;
  DenseLayer<double> enc;
  enc.w = Tensor2<double>(d, d);
  for (std::size_t i = 0; i < d; ++i) enc.w(i, i) = 1.0;
  enc.b.assign(d, 0.0);
  enc.act = Activation::identity;
  ae.enc.layers.push_back(enc);
  DenseLayer<double> dec = enc;
  dec.b.assign(d, dec_bias);
  ae.dec.layers.push_back(dec);
  return ae;
}

Discriminator const_disc(std::size_t window, double value) {
  Discriminator d;
  d.window = window;
  d.hop = window / 2;
  DenseLayer<double> l;
  l.w = Tensor2<double>(1, window);
  l.b.assign(1, value);
  l.act = Activation::identity;
  d.net.layers.push_back(std::move(l));
  return d;
}

}  // namespace

TEST_CASE("encode and decode preserve frame count and dims", "[latentae]") {
  Rng rng(1);
  Autoencoder ae = make_autoencoder(10, 4, 16, 2, rng);
  Tensor2<double> x = random_normal<double>(10, 100, rng);
  Tensor2<double> z = encode(ae, x);
  REQUIRE(z.rows == 4);
  REQUIRE(z.cols == 100);
  CHECK(all_finite(z));
  Tensor2<double> xhat = decode(ae, z);
  REQUIRE(xhat.rows == 10);
  REQUIRE(xhat.cols == 100);
  // determinism
  CHECK(encode(ae, x).data == z.data);
  CHECK(decode(ae, z).data == xhat.data);
  CHECK_THROWS_AS(encode(ae, Tensor2<double>(9, 5)), ShapeError);
  CHECK_THROWS_AS(decode(ae, Tensor2<double>(5, 5)), ShapeError);
  CHECK_THROWS_AS(make_autoencoder(10, 10, 16, 2, rng), ConfigError);
}

TEST_CASE("reconstruction loss on identity stubs", "[latentae]") {
  Tensor2<double> x(3, 5);
  Rng rng(2);
  for (auto& v : x.data) v = rng.normal();
  CHECK(recon_loss(identity_ae(3), x) == 0.0);
  CHECK(recon_loss(identity_ae(3, 0.5), x) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl loss analytic values", "[latentae]") {
  Tensor2<double> z(1, 2);
  z.data = {-1.0, 1.0};  // mu 0, var 1
  CHECK(kl_loss(z) == Catch::Approx(0.0).margin(1e-15));
  z.data = {0.0, 2.0};  // mu 1, var 1
  CHECK(kl_loss(z) == Catch::Approx(0.5).epsilon(1e-12));
  const double r = std::sqrt(std::exp(1.0));
  z.data = {-r, r};  // mu 0, var e
  CHECK(kl_loss(z) == Catch::Approx((std::exp(1.0) - 2.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("kl loss is nonnegative with the right minimum", "[latentae]") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor2<double> z = random_normal<double>(4, 20, rng, rng.uniform(0.2, 3.0));
    CHECK(kl_loss(z) >= 0.0);
  }
  Tensor2<double> single(1, 1, 0.5);
  CHECK_THROWS_AS(kl_loss(single), TrainingError);
  Tensor2<double> constant(2, 3, 0.7);
  CHECK_THROWS_AS(kl_loss(constant), TrainingError);
}

TEST_CASE("kl gradient matches finite differences", "[latentae][grad]") {
  Rng rng(4);
  Tensor2<double> z = random_normal<double>(3, 7, rng);
  Tensor2<double> dz(3, 7);
  kl_loss_grad(z, 1.0, dz);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double fd = testutil::central_diff(z.data[i], [&] { return kl_loss(z); });
    CHECK(testutil::rel_err(fd, dz.data[i]) < 1e-4);
  }
}

TEST_CASE("per-dimension kl variant", "[latentae][grad]") {
  Rng rng(14);
  // frames as rows: 8 frames, 3 channels
  Tensor2<double> z = random_normal<double>(8, 3, rng);
  // value: average the scalar formula over channels
  double expected = 0.0;
  for (std::size_t d = 0; d < 3; ++d) {
    Tensor2<double> col(8, 1);
    for (std::size_t r = 0; r < 8; ++r) col(r, 0) = z(r, d);
    expected += kl_loss(col);
  }
  expected /= 3.0;
  CHECK(kl_loss_per_dim(z) == Catch::Approx(expected).epsilon(1e-12));

  Tensor2<double> dz(8, 3);
  kl_loss_per_dim_grad(z, 1.0, dz);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double fd = testutil::central_diff(z.data[i], [&] { return kl_loss_per_dim(z); });
    CHECK(testutil::rel_err(fd, dz.data[i]) < 1e-4);
  }
}

TEST_CASE("render transform basics", "[latentae]") {
  RenderTransform rt = make_render(6);
  SECTION("zero input renders to zero") {
    Tensor2<double> x(6, 4);
    RenderSeq y = render(rt, x);
    REQUIRE(y.size() == render_length(rt, 4));
    for (double v : y) CHECK(v == 0.0);
  }
  SECTION("deterministic and sensitive to the input") {
    Rng rng(5);
    Tensor2<double> a = random_normal<double>(6, 4, rng);
    Tensor2<double> b = random_normal<double>(6, 4, rng);
    RenderSeq ya = render(rt, a);
    CHECK(render(rt, a) == ya);
    RenderSeq yb = render(rt, b);
    double diff = 0.0;
    for (std::size_t i = 0; i < ya.size(); ++i) diff = std::max(diff, std::abs(ya[i] - yb[i]));
    CHECK(diff > 1e-6);
  }
  SECTION("analysis inverts render on steady sequences") {
    Rng rng(6);
    Tensor2<double> x(6, 8);
    std::vector<double> v(6);
    for (auto& e : v) e = 0.5 * rng.normal();
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t d = 0; d < 6; ++d) x(d, n) = v[d];
    Tensor2<double> rec = render_analysis(rt, render(rt, x), 8);
    for (std::size_t n = 1; n < 8; ++n)
      for (std::size_t d = 0; d < 6; ++d) CHECK(std::abs(rec(d, n) - v[d]) < 0.02);
  }
}

TEST_CASE("lsgan plug-in values", "[latentae]") {
  RenderSeq ones(24, 1.0), zeros(24, 0.0);
  SECTION("fully fooled discriminator") {
    Discriminator d = const_disc(8, 1.0);
    LsganLosses l = lsgan_losses(d, ones, zeros);
    CHECK(l.adv_gen == Catch::Approx(0.0).margin(1e-15));
    CHECK(l.adv_disc == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("perfect discriminator") {
    // d(win) = mean(win): 1 on the all-ones signal, 0 on the all-zeros one
    Discriminator d = const_disc(8, 0.0);
    for (std::size_t j = 0; j < 8; ++j) d.net.layers[0].w(0, j) = 1.0 / 8.0;
    LsganLosses l = lsgan_losses(d, ones, zeros);
    CHECK(l.adv_disc == Catch::Approx(0.0).margin(1e-15));
    CHECK(l.adv_gen == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("indifferent discriminator at one half") {
    Discriminator d = const_disc(8, 0.5);
    LsganLosses l = lsgan_losses(d, ones, zeros);
    CHECK(l.adv_gen == Catch::Approx(0.25).epsilon(1e-12));
    CHECK(l.adv_disc == Catch::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("feature matching values and symmetry", "[latentae]") {
  SECTION("identical inputs cost nothing") {
    Rng rng(7);
    RenderTransform rt = make_render(5);
    Discriminator d = make_discriminator(rt, 12, rng);
    Tensor2<double> x = random_normal<double>(5, 6, rng);
    RenderSeq y = render(rt, x);
    CHECK(feature_matching_loss(d, y, y) == 0.0);
  }
  SECTION("single layer arithmetic") {
    // one layer, two features: mean(win) and -mean(win)
    Discriminator d;
    d.window = 4;
    d.hop = 2;
    DenseLayer<double> l;
    l.w = Tensor2<double>(2, 4);
    for (std::size_t j = 0; j < 4; ++j) {
      l.w(0, j) = 0.25;
      l.w(1, j) = -0.25;
    }
    l.b.assign(2, 0.0);
    l.act = Activation::identity;
    d.net.layers.push_back(std::move(l));
    RenderSeq real(8, 1.0), fake(8, 0.0);  // taps per window: [1,-1] vs [0,0]
    const double loss = feature_matching_loss(d, real, fake);
    CHECK(loss == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(feature_matching_loss(d, fake, real) == Catch::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("ae objective gradients match finite differences", "[latentae][grad]") {
  Rng rng(8);
  const std::size_t d = 6, dz = 3;
  Autoencoder ae = make_autoencoder(d, dz, 10, 1, rng);
  RenderTransform rt = make_render(d);
  Discriminator disc = make_discriminator(rt, 8, rng);
  Tensor2<double> x = random_normal<double>(d, 5, rng);

  for (AeObjective mode : {AeObjective::regular, AeObjective::adversarial}) {
    AeGrads g{zero_grads(ae.enc), zero_grads(ae.dec)};
    AeTrainParams prm;
    prm.mode = mode;
    ae_objective(ae, disc, rt, x, prm, 1.0, &g);
    auto loss = [&] { return ae_objective(ae, disc, rt, x, prm, 1.0, nullptr).total_ae; };

    std::vector<double> pe = flatten_params(ae.enc);
    std::vector<double> ge = flatten_grads(g.enc);
    for (std::size_t probe = 0; probe < 40; ++probe) {
      const std::size_t idx = rng.bits() % pe.size();
      std::vector<double> q = pe;
      q[idx] = pe[idx] + 1e-5;
      set_params(ae.enc, q);
      const double fp = loss();
      q[idx] = pe[idx] - 1e-5;
      set_params(ae.enc, q);
      const double fm = loss();
      set_params(ae.enc, pe);
      INFO("mode " << (mode == AeObjective::regular ? "regular" : "adversarial")
                   << " enc param " << idx);
      CHECK(testutil::rel_err((fp - fm) / 2e-5, ge[idx]) < 1e-4);
    }
    std::vector<double> pd = flatten_params(ae.dec);
    std::vector<double> gd = flatten_grads(g.dec);
    for (std::size_t probe = 0; probe < 40; ++probe) {
      const std::size_t idx = rng.bits() % pd.size();
      std::vector<double> q = pd;
      q[idx] = pd[idx] + 1e-5;
      set_params(ae.dec, q);
      const double fp = loss();
      q[idx] = pd[idx] - 1e-5;
      set_params(ae.dec, q);
      const double fm = loss();
      set_params(ae.dec, pd);
      INFO("mode " << (mode == AeObjective::regular ? "regular" : "adversarial")
                   << " dec param " << idx);
      CHECK(testutil::rel_err((fp - fm) / 2e-5, gd[idx]) < 1e-4);
    }
  }
}

TEST_CASE("discriminator objective gradients match finite differences", "[latentae][grad]") {
  Rng rng(9);
  const std::size_t d = 6, dz = 3;
  Autoencoder ae = make_autoencoder(d, dz, 10, 1, rng);
  RenderTransform rt = make_render(d);
  Discriminator disc = make_discriminator(rt, 8, rng);
  Tensor2<double> x = random_normal<double>(d, 5, rng);

  NetGrads<double> g = zero_grads(disc.net);
  disc_objective(ae, disc, rt, x, 1.0, &g);
  auto loss = [&] { return disc_objective(ae, disc, rt, x, 1.0, nullptr); };
  std::vector<double> p = flatten_params(disc.net);
  std::vector<double> fg = flatten_grads(g);
  for (std::size_t probe = 0; probe < 60; ++probe) {
    const std::size_t idx = rng.bits() % p.size();
    std::vector<double> q = p;
    q[idx] = p[idx] + 1e-5;
    set_params(disc.net, q);
    const double fp = loss();
    q[idx] = p[idx] - 1e-5;
    set_params(disc.net, q);
    const double fm = loss();
    set_params(disc.net, p);
    CHECK(testutil::rel_err((fp - fm) / 2e-5, fg[idx]) < 1e-4);
  }
}

TEST_CASE("regular objective reduces to reconstruction plus kl", "[latentae]") {
  Rng rng(10);
  Autoencoder ae = make_autoencoder(6, 3, 10, 1, rng);
  RenderTransform rt = make_render(6);
  Discriminator disc = make_discriminator(rt, 8, rng);
  Tensor2<double> x = random_normal<double>(6, 5, rng);
  AeTrainParams prm;
  prm.mode = AeObjective::regular;
  AeLossBreakdown b = ae_objective(ae, disc, rt, x, prm, 1.0, nullptr);
  CHECK(b.mel == 0.0);
  CHECK(b.adv_gen == 0.0);
  CHECK(b.feat == 0.0);
  CHECK(b.total_ae == Catch::Approx(45.0 * (b.rec + b.kl)).epsilon(1e-12));
}

TEST_CASE("zero-weight stubs keep every loss finite", "[latentae]") {
  Rng rng(11);
  Autoencoder ae = make_autoencoder(6, 3, 10, 1, rng);
  for (auto* net : {&ae.enc, &ae.dec})
    for_each_param(*net, [](double& v) { v = 0.0; });
  RenderTransform rt = make_render(6);
  Discriminator disc = make_discriminator(rt, 8, rng);
  for_each_param(disc.net, [](double& v) { v = 0.0; });
  Tensor2<double> x = random_normal<double>(6, 5, rng);
  // zero latent would trip the kl variance guard; that error is the contract
  AeTrainParams prm;
  CHECK_THROWS_AS(ae_objective(ae, disc, rt, x, prm, 1.0, nullptr), TrainingError);
  // with a usable encoder all components are finite on zero decoder/disc
  ae.enc = make_autoencoder(6, 3, 10, 1, rng).enc;
  AeLossBreakdown b = ae_objective(ae, disc, rt, x, prm, 1.0, nullptr);
  for (double v : {b.rec, b.mel, b.kl, b.adv_gen, b.feat, b.total_ae}) CHECK(std::isfinite(v));
}

TEST_CASE("alternating updates stay isolated", "[latentae]") {
  Rng rng(12);
  Autoencoder ae = make_autoencoder(6, 3, 10, 1, rng);
  RenderTransform rt = make_render(6);
  Discriminator disc = make_discriminator(rt, 8, rng);
  auto ae_opt = make_adam<double>(ae.param_count(), 2e-4);
  auto disc_opt = make_adam<double>(disc.net.param_count(), 2e-4);
  std::vector<Tensor2<double>> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(random_normal<double>(6, 5, rng));

  SECTION("regular mode never touches the discriminator") {
    const auto disc_before = flatten_params(disc.net);
    AeTrainParams prm;
    prm.mode = AeObjective::regular;
    ae_train_step(ae, disc, rt, batch, ae_opt, disc_opt, prm);
    CHECK(flatten_params(disc.net) == disc_before);
  }
  SECTION("adversarial mode updates both players") {
    const auto disc_before = flatten_params(disc.net);
    const auto enc_before = flatten_params(ae.enc);
    AeTrainParams prm;
    prm.mode = AeObjective::adversarial;
    AeLossBreakdown b = ae_train_step(ae, disc, rt, batch, ae_opt, disc_opt, prm);
    CHECK(flatten_params(disc.net) != disc_before);
    CHECK(flatten_params(ae.enc) != enc_before);
    CHECK(std::isfinite(b.disc));
  }
}
