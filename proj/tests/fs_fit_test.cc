#include "fsnn/fs_fit.h"

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "fsnn/error.h"
#include "fsnn/rng.h"
#include "test_util.h"

using fsnn::ActivationKind;
using fsnn::DivergenceError;
using fsnn::FitConfig;
using fsnn::FitResult;
using fsnn::FsGrads;
using fsnn::FsParams;
using fsnn::RegionWeights;
using fsnn::Rng;
using fsnn::ValidationError;

namespace {

FsParams random_params(Rng* rng, int k) {
  FsParams p;
  p.k = k;
  for (int t = 0; t < k; ++t) {
    p.threshold.push_back(rng->uniform(0.1, 1.5));
    p.reset.push_back(rng->uniform(0.05, 1.5));
    p.out_weight.push_back(rng->uniform(-1.5, 1.5));
  }
  return p;
}

// Small config that fits in well under a second.
FitConfig tiny_config(std::uint64_t seed) {
  FitConfig cfg;
  cfg.target = ActivationKind::kSilu;
  cfg.k = 6;
  cfg.lo = -2.0;
  cfg.hi = 2.0;
  cfg.batch_size = 64;
  cfg.iterations = 400;
  cfg.learning_rate = 0.01;
  cfg.gamma = 1.0;
  cfg.seed = seed;
  cfg.region_weights.regions = {{-2.0, 2.0, 1.0}};
  return cfg;
}

}  // namespace

TEST_CASE("pseudo_grad is the unit triangle around the threshold") {
  CHECK(fsnn::pseudo_grad(1.0, 1.0, 0.5) == 1.0);
  CHECK(fsnn::pseudo_grad(1.25, 1.0, 0.5) == doctest::Approx(0.5));
  CHECK(fsnn::pseudo_grad(0.75, 1.0, 0.5) == doctest::Approx(0.5));
  CHECK(fsnn::pseudo_grad(1.5, 1.0, 0.5) == 0.0);
  CHECK(fsnn::pseudo_grad(0.5, 1.0, 0.5) == 0.0);
  CHECK(fsnn::pseudo_grad(-3.0, 1.0, 0.5) == 0.0);
  testutil::expect_error_containing<ValidationError>(
      [] { fsnn::pseudo_grad(0.0, 0.0, 0.0); }, "width must be positive");
}

TEST_CASE("forward_backward gradients match central finite differences") {
  Rng rng(17);
  RegionWeights weights;
  weights.regions = {{-1.0, 1.0, 4.0}, {-3.0, 3.0, 1.0}};
  const double gamma = 0.8;
  int checked = 0;

  for (int trial = 0; trial < 25; ++trial) {
    const int k = 4;
    const FsParams p = random_params(&rng, k);
    std::vector<double> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(rng.uniform(-3.0, 3.0));

    FsGrads grads;
    fsnn::forward_backward(batch, p, ActivationKind::kSilu, weights, gamma,
                           &grads);

    // Every coordinate of all three arrays, against a two-point stencil on
    // the same smoothed loss.
    for (int array = 0; array < 3; ++array) {
      for (int t = 0; t < k; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const double analytic = array == 0   ? grads.threshold[i]
                                : array == 1 ? grads.reset[i]
                                             : grads.out_weight[i];
        FsParams lo = p, hi = p;
        double* lo_coord = array == 0   ? &lo.threshold[i]
                           : array == 1 ? &lo.reset[i]
                                        : &lo.out_weight[i];
        double* hi_coord = array == 0   ? &hi.threshold[i]
                           : array == 1 ? &hi.reset[i]
                                        : &hi.out_weight[i];
        const double eps = 1e-6 * std::max(1.0, std::abs(*lo_coord));
        *lo_coord -= eps;
        *hi_coord += eps;
        const double f_lo = fsnn::forward_backward(
            batch, lo, ActivationKind::kSilu, weights, gamma, nullptr);
        const double f_hi = fsnn::forward_backward(
            batch, hi, ActivationKind::kSilu, weights, gamma, nullptr);
        const double fd = (f_hi - f_lo) / (2.0 * eps);
        const double tol = 1e-4 * std::max({std::abs(fd), std::abs(analytic), 1e-6});
        CHECK(std::abs(fd - analytic) <= tol);
        ++checked;
      }
    }
  }
  CHECK(checked == 25 * 3 * 4);
}

TEST_CASE("forward_backward flags non-finite losses") {
  FsParams p;
  p.k = 2;
  p.threshold = {1e308, 1e308};
  p.reset = {1e308, 1e308};
  p.out_weight = {1e308, 1e308};
  RegionWeights weights;
  CHECK_THROWS_AS(fsnn::forward_backward({1e308}, p, ActivationKind::kSilu,
                                         weights, 1.0, nullptr),
                  DivergenceError);
}

TEST_CASE("fit is deterministic for a fixed seed") {
  const FitConfig cfg = tiny_config(13);
  const FitResult a = fsnn::fit(ActivationKind::kSilu, cfg);
  const FitResult b = fsnn::fit(ActivationKind::kSilu, cfg);
  CHECK(a.params.threshold == b.params.threshold);
  CHECK(a.params.reset == b.params.reset);
  CHECK(a.params.out_weight == b.params.out_weight);
  CHECK(a.weighted_mse == b.weighted_mse);
  CHECK(a.initial_weighted_mse == b.initial_weighted_mse);

  const FitResult c = fsnn::fit(ActivationKind::kSilu, tiny_config(14));
  CHECK(c.params.threshold != a.params.threshold);
}

TEST_CASE("fit never returns worse than its initialization") {
  for (std::uint64_t seed : {1ull, 5ull, 21ull}) {
    const FitResult res = fsnn::fit(ActivationKind::kSilu, tiny_config(seed));
    CHECK(res.weighted_mse <= res.initial_weighted_mse);
    CHECK(res.iterations == 400);
    CHECK(res.seed == seed);
    CHECK(res.final_gamma > 0.0);
    REQUIRE(res.region_mse.size() == 1);
    CHECK(res.region_mse[0].lo == -2.0);
    CHECK(res.region_mse[0].hi == 2.0);
    CHECK(res.region_mse[0].mse >= 0.0);
  }
}

TEST_CASE("fit aborts when the loss explodes") {
  // A step size around 1e2 reliably overshoots while the neurons still
  // spike, so the decoded outputs (and the loss) blow up. Far larger steps
  // instead push every threshold out of reach, which silences the neuron
  // and leaves the loss finite at its no-spike plateau.
  FitConfig cfg = tiny_config(1);
  cfg.learning_rate = 100.0;
  cfg.iterations = 400;
  CHECK_THROWS_AS(fsnn::fit(ActivationKind::kSilu, cfg), DivergenceError);
}

TEST_CASE("fit config validation names the offending field") {
  FitConfig cfg = tiny_config(1);
  cfg.k = 0;
  testutil::expect_error_containing<ValidationError>(
      [&] { fsnn::fit(ActivationKind::kSilu, cfg); }, "k must be >= 1");
  cfg = tiny_config(1);
  cfg.hi = cfg.lo;
  testutil::expect_error_containing<ValidationError>(
      [&] { fsnn::fit(ActivationKind::kSilu, cfg); }, "train_interval");
  cfg = tiny_config(1);
  cfg.learning_rate = 0.0;
  testutil::expect_error_containing<ValidationError>(
      [&] { fsnn::fit(ActivationKind::kSilu, cfg); }, "learning_rate");
  cfg = tiny_config(1);
  cfg.region_weights.regions = {{2.0, -2.0, 1.0}};
  testutil::expect_error_containing<ValidationError>(
      [&] { fsnn::fit(ActivationKind::kSilu, cfg); }, "lo < hi");
}

TEST_CASE("sweep_k emits per-region rows plus a whole-interval row") {
  FitConfig cfg = tiny_config(2);
  cfg.iterations = 200;
  const std::vector<int> ks = {3, 5};
  const auto rows = fsnn::sweep_k(ActivationKind::kSilu, ks, cfg);
  // One region in the config, so two rows per k.
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].value == 3);
  CHECK(rows[0].region == "-2..2");
  CHECK(rows[1].region == "all");
  CHECK(rows[2].value == 5);
  for (const auto& row : rows) CHECK(row.mse >= 0.0);
}

TEST_CASE("sweep_q quantizes one parameter set without refitting") {
  const FitConfig cfg = tiny_config(4);
  const FitResult res = fsnn::fit(ActivationKind::kSilu, cfg);
  const fsnn::QuantizationSpec range{8, -8.0, 8.0};
  const auto rows =
      fsnn::sweep_q(res.params, ActivationKind::kSilu, {2, 8}, range,
                    cfg.region_weights.regions, cfg.lo, cfg.hi);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].value == 2);
  CHECK(rows[0].region == "-2..2");
  CHECK(rows[1].region == "all");
  CHECK(rows[2].value == 8);

  // A direct quantize-and-measure pass must agree exactly.
  fsnn::QuantizationSpec q2 = range;
  q2.bits = 2;
  const FsParams quantized = fsnn::quantize_params(res.params, q2);
  CHECK(rows[0].mse == fsnn::approximation_mse(quantized, ActivationKind::kSilu,
                                               -2.0, 2.0, 2048));
}

TEST_CASE("sweep CSV uses the documented header and row format") {
  const std::vector<fsnn::SweepRow> rows = {{4, "-2..2", 0.125},
                                            {4, "all", 0.5}};
  const std::string csv = fsnn::sweep_to_csv(rows, "k");
  CHECK(csv.rfind("k,region,mse\n", 0) == 0);
  CHECK(csv.find("4,-2..2,") != std::string::npos);
  CHECK(csv.find("4,all,") != std::string::npos);
  const std::string qcsv = fsnn::sweep_to_csv(rows, "q");
  CHECK(qcsv.rfind("q,region,mse\n", 0) == 0);
}

TEST_CASE("fit config JSON round-trips and reports missing fields") {
  FitConfig cfg;
  cfg.target = ActivationKind::kSigmoid;
  cfg.k = 12;
  cfg.lo = -6.0;
  cfg.hi = 9.0;
  cfg.batch_size = 128;
  cfg.iterations = 1234;
  cfg.learning_rate = 0.02;
  cfg.gamma = 0.75;
  cfg.seed = 99;
  cfg.region_weights.regions = {{-2.0, 2.0, 4.0}, {-6.0, -2.0, 1.0}};

  const FitConfig back = fsnn::fit_config_from_json_text(
      fsnn::fit_config_to_json_text(cfg));
  CHECK(back.target == cfg.target);
  CHECK(back.k == cfg.k);
  CHECK(back.lo == cfg.lo);
  CHECK(back.hi == cfg.hi);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.gamma == cfg.gamma);
  CHECK(back.seed == cfg.seed);
  REQUIRE(back.region_weights.regions.size() == 2);
  CHECK(back.region_weights.regions[0].weight == 4.0);
  CHECK(back.region_weights.regions[1].lo == -6.0);

  testutil::expect_error_containing<ValidationError>(
      [] {
        fsnn::fit_config_from_json_text(
            "{\"activation\": \"silu\", \"k\": 4,"
            " \"train_interval\": [-2, 2], \"batch_size\": 32,"
            " \"iterations\": 10, \"learning_rate\": 0.01,"
            " \"seed\": 1, \"region_weights\": []}");
      },
      "\"gamma\"");
  testutil::expect_error_containing<ValidationError>(
      [] { fsnn::fit_config_from_json_text("[1,2,3]"); }, "fit config");
  testutil::expect_error_containing<ValidationError>(
      [] { fsnn::load_fit_config("/nonexistent/cfg.json"); },
      "/nonexistent/cfg.json");
}

TEST_CASE("region weights use first-match lookup with default 1") {
  RegionWeights w;
  w.regions = {{-1.0, 1.0, 4.0}, {-2.0, 2.0, 2.0}};
  CHECK(w.weight_at(0.0) == 4.0);
  CHECK(w.weight_at(1.5) == 2.0);
  CHECK(w.weight_at(5.0) == 1.0);
  CHECK(w.weight_at(-1.0) == 4.0);  // interval edges are inclusive
}
