#include <doctest.h>

#include <cmath>
#include <random>

#include "efm/error.hpp"
#include "efm/estimators.hpp"
#include "efm/model.hpp"

using namespace efm;

namespace {

Spectrum spec_of(std::vector<double> v, std::size_t n = 1000) {
  const std::size_t len = v.size();
  return Spectrum{std::move(v), len, n, true};
}

}

TEST_SUITE("estimators") {

TEST_CASE("onatski picks the first large gap") {
  const auto s = spec_of({100, 10, 5, 4, 3.5, 3.2});
  CHECK(default_onatski_nu(1000) == 7.0);
  const auto e = onatski_estimate(s, 4, 1000);
  CHECK(e.r_hat == 1);
  CHECK(e.diagnostics.gaps[0] == doctest::Approx(18.0));
  CHECK(e.diagnostics.nu == std::optional<double>(7.0));
  CHECK(e.method == EstimateMethod::On);
}

TEST_CASE("onatski on geometric decay finds nothing") {
  std::vector<double> v;
  for (int i = 1; i <= 12; ++i) v.push_back(std::pow(2.0, -i));
  const auto e = onatski_estimate(spec_of(v), 10, 1000);
  CHECK(e.r_hat == 0);
  CHECK(e.diagnostics.no_signal);
  // (2^-i - 2^-(i+1)) / (2^-(i+1) - 2^-(i+2)) = 2
  for (double g : e.diagnostics.gaps) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("onatski rule matches a reference one-liner") {
  std::mt19937_64 g(3);
  std::exponential_distribution<double> ex(0.3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> gaps(8);
    for (auto& x : gaps) x = ex(g);
    const double nu = 1.0 + 6.0 * std::uniform_real_distribution<double>()(g);
    std::size_t ref = 0;
    for (std::size_t i = 0; i < gaps.size() && !ref; ++i) ref = gaps[i] > nu ? i + 1 : 0;
    CHECK(onatski_rule(gaps, nu) == ref);
  }
}

TEST_CASE("second round on a two-factor spectrum with a spurious third") {
  const auto s = spec_of({12.4, 6.2, 5.5, 1.9, 1.85, 1.8, 1.7});
  const auto e = second_round_estimate(s, 3);
  const double g1 = 6.2 / 0.7, g2 = 0.7 / 3.6, g3 = 3.6 / 0.05;
  REQUIRE(e.diagnostics.gaps.size() >= 3);
  CHECK(e.diagnostics.gaps[0] == doctest::Approx(g1));
  CHECK(e.diagnostics.gaps[1] == doctest::Approx(g2));
  CHECK(e.diagnostics.gaps[2] == doctest::Approx(g3));
  REQUIRE(e.diagnostics.deltas.size() == 2);
  CHECK(e.diagnostics.deltas[0] == doctest::Approx((g2 + g3) / 2));
  CHECK(e.diagnostics.deltas[1] == doctest::Approx((g1 + g3) / 2));
  CHECK(e.r_hat == 2);
  CHECK(e.diagnostics.fallback);
}

TEST_CASE("second round picks the largest qualifying index") {
  // G = (2, 10, 1, 1): i = 2 qualifies against (2 + 1 + 1)/3
  const auto s = spec_of({34, 14, 4, 3, 2, 1});
  const auto e = second_round_estimate(s, 4);
  CHECK(e.diagnostics.gaps[1] == doctest::Approx(10.0));
  CHECK(e.r_hat == 2);
  CHECK_FALSE(e.diagnostics.fallback);
}

TEST_CASE("second round with equal gaps ties to r* - 1") {
  std::vector<double> v;
  for (int i = 0; i < 9; ++i) v.push_back(10.0 - i);
  for (std::size_t r : {2u, 3u, 5u}) CHECK(second_round_estimate(spec_of(v), r).r_hat == r - 1);
}

TEST_CASE("second round with r* = 2 always returns 1") {
  CHECK(second_round_estimate(spec_of({10, 9, 1, 0.5, 0.4}), 2).r_hat == 1);
  CHECK(second_round_estimate(spec_of({10, 2, 1.9, 0.5, 0.4}), 2).r_hat == 1);
  CHECK_THROWS_AS(second_round_estimate(spec_of({10, 2, 1.9, 0.5}), 1), BoundsError);
}

TEST_CASE("infinite gaps stay out of the averages") {
  const auto s = spec_of({10, 5, 3, 3, 2, 1});
  const auto e = second_round_estimate(s, 3);
  CHECK(std::isinf(e.diagnostics.gaps[1]));
  CHECK(std::isfinite(e.diagnostics.deltas[0]));
}

TEST_CASE("combined pipeline edge rules") {
  const auto s = spec_of({20, 10, 5, 4, 3, 2.5, 2.2, 2.0, 1.9}, 400);
  DetectionReport none;
  none.n = 400;
  none.p = 400;
  const auto on = combine_detection(s, none, 4);
  CHECK(on.diagnostics.none_flagged);
  CHECK(on.r_hat == onatski_estimate(s, 4, 400).r_hat);
  const auto scan = combine_detection(s, none, 4, {NoneFlaggedRule::ScanAll, {}});
  CHECK(scan.diagnostics.r_star == std::optional<std::size_t>(5));
  CHECK(scan.r_hat == second_round_estimate(s, 5).r_hat);

  DetectionReport first = none;
  first.r_star = 1;
  first.f_hat = 1;
  const auto all = combine_detection(s, first, 4);
  CHECK(all.r_hat == 0);
  CHECK(all.diagnostics.all_spurious);

  DetectionReport third = none;
  third.r_star = 3;
  CHECK(combine_detection(s, third, 4).r_hat == second_round_estimate(s, 3).r_hat);
  CHECK(combine_detection(s, third, 4).method == EstimateMethod::Ma);
}

TEST_CASE("estimates are scale invariant and deterministic") {
  const PopulationModel model(120, {12.0, 6.0});
  const auto panel = generate_panel(model, RadiusLaw::multivariate_t(4.3), 150, 31);
  MagnificationConfig cfg;
  cfg.K = 60;
  cfg.o = 8;
  cfg.seed = 9;
  const auto a = estimate_factors(panel, cfg);
  PanelMatrix scaled{panel.values * 3.7, LoadedProvenance{"scaled"}};
  const auto b = estimate_factors(scaled, cfg);
  CHECK(a.r_hat == b.r_hat);
  REQUIRE(a.detection);
  REQUIRE(b.detection);
  for (std::size_t i = 0; i < cfg.o; ++i)
    CHECK(a.detection->records[i].stat == doctest::Approx(b.detection->records[i].stat).epsilon(1e-8));
  CHECK(to_json(estimate_factors(panel, cfg)) == to_json(a));
}

TEST_CASE("estimate shape guard") {
  const auto panel = generate_panel(PopulationModel(10, {5.0}), RadiusLaw::constant(), 40, 1);
  MagnificationConfig cfg;
  cfg.o = 8;
  CHECK_THROWS_AS(estimate_factors(panel, cfg), BoundsError);
}

TEST_CASE("rule names") {
  CHECK(none_flagged_rule_from_string("scan-all") == NoneFlaggedRule::ScanAll);
  CHECK(to_string(NoneFlaggedRule::Onatski) == "onatski");
  CHECK_THROWS_AS(none_flagged_rule_from_string("x"), ConfigError);
}

}
