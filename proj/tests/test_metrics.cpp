#include <cmath>
#include <string>
#include <vector>

#include "dil/common.hpp"
#include "dil/metrics.hpp"
#include "dil/report.hpp"
#include "dil/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using dil::MetricsReport;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("accuracy counts matches") {
  CHECK(dil::accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(dil::accuracy({1, 2, 3}, {0, 0, 0}) == 0.0);
  CHECK(dil::accuracy({1, 2, 3, 4}, {1, 2, 3, 0}) == 0.75);
  CHECK_THROWS_AS(dil::accuracy({}, {}), dil::DataError);
  CHECK_THROWS_AS(dil::accuracy({1}, {1, 2}), dil::DataError);
}

TEST_CASE("lwlrap hand cases") {
  SUBCASE("perfect ranking scores 1") {
    // Two samples; every positive outranks every negative.
    CHECK(dil::lwlrap(2, 3, {0.9, 0.8, 0.1, 0.7, 0.2, 0.9},
                      {1, 1, 0, 1, 0, 1}) == 1.0);
  }
  SUBCASE("single positive ranked second scores one half") {
    CHECK(dil::lwlrap(1, 3, {0.9, 0.5, 0.1}, {0, 1, 0}) == 0.5);
  }
  SUBCASE("all-negative corpus raises") {
    CHECK_THROWS_AS(dil::lwlrap(1, 3, {0.9, 0.5, 0.1}, {0, 0, 0}),
                    dil::DataError);
  }
  SUBCASE("samples without positives contribute nothing") {
    const double with_blank =
        dil::lwlrap(2, 3, {0.9, 0.5, 0.1, 0.3, 0.2, 0.1}, {0, 1, 0, 0, 0, 0});
    CHECK(with_blank == 0.5);
  }
  SUBCASE("ties resolve toward the lower class index") {
    // Classes 0 and 1 tie; the positive is class 1, so class 0 outranks it.
    CHECK(dil::lwlrap(1, 2, {0.5, 0.5}, {0, 1}) == 0.5);
    // With the positive at class 0 the tie does not hurt.
    CHECK(dil::lwlrap(1, 2, {0.5, 0.5}, {1, 0}) == 1.0);
  }
}

TEST_CASE("lwlrap matches the brute-force oracle on 200 seeded instances") {
  dil::Rng rng(2001);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + rng.uniform_int(6);
    const int c = 2 + rng.uniform_int(9);
    std::vector<double> flat;
    std::vector<int> flat_truth;
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<int>> truth_rows;
    bool any_positive = false;
    for (int s = 0; s < n; ++s) {
      std::vector<double> row(static_cast<size_t>(c));
      std::vector<int> t(static_cast<size_t>(c));
      for (int j = 0; j < c; ++j) {
        // Coarse grid forces frequent score ties.
        row[static_cast<size_t>(j)] = rng.uniform_int(5) * 0.25;
        t[static_cast<size_t>(j)] = rng.uniform() < 0.35 ? 1 : 0;
        any_positive = any_positive || t[static_cast<size_t>(j)] == 1;
      }
      if (s == 0 && !any_positive) t[0] = 1, any_positive = true;
      flat.insert(flat.end(), row.begin(), row.end());
      flat_truth.insert(flat_truth.end(), t.begin(), t.end());
      rows.push_back(std::move(row));
      truth_rows.push_back(std::move(t));
    }
    const double got = dil::lwlrap(n, c, flat, flat_truth);
    const double want = oracle::lwlrap_loops(rows, truth_rows);
    CHECK(std::abs(got - want) <= 1e-9);
  }
}

TEST_CASE("lwlrap is invariant under strictly monotonic score transforms") {
  dil::Rng rng(2002);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + rng.uniform_int(4), c = 3 + rng.uniform_int(5);
    std::vector<double> scores(static_cast<size_t>(n) * c);
    std::vector<int> truth(scores.size());
    for (auto& v : scores) v = rng.uniform(-2, 2);
    bool any = false;
    for (auto& t : truth) {
      t = rng.uniform() < 0.4 ? 1 : 0;
      any = any || t == 1;
    }
    if (!any) truth[0] = 1;
    const double base = dil::lwlrap(n, c, scores, truth);
    std::vector<double> warped(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
      warped[i] = std::exp(scores[i]);  // strictly increasing
    }
    CHECK(dil::lwlrap(n, c, warped, truth) == doctest::Approx(base).epsilon(1e-12));
    for (size_t i = 0; i < scores.size(); ++i) warped[i] = 3.0 * scores[i] + 7.0;
    CHECK(dil::lwlrap(n, c, warped, truth) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("per-sample lrap is perfect exactly when the top class is the label") {
  // One-hot single-label rows: correct argmax <=> that sample's only
  // positive sits at rank 1 <=> its lrap term is 1.
  dil::Rng rng(2003);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 3 + rng.uniform_int(5);
    std::vector<double> row(static_cast<size_t>(c));
    for (auto& v : row) v = rng.uniform(0, 1);
    const int label = rng.uniform_int(c);
    std::vector<int> truth(static_cast<size_t>(c), 0);
    truth[static_cast<size_t>(label)] = 1;

    int argmax = 0;
    for (int j = 1; j < c; ++j) {
      if (row[static_cast<size_t>(j)] > row[static_cast<size_t>(argmax)]) {
        argmax = j;
      }
    }
    const double sample_lrap = dil::lwlrap(1, c, row, truth);
    CHECK((sample_lrap == 1.0) == (argmax == label));
  }
}

TEST_CASE("average_over_domains is the arithmetic mean") {
  CHECK(dil::average_over_domains({80.0, 60.0}) == 70.0);
  CHECK(dil::average_over_domains({67.3}) == 67.3);
  CHECK_THROWS_AS(dil::average_over_domains({}), dil::DataError);
}

TEST_CASE("forgetting matches the published two-domain drop") {
  // Diagonal 49.7 at step 0, off-diagonal 34.1 at step 1 => 15.6.
  const std::vector<std::vector<double>> acc{{49.7}, {34.1, 60.0}};
  CHECK(std::abs(dil::forgetting(acc, 1) - 15.6) < 1e-12);
}

TEST_CASE("forgetting formula properties") {
  SUBCASE("unchanged previous scores give zero") {
    const std::vector<std::vector<double>> acc{{0.8}, {0.8, 0.9}};
    CHECK(dil::forgetting(acc, 1) == 0.0);
  }
  SUBCASE("two-point case") {
    const std::vector<std::vector<double>> acc{{10.0}, {4.0, 1.0}};
    CHECK(dil::forgetting(acc, 1) == 6.0);
  }
  SUBCASE("averages the per-domain drops") {
    const std::vector<std::vector<double>> acc{
        {0.9}, {0.8, 0.9}, {0.7, 0.7, 0.9}};
    CHECK(dil::forgetting(acc, 2) ==
          doctest::Approx(((0.9 - 0.7) + (0.9 - 0.7)) / 2).epsilon(1e-12));
  }
  SUBCASE("invariant under a constant shift of every entry") {
    dil::Rng rng(2004);
    std::vector<std::vector<double>> acc{
        {0.9}, {0.8, 0.95}, {0.6, 0.7, 0.85}};
    const double base = dil::forgetting(acc, 2);
    auto shifted = acc;
    for (auto& row : shifted) {
      for (auto& v : row) v += 0.123;
    }
    CHECK(dil::forgetting(shifted, 2) == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("undefined before a second domain") {
    const std::vector<std::vector<double>> acc{{0.9}};
    CHECK_THROWS_AS(dil::forgetting(acc, 0), dil::DataError);
    CHECK_THROWS_AS(dil::forgetting(acc, -1), dil::DataError);
    CHECK_THROWS_AS(dil::forgetting(acc, 5), dil::DataError);
  }
}

TEST_CASE("build_report assembles the full triangle") {
  SUBCASE("single step has one cell and no forgetting") {
    auto report = dil::build_report({{0, 0, 0.97}}, "accuracy");
    REQUIRE(report.acc.size() == 1);
    CHECK(report.acc[0][0] == 0.97);
    CHECK(report.average[0] == 0.97);
    CHECK_FALSE(report.fr[0].has_value());
  }
  SUBCASE("three steps fill averages and forgetting") {
    auto report = dil::build_report(
        {{0, 0, 0.9},
         {1, 0, 0.8},
         {1, 1, 0.9},
         {2, 0, 0.7},
         {2, 1, 0.7},
         {2, 2, 0.9}},
        "accuracy");
    CHECK(report.average[2] == doctest::Approx((0.7 + 0.7 + 0.9) / 3));
    REQUIRE(report.fr[2].has_value());
    CHECK(*report.fr[2] == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("missing cell is named") {
    try {
      (void)dil::build_report({{0, 0, 0.9}, {1, 1, 0.9}}, "accuracy");
      FAIL("expected DataError");
    } catch (const dil::DataError& e) {
      CHECK(std::string(e.what()).find("step 1, domain 0") !=
            std::string::npos);
    }
  }
  SUBCASE("duplicate cell is named") {
    CHECK_THROWS_WITH_AS(
        (void)dil::build_report({{0, 0, 0.9}, {0, 0, 0.8}}, "accuracy"),
        "build_report: duplicate cell (step 0, domain 0)", dil::DataError);
  }
  SUBCASE("cell above the diagonal is rejected") {
    CHECK_THROWS_AS((void)dil::build_report({{0, 1, 0.9}}, "accuracy"),
                    dil::DataError);
  }
}

TEST_CASE("report serialization round-trips losslessly") {
  auto report = dil::build_report(
      {{0, 0, 1.0 / 3.0},
       {1, 0, 0.123456789012345},
       {1, 1, 0.987654321098765}},
      "lwlrap");
  const std::string json = dil::report_to_json(report);
  const MetricsReport back = dil::report_from_json(json);
  CHECK(back == report);
  // A second render is byte-identical, too.
  CHECK(dil::report_to_json(back) == json);
}

TEST_CASE("report exports") {
  auto report = dil::build_report(
      {{0, 0, 0.9}, {1, 0, 0.8}, {1, 1, 0.95}}, "accuracy");
  SUBCASE("csv has one row per cell plus header") {
    const std::string csv = dil::report_to_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.rfind("step,domain,score,step_average,step_forgetting\n", 0) == 0);
    // Step-0 row leaves the forgetting column empty.
    CHECK(csv.find("0,0,0.9") != std::string::npos);
  }
  SUBCASE("summary prints percent with one decimal") {
    const std::string text = dil::report_summary(report);
    CHECK(text.find("90.0") != std::string::npos);
    CHECK(text.find("95.0") != std::string::npos);
    CHECK(text.find("forgetting 10.0") != std::string::npos);
  }
  SUBCASE("malformed json raises") {
    CHECK_THROWS_AS(dil::report_from_json("{not json"), dil::DataError);
    CHECK_THROWS_AS(dil::report_from_json("{\"metric\": \"x\"}"),
                    dil::DataError);
  }
}

TEST_SUITE_END();
