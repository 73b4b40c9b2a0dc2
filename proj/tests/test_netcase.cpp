#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <sstream>

#include "sssopt/case.hpp"

using namespace sssopt;

namespace {

std::string ieee14_path() { return std::string(SSSOPT_DATA_DIR) + "/ieee14.case"; }

SystemCase two_bus_case() {
  SystemCase sc;
  sc.s_base_mva = 100;
  sc.f_hz = 60;
  sc.buses.push_back({1, BusKind::Slack, 1.0, 0, 0, 0.8, 1.2, 0, 0});
  sc.buses.push_back({2, BusKind::Pq, 1.0, 0, 0, 0.8, 1.2, 0, 0});
  sc.branches.push_back({1, 2, 0.0, 0.1, 0.0, 9900, 1.0});
  return sc;
}

}  // namespace

TEST_CASE("bundled ieee14 loads and matches the headline figures") {
  SystemCase sc = load_case(ieee14_path());
  REQUIRE(sc.buses.size() == 14);
  REQUIRE(sc.machines.size() == 5);
  REQUIRE(sc.avrs.size() == 5);
  REQUIRE(sc.psses.size() == 1);
  REQUIRE(sc.dr.size() == 10);

  double dr_total = 0, total = 0;
  for (const auto& b : sc.buses) total += b.p_d0_mw;
  for (const auto& d : sc.dr) dr_total += sc.buses[sc.bus_index(d.bus)].p_d0_mw;
  CHECK(dr_total == Catch::Approx(211.2).margin(1e-9));
  CHECK(total == Catch::Approx(259.0).margin(1e-9));
  CHECK_FALSE(sc.dr_contains(4));  // the one leading-power-factor load stays fixed
}

TEST_CASE("two slack buses are rejected") {
  std::istringstream in(
      "[BASE]\n100 60\n"
      "[BUS]\n"
      "1 slack 1.0 0 0 0.9 1.1 0 0\n"
      "2 slack 1.0 0 0 0.9 1.1 0 0\n"
      "[BRANCH]\n1 2 0.01 0.1 0 9900 1\n");
  CHECK_THROWS_WITH(load_case(in), Catch::Matchers::ContainsSubstring("multiple slack buses"));
}

TEST_CASE("branch referencing a missing bus is rejected") {
  std::istringstream in(
      "[BASE]\n100 60\n"
      "[BUS]\n1 slack 1.0 0 0 0.9 1.1 0 0\n2 pq 1.0 0 0 0.9 1.1 0 0\n"
      "[BRANCH]\n1 99 0.01 0.1 0 9900 1\n");
  CHECK_THROWS_WITH(load_case(in), Catch::Matchers::ContainsSubstring("unknown bus"));
}

TEST_CASE("parse errors carry line and field information") {
  std::istringstream in(
      "[BASE]\n100 60\n"
      "[BUS]\n1 slack oops 0 0 0.9 1.1 0 0\n");
  CHECK_THROWS_WITH(load_case(in), Catch::Matchers::ContainsSubstring("line 4"));
}

TEST_CASE("save/load round-trips every field bit-exactly") {
  SystemCase sc = load_case(ieee14_path());
  // Perturb a few fields with awkward binary representations first.
  sc.branches[3].x = 0.1 + 1e-17;
  sc.machines[1].h = 3.9240000000000004;
  std::ostringstream out;
  save_case(sc, out);
  std::istringstream in(out.str());
  SystemCase rt = load_case(in);

  REQUIRE(rt.buses.size() == sc.buses.size());
  REQUIRE(rt.branches.size() == sc.branches.size());
  for (size_t i = 0; i < sc.buses.size(); ++i) {
    CHECK(std::memcmp(&rt.buses[i].v_set, &sc.buses[i].v_set, sizeof(double)) == 0);
    CHECK(std::memcmp(&rt.buses[i].p_d0_mw, &sc.buses[i].p_d0_mw, sizeof(double)) == 0);
    CHECK(std::memcmp(&rt.buses[i].b_shunt, &sc.buses[i].b_shunt, sizeof(double)) == 0);
  }
  for (size_t i = 0; i < sc.branches.size(); ++i) {
    CHECK(std::memcmp(&rt.branches[i].x, &sc.branches[i].x, sizeof(double)) == 0);
    CHECK(std::memcmp(&rt.branches[i].tap, &sc.branches[i].tap, sizeof(double)) == 0);
  }
  for (size_t i = 0; i < sc.machines.size(); ++i) {
    CHECK(std::memcmp(&rt.machines[i].h, &sc.machines[i].h, sizeof(double)) == 0);
    CHECK(std::memcmp(&rt.machines[i].xd_t, &sc.machines[i].xd_t, sizeof(double)) == 0);
  }
  for (size_t i = 0; i < sc.dr.size(); ++i)
    CHECK(std::memcmp(&rt.dr[i].mu, &sc.dr[i].mu, sizeof(double)) == 0);
}

TEST_CASE("single lossless branch gives the textbook off-diagonal") {
  SystemCase sc = two_bus_case();
  validate_case(sc);
  MatrixXcd y = admittance(sc);
  // series admittance 1/(j0.1) = -j10; off-diagonal is its negation.
  CHECK(std::abs(y(0, 1) - Complex(0, 10)) < 1e-12);
  CHECK(std::abs(y(0, 0) - Complex(0, -10)) < 1e-12);
}

TEST_CASE("zero-impedance branch is an error") {
  SystemCase sc = two_bus_case();
  sc.branches[0].x = 0;
  CHECK_THROWS_AS(admittance(sc), ValidationError);
  CHECK_THROWS_AS(validate_case(sc), ValidationError);
}

TEST_CASE("ieee14 admittance equals an independently assembled Y-bus") {
  SystemCase sc = load_case(ieee14_path());
  MatrixXcd y = admittance(sc);

  // Independent construction: raw triplets straight from the published line
  // table, accumulated with explicit loops (no shared code with admittance()).
  struct Row {
    int f, t;
    double r, x, b, tap;
  };
  const Row rows[] = {
      {1, 2, 0.01938, 0.05917, 0.0528, 1},   {1, 5, 0.05403, 0.22304, 0.0492, 1},
      {2, 3, 0.04699, 0.19797, 0.0438, 1},   {2, 4, 0.05811, 0.17632, 0.0340, 1},
      {2, 5, 0.05695, 0.17388, 0.0346, 1},   {3, 4, 0.06701, 0.17103, 0.0128, 1},
      {4, 5, 0.01335, 0.04211, 0, 1},        {4, 7, 0, 0.20912, 0, 1},
      {4, 9, 0, 0.55618, 0, 1},              {5, 6, 0, 0.25202, 0, 1},
      {6, 11, 0.09498, 0.19890, 0, 1},       {6, 12, 0.12291, 0.25581, 0, 1},
      {6, 13, 0.06615, 0.13027, 0, 1},       {7, 8, 0, 0.17615, 0, 1},
      {7, 9, 0, 0.11001, 0, 1},              {9, 10, 0.03181, 0.08450, 0, 1},
      {9, 14, 0.12711, 0.27038, 0, 1},       {10, 11, 0.08205, 0.19207, 0, 1},
      {12, 13, 0.22092, 0.19988, 0, 1},      {13, 14, 0.17093, 0.34802, 0, 1}};
  MatrixXcd ref = MatrixXcd::Zero(14, 14);
  for (const Row& w : rows) {
    Complex z(w.r, w.x);
    Complex ys = 1.0 / z;
    Complex half_b(0, w.b / 2);
    int i = w.f - 1, j = w.t - 1;
    ref(i, i) += (ys + half_b) / (w.tap * w.tap);
    ref(j, j) += ys + half_b;
    ref(i, j) += -ys / w.tap;
    ref(j, i) += -ys / w.tap;
  }
  ref(8, 8) += Complex(0, 0.19);  // bus 9 shunt capacitor

  for (int i = 0; i < 14; ++i)
    for (int j = 0; j < 14; ++j) CHECK(std::abs(y(i, j) - ref(i, j)) <= 1e-12);
}

TEST_CASE("off-nominal turns ratio builds the usual pi-equivalent") {
  SystemCase sc = two_bus_case();
  sc.branches[0] = {1, 2, 0.0, 0.25, 0.0, 9900, 0.95};
  MatrixXcd y = admittance(sc);
  const Complex ys = 1.0 / Complex(0, 0.25);
  CHECK(std::abs(y(0, 0) - ys / (0.95 * 0.95)) < 1e-14);
  CHECK(std::abs(y(1, 1) - ys) < 1e-14);
  CHECK(std::abs(y(0, 1) + ys / 0.95) < 1e-14);
  CHECK(std::abs(y(0, 1) - y(1, 0)) < 1e-14);  // still symmetric
}

TEST_CASE("admittance symmetry and off-diagonal rule hold on generated networks") {
  // Deterministic pseudo-random radial networks with extra chords.
  unsigned state = 12345;
  auto rnd = [&]() {
    state = state * 1664525u + 1013904223u;
    return (state >> 8) / double(1 << 24);
  };
  for (int trial = 0; trial < 20; ++trial) {
    SystemCase sc;
    int n = 3 + int(rnd() * 8);
    for (int i = 0; i < n; ++i)
      sc.buses.push_back({i + 1, i == 0 ? BusKind::Slack : BusKind::Pq, 1.0, 0, 0, 0.8, 1.2, 0, 0});
    for (int i = 1; i < n; ++i) {
      int parent = 1 + int(rnd() * i);
      sc.branches.push_back({parent, i + 1, 0.01 + rnd() * 0.1, 0.05 + rnd() * 0.3,
                             rnd() * 0.05, 9900, 1.0});
    }
    if (n > 4) sc.branches.push_back({1, n, 0.02, 0.2, 0.01, 9900, 1.0});
    validate_case(sc);
    MatrixXcd y = admittance(sc);
    CHECK((y - y.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    // Each off-diagonal equals the negated sum of series admittances.
    MatrixXcd series = MatrixXcd::Zero(n, n);
    for (const auto& br : sc.branches) {
      Complex ys = 1.0 / Complex(br.r, br.x);
      series(sc.bus_index(br.from), sc.bus_index(br.to)) += ys;
      series(sc.bus_index(br.to), sc.bus_index(br.from)) += ys;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) CHECK(std::abs(y(i, j) + series(i, j)) < 1e-13);
  }
}
