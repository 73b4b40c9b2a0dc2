#include <catch2/catch_amalgamated.hpp>

#include "sssopt/lp.hpp"

using namespace sssopt;

namespace {

// Independent textbook oracle: full-tableau two-phase simplex with Bland's
// rule, standard form (all variables shifted to >= 0, upper bounds as rows).
// Completely separate code path from the production solver. Requires finite
// bounds on every variable.
struct OracleResult {
  bool feasible = false;
  double objective = 0.0;  // in the original (maximize) sense
};

OracleResult oracle_simplex(const LpProblem& p) {
  const int n = p.n;
  for (int j = 0; j < n; ++j) {
    REQUIRE(p.lo[j] > -kLpInf / 2);
    REQUIRE(p.hi[j] < kLpInf / 2);
    if (p.lo[j] > p.hi[j]) return {};
  }
  // z = x - lo >= 0. Rows: a_eq z = b_eq - a_eq lo; a_in z <= ...; z <= hi-lo.
  const int me = static_cast<int>(p.a_eq.rows());
  const int mi = static_cast<int>(p.a_in.rows());
  const int m = me + mi + n;
  const int ns = n + mi + n;   // z, ineq slacks, ub slacks
  const int total = ns + m;    // + artificials
  MatrixXd t = MatrixXd::Zero(m, total);
  VectorXd rhs(m);
  t.block(0, 0, me, n) = p.a_eq;
  rhs.head(me) = p.b_eq - p.a_eq * p.lo;
  t.block(me, 0, mi, n) = p.a_in;
  for (int i = 0; i < mi; ++i) t(me + i, n + i) = 1.0;
  rhs.segment(me, mi) = p.b_in - p.a_in * p.lo;
  for (int j = 0; j < n; ++j) {
    t(me + mi + j, j) = 1.0;
    t(me + mi + j, n + mi + j) = 1.0;
    rhs[me + mi + j] = p.hi[j] - p.lo[j];
  }
  for (int i = 0; i < m; ++i) {
    if (rhs[i] < 0) {
      t.row(i) *= -1.0;
      rhs[i] *= -1.0;
    }
    t(i, ns + i) = 1.0;
  }
  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = ns + i;

  auto run = [&](const VectorXd& cost_min) -> bool {  // minimize; Bland's rule
    for (int guard = 0; guard < 200000; ++guard) {
      VectorXd cb(m);
      for (int i = 0; i < m; ++i) cb[i] = cost_min[basis[i]];
      int enter = -1;
      for (int j = 0; j < total; ++j) {
        double red = cost_min[j] - cb.dot(t.col(j));
        if (red < -1e-9) {
          enter = j;
          break;  // Bland: first improving index
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        if (t(i, enter) > 1e-10) {
          double ratio = rhs[i] / t(i, enter);
          if (ratio < best - 1e-12 ||
              (ratio < best + 1e-12 && (leave < 0 || basis[i] < basis[leave]))) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;  // unbounded (cannot happen with box bounds)
      const double piv = t(leave, enter);
      t.row(leave) /= piv;
      rhs[leave] /= piv;
      for (int i = 0; i < m; ++i) {
        if (i == leave) continue;
        const double f = t(i, enter);
        if (f != 0.0) {
          t.row(i) -= f * t.row(leave);
          rhs[i] -= f * rhs[leave];
        }
      }
      basis[leave] = enter;
    }
    FAIL("oracle simplex did not terminate");
    return false;
  };

  VectorXd phase1 = VectorXd::Zero(total);
  phase1.tail(m).setConstant(1.0);
  run(phase1);
  double art = 0;
  for (int i = 0; i < m; ++i)
    if (basis[i] >= ns) art += rhs[i];
  if (art > 1e-7) return {};

  VectorXd phase2 = VectorXd::Zero(total);
  phase2.head(n) = -p.c;  // minimize -c
  for (int j = ns; j < total; ++j) phase2[j] = 1e7;  // keep artificials parked
  run(phase2);
  OracleResult res;
  res.feasible = true;
  double obj = 0;
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) obj += p.c[basis[i]] * rhs[i];
  obj += p.c.dot(p.lo);  // shift back
  res.objective = obj;
  return res;
}

unsigned rng_state = 20240131;
double rnd() {
  rng_state = rng_state * 1664525u + 1013904223u;
  return (rng_state >> 8) / double(1 << 24);
}

}  // namespace

TEST_CASE("one-variable maximum lands on the bound") {
  LpProblem p;
  p.init(1);
  p.c[0] = 1.0;
  p.lo[0] = 0.0;
  p.a_in.resize(1, 1);
  p.a_in << 1.0;
  p.b_in.resize(1);
  p.b_in << 3.0;
  LpSolution s = lp_solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.x[0] == Catch::Approx(3.0));
  CHECK(s.objective == Catch::Approx(3.0));
}

TEST_CASE("contradictory bounds are infeasible") {
  LpProblem p;
  p.init(2);
  p.lo[0] = 1.0;
  p.hi[0] = 0.5;
  CHECK(lp_solve(p).status == LpStatus::Infeasible);
}

TEST_CASE("conflicting rows are infeasible") {
  LpProblem p;
  p.init(1);
  p.lo[0] = -10;
  p.hi[0] = 10;
  p.a_eq.resize(2, 1);
  p.a_eq << 1.0, 1.0;
  p.b_eq.resize(2);
  p.b_eq << 1.0, 2.0;
  CHECK(lp_solve(p).status == LpStatus::Infeasible);
}

TEST_CASE("unbounded direction is detected") {
  LpProblem p;
  p.init(2);
  p.c << 1.0, 0.0;
  p.lo << 0.0, 0.0;
  p.a_in.resize(1, 2);
  p.a_in << 0.0, 1.0;  // only x1 bounded by the row; x0 free upward
  p.b_in.resize(1);
  p.b_in << 1.0;
  CHECK(lp_solve(p).status == LpStatus::Unbounded);
}

TEST_CASE("equalities, upper bounds and negative costs combine correctly") {
  // max 2a + b  s.t.  a + b = 4, a <= 3, b <= 3, a,b >= 0  ->  a=3, b=1.
  LpProblem p;
  p.init(2);
  p.c << 2, 1;
  p.lo << 0, 0;
  p.hi << 3, 3;
  p.a_eq.resize(1, 2);
  p.a_eq << 1, 1;
  p.b_eq.resize(1);
  p.b_eq << 4;
  LpSolution s = lp_solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == Catch::Approx(7.0));
  CHECK(s.x[0] == Catch::Approx(3.0));
  CHECK(s.x[1] == Catch::Approx(1.0));
}

TEST_CASE("redundant equality rows do not break phase 1") {
  LpProblem p;
  p.init(2);
  p.c << 1, -1;
  p.lo << -5, -5;
  p.hi << 5, 5;
  p.a_eq.resize(2, 2);
  p.a_eq << 1, 1, 2, 2;  // duplicated row
  p.b_eq.resize(2);
  p.b_eq << 2, 4;
  LpSolution s = lp_solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  // best point on x0 + x1 = 2 inside the box: x = (5, -3)
  CHECK(s.objective == Catch::Approx(8.0));
}

TEST_CASE("100 random boxed LPs match the independent tableau oracle") {
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + int(rnd() * 17);           // up to ~20 variables
    const int me = int(rnd() * std::min(4, n));  // a few equalities
    const int mi = 1 + int(rnd() * 7);
    LpProblem p;
    p.init(n);
    VectorXd x0(n);
    for (int j = 0; j < n; ++j) {
      x0[j] = rnd() * 4 - 2;
      p.lo[j] = x0[j] - (0.2 + 2 * rnd());
      p.hi[j] = x0[j] + (0.2 + 2 * rnd());
      p.c[j] = rnd() * 2 - 1;
    }
    p.a_eq.resize(me, n);
    p.b_eq.resize(me);
    for (int i = 0; i < me; ++i) {
      for (int j = 0; j < n; ++j) p.a_eq(i, j) = rnd() < 0.4 ? rnd() * 2 - 1 : 0.0;
      p.b_eq[i] = p.a_eq.row(i).dot(x0);  // x0 stays feasible
    }
    p.a_in.resize(mi, n);
    p.b_in.resize(mi);
    for (int i = 0; i < mi; ++i) {
      for (int j = 0; j < n; ++j) p.a_in(i, j) = rnd() < 0.5 ? rnd() * 2 - 1 : 0.0;
      p.b_in[i] = p.a_in.row(i).dot(x0) + rnd();  // slack at x0
    }

    LpSolution mine = lp_solve(p);
    OracleResult ref = oracle_simplex(p);
    REQUIRE(ref.feasible);  // constructed feasible
    REQUIRE(mine.status == LpStatus::Optimal);
    CHECK(std::abs(mine.objective - ref.objective) <=
          1e-8 * std::max(1.0, std::abs(ref.objective)));
    CHECK(mine.max_violation <= 1e-8);
    for (int j = 0; j < n; ++j) {
      CHECK(mine.x[j] >= p.lo[j] - 1e-8);
      CHECK(mine.x[j] <= p.hi[j] + 1e-8);
    }
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("random LPs with an unreachable equality are flagged by both solvers") {
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + int(rnd() * 6);
    LpProblem p;
    p.init(n);
    VectorXd x0(n);
    for (int j = 0; j < n; ++j) {
      x0[j] = rnd() * 2 - 1;
      p.lo[j] = x0[j] - rnd();
      p.hi[j] = x0[j] + rnd();
      p.c[j] = rnd() - 0.5;
    }
    p.a_eq.resize(1, n);
    p.a_eq.setOnes();
    p.b_eq.resize(1);
    p.b_eq << p.hi.sum() + 1.0;  // beyond the box
    LpSolution mine = lp_solve(p);
    OracleResult ref = oracle_simplex(p);
    CHECK(mine.status == LpStatus::Infeasible);
    CHECK_FALSE(ref.feasible);
  }
}
