#include <catch2/catch_amalgamated.hpp>

#include "sssopt/dae.hpp"
#include "toys.hpp"

using namespace sssopt;

namespace {

void check_equilibrium(const SystemCase& sc, Fidelity fid) {
  OperatingPoint op = solve_equilibrium(sc, fid, nominal_dispatch(sc));
  DaeLayout lay = make_layout(sc, fid);
  VectorXd f, g;
  residuals(sc, lay, op.params, op.dispatch.p_d, op.dispatch.q_d, op.x, op.y, f, g);
  REQUIRE(f.size() == lay.nx());
  REQUIRE(g.size() == lay.ny());
  CHECK(f.cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(g.cwiseAbs().maxCoeff() <= 1e-10);
}

}  // namespace

TEST_CASE("equilibrium residuals vanish for every fidelity on ieee14") {
  SystemCase sc = load_case(toys::ieee14_path());
  check_equilibrium(sc, Fidelity::Classical);
  check_equilibrium(sc, Fidelity::WithAvr);
  check_equilibrium(sc, Fidelity::WithAvrPss);
}

TEST_CASE("equilibrium residuals vanish on the toys") {
  check_equilibrium(toys::smib_case(), Fidelity::Classical);
  check_equilibrium(toys::three_bus_case(), Fidelity::Classical);
  check_equilibrium(toys::three_bus_avr_pss_case(), Fidelity::WithAvr);
  check_equilibrium(toys::three_bus_avr_pss_case(), Fidelity::WithAvrPss);
}

TEST_CASE("state and equation counts match for every fidelity") {
  SystemCase sc = load_case(toys::ieee14_path());
  DaeLayout cl = make_layout(sc, Fidelity::Classical);
  CHECK(cl.nx() == 10);
  CHECK(cl.ny() == 28 + 45);
  DaeLayout av = make_layout(sc, Fidelity::WithAvr);
  CHECK(av.nx() == 10 + 20);
  CHECK(av.ny() == 28 + 45 + 5);
  DaeLayout ap = make_layout(sc, Fidelity::WithAvrPss);
  CHECK(ap.nx() == 10 + 20 + 3);
  CHECK(ap.ny() == 28 + 45 + 5 + 4);
}

TEST_CASE("perturbing omega by 0.01 moves the delta row by exactly 0.01 (unit frequency)") {
  SystemCase sc = toys::smib_case();  // omega_base = 1
  OperatingPoint op = solve_equilibrium(sc, Fidelity::Classical, nominal_dispatch(sc));
  DaeLayout lay = make_layout(sc, Fidelity::Classical);
  VectorXd x = op.x;
  x[lay.ix_omega(0)] += 0.01;
  VectorXd f, g;
  residuals(sc, lay, op.params, op.dispatch.p_d, op.dispatch.q_d, x, op.y, f, g);
  CHECK(f[lay.ix_delta(0)] == Catch::Approx(0.01).margin(1e-15));
}

TEST_CASE("unloaded machine with zero armature resistance sits at delta = theta") {
  toys::SmibParams p;
  p.pg_mw = 0.0;
  p.ra = 0.0;
  p.v_mach = 1.0;
  p.v_inf = 1.0;  // identical setpoints: no flow at all
  SystemCase sc = toys::smib_case(p);
  OperatingPoint op = solve_equilibrium(sc, Fidelity::Classical, nominal_dispatch(sc));
  DaeLayout lay = make_layout(sc, Fidelity::Classical);
  CHECK(std::abs(op.y[lay.iy_id(0)]) < 1e-10);
  CHECK(std::abs(op.y[lay.iy_iq(0)]) < 1e-10);
  CHECK(op.x[lay.ix_delta(0)] ==
        Catch::Approx(op.y[lay.iy_th(sc.bus_index(1))]).margin(1e-10));
}

TEST_CASE("AVR steady state pins V_r2 = 0 and V_m = V") {
  SystemCase sc = toys::three_bus_avr_pss_case();
  OperatingPoint op = solve_equilibrium(sc, Fidelity::WithAvr, nominal_dispatch(sc));
  DaeLayout lay = make_layout(sc, Fidelity::WithAvr);
  for (int a = 0; a < lay.n_avr(); ++a) {
    const int b = lay.mach_bus[lay.avrs[a].machine];
    CHECK(op.x[lay.ix_vr2(a)] == 0.0);
    CHECK(op.x[lay.ix_vm(a)] == op.y[lay.iy_v(b)]);
  }
}

TEST_CASE("PSS steady state is identically zero") {
  SystemCase sc = toys::three_bus_avr_pss_case();
  OperatingPoint op = solve_equilibrium(sc, Fidelity::WithAvrPss, nominal_dispatch(sc));
  DaeLayout lay = make_layout(sc, Fidelity::WithAvrPss);
  REQUIRE(lay.n_pss() == 1);
  CHECK(op.x[lay.ix_xw(0)] == 0.0);
  CHECK(op.y[lay.iy_vsi(0)] == 0.0);
  CHECK(op.y[lay.iy_vso(0)] == 0.0);
}

TEST_CASE("field row switches between setpoint form and AVR coupling") {
  SystemCase sc = toys::three_bus_avr_pss_case();

  // Classical: row is V_f - V_f0, so bumping V_f moves the residual by +bump.
  {
    OperatingPoint op = solve_equilibrium(sc, Fidelity::Classical, nominal_dispatch(sc));
    DaeLayout lay = make_layout(sc, Fidelity::Classical);
    VectorXd y = op.y;
    y[lay.iy_vf(0)] += 0.1;
    VectorXd f, g;
    residuals(sc, lay, op.params, op.dispatch.p_d, op.dispatch.q_d, op.x, y, f, g);
    CHECK(g[lay.iy_mach(0, 8)] == Catch::Approx(0.1).margin(1e-12));
  }
  // WithAvr: row is Vf~ - V_f, so the same bump moves it by -bump.
  {
    OperatingPoint op = solve_equilibrium(sc, Fidelity::WithAvr, nominal_dispatch(sc));
    DaeLayout lay = make_layout(sc, Fidelity::WithAvr);
    VectorXd y = op.y;
    y[lay.iy_vf(0)] += 0.1;
    VectorXd f, g;
    residuals(sc, lay, op.params, op.dispatch.p_d, op.dispatch.q_d, op.x, y, f, g);
    CHECK(g[lay.iy_mach(0, 8)] == Catch::Approx(-0.1).margin(1e-12));
  }
}

TEST_CASE("dimension mismatch is rejected") {
  SystemCase sc = toys::three_bus_case();
  OperatingPoint op = solve_equilibrium(sc, Fidelity::Classical, nominal_dispatch(sc));
  DaeLayout lay = make_layout(sc, Fidelity::Classical);
  VectorXd f, g;
  VectorXd bad_x(lay.nx() + 1);
  bad_x.setZero();
  CHECK_THROWS_AS(
      residuals(sc, lay, op.params, op.dispatch.p_d, op.dispatch.q_d, bad_x, op.y, f, g),
      ModelError);
}

TEST_CASE("WithAvrPss without any PSS record is rejected") {
  SystemCase sc = toys::three_bus_case();
  CHECK_THROWS_AS(make_layout(sc, Fidelity::WithAvrPss), ModelError);
}

TEST_CASE("machineless PV bus cannot build a dynamic model") {
  SystemCase sc = toys::three_bus_case();
  sc.buses[2].kind = BusKind::Pv;  // load bus promoted to PV without a machine
  CHECK_THROWS_AS(make_layout(sc, Fidelity::Classical), ModelError);
}

TEST_CASE("implausible back-solved field voltage raises") {
  toys::SmibParams p;
  p.xd_t = 60.0;  // absurd transient reactance forces V_f beyond 10 pu
  p.xq_t = 60.0;
  p.pg_mw = 50.0;
  SystemCase sc = toys::smib_case(p);
  CHECK_THROWS_WITH(solve_equilibrium(sc, Fidelity::Classical, nominal_dispatch(sc)),
                    Catch::Matchers::ContainsSubstring("plausible range"));
}
