#pragma once

// Nonlinear differential-algebraic model: electromechanical machine dynamics,
// AVR excitation control with exponential ceiling, PSS washout + lead-lag
// chain, and the network algebraic constraints. Three fidelities: Classical
// (field voltage pinned to its setpoint), WithAvr, WithAvrPss.
//
// State ordering is canonical so Jacobian rows and eigenvector components are
// reproducible across runs:
//   x = [per machine: delta, omega | per AVR: V_m, V_r1, Vf~, V_r2
//        | per PSS: x_w, x_p, x_q]
//   y = [per bus: V, theta | per machine: i_d, i_q, V_d, V_q, p_g, q_g,
//        psi_d, psi_q, V_f | per AVR: V_ref | per PSS: V_si, V_so, V_w, V_p]
// f rows mirror x; g rows mirror y. omega is the per-unit speed deviation and
// delta' = omega_base * omega.
//
// A slack bus without a machine is treated as an infinite bus: its two
// network rows become V - V0 = 0 and theta = 0 (the bus absorbs any power).

#include <string>
#include <vector>

#include "sssopt/case.hpp"
#include "sssopt/common.hpp"
#include "sssopt/powerflow.hpp"

namespace sssopt {

enum class Fidelity { Classical, WithAvr, WithAvrPss };

inline const char* to_string(Fidelity f) {
  switch (f) {
    case Fidelity::Classical: return "classical";
    case Fidelity::WithAvr: return "avr";
    case Fidelity::WithAvrPss: return "avr-pss";
  }
  return "?";
}

struct ActiveAvr {
  int machine = -1;  // machine index
  int rec = -1;      // index into SystemCase::avrs
};
struct ActivePss {
  int machine = -1;
  int avr = -1;      // index into active AVR list
  int rec = -1;      // index into SystemCase::psses
};

struct DaeLayout {
  Fidelity fidelity = Fidelity::Classical;
  int n_bus = 0, n_mach = 0;
  std::vector<ActiveAvr> avrs;
  std::vector<ActivePss> psses;
  std::vector<int> avr_of_machine;  // active-AVR index per machine, -1 if none
  std::vector<int> pss_of_machine;  // active-PSS index per machine, -1 if none
  std::vector<int> mach_bus;        // bus index per machine
  int infinite_bus = -1;            // bus index of a machineless slack, else -1
  int slack_bus = -1;

  int n_avr() const { return static_cast<int>(avrs.size()); }
  int n_pss() const { return static_cast<int>(psses.size()); }
  int nx() const { return 2 * n_mach + 4 * n_avr() + 3 * n_pss(); }
  int ny() const { return 2 * n_bus + 9 * n_mach + n_avr() + 4 * n_pss(); }

  // x indices
  int ix_delta(int m) const { return 2 * m; }
  int ix_omega(int m) const { return 2 * m + 1; }
  int ix_vm(int a) const { return 2 * n_mach + 4 * a; }
  int ix_vr1(int a) const { return 2 * n_mach + 4 * a + 1; }
  int ix_vf(int a) const { return 2 * n_mach + 4 * a + 2; }
  int ix_vr2(int a) const { return 2 * n_mach + 4 * a + 3; }
  int ix_xw(int p) const { return 2 * n_mach + 4 * n_avr() + 3 * p; }
  int ix_xp(int p) const { return 2 * n_mach + 4 * n_avr() + 3 * p + 1; }
  int ix_xq(int p) const { return 2 * n_mach + 4 * n_avr() + 3 * p + 2; }

  // y indices
  int iy_v(int b) const { return 2 * b; }
  int iy_th(int b) const { return 2 * b + 1; }
  int iy_mach(int m, int k) const { return 2 * n_bus + 9 * m + k; }  // k per ordering above
  int iy_id(int m) const { return iy_mach(m, 0); }
  int iy_iq(int m) const { return iy_mach(m, 1); }
  int iy_vd(int m) const { return iy_mach(m, 2); }
  int iy_vq(int m) const { return iy_mach(m, 3); }
  int iy_pg(int m) const { return iy_mach(m, 4); }
  int iy_qg(int m) const { return iy_mach(m, 5); }
  int iy_psid(int m) const { return iy_mach(m, 6); }
  int iy_psiq(int m) const { return iy_mach(m, 7); }
  int iy_vf(int m) const { return iy_mach(m, 8); }
  int iy_vref(int a) const { return 2 * n_bus + 9 * n_mach + a; }
  int iy_pssbase(int p) const { return 2 * n_bus + 9 * n_mach + n_avr() + 4 * p; }
  int iy_vsi(int p) const { return iy_pssbase(p); }
  int iy_vso(int p) const { return iy_pssbase(p) + 1; }
  int iy_vw(int p) const { return iy_pssbase(p) + 2; }
  int iy_vp(int p) const { return iy_pssbase(p) + 3; }

  std::string x_name(const SystemCase& sc, int i) const {
    for (int m = 0; m < n_mach; ++m) {
      if (i == ix_delta(m)) return "delta@" + std::to_string(sc.buses[mach_bus[m]].id);
      if (i == ix_omega(m)) return "omega@" + std::to_string(sc.buses[mach_bus[m]].id);
    }
    for (int a = 0; a < n_avr(); ++a) {
      int bus = sc.buses[mach_bus[avrs[a].machine]].id;
      if (i == ix_vm(a)) return "avr.Vm@" + std::to_string(bus);
      if (i == ix_vr1(a)) return "avr.Vr1@" + std::to_string(bus);
      if (i == ix_vf(a)) return "avr.Vf@" + std::to_string(bus);
      if (i == ix_vr2(a)) return "avr.Vr2@" + std::to_string(bus);
    }
    for (int p = 0; p < n_pss(); ++p) {
      int bus = sc.buses[mach_bus[psses[p].machine]].id;
      if (i == ix_xw(p)) return "pss.xw@" + std::to_string(bus);
      if (i == ix_xp(p)) return "pss.xp@" + std::to_string(bus);
      if (i == ix_xq(p)) return "pss.xq@" + std::to_string(bus);
    }
    return "x" + std::to_string(i);
  }

  /// True when A = [[f_x,f_y],[g_x,g_y]] genuinely depends on x-state i
  /// (second derivative of some residual is nonzero).
  bool a_depends_on_x(int i) const {
    for (int m = 0; m < n_mach; ++m)
      if (i == ix_delta(m)) return true;
    for (int a = 0; a < n_avr(); ++a)
      if (i == ix_vf(a)) return true;  // through the ceiling S_e
    return false;
  }
  /// Same for y-state k.
  bool a_depends_on_y(int k) const {
    for (int b = 0; b < n_bus; ++b)
      if (k == iy_v(b) || k == iy_th(b)) return true;
    for (int m = 0; m < n_mach; ++m)
      if (k == iy_id(m) || k == iy_iq(m) || k == iy_vd(m) || k == iy_vq(m) ||
          k == iy_psid(m) || k == iy_psiq(m))
        return true;
    return false;
  }
};

inline DaeLayout make_layout(const SystemCase& sc, Fidelity fid) {
  DaeLayout lay;
  lay.fidelity = fid;
  lay.n_bus = static_cast<int>(sc.buses.size());
  lay.n_mach = static_cast<int>(sc.machines.size());
  lay.slack_bus = sc.slack_index();
  lay.mach_bus.resize(lay.n_mach);
  lay.avr_of_machine.assign(lay.n_mach, -1);
  lay.pss_of_machine.assign(lay.n_mach, -1);
  for (int m = 0; m < lay.n_mach; ++m) lay.mach_bus[m] = sc.bus_index(sc.machines[m].bus);

  if (fid != Fidelity::Classical) {
    for (int m = 0; m < lay.n_mach; ++m) {
      int a = sc.avr_at(sc.machines[m].bus);
      if (a >= 0) {
        lay.avr_of_machine[m] = lay.n_avr();
        lay.avrs.push_back({m, a});
      }
    }
  }
  if (fid == Fidelity::WithAvrPss) {
    for (int m = 0; m < lay.n_mach; ++m) {
      int p = sc.pss_at(sc.machines[m].bus);
      if (p >= 0 && lay.avr_of_machine[m] >= 0) {
        lay.pss_of_machine[m] = lay.n_pss();
        lay.psses.push_back({m, lay.avr_of_machine[m], p});
      }
    }
    if (lay.psses.empty())
      throw ModelError("WithAvrPss fidelity requires at least one PSS record");
  }

  // Dynamics require a source behind every PV bus; a machineless slack acts
  // as an infinite bus.
  for (int b = 0; b < lay.n_bus; ++b) {
    if (sc.buses[b].kind == BusKind::Pv && sc.machine_at(sc.buses[b].id) < 0)
      throw ModelError("PV bus " + std::to_string(sc.buses[b].id) +
                       " has no machine; cannot build dynamic model");
  }
  if (sc.machine_at(sc.buses[lay.slack_bus].id) < 0) lay.infinite_bus = lay.slack_bus;
  return lay;
}

/// Per-operating-point model constants back-computed at initialization.
struct ModelParams {
  VectorXd tau_m;   // per machine, pu torque
  VectorXd v_f0;    // per machine, pu (used by the Classical field row)
  VectorXd v_ref0;  // per active AVR, pu
  VectorXd kw;      // per active PSS gain (copied from the case; tunable)
};

struct Dispatch {
  VectorXd p_d, q_d;  // per bus, pu
  VectorXd p_g;       // per machine scheduled real power, pu (slack entry unused)
};

inline Dispatch nominal_dispatch(const SystemCase& sc) {
  Dispatch d;
  sc.nominal_demand(d.p_d, d.q_d);
  d.p_g.resize(sc.machines.size());
  for (size_t m = 0; m < sc.machines.size(); ++m) d.p_g[m] = sc.machines[m].p_g0_mw / sc.s_base_mva;
  return d;
}

struct OperatingPoint {
  Fidelity fidelity = Fidelity::Classical;
  VectorXd x, y;
  Dispatch dispatch;
  ModelParams params;
  PowerFlowState pf;  // the converged power flow behind this point
};

namespace detail {

inline double ceiling_se(const Avr& a, double vf) { return a.ae * std::exp(a.be * std::abs(vf)); }
inline double ceiling_se_d(const Avr& a, double vf) {
  const double s = vf < 0 ? -1.0 : 1.0;  // sign(0) treated as +1
  return a.ae * a.be * std::exp(a.be * std::abs(vf)) * s;
}

}  // namespace detail

/// Evaluate the full residual vectors f (dynamic) and g (algebraic).
inline void residuals(const SystemCase& sc, const DaeLayout& lay, const ModelParams& pr,
                      const VectorXd& p_d, const VectorXd& q_d, const VectorXd& x,
                      const VectorXd& y, VectorXd& f, VectorXd& g) {
  if (x.size() != lay.nx() || y.size() != lay.ny())
    throw ModelError("state dimensions do not match fidelity layout");
  if (p_d.size() != lay.n_bus || q_d.size() != lay.n_bus)
    throw ModelError("demand dimensions do not match bus count");
  const double omega_b = sc.omega_base();
  f.setZero(lay.nx());
  g.setZero(lay.ny());

  VectorXd v(lay.n_bus), th(lay.n_bus);
  for (int b = 0; b < lay.n_bus; ++b) {
    v[b] = y[lay.iy_v(b)];
    th[b] = y[lay.iy_th(b)];
  }
  const MatrixXcd ybus = admittance(sc);
  VectorXd p_calc, q_calc;
  detail::injections(ybus, v, th, p_calc, q_calc);

  // Network rows.
  for (int b = 0; b < lay.n_bus; ++b) {
    if (b == lay.infinite_bus) {
      g[lay.iy_v(b)] = v[b] - sc.buses[b].v_set;
      g[lay.iy_th(b)] = th[b];
      continue;
    }
    double pg = 0, qg = 0;
    int m = sc.machine_at(sc.buses[b].id);
    if (m >= 0) {
      pg = y[lay.iy_pg(m)];
      qg = y[lay.iy_qg(m)];
    }
    g[lay.iy_v(b)] = p_calc[b] - pg + p_d[b];
    g[lay.iy_th(b)] = q_calc[b] - qg + q_d[b];
  }

  // Machine rows.
  for (int m = 0; m < lay.n_mach; ++m) {
    const Machine& mc = sc.machines[m];
    const int b = lay.mach_bus[m];
    const double delta = x[lay.ix_delta(m)], omega = x[lay.ix_omega(m)];
    const double id = y[lay.iy_id(m)], iq = y[lay.iy_iq(m)];
    const double vd = y[lay.iy_vd(m)], vq = y[lay.iy_vq(m)];
    const double pg = y[lay.iy_pg(m)], qg = y[lay.iy_qg(m)];
    const double psid = y[lay.iy_psid(m)], psiq = y[lay.iy_psiq(m)];
    const double vf = y[lay.iy_vf(m)];

    f[lay.ix_delta(m)] = omega_b * omega;
    f[lay.ix_omega(m)] =
        (pr.tau_m[m] - (psid * iq - psiq * id) - mc.d * omega) / (2.0 * mc.h);

    g[lay.iy_mach(m, 0)] = v[b] * std::sin(delta - th[b]) - vd;
    g[lay.iy_mach(m, 1)] = v[b] * std::cos(delta - th[b]) - vq;
    g[lay.iy_mach(m, 2)] = vd * id + vq * iq - pg;
    g[lay.iy_mach(m, 3)] = vq * id - vd * iq - qg;
    g[lay.iy_mach(m, 4)] = psid + mc.xd_t * id - vf;
    g[lay.iy_mach(m, 5)] = psiq + mc.xq_t * iq;
    g[lay.iy_mach(m, 6)] = -psid + vq + mc.ra * iq;
    g[lay.iy_mach(m, 7)] = psiq + vd + mc.ra * id;
    const int a = lay.avr_of_machine[m];
    if (a >= 0)
      g[lay.iy_mach(m, 8)] = x[lay.ix_vf(a)] - vf;
    else
      g[lay.iy_mach(m, 8)] = vf - pr.v_f0[m];
  }

  // AVR rows.
  for (int a = 0; a < lay.n_avr(); ++a) {
    const Avr& av = sc.avrs[lay.avrs[a].rec];
    const int m = lay.avrs[a].machine;
    const int b = lay.mach_bus[m];
    const double vm = x[lay.ix_vm(a)], vr1 = x[lay.ix_vr1(a)];
    const double vft = x[lay.ix_vf(a)], vr2 = x[lay.ix_vr2(a)];
    const double vref = y[lay.iy_vref(a)];

    f[lay.ix_vm(a)] = (v[b] - vm) / av.tr;
    f[lay.ix_vr1(a)] = (av.ka * (vref - vm - vr2) - vr1) / av.ta;
    const double dvf = (vr1 - av.ke * vft - detail::ceiling_se(av, vft)) / av.te;
    f[lay.ix_vf(a)] = dvf;
    f[lay.ix_vr2(a)] = (av.kf * dvf - vr2) / av.tf;

    const int p = lay.pss_of_machine[m];
    g[lay.iy_vref(a)] = vref - pr.v_ref0[a] - (p >= 0 ? y[lay.iy_vso(p)] : 0.0);
  }

  // PSS rows.
  for (int p = 0; p < lay.n_pss(); ++p) {
    const Pss& ps = sc.psses[lay.psses[p].rec];
    const int m = lay.psses[p].machine;
    const double xw = x[lay.ix_xw(p)], xp = x[lay.ix_xp(p)], xq = x[lay.ix_xq(p)];
    const double vsi = y[lay.iy_vsi(p)], vso = y[lay.iy_vso(p)];
    const double vw = y[lay.iy_vw(p)], vp = y[lay.iy_vp(p)];

    f[lay.ix_xw(p)] = vw / ps.tw;
    f[lay.ix_xp(p)] = vw - vp;
    f[lay.ix_xq(p)] = vp - vso;

    g[lay.iy_vsi(p)] = vsi - pr.kw[p] * x[lay.ix_omega(m)];
    g[lay.iy_vso(p)] = vsi - vw - xw;
    g[lay.iy_vw(p)] = vp * ps.t2 - vw * ps.t1 - xp;
    g[lay.iy_vp(p)] = vso * ps.t4 - vp * ps.t3 - xq;
  }
}

/// Analytic Jacobian blocks of (f, g) wrt (x, y) at the given state.
struct JacobianBlocks {
  MatrixXd f_x, f_y, g_x, g_y;
};

inline JacobianBlocks jacobians(const SystemCase& sc, const DaeLayout& lay, const ModelParams& pr,
                                const VectorXd& x, const VectorXd& y) {
  if (x.size() != lay.nx() || y.size() != lay.ny())
    throw ModelError("state dimensions do not match fidelity layout");
  const double omega_b = sc.omega_base();
  JacobianBlocks jb;
  jb.f_x = MatrixXd::Zero(lay.nx(), lay.nx());
  jb.f_y = MatrixXd::Zero(lay.nx(), lay.ny());
  jb.g_x = MatrixXd::Zero(lay.ny(), lay.nx());
  jb.g_y = MatrixXd::Zero(lay.ny(), lay.ny());

  VectorXd v(lay.n_bus), th(lay.n_bus);
  for (int b = 0; b < lay.n_bus; ++b) {
    v[b] = y[lay.iy_v(b)];
    th[b] = y[lay.iy_th(b)];
  }
  const MatrixXcd ybus = admittance(sc);
  VectorXd p_calc, q_calc;
  detail::injections(ybus, v, th, p_calc, q_calc);

  // Network rows.
  for (int i = 0; i < lay.n_bus; ++i) {
    if (i == lay.infinite_bus) {
      jb.g_y(lay.iy_v(i), lay.iy_v(i)) = 1.0;
      jb.g_y(lay.iy_th(i), lay.iy_th(i)) = 1.0;
      continue;
    }
    const int rp = lay.iy_v(i), rq = lay.iy_th(i);
    for (int j = 0; j < lay.n_bus; ++j) {
      const double gij = ybus(i, j).real(), bij = ybus(i, j).imag();
      if (gij == 0.0 && bij == 0.0 && i != j) continue;
      if (i == j) {
        jb.g_y(rp, lay.iy_th(i)) += -q_calc[i] - bij * v[i] * v[i];
        jb.g_y(rp, lay.iy_v(i)) += p_calc[i] / v[i] + gij * v[i];
        jb.g_y(rq, lay.iy_th(i)) += p_calc[i] - gij * v[i] * v[i];
        jb.g_y(rq, lay.iy_v(i)) += q_calc[i] / v[i] - bij * v[i];
      } else {
        const double dth = th[i] - th[j];
        const double c = std::cos(dth), s = std::sin(dth);
        jb.g_y(rp, lay.iy_th(j)) += v[i] * v[j] * (gij * s - bij * c);
        jb.g_y(rp, lay.iy_v(j)) += v[i] * (gij * c + bij * s);
        jb.g_y(rq, lay.iy_th(j)) += -v[i] * v[j] * (gij * c + bij * s);
        jb.g_y(rq, lay.iy_v(j)) += v[i] * (gij * s - bij * c);
      }
    }
    int m = sc.machine_at(sc.buses[i].id);
    if (m >= 0) {
      jb.g_y(rp, lay.iy_pg(m)) = -1.0;
      jb.g_y(rq, lay.iy_qg(m)) = -1.0;
    }
  }

  // Machine rows.
  for (int m = 0; m < lay.n_mach; ++m) {
    const Machine& mc = sc.machines[m];
    const int b = lay.mach_bus[m];
    const double delta = x[lay.ix_delta(m)];
    const double id = y[lay.iy_id(m)], iq = y[lay.iy_iq(m)];
    const double vd = y[lay.iy_vd(m)], vq = y[lay.iy_vq(m)];
    const double psid = y[lay.iy_psid(m)], psiq = y[lay.iy_psiq(m)];
    const double sdt = std::sin(delta - th[b]), cdt = std::cos(delta - th[b]);

    jb.f_x(lay.ix_delta(m), lay.ix_omega(m)) = omega_b;
    const double inv2h = 1.0 / (2.0 * mc.h);
    jb.f_x(lay.ix_omega(m), lay.ix_omega(m)) = -mc.d * inv2h;
    jb.f_y(lay.ix_omega(m), lay.iy_psid(m)) = -iq * inv2h;
    jb.f_y(lay.ix_omega(m), lay.iy_iq(m)) = -psid * inv2h;
    jb.f_y(lay.ix_omega(m), lay.iy_psiq(m)) = id * inv2h;
    jb.f_y(lay.ix_omega(m), lay.iy_id(m)) = psiq * inv2h;

    int r = lay.iy_mach(m, 0);  // V sin(delta-th) - V_d
    jb.g_x(r, lay.ix_delta(m)) = v[b] * cdt;
    jb.g_y(r, lay.iy_th(b)) = -v[b] * cdt;
    jb.g_y(r, lay.iy_v(b)) = sdt;
    jb.g_y(r, lay.iy_vd(m)) = -1.0;

    r = lay.iy_mach(m, 1);  // V cos(delta-th) - V_q
    jb.g_x(r, lay.ix_delta(m)) = -v[b] * sdt;
    jb.g_y(r, lay.iy_th(b)) = v[b] * sdt;
    jb.g_y(r, lay.iy_v(b)) = cdt;
    jb.g_y(r, lay.iy_vq(m)) = -1.0;

    r = lay.iy_mach(m, 2);  // vd id + vq iq - pg
    jb.g_y(r, lay.iy_vd(m)) = id;
    jb.g_y(r, lay.iy_id(m)) = vd;
    jb.g_y(r, lay.iy_vq(m)) = iq;
    jb.g_y(r, lay.iy_iq(m)) = vq;
    jb.g_y(r, lay.iy_pg(m)) = -1.0;

    r = lay.iy_mach(m, 3);  // vq id - vd iq - qg
    jb.g_y(r, lay.iy_vq(m)) = id;
    jb.g_y(r, lay.iy_id(m)) = vq;
    jb.g_y(r, lay.iy_vd(m)) = -iq;
    jb.g_y(r, lay.iy_iq(m)) = -vd;
    jb.g_y(r, lay.iy_qg(m)) = -1.0;

    r = lay.iy_mach(m, 4);  // psid + xd' id - vf
    jb.g_y(r, lay.iy_psid(m)) = 1.0;
    jb.g_y(r, lay.iy_id(m)) = mc.xd_t;
    jb.g_y(r, lay.iy_vf(m)) = -1.0;

    r = lay.iy_mach(m, 5);  // psiq + xq' iq
    jb.g_y(r, lay.iy_psiq(m)) = 1.0;
    jb.g_y(r, lay.iy_iq(m)) = mc.xq_t;

    r = lay.iy_mach(m, 6);  // -psid + vq + ra iq
    jb.g_y(r, lay.iy_psid(m)) = -1.0;
    jb.g_y(r, lay.iy_vq(m)) = 1.0;
    jb.g_y(r, lay.iy_iq(m)) = mc.ra;

    r = lay.iy_mach(m, 7);  // psiq + vd + ra id
    jb.g_y(r, lay.iy_psiq(m)) = 1.0;
    jb.g_y(r, lay.iy_vd(m)) = 1.0;
    jb.g_y(r, lay.iy_id(m)) = mc.ra;

    r = lay.iy_mach(m, 8);  // field row
    const int a = lay.avr_of_machine[m];
    if (a >= 0) {
      jb.g_x(r, lay.ix_vf(a)) = 1.0;
      jb.g_y(r, lay.iy_vf(m)) = -1.0;
    } else {
      jb.g_y(r, lay.iy_vf(m)) = 1.0;
    }
  }

  // AVR rows.
  for (int a = 0; a < lay.n_avr(); ++a) {
    const Avr& av = sc.avrs[lay.avrs[a].rec];
    const int m = lay.avrs[a].machine;
    const int b = lay.mach_bus[m];
    const double vft = x[lay.ix_vf(a)];

    jb.f_y(lay.ix_vm(a), lay.iy_v(b)) = 1.0 / av.tr;
    jb.f_x(lay.ix_vm(a), lay.ix_vm(a)) = -1.0 / av.tr;

    jb.f_y(lay.ix_vr1(a), lay.iy_vref(a)) = av.ka / av.ta;
    jb.f_x(lay.ix_vr1(a), lay.ix_vm(a)) = -av.ka / av.ta;
    jb.f_x(lay.ix_vr1(a), lay.ix_vr2(a)) = -av.ka / av.ta;
    jb.f_x(lay.ix_vr1(a), lay.ix_vr1(a)) = -1.0 / av.ta;

    const double dse = detail::ceiling_se_d(av, vft);
    jb.f_x(lay.ix_vf(a), lay.ix_vr1(a)) = 1.0 / av.te;
    jb.f_x(lay.ix_vf(a), lay.ix_vf(a)) = -(av.ke + dse) / av.te;

    jb.f_x(lay.ix_vr2(a), lay.ix_vr1(a)) = av.kf / (av.tf * av.te);
    jb.f_x(lay.ix_vr2(a), lay.ix_vf(a)) = -av.kf * (av.ke + dse) / (av.tf * av.te);
    jb.f_x(lay.ix_vr2(a), lay.ix_vr2(a)) = -1.0 / av.tf;

    const int p = lay.pss_of_machine[m];
    jb.g_y(lay.iy_vref(a), lay.iy_vref(a)) = 1.0;
    if (p >= 0) jb.g_y(lay.iy_vref(a), lay.iy_vso(p)) = -1.0;
  }

  // PSS rows.
  for (int p = 0; p < lay.n_pss(); ++p) {
    const Pss& ps = sc.psses[lay.psses[p].rec];
    const int m = lay.psses[p].machine;

    jb.f_y(lay.ix_xw(p), lay.iy_vw(p)) = 1.0 / ps.tw;
    jb.f_y(lay.ix_xp(p), lay.iy_vw(p)) = 1.0;
    jb.f_y(lay.ix_xp(p), lay.iy_vp(p)) = -1.0;
    jb.f_y(lay.ix_xq(p), lay.iy_vp(p)) = 1.0;
    jb.f_y(lay.ix_xq(p), lay.iy_vso(p)) = -1.0;

    jb.g_y(lay.iy_vsi(p), lay.iy_vsi(p)) = 1.0;
    jb.g_x(lay.iy_vsi(p), lay.ix_omega(m)) = -pr.kw[p];
    jb.g_y(lay.iy_vso(p), lay.iy_vsi(p)) = 1.0;
    jb.g_y(lay.iy_vso(p), lay.iy_vw(p)) = -1.0;
    jb.g_x(lay.iy_vso(p), lay.ix_xw(p)) = -1.0;
    jb.g_y(lay.iy_vw(p), lay.iy_vp(p)) = ps.t2;
    jb.g_y(lay.iy_vw(p), lay.iy_vw(p)) = -ps.t1;
    jb.g_x(lay.iy_vw(p), lay.ix_xp(p)) = -1.0;
    jb.g_y(lay.iy_vp(p), lay.iy_vso(p)) = ps.t4;
    jb.g_y(lay.iy_vp(p), lay.iy_vp(p)) = -ps.t3;
    jb.g_x(lay.iy_vp(p), lay.ix_xq(p)) = -1.0;
  }

  return jb;
}

/// g-rows carrying the unit coefficients of p_d,i / q_d,i (-1 if none).
inline void demand_rows(const DaeLayout& lay, int bus, int& p_row, int& q_row) {
  p_row = (bus == lay.infinite_bus) ? -1 : lay.iy_v(bus);
  q_row = (bus == lay.infinite_bus) ? -1 : lay.iy_th(bus);
}

/// Build an exact equilibrium from a converged power flow. Back-computes
/// tau_m, V_f0 and V_ref0 so that (x, y) is a fixed point; both residual
/// norms are verified to be <= 1e-10.
inline OperatingPoint initialize_equilibrium(const SystemCase& sc, Fidelity fid,
                                             const PowerFlowState& pf_in) {
  DaeLayout lay = make_layout(sc, fid);

  PowerFlowState pf = pf_in;
  if (pf.mismatch > 1e-11) {
    PowerFlowOptions tight;
    tight.tol = 1e-12;
    try {
      pf = solve_power_flow(sc, pf_in.p_d, pf_in.q_d, pf_in.p_g_sched, &pf_in, tight);
    } catch (const ConvergenceError&) {
      tight.tol = 5e-11;
      pf = solve_power_flow(sc, pf_in.p_d, pf_in.q_d, pf_in.p_g_sched, &pf_in, tight);
    }
  }

  OperatingPoint op;
  op.fidelity = fid;
  op.pf = pf;
  op.dispatch.p_d = pf.p_d;
  op.dispatch.q_d = pf.q_d;
  op.dispatch.p_g = pf.p_g_sched;
  op.x = VectorXd::Zero(lay.nx());
  op.y = VectorXd::Zero(lay.ny());
  op.params.tau_m = VectorXd::Zero(lay.n_mach);
  op.params.v_f0 = VectorXd::Zero(lay.n_mach);
  op.params.v_ref0 = VectorXd::Zero(lay.n_avr());
  op.params.kw = VectorXd::Zero(lay.n_pss());
  for (int p = 0; p < lay.n_pss(); ++p) op.params.kw[p] = sc.psses[lay.psses[p].rec].kw;

  for (int b = 0; b < lay.n_bus; ++b) {
    op.y[lay.iy_v(b)] = pf.v[b];
    op.y[lay.iy_th(b)] = pf.theta[b];
  }

  for (int m = 0; m < lay.n_mach; ++m) {
    const Machine& mc = sc.machines[m];
    const int b = lay.mach_bus[m];
    const Complex vph = std::polar(pf.v[b], pf.theta[b]);
    const Complex s(pf.p_g[m], pf.q_g[m]);
    const Complex iph = std::conj(s / vph);
    const Complex e = vph + Complex(mc.ra, mc.xq_t) * iph;
    const double delta = std::arg(e);
    op.x[lay.ix_delta(m)] = delta;
    op.x[lay.ix_omega(m)] = 0.0;

    const Complex rot = std::polar(1.0, -(delta - kPi / 2.0));
    const Complex idq = iph * rot;
    const double id = idq.real(), iq = idq.imag();
    const double vd = pf.v[b] * std::sin(delta - pf.theta[b]);
    const double vq = pf.v[b] * std::cos(delta - pf.theta[b]);
    const double psid = vq + mc.ra * iq;
    const double psiq = -(vd + mc.ra * id);
    const double vf = psid + mc.xd_t * id;
    const double tau_e = psid * iq - psiq * id;

    op.y[lay.iy_id(m)] = id;
    op.y[lay.iy_iq(m)] = iq;
    op.y[lay.iy_vd(m)] = vd;
    op.y[lay.iy_vq(m)] = vq;
    op.y[lay.iy_pg(m)] = pf.p_g[m];
    op.y[lay.iy_qg(m)] = pf.q_g[m];
    op.y[lay.iy_psid(m)] = psid;
    op.y[lay.iy_psiq(m)] = psiq;
    op.y[lay.iy_vf(m)] = vf;
    op.params.tau_m[m] = tau_e;
    op.params.v_f0[m] = vf;
    if (std::abs(vf) > 10.0)
      throw ModelError("initialization: back-solved field voltage " + std::to_string(vf) +
                       " pu at bus " + std::to_string(mc.bus) + " is outside the plausible range");
  }

  for (int a = 0; a < lay.n_avr(); ++a) {
    const Avr& av = sc.avrs[lay.avrs[a].rec];
    const int m = lay.avrs[a].machine;
    const int b = lay.mach_bus[m];
    const double vf = op.y[lay.iy_vf(m)];
    const double vr1 = av.ke * vf + detail::ceiling_se(av, vf);
    const double vref = pf.v[b] + vr1 / av.ka;
    op.x[lay.ix_vm(a)] = pf.v[b];
    op.x[lay.ix_vr1(a)] = vr1;
    op.x[lay.ix_vf(a)] = vf;
    op.x[lay.ix_vr2(a)] = 0.0;
    op.y[lay.iy_vref(a)] = vref;
    op.params.v_ref0[a] = vref;
    if (std::abs(vref) > 10.0)
      throw ModelError("initialization: back-solved V_ref " + std::to_string(vref) +
                       " pu at bus " + std::to_string(sc.buses[b].id) +
                       " is outside the plausible range");
  }
  // PSS states and signals are identically zero at any equilibrium.

  VectorXd f, g;
  residuals(sc, lay, op.params, op.dispatch.p_d, op.dispatch.q_d, op.x, op.y, f, g);
  const double fn = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
  const double gn = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  if (fn > 1e-10 || gn > 1e-10)
    throw NumericError("equilibrium initialization failed: |f|=" + std::to_string(fn) +
                       " |g|=" + std::to_string(gn));
  return op;
}

/// Power flow + equilibrium in one step for a given dispatch.
inline OperatingPoint solve_equilibrium(const SystemCase& sc, Fidelity fid, const Dispatch& d,
                                        const PowerFlowState* warm = nullptr,
                                        const PowerFlowOptions& opts = {}) {
  PowerFlowState pf = solve_power_flow(sc, d.p_d, d.q_d, d.p_g, warm, opts);
  return initialize_equilibrium(sc, fid, pf);
}

}  // namespace sssopt
