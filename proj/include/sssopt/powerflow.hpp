#pragma once

// Newton-Raphson AC power flow and branch-flow evaluation. Pure functions of
// their inputs; safe for parallel scenario evaluation.

#include <vector>

#include "sssopt/case.hpp"
#include "sssopt/common.hpp"

namespace sssopt {

struct PowerFlowState {
  VectorXd v;        // per-bus voltage magnitude, pu
  VectorXd theta;    // per-bus voltage angle, rad (slack = 0)
  VectorXd p_net;    // per-bus net injected real power V_i sum(...), pu
  VectorXd q_net;    // per-bus net injected reactive power, pu
  VectorXd p_g;      // per-machine real generation, pu
  VectorXd q_g;      // per-machine reactive generation, pu
  VectorXd p_d;      // demand that produced this state, pu
  VectorXd q_d;
  VectorXd p_g_sched;  // per-machine scheduled real power (inputs), pu
  int iterations = 0;
  double mismatch = 0.0;  // final infinity-norm of the power mismatch, pu
};

struct PowerFlowOptions {
  double tol = 1e-8;   // infinity-norm stopping tolerance, pu
  int max_iter = 30;
};

namespace detail {

inline void injections(const MatrixXcd& y, const VectorXd& v, const VectorXd& th, VectorXd& p,
                       VectorXd& q) {
  const int n = static_cast<int>(v.size());
  p.setZero(n);
  q.setZero(n);
  for (int i = 0; i < n; ++i) {
    double pi = 0, qi = 0;
    for (int j = 0; j < n; ++j) {
      const double g = y(i, j).real(), b = y(i, j).imag();
      if (g == 0.0 && b == 0.0) continue;
      const double dth = th[i] - th[j];
      const double c = std::cos(dth), s = std::sin(dth);
      pi += v[j] * (g * c + b * s);
      qi += v[j] * (g * s - b * c);
    }
    p[i] = v[i] * pi;
    q[i] = v[i] * qi;
  }
}

}  // namespace detail

/// Solve the AC power flow: slack holds (V, theta=0), PV buses hold (P, V),
/// PQ buses hold (P, Q). `p_d`, `q_d` are per-bus demands in pu; `p_g_sched`
/// is per-machine scheduled real power in pu (ignored at the slack machine).
/// Reactive limits are deliberately not enforced here.
inline PowerFlowState solve_power_flow(const SystemCase& sc, const VectorXd& p_d,
                                       const VectorXd& q_d, const VectorXd& p_g_sched,
                                       const PowerFlowState* initial = nullptr,
                                       const PowerFlowOptions& opts = {}) {
  const int n = static_cast<int>(sc.buses.size());
  if (p_d.size() != n || q_d.size() != n)
    throw ModelError("demand vector dimension does not match bus count");
  if (p_g_sched.size() != static_cast<int>(sc.machines.size()))
    throw ModelError("generation vector dimension does not match machine count");

  const MatrixXcd y = admittance(sc);
  const int slack = sc.slack_index();

  // Per-bus scheduled injection p_inj = p_g - p_d (PV machines and any
  // machineless PV bus treated alike; slack free).
  VectorXd p_inj = -p_d, q_inj = -q_d;
  for (size_t m = 0; m < sc.machines.size(); ++m) {
    const int bi = sc.bus_index(sc.machines[m].bus);
    if (bi != slack) p_inj[bi] += p_g_sched[m];
  }

  VectorXd v(n), th(n);
  if (initial) {
    v = initial->v;
    th = initial->theta;
  } else {
    for (int i = 0; i < n; ++i) {
      v[i] = 1.0;
      th[i] = 0.0;
    }
  }
  // Setpoints always pin slack/PV voltages and the slack angle.
  for (int i = 0; i < n; ++i)
    if (sc.buses[i].kind != BusKind::Pq) v[i] = sc.buses[i].v_set;
  th[slack] = 0.0;

  std::vector<int> ang_idx, mag_idx;  // unknown ordering
  for (int i = 0; i < n; ++i)
    if (i != slack) ang_idx.push_back(i);
  for (int i = 0; i < n; ++i)
    if (sc.buses[i].kind == BusKind::Pq) mag_idx.push_back(i);
  const int na = static_cast<int>(ang_idx.size());
  const int nm = static_cast<int>(mag_idx.size());

  VectorXd p_calc, q_calc;
  PowerFlowState st;
  st.iterations = 0;
  double norm = 0.0;
  for (int it = 0;; ++it) {
    detail::injections(y, v, th, p_calc, q_calc);
    VectorXd f(na + nm);
    for (int k = 0; k < na; ++k) f[k] = p_inj[ang_idx[k]] - p_calc[ang_idx[k]];
    for (int k = 0; k < nm; ++k) f[na + k] = q_inj[mag_idx[k]] - q_calc[mag_idx[k]];
    norm = (na + nm) ? f.cwiseAbs().maxCoeff() : 0.0;
    st.iterations = it;
    if (norm <= opts.tol) break;
    if (it >= opts.max_iter)
      throw ConvergenceError("power flow did not converge in " + std::to_string(opts.max_iter) +
                             " iterations (mismatch " + std::to_string(norm) + ")");

    // Jacobian of the mismatch wrt [theta(ang_idx); V(mag_idx)].
    MatrixXd jac(na + nm, na + nm);
    auto dp_dth = [&](int i, int j) {
      if (i == j) return -q_calc[i] - y(i, i).imag() * v[i] * v[i];
      const double dth = th[i] - th[j];
      return v[i] * v[j] * (y(i, j).real() * std::sin(dth) - y(i, j).imag() * std::cos(dth));
    };
    auto dp_dv = [&](int i, int j) {
      if (i == j) return p_calc[i] / v[i] + y(i, i).real() * v[i];
      const double dth = th[i] - th[j];
      return v[i] * (y(i, j).real() * std::cos(dth) + y(i, j).imag() * std::sin(dth));
    };
    auto dq_dth = [&](int i, int j) {
      if (i == j) return p_calc[i] - y(i, i).real() * v[i] * v[i];
      const double dth = th[i] - th[j];
      return -v[i] * v[j] * (y(i, j).real() * std::cos(dth) + y(i, j).imag() * std::sin(dth));
    };
    auto dq_dv = [&](int i, int j) {
      if (i == j) return q_calc[i] / v[i] - y(i, i).imag() * v[i];
      const double dth = th[i] - th[j];
      return v[i] * (y(i, j).real() * std::sin(dth) - y(i, j).imag() * std::cos(dth));
    };
    for (int r = 0; r < na; ++r) {
      for (int c = 0; c < na; ++c) jac(r, c) = -dp_dth(ang_idx[r], ang_idx[c]);
      for (int c = 0; c < nm; ++c) jac(r, na + c) = -dp_dv(ang_idx[r], mag_idx[c]);
    }
    for (int r = 0; r < nm; ++r) {
      for (int c = 0; c < na; ++c) jac(na + r, c) = -dq_dth(mag_idx[r], ang_idx[c]);
      for (int c = 0; c < nm; ++c) jac(na + r, na + c) = -dq_dv(mag_idx[r], mag_idx[c]);
    }

    Eigen::FullPivLU<MatrixXd> lu(jac);
    if (!lu.isInvertible()) throw NumericError("singular power-flow Jacobian");
    VectorXd dx = lu.solve(-f);
    for (int k = 0; k < na; ++k) th[ang_idx[k]] += dx[k];
    for (int k = 0; k < nm; ++k) v[mag_idx[k]] += dx[na + k];
  }

  st.v = v;
  st.theta = th;
  st.p_net = p_calc;
  st.q_net = q_calc;
  st.p_d = p_d;
  st.q_d = q_d;
  st.p_g_sched = p_g_sched;
  st.mismatch = norm;
  const int n_m = static_cast<int>(sc.machines.size());
  st.p_g.resize(n_m);
  st.q_g.resize(n_m);
  for (int m = 0; m < n_m; ++m) {
    const int bi = sc.bus_index(sc.machines[m].bus);
    st.p_g[m] = p_calc[bi] + p_d[bi];  // the machine supplies load plus net export
    st.q_g[m] = q_calc[bi] + q_d[bi];
  }
  return st;
}

/// Convenience: nominal demand and dispatch from the case file.
inline PowerFlowState solve_power_flow(const SystemCase& sc,
                                       const PowerFlowOptions& opts = {}) {
  VectorXd p_d, q_d;
  sc.nominal_demand(p_d, q_d);
  VectorXd p_g(sc.machines.size());
  for (size_t m = 0; m < sc.machines.size(); ++m) p_g[m] = sc.machines[m].p_g0_mw / sc.s_base_mva;
  return solve_power_flow(sc, p_d, q_d, p_g, nullptr, opts);
}

enum class FlowDirection { FromTo, ToFrom };

namespace detail {

// Sending-end complex coefficients of P = v_s^2*Re(a) - v_s*v_r*Re(conj(c) e^{j dth}).
inline void branch_coeffs(const Branch& br, FlowDirection dir, Complex& a, Complex& c) {
  const Complex ys = 1.0 / Complex(br.r, br.x);
  const Complex ysh(0.0, br.b / 2.0);
  if (dir == FlowDirection::FromTo) {
    a = (ys + ysh) / (br.tap * br.tap);
    c = ys / br.tap;
  } else {
    a = ys + ysh;
    c = ys / br.tap;
  }
}

}  // namespace detail

/// Sending-end real power of one branch in the given direction, MW.
inline double branch_flow_mw(const SystemCase& sc, const PowerFlowState& st, int branch_idx,
                             FlowDirection dir) {
  if (branch_idx < 0 || branch_idx >= static_cast<int>(sc.branches.size()))
    throw ModelError("unknown branch index " + std::to_string(branch_idx));
  const Branch& br = sc.branches[branch_idx];
  Complex a, c;
  detail::branch_coeffs(br, dir, a, c);
  const int s = sc.bus_index(dir == FlowDirection::FromTo ? br.from : br.to);
  const int r = sc.bus_index(dir == FlowDirection::FromTo ? br.to : br.from);
  const double dth = st.theta[s] - st.theta[r];
  const double p = st.v[s] * st.v[s] * a.real() -
                   st.v[s] * st.v[r] * (c.real() * std::cos(dth) + c.imag() * std::sin(dth));
  return p * sc.s_base_mva;
}

/// Gradient of the sending-end real power (pu) wrt (V_s, th_s, V_r, th_r).
inline Eigen::Vector4d branch_flow_gradient(const SystemCase& sc, const PowerFlowState& st,
                                            int branch_idx, FlowDirection dir) {
  const Branch& br = sc.branches[branch_idx];
  Complex a, c;
  detail::branch_coeffs(br, dir, a, c);
  const int s = sc.bus_index(dir == FlowDirection::FromTo ? br.from : br.to);
  const int r = sc.bus_index(dir == FlowDirection::FromTo ? br.to : br.from);
  const double dth = st.theta[s] - st.theta[r];
  const double cr = c.real(), ci = c.imag();
  const double trig = cr * std::cos(dth) + ci * std::sin(dth);
  const double dtrig = -cr * std::sin(dth) + ci * std::cos(dth);
  Eigen::Vector4d g;
  g[0] = 2 * st.v[s] * a.real() - st.v[r] * trig;   // dP/dV_s
  g[1] = -st.v[s] * st.v[r] * dtrig;                // dP/dth_s
  g[2] = -st.v[s] * trig;                           // dP/dV_r
  g[3] = st.v[s] * st.v[r] * dtrig;                 // dP/dth_r
  return g;
}

/// Real power loss on a branch, MW (series resistance only).
inline double branch_loss_mw(const SystemCase& sc, const PowerFlowState& st, int branch_idx) {
  const Branch& br = sc.branches[branch_idx];
  const Complex ys = 1.0 / Complex(br.r, br.x);
  const int i = sc.bus_index(br.from), j = sc.bus_index(br.to);
  const Complex vi = std::polar(st.v[i], st.theta[i]);
  const Complex vj = std::polar(st.v[j], st.theta[j]);
  const Complex i_series = ys * (vi / br.tap - vj);
  return br.r * std::norm(i_series) * sc.s_base_mva;
}

}  // namespace sssopt
