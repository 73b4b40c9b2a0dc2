#pragma once

// Iterative linear programming over the linearized small-signal model:
// scenario-specific LP construction (sensitivity rows, damping-ratio
// linearization, linearized network equations, box/flow constraints and the
// eigenvalue-step trust region), power-flow restoration, and the outer loop
// with step-halving safeguards. Also the minimum-load-shedding variant and
// PSS gain tuning.

#include <functional>
#include <string>
#include <vector>

#include "sssopt/lp.hpp"
#include "sssopt/smallsignal.hpp"

namespace sssopt {

enum class ScenarioType {
  LoadShiftCoupled,      // Case 1: dp = mu * dq
  LoadShiftPOnly,        // Case 2: q fixed
  LoadShiftQOnly,        // Case 3: p fixed, |q - q0| <= cap
  LoadShiftIndependent,  // Cases 4-5: p and q free, |q - q0| <= cap
  GenOnly,               // Case 6: PV real power only, optional ramp cap
  GenAndLoad,            // Case 7: generation + independent load
  MinLoadShedding,       // shed to reach a target SDR
  PssGainTune,           // K_w as an LP variable (co-optimized with load)
  PairwiseShift,         // coupled shifting restricted to two buses, no limits
};

struct Scenario {
  ScenarioType type = ScenarioType::LoadShiftCoupled;
  double q_dev_cap_mvar = kLpInf;  // |q_d - q_d0| cap (Cases 3-5, 7)
  double ramp_cap_mw = kLpInf;     // cumulative |p_g - p_g0| cap (GenOnly)
  double target_sdr = 0.0;         // MinLoadShedding target (fraction)
  int pair_a = -1, pair_b = -1;    // PairwiseShift bus ids

  static Scenario case1() { return {ScenarioType::LoadShiftCoupled}; }
  static Scenario case2() { return {ScenarioType::LoadShiftPOnly}; }
  static Scenario case3() { return {ScenarioType::LoadShiftQOnly, 100.0}; }
  static Scenario case4() { return {ScenarioType::LoadShiftIndependent, 100.0}; }
  static Scenario case5() { return {ScenarioType::LoadShiftIndependent, 20.0}; }
  static Scenario case6() { return {ScenarioType::GenOnly}; }
  static Scenario case6_ramp(double mw) {
    Scenario s{ScenarioType::GenOnly};
    s.ramp_cap_mw = mw;
    return s;
  }
  static Scenario case7() { return {ScenarioType::GenAndLoad, 20.0}; }
  static Scenario shedding(double target) {
    Scenario s{ScenarioType::MinLoadShedding};
    s.target_sdr = target;
    return s;
  }
  static Scenario pss_tune() { return {ScenarioType::PssGainTune}; }
  static Scenario pairwise(int a, int b) {
    Scenario s{ScenarioType::PairwiseShift};
    s.pair_a = a;
    s.pair_b = b;
    return s;
  }

  bool p_is_decision() const {
    return type != ScenarioType::LoadShiftQOnly && type != ScenarioType::GenOnly;
  }
  /// q is an independent decision (outside the mu-coupled scenarios).
  bool q_is_decision() const {
    return type == ScenarioType::LoadShiftQOnly || type == ScenarioType::LoadShiftIndependent ||
           type == ScenarioType::GenAndLoad;
  }
  bool mu_coupled() const {
    return type == ScenarioType::LoadShiftCoupled || type == ScenarioType::PairwiseShift ||
           type == ScenarioType::MinLoadShedding || type == ScenarioType::PssGainTune;
  }
  bool gen_is_decision() const {
    return type == ScenarioType::GenOnly || type == ScenarioType::GenAndLoad;
  }
  bool kw_is_decision() const { return type == ScenarioType::PssGainTune; }
  bool conserves_load() const {
    return p_is_decision() && type != ScenarioType::MinLoadShedding;
  }
  bool shed_bounds() const { return type == ScenarioType::MinLoadShedding; }
  bool unlimited_shift() const { return type == ScenarioType::PairwiseShift; }
};

inline Scenario scenario_from_name(const std::string& name) {
  if (name == "case1") return Scenario::case1();
  if (name == "case2") return Scenario::case2();
  if (name == "case3") return Scenario::case3();
  if (name == "case4") return Scenario::case4();
  if (name == "case5") return Scenario::case5();
  if (name == "case6") return Scenario::case6();
  if (name == "case6-ramp1") return Scenario::case6_ramp(1.0);
  if (name == "case7") return Scenario::case7();
  if (name == "pss-cotune") return Scenario::pss_tune();
  throw ModelError("unknown scenario name: " + name);
}

struct IlpConfig {
  double eps = 1e-3;         // step bounds on d_alpha, d_beta of critical modes
  double threshold = 1e-4;   // |objective| convergence threshold
  int max_iter = 100;
  double crit_margin = 0.005;  // critical-set margin (damping-ratio units)
  int crit_cap = 5;
  double trust_frac = 0.10;    // per-iteration per-bus step cap, fraction of total load
  int max_halvings = 6;
  double pred_band = 0.3;      // |predicted - realized| <= band * |predicted|
  double kw_step_cap = 0.25;   // per-iteration |dK_w| cap in gain co-optimization
};

struct IlpIterate {
  int iter = 0;
  double lp_objective = 0.0;      // predicted improvement for this accepted step
  double eta_s_before = 0.0, eta_s_after = 0.0;
  double predicted_delta = 0.0, realized_delta = 0.0;
  bool bounds_active = false;
  int halvings = 0;
  int n_critical = 0;
  double dr_total_p = 0.0;        // sum of DR real demand after the step, pu
};

enum class IlpStatus {
  Converged,
  MaxIter,
  LpInfeasible,
  PfDiverged,
  Stalled,
  TargetUnreachable,
};

inline const char* to_string(IlpStatus s) {
  switch (s) {
    case IlpStatus::Converged: return "converged";
    case IlpStatus::MaxIter: return "max_iter";
    case IlpStatus::LpInfeasible: return "lp_infeasible";
    case IlpStatus::PfDiverged: return "pf_diverged";
    case IlpStatus::Stalled: return "stalled";
    case IlpStatus::TargetUnreachable: return "target_unreachable";
  }
  return "?";
}

struct IlpTrace {
  std::vector<IlpIterate> iterates;
  IlpStatus status = IlpStatus::MaxIter;
  std::string message;
  double final_eta_s = 0.0;
  int lp_solves = 0;
};

/// DR records participating in a scenario (the pairwise scenario restricts
/// and unbounds them).
inline std::vector<DrBus> scenario_dr(const SystemCase& sc, const Scenario& sn) {
  if (sn.type == ScenarioType::GenOnly) return sc.dr;  // unused as decisions
  if (sn.type == ScenarioType::PairwiseShift) {
    if (sn.pair_a == sn.pair_b)
      throw ModelError("pairwise shift requires two distinct buses");
    std::vector<DrBus> out;
    for (int bus : {sn.pair_a, sn.pair_b}) {
      bool found = false;
      for (const auto& d : sc.dr)
        if (d.bus == bus) {
          DrBus u = d;
          u.p_min_mw = 0.0;       // no shift limit
          u.p_max_mw = kLpInf;
          out.push_back(u);
          found = true;
        }
      if (!found)
        throw ModelError("pairwise shift bus " + std::to_string(bus) + " is not demand-responsive");
    }
    return out;
  }
  return sc.dr;
}

/// Column layout of the scenario LP.
struct IlpLpLayout {
  int nx = 0, ny = 0;
  std::vector<int> dr_bus_index;  // bus index per DR variable pair
  int off_dx = 0, off_dy = 0, off_dpd = 0, off_dqd = 0;
  int off_dkw = -1;
  int n_pss = 0;
  int off_dalpha = 0, off_dbeta = 0, off_deta = 0;
  int idx_t = -1;
  int n_crit = 0;
  int n_total = 0;
};

/// Everything the LP builder needs at one operating point.
struct IlpPoint {
  OperatingPoint op;
  LinearizedSystem lin;
  Spectrum sp;
  StabilityMetrics mets;
  std::vector<int> criticals;
  std::vector<SensitivityRow> sens;  // one row per critical mode
  PowerFlowState pf;                 // copy of op.pf for branch-flow linearization
};

inline IlpPoint evaluate_point(const SystemCase& sc, Fidelity fid, const OperatingPoint& op,
                               const IlpConfig& cfg) {
  IlpPoint pt;
  pt.op = op;
  pt.lin = linearize(sc, fid, op);
  pt.sp = finite_spectrum(pt.lin);
  pt.mets = metrics(pt.sp);
  pt.criticals = select_criticals(pt.sp, cfg.crit_margin, cfg.crit_cap);
  pt.sens.reserve(pt.criticals.size());
  for (int m : pt.criticals) pt.sens.push_back(generalized_sensitivity(sc, pt.op, pt.lin, pt.sp, m));
  pt.pf = op.pf;
  return pt;
}

/// Build the per-iteration LP (the linearized optimization) at `pt`.
/// `shed_trim` switches the shedding scenario from its climb phase (maximize
/// the SDR epigraph) to its trim phase (maximize restored load subject to
/// the linearized SDR staying above target).
inline LpProblem build_lp(const SystemCase& sc, const IlpPoint& pt, const Scenario& sn,
                          const IlpConfig& cfg, double eps, bool shed_trim,
                          IlpLpLayout& lay_out) {
  const DaeLayout& lay = pt.lin.layout;
  const double sb = sc.s_base_mva;
  const std::vector<DrBus> dr = scenario_dr(sc, sn);
  if (dr.empty() && !sn.gen_is_decision())
    throw ModelError("load-shift scenario requires a non-empty demand-response set");
  const int n_crit = static_cast<int>(pt.criticals.size());
  if (n_crit == 0) throw ModelError("critical mode set is empty");

  IlpLpLayout L;
  L.nx = lay.nx();
  L.ny = lay.ny();
  L.n_crit = n_crit;
  for (const auto& d : dr) L.dr_bus_index.push_back(sc.bus_index(d.bus));
  const int ndr = static_cast<int>(dr.size());
  int off = 0;
  L.off_dx = off;
  off += L.nx;
  L.off_dy = off;
  off += L.ny;
  L.off_dpd = off;
  off += ndr;
  L.off_dqd = off;
  off += ndr;
  if (sn.kw_is_decision()) {
    L.off_dkw = off;
    L.n_pss = lay.n_pss();
    off += L.n_pss;
  }
  L.off_dalpha = off;
  off += n_crit;
  L.off_dbeta = off;
  off += n_crit;
  L.off_deta = off;
  off += n_crit;
  const bool epigraph = !shed_trim;
  if (epigraph) {
    L.idx_t = off;
    off += 1;
  }
  L.n_total = off;

  LpProblem lp;
  lp.init(L.n_total);

  const double trust = cfg.trust_frac * pt.op.dispatch.p_d.sum();  // pu

  // ---- variable bounds ----
  // Dynamic states: only those A depends on (rotor angles, exciter output)
  // move freely; the rest are pinned at their equilibrium deltas (zero).
  for (int j = 0; j < L.nx; ++j) {
    const bool breathes = lay.a_depends_on_x(j);
    lp.lo[L.off_dx + j] = breathes ? -kLpInf : 0.0;
    lp.hi[L.off_dx + j] = breathes ? kLpInf : 0.0;
  }
  // Algebraic states: default free, then the Eq-17 fixings and boxes.
  for (int b = 0; b < lay.n_bus; ++b) {
    const int kv = L.off_dy + lay.iy_v(b);
    const Bus& bus = sc.buses[b];
    const double v_star = pt.op.y[lay.iy_v(b)];
    if (sc.machine_at(bus.id) >= 0) {
      lp.lo[kv] = lp.hi[kv] = 0.0;  // V fixed at generator buses
    } else {
      lp.lo[kv] = bus.v_min - v_star;
      lp.hi[kv] = bus.v_max - v_star;
    }
    if (b == lay.slack_bus) {
      const int kt = L.off_dy + lay.iy_th(b);
      lp.lo[kt] = lp.hi[kt] = 0.0;  // slack angle
    }
  }
  for (int m = 0; m < lay.n_mach; ++m) {
    const Machine& mc = sc.machines[m];
    const int kp = L.off_dy + lay.iy_pg(m);
    const int kq = L.off_dy + lay.iy_qg(m);
    const double pg_star = pt.op.y[lay.iy_pg(m)];
    const double qg_star = pt.op.y[lay.iy_qg(m)];
    if (lay.mach_bus[m] == lay.slack_bus) {
      lp.lo[kp] = mc.pg_min_mw / sb - pg_star;
      lp.hi[kp] = mc.pg_max_mw / sb - pg_star;
    } else if (sn.gen_is_decision()) {
      double lo = -pg_star;  // cumulative p_g >= 0
      double hi = kLpInf;
      if (sn.ramp_cap_mw < kLpInf / 2) {
        const double pg0 = mc.p_g0_mw / sb;
        lo = std::max(lo, pg0 - sn.ramp_cap_mw / sb - pg_star);
        hi = std::min(hi, pg0 + sn.ramp_cap_mw / sb - pg_star);
      }
      lp.lo[kp] = std::max(lo, -trust);
      lp.hi[kp] = std::min(hi, trust);
    } else {
      lp.lo[kp] = lp.hi[kp] = 0.0;  // (17): PV real power fixed
    }
    lp.lo[kq] = mc.qg_min_mvar / sb - qg_star;
    lp.hi[kq] = mc.qg_max_mvar / sb - qg_star;
  }
  // PSS algebraic signals are identically zero at every equilibrium.
  for (int p = 0; p < lay.n_pss(); ++p) {
    for (int k : {lay.iy_vsi(p), lay.iy_vso(p), lay.iy_vw(p), lay.iy_vp(p)}) {
      lp.lo[L.off_dy + k] = lp.hi[L.off_dy + k] = 0.0;
    }
  }

  // DR decision bounds (cumulative boxes intersected with the trust step).
  for (int i = 0; i < ndr; ++i) {
    const DrBus& d = dr[i];
    const int b = L.dr_bus_index[i];
    const double pd_star = pt.op.dispatch.p_d[b];
    const double qd_star = pt.op.dispatch.q_d[b];
    const double pd0 = sc.buses[b].p_d0_mw / sb;
    const double qd0 = sc.buses[b].q_d0_mvar / sb;
    double plo, phi;
    if (!sn.p_is_decision()) {
      plo = phi = 0.0;
    } else {
      plo = (d.p_min_mw >= -kLpInf / 2 ? d.p_min_mw / sb - pd_star : -kLpInf);
      phi = (d.p_max_mw < kLpInf / 2 ? d.p_max_mw / sb - pd_star : kLpInf);
      if (sn.shed_bounds()) phi = std::min(phi, pd0 - pd_star);  // p <= p0
      plo = std::max(plo, -trust);
      phi = std::min(phi, trust);
    }
    lp.lo[L.off_dpd + i] = plo;
    lp.hi[L.off_dpd + i] = phi;

    double qlo, qhi;
    if (!sn.q_is_decision() && !sn.mu_coupled()) {
      qlo = qhi = 0.0;
    } else {
      qlo = d.q_min_mvar / sb - qd_star;
      qhi = d.q_max_mvar / sb - qd_star;
      if (sn.q_dev_cap_mvar < kLpInf / 2) {
        qlo = std::max(qlo, qd0 - sn.q_dev_cap_mvar / sb - qd_star);
        qhi = std::min(qhi, qd0 + sn.q_dev_cap_mvar / sb - qd_star);
      }
      if (!sn.mu_coupled()) {
        qlo = std::max(qlo, -trust);
        qhi = std::min(qhi, trust);
      }
    }
    lp.lo[L.off_dqd + i] = qlo;
    lp.hi[L.off_dqd + i] = qhi;
  }
  if (sn.kw_is_decision()) {
    for (int p = 0; p < L.n_pss; ++p) {
      const Pss& ps = sc.psses[lay.psses[p].rec];
      const double kw_star = pt.op.params.kw[p];
      lp.lo[L.off_dkw + p] = std::max(ps.kw_min - kw_star, -cfg.kw_step_cap);
      lp.hi[L.off_dkw + p] = std::min(ps.kw_max - kw_star, cfg.kw_step_cap);
    }
  }
  // Eigenvalue step trust region (17u), every critical mode.
  for (int k = 0; k < n_crit; ++k) {
    lp.lo[L.off_dalpha + k] = -eps;
    lp.hi[L.off_dalpha + k] = eps;
    lp.lo[L.off_dbeta + k] = -eps;
    lp.hi[L.off_dbeta + k] = eps;
  }

  // ---- equality rows ----
  const int n_eq = L.ny + 2 * n_crit + n_crit + (sn.conserves_load() ? 1 : 0) +
                   (sn.mu_coupled() ? ndr : 0);
  lp.a_eq = MatrixXd::Zero(n_eq, L.n_total);
  lp.b_eq = VectorXd::Zero(n_eq);
  int row = 0;
  // Linearized algebraic equations: g_x dx + g_y dy + dp_d + dq_d = 0.
  for (int r = 0; r < L.ny; ++r, ++row) {
    lp.a_eq.block(row, L.off_dx, 1, L.nx) = pt.lin.g_x.row(r);
    lp.a_eq.block(row, L.off_dy, 1, L.ny) = pt.lin.g_y.row(r);
  }
  for (int i = 0; i < ndr; ++i) {
    int p_row, q_row;
    demand_rows(lay, L.dr_bus_index[i], p_row, q_row);
    if (p_row >= 0) lp.a_eq(p_row, L.off_dpd + i) = 1.0;
    if (q_row >= 0) lp.a_eq(q_row, L.off_dqd + i) = 1.0;
  }
  // Sensitivity rows: d_alpha/d_beta tied to the state deltas.
  for (int k = 0; k < n_crit; ++k) {
    const SensitivityRow& s = pt.sens[k];
    lp.a_eq(row, L.off_dalpha + k) = 1.0;
    for (int j = 0; j < L.nx; ++j) lp.a_eq(row, L.off_dx + j) = -s.d_x[j].real();
    for (int j = 0; j < L.ny; ++j) lp.a_eq(row, L.off_dy + j) = -s.d_y[j].real();
    if (sn.kw_is_decision())
      for (int p = 0; p < L.n_pss; ++p) lp.a_eq(row, L.off_dkw + p) = -s.d_kw[p].real();
    ++row;
    lp.a_eq(row, L.off_dbeta + k) = 1.0;
    for (int j = 0; j < L.nx; ++j) lp.a_eq(row, L.off_dx + j) = -s.d_x[j].imag();
    for (int j = 0; j < L.ny; ++j) lp.a_eq(row, L.off_dy + j) = -s.d_y[j].imag();
    if (sn.kw_is_decision())
      for (int p = 0; p < L.n_pss; ++p) lp.a_eq(row, L.off_dkw + p) = -s.d_kw[p].imag();
    ++row;
  }
  // Damping-ratio linearization.
  for (int k = 0; k < n_crit; ++k, ++row) {
    const EtaGradient gr = eta_gradient(pt.sp.lambda[pt.criticals[k]]);
    lp.a_eq(row, L.off_deta + k) = 1.0;
    lp.a_eq(row, L.off_dalpha + k) = -gr.c_alpha;
    lp.a_eq(row, L.off_dbeta + k) = -gr.c_beta;
  }
  if (sn.conserves_load()) {
    for (int i = 0; i < ndr; ++i) lp.a_eq(row, L.off_dpd + i) = 1.0;
    ++row;
  }
  if (sn.mu_coupled()) {
    for (int i = 0; i < ndr; ++i, ++row) {
      lp.a_eq(row, L.off_dpd + i) = 1.0;
      lp.a_eq(row, L.off_dqd + i) = -dr[i].mu;
    }
  }

  // ---- inequality rows ----
  const int n_br = static_cast<int>(sc.branches.size());
  const int n_in = 2 * n_br + n_crit;
  lp.a_in = MatrixXd::Zero(n_in, L.n_total);
  lp.b_in = VectorXd::Zero(n_in);
  int irow = 0;
  for (int b = 0; b < n_br; ++b) {
    for (auto dir : {FlowDirection::FromTo, FlowDirection::ToFrom}) {
      const Branch& br = sc.branches[b];
      const Eigen::Vector4d g = branch_flow_gradient(sc, pt.pf, b, dir);
      const int s = sc.bus_index(dir == FlowDirection::FromTo ? br.from : br.to);
      const int r2 = sc.bus_index(dir == FlowDirection::FromTo ? br.to : br.from);
      lp.a_in(irow, L.off_dy + lay.iy_v(s)) += g[0];
      lp.a_in(irow, L.off_dy + lay.iy_th(s)) += g[1];
      lp.a_in(irow, L.off_dy + lay.iy_v(r2)) += g[2];
      lp.a_in(irow, L.off_dy + lay.iy_th(r2)) += g[3];
      lp.b_in(irow) = br.h_max_mw / sb - branch_flow_mw(sc, pt.pf, b, dir) / sb;
      ++irow;
    }
  }
  if (epigraph) {
    // t <= eta*_m + d_eta_m  for every critical mode.
    for (int k = 0; k < n_crit; ++k, ++irow) {
      lp.a_in(irow, L.idx_t) = 1.0;
      lp.a_in(irow, L.off_deta + k) = -1.0;
      lp.b_in(irow) = pt.sp.damping[pt.criticals[k]];
    }
  } else {
    // Trim phase: eta*_m + d_eta_m >= target for every critical mode.
    for (int k = 0; k < n_crit; ++k, ++irow) {
      lp.a_in(irow, L.off_deta + k) = -1.0;
      lp.b_in(irow) = pt.sp.damping[pt.criticals[k]] - sn.target_sdr;
    }
  }

  // ---- objective ----
  if (epigraph) {
    lp.c[L.idx_t] = 1.0;
  } else {
    for (int i = 0; i < ndr; ++i) lp.c[L.off_dpd + i] = 1.0;  // restore load
  }
  lay_out = L;
  return lp;
}

/// Decision deltas decoded from an LP solution.
struct IlpStep {
  VectorXd dpd_bus;   // per bus, pu
  VectorXd dqd_bus;
  VectorXd dpg_mach;  // per machine (PV decisions only), pu
  VectorXd dkw;       // per PSS
  double predicted_delta = 0.0;  // objective in improvement units
  bool bounds_active = false;
  double step_norm = 0.0;
};

inline IlpStep decode_step(const SystemCase& sc, const IlpPoint& pt, const Scenario& sn,
                           const IlpLpLayout& L, const LpSolution& sol, double eps,
                           bool shed_trim) {
  const DaeLayout& lay = pt.lin.layout;
  IlpStep st;
  st.dpd_bus = VectorXd::Zero(lay.n_bus);
  st.dqd_bus = VectorXd::Zero(lay.n_bus);
  st.dpg_mach = VectorXd::Zero(lay.n_mach);
  st.dkw = VectorXd::Zero(lay.n_pss());
  for (size_t i = 0; i < L.dr_bus_index.size(); ++i) {
    st.dpd_bus[L.dr_bus_index[i]] = sol.x[L.off_dpd + i];
    st.dqd_bus[L.dr_bus_index[i]] = sol.x[L.off_dqd + i];
  }
  if (sn.gen_is_decision()) {
    for (int m = 0; m < lay.n_mach; ++m)
      if (lay.mach_bus[m] != lay.slack_bus) st.dpg_mach[m] = sol.x[L.off_dy + lay.iy_pg(m)];
  }
  if (L.off_dkw >= 0)
    for (int p = 0; p < L.n_pss; ++p) st.dkw[p] = sol.x[L.off_dkw + p];

  if (shed_trim) {
    st.predicted_delta = sol.objective;  // pu of restored load
  } else {
    st.predicted_delta = sol.x[L.idx_t] - pt.mets.eta_s;
  }
  for (int k = 0; k < L.n_crit; ++k) {
    if (std::abs(std::abs(sol.x[L.off_dalpha + k]) - eps) < 1e-9) st.bounds_active = true;
    if (std::abs(std::abs(sol.x[L.off_dbeta + k]) - eps) < 1e-9) st.bounds_active = true;
  }
  st.step_norm = std::max({st.dpd_bus.cwiseAbs().maxCoeff(), st.dqd_bus.cwiseAbs().maxCoeff(),
                           st.dpg_mach.cwiseAbs().maxCoeff(),
                           st.dkw.size() ? st.dkw.cwiseAbs().maxCoeff() : 0.0});
  return st;
}

/// Apply decision deltas and recompute the operating point (power flow plus
/// equilibrium re-initialization).
inline OperatingPoint restore(const SystemCase& sc, Fidelity fid, const OperatingPoint& op,
                              const IlpStep& st) {
  Dispatch d = op.dispatch;
  d.p_d += st.dpd_bus;
  d.q_d += st.dqd_bus;
  d.p_g += st.dpg_mach;
  OperatingPoint next = solve_equilibrium(sc, fid, d, &op.pf);
  // K_w accumulates across iterations; the equilibrium is invariant to it.
  if (op.params.kw.size() == next.params.kw.size()) next.params.kw = op.params.kw;
  if (st.dkw.size() == next.params.kw.size()) next.params.kw += st.dkw;
  return next;
}

struct IlpResult {
  OperatingPoint final_op;
  IlpTrace trace;
};

/// The outer ILP loop: linearize, solve the LP, restore, re-linearize, with
/// eigenvalue-step halving on restoration failure, damping regression, or a
/// broken linear-prediction band.
inline IlpResult run_ilp(const SystemCase& sc, Fidelity fid, const Scenario& sn,
                         const IlpConfig& cfg, const OperatingPoint* start = nullptr) {
  if (sn.type == ScenarioType::PssGainTune && make_layout(sc, fid).n_pss() == 0)
    throw ModelError("PSS gain tuning requires at least one PSS");

  IlpResult res;
  OperatingPoint op = start ? *start : solve_equilibrium(sc, fid, nominal_dispatch(sc));
  IlpTrace& tr = res.trace;

  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    IlpPoint pt = evaluate_point(sc, fid, op, cfg);
    const bool shed = sn.type == ScenarioType::MinLoadShedding;
    const bool shed_trim = shed && pt.mets.eta_s >= sn.target_sdr - 1e-9;

    double eps = cfg.eps;
    int halvings = 0;
    bool accepted = false;
    while (true) {
      IlpLpLayout L;
      LpProblem lp = build_lp(sc, pt, sn, cfg, eps, shed_trim, L);
      LpSolution sol = lp_solve(lp);
      ++tr.lp_solves;
      if (sol.status == LpStatus::Infeasible) {
        if (shed_trim) break;  // fall back to a climb iteration below
        tr.status = IlpStatus::LpInfeasible;
        tr.message = "LP infeasible at iteration " + std::to_string(iter);
        res.final_op = op;
        tr.final_eta_s = pt.mets.eta_s;
        return res;
      }
      if (sol.status != LpStatus::Optimal) {
        tr.status = IlpStatus::Stalled;
        tr.message = std::string("LP solver returned ") + to_string(sol.status);
        res.final_op = op;
        tr.final_eta_s = pt.mets.eta_s;
        return res;
      }
      IlpStep st = decode_step(sc, pt, sn, L, sol, eps, shed_trim);

      // Convergence test before stepping (idempotence at an optimum).
      if (std::abs(st.predicted_delta) < cfg.threshold) {
        if (shed && !shed_trim) {
          tr.status = IlpStatus::TargetUnreachable;
          tr.message = "SDR target unreachable within bounds";
        } else {
          tr.status = IlpStatus::Converged;
        }
        res.final_op = op;
        tr.final_eta_s = pt.mets.eta_s;
        return res;
      }

      OperatingPoint next;
      try {
        next = restore(sc, fid, op, st);
      } catch (const std::exception&) {
        if (++halvings > cfg.max_halvings) {
          tr.status = IlpStatus::PfDiverged;
          tr.message = "restoration diverged at iteration " + std::to_string(iter);
          res.final_op = op;
          tr.final_eta_s = pt.mets.eta_s;
          return res;
        }
        eps /= 2;
        continue;
      }
      Spectrum sp_next = finite_spectrum(linearize(sc, fid, next));
      const double eta_next = metrics(sp_next).eta_s;
      const double realized = eta_next - pt.mets.eta_s;

      bool reject = false;
      if (!shed_trim) {
        if (realized < -1e-6) reject = true;  // damping must not regress
        if (st.bounds_active &&
            std::abs(st.predicted_delta - realized) > cfg.pred_band * std::abs(st.predicted_delta))
          reject = true;
      } else {
        if (eta_next < sn.target_sdr - 5e-4) reject = true;  // keep the target in reach
      }
      if (reject) {
        if (++halvings > cfg.max_halvings) {
          tr.status = IlpStatus::Stalled;
          tr.message = "step halvings exhausted at iteration " + std::to_string(iter);
          res.final_op = op;
          tr.final_eta_s = pt.mets.eta_s;
          return res;
        }
        eps /= 2;
        continue;
      }

      IlpIterate it;
      it.iter = iter;
      it.lp_objective = sol.objective;
      it.eta_s_before = pt.mets.eta_s;
      it.eta_s_after = eta_next;
      it.predicted_delta = st.predicted_delta;
      it.realized_delta = realized;
      it.bounds_active = st.bounds_active;
      it.halvings = halvings;
      it.n_critical = static_cast<int>(pt.criticals.size());
      double dr_total = 0;
      for (const auto& d : sc.dr) dr_total += next.dispatch.p_d[sc.bus_index(d.bus)];
      it.dr_total_p = dr_total;
      tr.iterates.push_back(it);
      op = next;
      accepted = true;
      break;
    }
    if (!accepted && sn.type == ScenarioType::MinLoadShedding) continue;  // phase flip retry
  }
  tr.status = IlpStatus::MaxIter;
  res.final_op = op;
  tr.final_eta_s = metrics(finite_spectrum(linearize(sc, fid, op))).eta_s;
  return res;
}

struct SheddingResult {
  OperatingPoint final_op;
  IlpTrace trace;
  double shed_mw = 0.0;
};

/// Minimum load shedding to reach `target_sdr` (fraction). Two-phase ILP.
inline SheddingResult min_load_shedding(const SystemCase& sc, Fidelity fid, double target_sdr,
                                        const IlpConfig& cfg) {
  SheddingResult out;
  IlpResult r = run_ilp(sc, fid, Scenario::shedding(target_sdr), cfg);
  out.final_op = r.final_op;
  out.trace = r.trace;
  double shed = 0;
  for (const auto& d : sc.dr) {
    const int b = sc.bus_index(d.bus);
    shed += sc.buses[b].p_d0_mw - r.final_op.dispatch.p_d[b] * sc.s_base_mva;
  }
  out.shed_mw = shed;
  return out;
}

struct PssTuneResult {
  double kw = 0.0;
  double eta_s = 0.0;
  OperatingPoint op;
  IlpTrace trace;  // co-optimization only
};

/// Gain-only tuning: 1-D maximization of the SDR over the single PSS gain by
/// coarse scan plus golden-section refinement (the equilibrium is invariant
/// to K_w, so only the spectrum is re-solved).
inline PssTuneResult tune_pss_gain_only(const SystemCase& sc, const OperatingPoint& op,
                                        double kw_lo, double kw_hi) {
  DaeLayout lay = make_layout(sc, Fidelity::WithAvrPss);
  if (lay.n_pss() != 1)
    throw ModelError("gain-only tuning expects exactly one PSS");
  auto eta_of = [&](double kw) {
    OperatingPoint o = op;
    o.params.kw[0] = kw;
    return metrics(finite_spectrum(linearize(sc, Fidelity::WithAvrPss, o))).eta_s;
  };
  const int n_scan = 41;
  double best_k = kw_lo, best_eta = -1;
  for (int i = 0; i < n_scan; ++i) {
    const double k = kw_lo + (kw_hi - kw_lo) * i / (n_scan - 1);
    const double e = eta_of(k);
    if (e > best_eta) {
      best_eta = e;
      best_k = k;
    }
  }
  const double span = (kw_hi - kw_lo) / (n_scan - 1);
  double a = std::max(kw_lo, best_k - span), b = std::min(kw_hi, best_k + span);
  const double gr = (std::sqrt(5.0) - 1) / 2;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = eta_of(c), fd = eta_of(d);
  while (b - a > 1e-5) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = eta_of(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = eta_of(d);
    }
  }
  PssTuneResult res;
  res.kw = (a + b) / 2;
  res.eta_s = eta_of(res.kw);
  res.op = op;
  res.op.params.kw[0] = res.kw;
  return res;
}

/// Co-optimized tuning: K_w enters the Case-1 LP as a variable.
inline PssTuneResult tune_pss_cooptimize(const SystemCase& sc, const IlpConfig& cfg) {
  IlpResult r = run_ilp(sc, Fidelity::WithAvrPss, Scenario::pss_tune(), cfg);
  PssTuneResult res;
  res.kw = r.final_op.params.kw[0];
  res.eta_s = r.trace.final_eta_s;
  res.op = r.final_op;
  res.trace = r.trace;
  return res;
}

}  // namespace sssopt
