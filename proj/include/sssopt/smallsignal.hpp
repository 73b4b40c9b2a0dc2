#pragma once

// Linearization of the DAE model, finite spectrum of the generalized problem
// (A, B) via the reduced matrix A* = f_x - f_y gy^-1 g_x with exact lifting of
// the eigenvectors to the full (x, y) space, stability metrics, generalized
// eigenvalue sensitivities, participation factors and the numeric
// generation-sensitivity benchmark.

#include <optional>
#include <vector>

#include "sssopt/common.hpp"
#include "sssopt/dae.hpp"

namespace sssopt {

struct LinearizedSystem {
  DaeLayout layout;
  MatrixXd f_x, f_y, g_x, g_y;

  int nx() const { return layout.nx(); }
  int ny() const { return layout.ny(); }
  int n() const { return nx() + ny(); }

  MatrixXd a() const {
    MatrixXd m(n(), n());
    m.topLeftCorner(nx(), nx()) = f_x;
    m.topRightCorner(nx(), ny()) = f_y;
    m.bottomLeftCorner(ny(), nx()) = g_x;
    m.bottomRightCorner(ny(), ny()) = g_y;
    return m;
  }
  MatrixXd b() const {
    MatrixXd m = MatrixXd::Zero(n(), n());
    m.topLeftCorner(nx(), nx()).setIdentity();
    return m;
  }
};

inline LinearizedSystem linearize(const SystemCase& sc, Fidelity fid, const OperatingPoint& op) {
  LinearizedSystem lin;
  lin.layout = make_layout(sc, fid);
  JacobianBlocks jb = jacobians(sc, lin.layout, op.params, op.x, op.y);
  lin.f_x = std::move(jb.f_x);
  lin.f_y = std::move(jb.f_y);
  lin.g_x = std::move(jb.g_x);
  lin.g_y = std::move(jb.g_y);
  return lin;
}

struct SpectrumOptions {
  double cond_limit = 1e12;   // reject g_y beyond this condition estimate
  double zero_tol = 1e-6;     // |lambda| <= zero_tol*max(1, max|lambda|) flags a reference mode
};

struct Spectrum {
  VectorXcd lambda;             // finite eigenvalues, M = dim(x)
  MatrixXcd right;              // full-space right eigenvectors, one column per mode
  MatrixXcd left;               // full-space left eigenvectors, l^T B r = 1
  VectorXd damping;             // eta_m = -alpha/|lambda| (0 for reference modes)
  std::vector<bool> reference;  // angle-reference (numerically zero) modes
  VectorXd res_right, res_left; // relative eigenpair residuals
  int n_x = 0;

  int size() const { return static_cast<int>(lambda.size()); }
};

inline Spectrum finite_spectrum(const LinearizedSystem& lin, const SpectrumOptions& opts = {}) {
  const int nx = lin.nx(), ny = lin.ny();
  Eigen::PartialPivLU<MatrixXd> lu(lin.g_y);
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / opts.cond_limit))
    throw NumericError("algebraic Jacobian g_y is singular or ill-conditioned (rcond=" +
                       std::to_string(rcond) + ")");
  const MatrixXd gy_inv_gx = lu.solve(lin.g_x);
  const MatrixXd a_star = lin.f_x - lin.f_y * gy_inv_gx;

  Eigen::EigenSolver<MatrixXd> es(a_star);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  VectorXcd lam = es.eigenvalues();
  MatrixXcd rx = es.eigenvectors();

  // Deterministic mode order: real part descending, then |imag| ascending,
  // then the +imag conjugate representative first.
  std::vector<int> order(nx);
  for (int i = 0; i < nx; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    const Complex a = lam[i], b = lam[j];
    if (a.real() != b.real()) return a.real() > b.real();
    const double ia = std::abs(a.imag()), ib = std::abs(b.imag());
    if (ia != ib) return ia < ib;
    return a.imag() > b.imag();
  });
  VectorXcd lam_s(nx);
  MatrixXcd rx_s(nx, nx);
  for (int i = 0; i < nx; ++i) {
    lam_s[i] = lam[order[i]];
    rx_s.col(i) = rx.col(order[i]);
  }

  // Left eigenvectors of A* from the inverse of the right-eigenvector matrix:
  // row m of Rx^-1 satisfies l^T A* = lambda l^T and l^T r = 1 pairwise.
  Eigen::PartialPivLU<MatrixXcd> rlu(rx_s);
  if (!(rlu.rcond() > 1e-14))
    throw NumericError("near-defective eigenvector matrix; left vectors unreliable");
  MatrixXcd lx = rlu.inverse();  // rows are left vectors

  Spectrum sp;
  sp.n_x = nx;
  sp.lambda = lam_s;
  sp.right.resize(nx + ny, nx);
  sp.left.resize(nx + ny, nx);

  // Lift: r_y = -gy^-1 g_x r_x ; l_y^T = -l_x^T f_y gy^-1.
  MatrixXcd ry = -(gy_inv_gx * rx_s).eval();
  Eigen::PartialPivLU<MatrixXd> lut(lin.g_y.transpose().eval());
  {
    MatrixXcd lxt = lx.transpose();  // columns are left vectors of A*
    MatrixXcd tmp = lin.f_y.transpose() * lxt;           // ny x nx
    MatrixXcd ly = -(lut.solve(tmp.real()) + Complex(0, 1) * lut.solve(tmp.imag()));
    sp.left.topRows(nx) = lxt;
    sp.left.bottomRows(ny) = ly;
  }
  sp.right.topRows(nx) = rx_s;
  sp.right.bottomRows(ny) = ry;

  const double a_norm = lin.a().cwiseAbs().rowwise().sum().maxCoeff();
  sp.res_right.resize(nx);
  sp.res_left.resize(nx);
  const MatrixXd a_full = lin.a();
  for (int m = 0; m < nx; ++m) {
    VectorXcd r = sp.right.col(m), l = sp.left.col(m);
    VectorXcd br = VectorXcd::Zero(nx + ny);
    br.head(nx) = r.head(nx);
    VectorXcd bl = VectorXcd::Zero(nx + ny);
    bl.head(nx) = l.head(nx);
    sp.res_right[m] = (a_full * r - lam_s[m] * br).norm() /
                      ((a_norm + std::abs(lam_s[m])) * r.norm());
    sp.res_left[m] = ((a_full.transpose() * l) - lam_s[m] * bl).norm() /
                     ((a_norm + std::abs(lam_s[m])) * l.norm());
  }

  const double lam_max = lam_s.size() ? lam_s.cwiseAbs().maxCoeff() : 0.0;
  const double ztol = opts.zero_tol * std::max(1.0, lam_max);
  sp.damping.resize(nx);
  sp.reference.assign(nx, false);
  for (int m = 0; m < nx; ++m) {
    const double mag = std::abs(lam_s[m]);
    if (mag <= ztol) {
      sp.reference[m] = true;
      sp.damping[m] = 0.0;  // flagged; excluded from the metrics
    } else {
      sp.damping[m] = -lam_s[m].real() / mag;
    }
  }
  return sp;
}

struct MetricsConfig {
  double gamma_sdr = 1.0;
  double gamma_interarea = 0.0;
  double gamma_alpha = 0.0;
  int interarea_mode = -1;  // mode index designating the critical inter-area mode
};

struct StabilityMetrics {
  double eta_s = 0.0;                // smallest damping ratio (fraction, not %)
  std::optional<double> eta_i;       // damping of the designated inter-area mode
  double alpha1 = 0.0;               // -max real part over finite modes
  double combined = 0.0;             // sum of gamma_n * S_n
  int eta_s_mode = -1;               // index (beta >= 0 representative) attaining eta_s
};

/// Mode indices eligible for metrics: non-reference, beta >= 0 representative.
inline std::vector<int> representative_modes(const Spectrum& sp) {
  std::vector<int> out;
  for (int m = 0; m < sp.size(); ++m)
    if (!sp.reference[m] && sp.lambda[m].imag() >= 0.0) out.push_back(m);
  return out;
}

inline StabilityMetrics metrics(const Spectrum& sp, const MetricsConfig& cfg = {}) {
  if (sp.size() == 0) throw ModelError("metrics of an empty spectrum");
  StabilityMetrics sm;
  double min_eta = std::numeric_limits<double>::infinity();
  double max_alpha = -std::numeric_limits<double>::infinity();
  for (int m : representative_modes(sp)) {
    if (sp.damping[m] < min_eta) {
      min_eta = sp.damping[m];
      sm.eta_s_mode = m;
    }
    max_alpha = std::max(max_alpha, sp.lambda[m].real());
  }
  if (sm.eta_s_mode < 0) throw ModelError("spectrum contains only reference modes");
  sm.eta_s = min_eta;
  sm.alpha1 = -max_alpha;
  if (cfg.interarea_mode >= 0) {
    if (cfg.interarea_mode >= sp.size()) throw ModelError("inter-area mode index out of range");
    sm.eta_i = sp.damping[cfg.interarea_mode];
  } else if (cfg.gamma_interarea != 0.0) {
    throw ModelError("inter-area metric requested without a designated mode");
  }
  sm.combined = cfg.gamma_sdr * sm.eta_s + cfg.gamma_alpha * sm.alpha1 +
                cfg.gamma_interarea * (sm.eta_i ? *sm.eta_i : 0.0);
  return sm;
}

/// Critical set: representative modes with eta <= eta_S + margin, ordered by
/// damping ratio ascending, capped.
inline std::vector<int> select_criticals(const Spectrum& sp, double margin = 0.005,
                                         int cap = 5) {
  StabilityMetrics sm = metrics(sp);
  std::vector<int> reps = representative_modes(sp);
  std::sort(reps.begin(), reps.end(),
            [&](int a, int b) { return sp.damping[a] < sp.damping[b]; });
  std::vector<int> out;
  for (int m : reps) {
    if (sp.damping[m] <= sm.eta_s + margin && static_cast<int>(out.size()) < cap)
      out.push_back(m);
  }
  return out;
}

/// d eta = c_alpha * d alpha + c_beta * d beta at the given eigenvalue.
struct EtaGradient {
  double c_alpha = 0.0, c_beta = 0.0;
};
inline EtaGradient eta_gradient(Complex lambda) {
  const double a = lambda.real(), b = lambda.imag();
  const double den = std::pow(a * a + b * b, 1.5);
  return {-(b * b) / den, a * b / den};
}

/// Raw generalized-sensitivity quotient l^T (dA) r / (l^T B r); invariant to
/// rescaling of either eigenvector. Plain transposes, no conjugation.
inline Complex eigen_sensitivity_quotient(const MatrixXd& d_a, const VectorXcd& l,
                                          const VectorXcd& r, int n_x) {
  const Complex num = (l.transpose() * (d_a * r))(0, 0);
  const Complex den = (l.head(n_x).transpose() * r.head(n_x))(0, 0);
  if (std::abs(den) <= 1e-12)
    throw NumericError("degenerate eigenpair normalization |l^T B r| <= 1e-12");
  return num / den;
}

struct SensitivityRow {
  int mode = -1;
  VectorXcd d_x;   // d lambda / d x_j
  VectorXcd d_y;   // d lambda / d y_k
  VectorXcd d_kw;  // d lambda / d K_w per active PSS
  VectorXcd d_pd;  // identically zero for constant-power loads
  VectorXcd d_qd;
};

/// Eq-15 sensitivities of one eigenvalue wrt every state (and PSS gains).
/// dA/dchi comes from central finite differences of the analytic Jacobian
/// blocks (step 1e-7); states A provably does not depend on get exact zeros.
inline SensitivityRow generalized_sensitivity(const SystemCase& sc, const OperatingPoint& op,
                                              const LinearizedSystem& lin, const Spectrum& sp,
                                              int mode) {
  if (mode < 0 || mode >= sp.size()) throw ModelError("sensitivity: mode index out of range");
  const DaeLayout& lay = lin.layout;
  const int nx = lay.nx(), ny = lay.ny();
  const VectorXcd r = sp.right.col(mode), l = sp.left.col(mode);
  const Complex lbr = (l.head(nx).transpose() * r.head(nx))(0, 0);
  if (std::abs(lbr) <= 1e-12)
    throw NumericError("degenerate eigenpair normalization |l^T B r| <= 1e-12");

  SensitivityRow row;
  row.mode = mode;
  row.d_x = VectorXcd::Zero(nx);
  row.d_y = VectorXcd::Zero(ny);
  row.d_kw = VectorXcd::Zero(lay.n_pss());
  row.d_pd = VectorXcd::Zero(lay.n_bus);
  row.d_qd = VectorXcd::Zero(lay.n_bus);

  auto quotient = [&](const JacobianBlocks& jp, const JacobianBlocks& jm, double two_h) {
    // l^T dA r assembled blockwise to avoid forming the full n x n delta.
    const VectorXcd lx = l.head(nx), ly = l.tail(ny);
    const VectorXcd rx = r.head(nx), ry = r.tail(ny);
    Complex num = (lx.transpose() * (((jp.f_x - jm.f_x) / two_h) * rx))(0, 0);
    num += (lx.transpose() * (((jp.f_y - jm.f_y) / two_h) * ry))(0, 0);
    num += (ly.transpose() * (((jp.g_x - jm.g_x) / two_h) * rx))(0, 0);
    num += (ly.transpose() * (((jp.g_y - jm.g_y) / two_h) * ry))(0, 0);
    return num / lbr;
  };

  VectorXd x = op.x, y = op.y;
  for (int j = 0; j < nx; ++j) {
    if (!lay.a_depends_on_x(j)) continue;
    const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
    x[j] = op.x[j] + h;
    JacobianBlocks jp = jacobians(sc, lay, op.params, x, y);
    x[j] = op.x[j] - h;
    JacobianBlocks jm = jacobians(sc, lay, op.params, x, y);
    x[j] = op.x[j];
    row.d_x[j] = quotient(jp, jm, 2 * h);
  }
  for (int k = 0; k < ny; ++k) {
    if (!lay.a_depends_on_y(k)) continue;
    const double h = 1e-7 * std::max(1.0, std::abs(y[k]));
    y[k] = op.y[k] + h;
    JacobianBlocks jp = jacobians(sc, lay, op.params, x, y);
    y[k] = op.y[k] - h;
    JacobianBlocks jm = jacobians(sc, lay, op.params, x, y);
    y[k] = op.y[k];
    row.d_y[k] = quotient(jp, jm, 2 * h);
  }
  // K_w enters A linearly: dA/dKw has the single entry -1 at
  // (g row of V_si, x column of omega).
  for (int p = 0; p < lay.n_pss(); ++p) {
    const int grow = lay.iy_vsi(p);
    const int xcol = lay.ix_omega(lay.psses[p].machine);
    row.d_kw[p] = l[nx + grow] * (-1.0) * r[xcol] / lbr;
  }
  return row;
}

/// Per-dynamic-state participation weights |l_k r_k|, normalized to sum 1.
inline VectorXd participation_factors(const Spectrum& sp, int mode) {
  if (mode < 0 || mode >= sp.size()) throw ModelError("participation: mode index out of range");
  VectorXd p(sp.n_x);
  for (int k = 0; k < sp.n_x; ++k) p[k] = std::abs(sp.left(k, mode) * sp.right(k, mode));
  const double s = p.sum();
  if (s > 0) p /= s;
  return p;
}

/// Best-matching mode in `to` for mode `from_mode` of `from`, by normalized
/// eigenvector correlation; ties broken by eigenvalue proximity.
struct ModeMatch {
  int index = -1;
  double correlation = 0.0;
};
inline ModeMatch track_mode(const Spectrum& from, int from_mode, const Spectrum& to) {
  const VectorXcd r0 = from.right.col(from_mode);
  ModeMatch best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int m = 0; m < to.size(); ++m) {
    const VectorXcd r1 = to.right.col(m);
    const double corr = std::abs(r0.dot(r1)) / (r0.norm() * r1.norm());
    const double dist = std::abs(from.lambda[from_mode] - to.lambda[m]);
    if (corr > best.correlation + 1e-12 ||
        (std::abs(corr - best.correlation) <= 1e-12 && dist < best_dist)) {
      best.index = m;
      best.correlation = corr;
      best_dist = dist;
    }
  }
  return best;
}

/// Numeric sensitivity of the SDR to one machine's real power (percentage
/// points of damping ratio per MW). Re-solves the operating point at
/// p_g + dp, tracks the SDR mode, and applies the finite-difference formula
/// with the base-mode (alpha, beta).
inline double numeric_gen_sensitivity(const SystemCase& sc, Fidelity fid,
                                      const OperatingPoint& op, int machine, double dp_mw) {
  if (dp_mw == 0.0) throw ModelError("numeric sensitivity requires a nonzero perturbation");
  if (machine < 0 || machine >= static_cast<int>(sc.machines.size()))
    throw ModelError("unknown machine index");
  const int bus = sc.bus_index(sc.machines[machine].bus);
  if (sc.buses[bus].kind != BusKind::Pv)
    throw ModelError("numeric sensitivity is defined for PV machines only");

  LinearizedSystem lin0 = linearize(sc, fid, op);
  Spectrum sp0 = finite_spectrum(lin0);
  StabilityMetrics m0 = metrics(sp0);
  const Complex lam0 = sp0.lambda[m0.eta_s_mode];

  Dispatch d = op.dispatch;
  d.p_g[machine] += dp_mw / sc.s_base_mva;
  OperatingPoint op1 = solve_equilibrium(sc, fid, d, &op.pf);
  Spectrum sp1 = finite_spectrum(linearize(sc, fid, op1));
  ModeMatch match = track_mode(sp0, m0.eta_s_mode, sp1);
  if (match.correlation < 0.7)
    throw NumericError("mode-tracking ambiguity: best correlation " +
                       std::to_string(match.correlation));
  Complex lam1 = sp1.lambda[match.index];
  if (lam1.imag() < 0) lam1 = std::conj(lam1);  // compare beta >= 0 representatives

  const double d_alpha = lam1.real() - lam0.real();
  const double d_beta = lam1.imag() - lam0.imag();
  const EtaGradient gr = eta_gradient(lam0);
  const double d_eta = gr.c_alpha * d_alpha + gr.c_beta * d_beta;
  return 100.0 * d_eta / dp_mw;
}

}  // namespace sssopt
