#pragma once

// Dense bounded-variable revised simplex. Maximizes c^T x subject to
// equality rows, inequality rows (<=) and per-variable bounds. Two phases
// with artificial variables; explicit basis inverse with periodic
// refactorization; Dantzig pricing with a Bland fallback against cycling.
// Problem sizes here are a few hundred variables, so dense algebra is fine.

#include <limits>
#include <string>
#include <vector>

#include "sssopt/common.hpp"

namespace sssopt {

inline constexpr double kLpInf = 1e30;

struct LpProblem {
  int n = 0;
  VectorXd c;          // objective, maximized
  VectorXd lo, hi;     // bounds; +-kLpInf when absent
  MatrixXd a_eq;
  VectorXd b_eq;
  MatrixXd a_in;       // a_in x <= b_in
  VectorXd b_in;

  void init(int n_vars) {
    n = n_vars;
    c = VectorXd::Zero(n);
    lo = VectorXd::Constant(n, -kLpInf);
    hi = VectorXd::Constant(n, kLpInf);
    a_eq.resize(0, n);
    b_eq.resize(0);
    a_in.resize(0, n);
    b_in.resize(0);
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration-limit";
  }
  return "?";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  VectorXd x;
  double objective = 0.0;
  int iterations = 0;
  double max_violation = 0.0;  // residual of the returned point
};

struct LpOptions {
  double tol_feas = 1e-9;
  double tol_cost = 1e-9;
  double tol_pivot = 1e-10;
  int max_iter = 0;  // 0: automatic
};

namespace detail {

enum class VarState : unsigned char { Basic, AtLower, AtUpper, FreeZero };

class BoundedSimplex {
 public:
  BoundedSimplex(const LpProblem& p, const LpOptions& opt) : opt_(opt) {
    m_ = static_cast<int>(p.a_eq.rows() + p.a_in.rows());
    n_struct_ = p.n + static_cast<int>(p.a_in.rows());  // structural + slacks
    n_ = n_struct_ + m_;                                // + artificials
    a_.resize(m_, n_);
    a_.setZero();
    b_.resize(m_);
    lo_ = VectorXd::Constant(n_, 0.0);
    hi_ = VectorXd::Constant(n_, kLpInf);
    const int me = static_cast<int>(p.a_eq.rows());
    a_.topLeftCorner(me, p.n) = p.a_eq;
    b_.head(me) = p.b_eq;
    a_.bottomLeftCorner(m_ - me, p.n) = p.a_in;
    b_.tail(m_ - me) = p.b_in;
    for (int i = 0; i < m_ - me; ++i) a_(me + i, p.n + i) = 1.0;  // slack
    lo_.head(p.n) = p.lo;
    hi_.head(p.n) = p.hi;
    for (int i = 0; i < m_ - me; ++i) {
      lo_[p.n + i] = 0.0;
      hi_[p.n + i] = kLpInf;
    }
    cost_ = VectorXd::Zero(n_);
    cost_.head(p.n) = p.c;
    n_orig_ = p.n;
  }

  LpSolution solve() {
    LpSolution out;
    for (int j = 0; j < n_orig_; ++j) {
      if (lo_[j] > hi_[j] + opt_.tol_feas) {
        out.status = LpStatus::Infeasible;
        return out;
      }
    }

    // Start: nonbasics at the bound nearest zero; artificials basic.
    state_.assign(n_, VarState::AtLower);
    z_ = VectorXd::Zero(n_);
    for (int j = 0; j < n_struct_; ++j) {
      const bool has_lo = lo_[j] > -kLpInf / 2, has_hi = hi_[j] < kLpInf / 2;
      if (has_lo && (!has_hi || std::abs(lo_[j]) <= std::abs(hi_[j]))) {
        state_[j] = VarState::AtLower;
        z_[j] = lo_[j];
      } else if (has_hi) {
        state_[j] = VarState::AtUpper;
        z_[j] = hi_[j];
      } else {
        state_[j] = VarState::FreeZero;
        z_[j] = 0.0;
      }
    }
    VectorXd resid = b_ - a_.leftCols(n_struct_) * z_.head(n_struct_);
    basis_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      const int j = n_struct_ + i;
      a_(i, j) = resid[i] >= 0 ? 1.0 : -1.0;
      basis_[i] = j;
      state_[j] = VarState::Basic;
      z_[j] = std::abs(resid[i]);
      lo_[j] = 0.0;
      hi_[j] = kLpInf;
    }
    binv_ = MatrixXd::Identity(m_, m_);
    for (int i = 0; i < m_; ++i) binv_(i, i) = a_(i, basis_[i]);  // +-1, self-inverse

    const int auto_iters = 50 * (m_ + n_) + 200;
    max_iter_ = opt_.max_iter > 0 ? opt_.max_iter : auto_iters;

    // Phase 1: drive the artificial sum to zero.
    VectorXd phase1 = VectorXd::Zero(n_);
    phase1.tail(m_).setConstant(-1.0);
    LpStatus st = optimize(phase1);
    out.iterations = iters_;
    double art_sum = 0;
    for (int i = 0; i < m_; ++i)
      if (basis_[i] >= n_struct_) art_sum += z_[basis_[i]];
    if (st == LpStatus::IterationLimit) {
      out.status = st;
      return out;
    }
    if (art_sum > 1e-7) {
      out.status = LpStatus::Infeasible;
      return out;
    }
    // Freeze artificials at zero (degenerate basics may remain).
    for (int j = n_struct_; j < n_; ++j) {
      hi_[j] = 0.0;
      if (state_[j] != VarState::Basic) {
        state_[j] = VarState::AtLower;
        z_[j] = 0.0;
      }
    }

    st = optimize(cost_);
    out.iterations = iters_;
    out.status = st;
    out.x = z_.head(n_orig_);
    out.objective = cost_.head(n_orig_).dot(out.x);
    VectorXd r = b_ - a_.leftCols(n_struct_) * z_.head(n_struct_);
    for (int i = 0; i < m_; ++i)
      if (basis_[i] >= n_struct_) r[i] -= a_(i, basis_[i]) * z_[basis_[i]];
    out.max_violation = m_ ? r.cwiseAbs().maxCoeff() : 0.0;
    return out;
  }

 private:
  LpStatus optimize(const VectorXd& cost) {
    int stall = 0;
    double last_obj = objective_of(cost);
    bool bland = false;
    for (; iters_ < max_iter_; ++iters_) {
      if (refactor_count_ >= 64) refactor();
      VectorXd y = binv_.transpose() * gather_basic(cost);

      int q = -1, dir = 0;
      double best = opt_.tol_cost;
      for (int j = 0; j < n_; ++j) {
        if (state_[j] == VarState::Basic) continue;
        if (lo_[j] >= hi_[j] - 1e-30 && state_[j] != VarState::FreeZero) continue;  // fixed
        const double d = cost[j] - y.dot(a_.col(j));
        const bool can_up = state_[j] == VarState::AtLower || state_[j] == VarState::FreeZero;
        const bool can_dn = state_[j] == VarState::AtUpper || state_[j] == VarState::FreeZero;
        if (can_up && d > best) {
          if (bland) {
            q = j;
            dir = +1;
            break;
          }
          best = d;
          q = j;
          dir = +1;
        }
        if (can_dn && -d > best) {
          if (bland) {
            q = j;
            dir = -1;
            break;
          }
          best = -d;
          q = j;
          dir = -1;
        }
      }
      if (q < 0) return LpStatus::Optimal;

      VectorXd w = binv_ * a_.col(q);
      // Entering moves t >= 0 in direction dir; basics move by -dir*t*w.
      double t_best = kLpInf;
      bool flip = false;
      if (lo_[q] > -kLpInf / 2 && hi_[q] < kLpInf / 2) {
        t_best = hi_[q] - lo_[q];
        flip = true;
      }
      int leave = -1;
      double leave_piv = 0;
      for (int i = 0; i < m_; ++i) {
        const int bj = basis_[i];
        const double delta = -dir * w[i];
        double t_i;
        if (delta > opt_.tol_pivot) {
          if (hi_[bj] >= kLpInf / 2) continue;
          t_i = (hi_[bj] - z_[bj]) / delta;
        } else if (delta < -opt_.tol_pivot) {
          if (lo_[bj] <= -kLpInf / 2) continue;
          t_i = (z_[bj] - lo_[bj]) / (-delta);
        } else {
          continue;
        }
        if (t_i < -1e-12) t_i = 0;
        bool better = false;
        if (t_i < t_best - 1e-12) {
          better = true;
        } else if (t_i <= t_best + 1e-12 && leave >= 0) {
          // Tie among leaving candidates: Bland wants the smallest index,
          // otherwise prefer the numerically largest pivot.
          better = bland ? basis_[i] < basis_[leave]
                         : std::abs(w[i]) > std::abs(leave_piv) + 1e-15;
        }
        if (better) {
          t_best = t_i;
          leave = i;
          leave_piv = w[i];
          flip = false;
        }
      }
      if (t_best >= kLpInf / 2) return LpStatus::Unbounded;

      // Apply the move.
      z_[q] += dir * t_best;
      for (int i = 0; i < m_; ++i) z_[basis_[i]] -= dir * t_best * w[i];
      if (flip) {
        state_[q] = dir > 0 ? VarState::AtUpper : VarState::AtLower;
      } else {
        const int out_var = basis_[leave];
        const double delta = -dir * w[leave];
        state_[out_var] = delta > 0 ? VarState::AtUpper : VarState::AtLower;
        if (state_[out_var] == VarState::AtUpper)
          z_[out_var] = hi_[out_var];
        else
          z_[out_var] = lo_[out_var];
        basis_[leave] = q;
        state_[q] = VarState::Basic;
        // binv <- E * binv with pivot w[leave].
        const double piv = w[leave];
        binv_.row(leave) /= piv;
        for (int i = 0; i < m_; ++i) {
          if (i == leave) continue;
          const double f = w[i];
          if (f != 0.0) binv_.row(i) -= f * binv_.row(leave);
        }
        ++refactor_count_;
      }

      const double obj = objective_of(cost);
      if (obj > last_obj + 1e-12) {
        stall = 0;
        bland = false;
        last_obj = obj;
      } else if (++stall > 2 * (m_ + 8)) {
        bland = true;  // anti-cycling
      }
    }
    return LpStatus::IterationLimit;
  }

  double objective_of(const VectorXd& cost) const {
    double v = 0;
    for (int j = 0; j < n_; ++j) v += cost[j] * z_[j];
    return v;
  }

  VectorXd gather_basic(const VectorXd& cost) const {
    VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb[i] = cost[basis_[i]];
    return cb;
  }

  void refactor() {
    MatrixXd bmat(m_, m_);
    for (int i = 0; i < m_; ++i) bmat.col(i) = a_.col(basis_[i]);
    Eigen::FullPivLU<MatrixXd> lu(bmat);
    if (!lu.isInvertible()) throw NumericError("simplex basis became singular");
    binv_ = lu.inverse();
    refactor_count_ = 0;
    // Recompute basic values from the nonbasic assignment.
    VectorXd rhs = b_;
    for (int j = 0; j < n_; ++j)
      if (state_[j] != VarState::Basic && z_[j] != 0.0) rhs -= a_.col(j) * z_[j];
    VectorXd xb = binv_ * rhs;
    for (int i = 0; i < m_; ++i) z_[basis_[i]] = xb[i];
  }

  LpOptions opt_;
  MatrixXd a_, binv_;
  VectorXd b_, lo_, hi_, cost_, z_;
  std::vector<VarState> state_;
  std::vector<int> basis_;
  int m_ = 0, n_ = 0, n_struct_ = 0, n_orig_ = 0;
  int iters_ = 0, max_iter_ = 0, refactor_count_ = 0;
};

}  // namespace detail

/// Solve the LP. Optimal solutions satisfy every row within ~1e-8; status
/// reports infeasible / unbounded problems instead of throwing.
inline LpSolution lp_solve(const LpProblem& p, const LpOptions& opt = {}) {
  if (p.c.size() != p.n || p.lo.size() != p.n || p.hi.size() != p.n)
    throw ModelError("LP problem dimensions are inconsistent");
  if (p.a_eq.cols() != p.n || p.a_in.cols() != p.n)
    throw ModelError("LP constraint matrices do not match the variable count");
  detail::BoundedSimplex s(p, opt);
  return s.solve();
}

}  // namespace sssopt
