#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "deltiss/common.hpp"

namespace deltiss::sdp {

enum class VarKind { Symmetric, Diagonal, Scalar, Rectangular };

struct VarInfo {
  std::string name;
  VarKind kind;
  int rows = 0, cols = 0;
  int offset = 0;  // first scalar unknown
  int count = 0;   // number of scalar unknowns
};

// Per-variable matrix values, in declaration order.
using Values = std::vector<MatrixXd>;

enum class SolveStatus { Feasible, Infeasible, NumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Feasible: return "feasible";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "?";
}

struct LmiSolution {
  Values values;
  std::vector<double> block_min_eigs;  // recomputed by dense eigendecomposition
  std::optional<double> objective_value;
  SolveStatus status = SolveStatus::NumericalFailure;
  int iterations = 0;
  double feasibility_margin = 0.0;  // phase-I max-margin value (scaled units)
};

// lambda_min(M) >= -tol for symmetric M; asymmetric input is rejected.
inline bool check_psd(const Eigen::Ref<const MatrixXd>& M, double tol) {
  require(M.rows() == M.cols() && is_symmetric(M, 1e-10), "asymmetric",
          "check_psd: input must be symmetric");
  return min_eig_sym(M) >= -tol;
}

namespace detail {

// One PSD constraint in compiled form: C + sum_j x_j * F[j] >= 0, with only
// the participating variables stored.
struct CompiledBlock {
  std::string name;
  int dim = 0;
  MatrixXd C;
  std::vector<std::pair<int, MatrixXd>> terms;  // (scalar unknown index, F)
};

struct Compiled {
  int nvar = 0;
  std::vector<CompiledBlock> blocks;
  VectorXd cost;     // minimized; zero when absent
  double cost0 = 0;  // affine offset of the objective
  bool has_objective = false;
  std::vector<std::string> warnings;
};

// Primal-dual interior-point iteration (HKM direction, infeasible start) on
//   minimize cost' x   s.t.   C_j + sum_i x_i F_ij >= 0.
// Blocks are assumed diagonally equilibrated by the caller.
class Ipm {
 public:
  struct Result {
    VectorXd x;
    SolveStatus status = SolveStatus::NumericalFailure;
    int iterations = 0;
    double mu = kInf;
  };

  Ipm(const std::vector<CompiledBlock>& blocks, VectorXd cost, int nvar)
      : blocks_(blocks), cost_(std::move(cost)), nvar_(nvar) {}

  Result run(int max_iter, double tol, const VectorXd* x0 = nullptr) {
    const int nb = static_cast<int>(blocks_.size());
    std::vector<MatrixXd> X(nb), S(nb);
    VectorXd x = x0 ? *x0 : VectorXd::Zero(nvar_);
    int total_dim = 0;
    for (int j = 0; j < nb; ++j) {
      const int d = blocks_[j].dim;
      total_dim += d;
      const double s0 = 1.0 + blocks_[j].C.norm();
      X[j] = MatrixXd::Identity(d, d) * s0;
      S[j] = MatrixXd::Identity(d, d) * s0;
      if (x0) {
        // start dual-feasible when the given point has interior slack
        MatrixXd B = block_value(j, x);
        if (min_eig_sym(B) > 1e-8) S[j] = 0.5 * (B + B.transpose());
      }
    }
    const VectorXd b = -cost_;  // solver maximizes b'x
    const double bscale = 1.0 + b.cwiseAbs().maxCoeff();
    // Residuals below `tol` are the target; runs that stall at the
    // double-precision floor are still accepted at `soft_tol` using the best
    // iterate seen, since every consumer re-certifies solutions
    // independently of the solver.
    const double soft_tol = std::max(1e-6, tol);

    Result res;
    int stall = 0;
    double best_err = kInf;
    VectorXd best_x = x;
    auto soft_exit = [&](int it) {
      res.iterations = it;
      res.x = best_x;
      res.status = best_err <= soft_tol ? SolveStatus::Feasible
                                        : SolveStatus::NumericalFailure;
      return res;
    };
    for (int it = 0; it < max_iter; ++it) {
      // residuals
      std::vector<Eigen::LLT<MatrixXd>> Slt(nb);
      std::vector<MatrixXd> Sinv(nb), Rd(nb);
      double mu = 0.0;
      for (int j = 0; j < nb; ++j) {
        Slt[j].compute(S[j]);
        if (Slt[j].info() != Eigen::Success) return soft_exit(it);
        Sinv[j] = Slt[j].solve(MatrixXd::Identity(blocks_[j].dim, blocks_[j].dim));
        Rd[j] = block_value(j, x) - S[j];
        mu += X[j].cwiseProduct(S[j]).sum();
      }
      mu /= total_dim;

      VectorXd rp = b;
      for (int j = 0; j < nb; ++j) {
        for (const auto& [i, F] : blocks_[j].terms) {
          // A = -F in the standard dual form
          rp[i] += F.cwiseProduct(X[j]).sum();
        }
      }

      double d_res = 0.0, c_scale = 1.0;
      for (int j = 0; j < nb; ++j) {
        d_res = std::max(d_res, Rd[j].cwiseAbs().maxCoeff());
        c_scale = std::max(c_scale, blocks_[j].C.cwiseAbs().maxCoeff());
      }
      const double p_res = rp.cwiseAbs().maxCoeff() / bscale;
      const double err = std::max({p_res, d_res / c_scale, mu / c_scale});
      if (err < best_err) {
        best_err = err;
        best_x = x;
      }
      if (p_res <= tol && d_res / c_scale <= tol && mu / c_scale <= tol) {
        res.x = x;
        res.status = SolveStatus::Feasible;  // converged to optimality
        res.iterations = it;
        res.mu = mu;
        return res;
      }

      // Schur complement M_ki = sum_j tr(A_kj X_j A_ij Sinv_j)
      MatrixXd M = MatrixXd::Zero(nvar_, nvar_);
      std::vector<std::vector<MatrixXd>> G(nb);  // X A Sinv per term
      for (int j = 0; j < nb; ++j) {
        const auto& terms = blocks_[j].terms;
        G[j].resize(terms.size());
        for (std::size_t a = 0; a < terms.size(); ++a) {
          // sign of A cancels in pairs inside M
          G[j][a] = X[j] * terms[a].second * Sinv[j];
        }
        for (std::size_t a = 0; a < terms.size(); ++a) {
          for (std::size_t c = a; c < terms.size(); ++c) {
            const double contrib = terms[c].second.cwiseProduct(G[j][a]).sum();
            M(terms[c].first, terms[a].first) += contrib;
            if (terms[c].first != terms[a].first)
              M(terms[a].first, terms[c].first) += contrib;
          }
        }
      }

      Eigen::LDLT<MatrixXd> Mf(M + 1e-13 * M.trace() / nvar_ *
                                       MatrixXd::Identity(nvar_, nvar_));
      if (Mf.info() != Eigen::Success) return soft_exit(it);

      auto direction = [&](double sigma, VectorXd& dy,
                           std::vector<MatrixXd>& dX, std::vector<MatrixXd>& dS) {
        VectorXd rhs = rp;
        std::vector<MatrixXd> cst(nb);
        for (int j = 0; j < nb; ++j) {
          cst[j] = sigma * mu * Sinv[j] - X[j] - X[j] * Rd[j] * Sinv[j];
          for (const auto& [i, F] : blocks_[j].terms) {
            rhs[i] += F.cwiseProduct(cst[j]).sum();  // -tr(A cst)
          }
        }
        dy = Mf.solve(rhs);
        dX.assign(nb, MatrixXd());
        dS.assign(nb, MatrixXd());
        for (int j = 0; j < nb; ++j) {
          MatrixXd dSj = Rd[j];
          for (const auto& [i, F] : blocks_[j].terms) dSj += dy[i] * F;
          // Rd - sum dy_i A_i with A = -F  ==>  Rd + sum dy_i F
          dS[j] = dSj;
          MatrixXd dXj = sigma * mu * Sinv[j] - X[j] - X[j] * dSj * Sinv[j];
          dX[j] = 0.5 * (dXj + dXj.transpose());
        }
      };

      VectorXd dy;
      std::vector<MatrixXd> dX, dS;
      direction(0.0, dy, dX, dS);
      double ap = step_length(X, dX), ad = step_length(S, dS);
      double mu_aff = 0.0;
      for (int j = 0; j < nb; ++j) {
        mu_aff += (X[j] + ap * dX[j]).cwiseProduct(S[j] + ad * dS[j]).sum();
      }
      mu_aff = std::max(mu_aff / total_dim, 0.0);
      const double sigma =
          std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 1e-4, 0.9);

      direction(sigma, dy, dX, dS);
      ap = step_length(X, dX);
      ad = step_length(S, dS);
#ifdef DELTISS_IPM_TRACE
      std::fprintf(stderr,
                   "it=%3d mu=%9.2e p=%9.2e d=%9.2e ap=%8.2e ad=%8.2e sig=%5.2f\n",
                   it, mu, p_res, d_res / c_scale, ap, ad, sigma);
#endif
      if (std::min(ap, ad) < 1e-10) {
        if (++stall >= 5) return soft_exit(it);
      } else {
        stall = 0;
      }

      for (int j = 0; j < nb; ++j) {
        X[j] += ap * dX[j];
        S[j] += ad * dS[j];
      }
      x += ad * dy;
      if (!x.allFinite()) return soft_exit(it);
      res.iterations = it + 1;
    }
    return soft_exit(max_iter);
  }

 private:
  MatrixXd block_value(int j, const VectorXd& x) const {
    MatrixXd B = blocks_[j].C;
    for (const auto& [i, F] : blocks_[j].terms) B += x[i] * F;
    return B;
  }

  // largest alpha in (0, 1] keeping V + alpha dV positive definite
  static double step_length(const std::vector<MatrixXd>& V,
                            const std::vector<MatrixXd>& dV) {
    double alpha = 1.0;
    for (std::size_t j = 0; j < V.size(); ++j) {
      Eigen::LLT<MatrixXd> llt(V[j]);
      if (llt.info() != Eigen::Success) return 0.0;
      const MatrixXd L = llt.matrixL();
      const MatrixXd K = L.triangularView<Eigen::Lower>().solve(
          L.triangularView<Eigen::Lower>().solve(dV[j]).transpose());
      const double lmin = min_eig_sym(0.5 * (K + K.transpose()));
      if (lmin < 0.0) alpha = std::min(alpha, -0.98 / lmin);
    }
    return alpha;
  }

  const std::vector<CompiledBlock>& blocks_;
  VectorXd cost_;
  int nvar_;
};

}  // namespace detail

// Declarative LMI system: matrix variables, affine PSD block expressions and
// an optional linear objective. Blocks are given as closures over the
// per-variable values; affinity and symmetry are verified at compile time by
// evaluation, so builders can be written as plain Eigen block assembly.
class LmiProblem {
 public:
  int symmetric(const std::string& name, int k) { return add(name, VarKind::Symmetric, k, k, k * (k + 1) / 2); }
  int diagonal(const std::string& name, int k) { return add(name, VarKind::Diagonal, k, k, k); }
  int scalar(const std::string& name) { return add(name, VarKind::Scalar, 1, 1, 1); }
  int rectangular(const std::string& name, int r, int c) { return add(name, VarKind::Rectangular, r, c, r * c); }

  void require_psd(const std::string& name,
                   std::function<MatrixXd(const Values&)> expr) {
    blocks_.push_back({name, std::move(expr)});
  }

  void minimize(std::function<double(const Values&)> objective) {
    objective_ = std::move(objective);
  }

  int nvar() const { return nvar_; }
  const std::vector<VarInfo>& variables() const { return vars_; }
  std::size_t n_blocks() const { return blocks_.size(); }
  const std::string& block_name(std::size_t j) const { return blocks_[j].name; }

  // Materialize per-variable matrices from the scalar unknown vector
  // (symmetric variables use scaled upper-triangular stacking: off-diagonal
  // unknowns carry a 1/sqrt(2) factor so the basis is orthonormal).
  Values values_from_x(const VectorXd& x) const {
    Values vals;
    vals.reserve(vars_.size());
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (const auto& v : vars_) {
      MatrixXd m = MatrixXd::Zero(v.rows, v.cols);
      int k = v.offset;
      switch (v.kind) {
        case VarKind::Symmetric:
          for (int c = 0; c < v.cols; ++c) {
            for (int r = 0; r <= c; ++r, ++k) {
              if (r == c) {
                m(r, c) = x[k];
              } else {
                m(r, c) = m(c, r) = x[k] * inv_sqrt2;
              }
            }
          }
          break;
        case VarKind::Diagonal:
          for (int i = 0; i < v.rows; ++i, ++k) m(i, i) = x[k];
          break;
        case VarKind::Scalar:
          m(0, 0) = x[k];
          break;
        case VarKind::Rectangular:
          for (int r = 0; r < v.rows; ++r) {
            for (int c = 0; c < v.cols; ++c, ++k) m(r, c) = x[k];
          }
          break;
      }
      vals.push_back(std::move(m));
    }
    return vals;
  }

  VectorXd x_from_values(const Values& vals) const {
    VectorXd x(nvar_);
    static const double sqrt2 = std::sqrt(2.0);
    for (std::size_t vi = 0; vi < vars_.size(); ++vi) {
      const auto& v = vars_[vi];
      const MatrixXd& m = vals[vi];
      int k = v.offset;
      switch (v.kind) {
        case VarKind::Symmetric:
          for (int c = 0; c < v.cols; ++c) {
            for (int r = 0; r <= c; ++r, ++k) {
              x[k] = (r == c) ? m(r, c) : m(r, c) * sqrt2;
            }
          }
          break;
        case VarKind::Diagonal:
          for (int i = 0; i < v.rows; ++i, ++k) x[k] = m(i, i);
          break;
        case VarKind::Scalar:
          x[k] = m(0, 0);
          break;
        case VarKind::Rectangular:
          for (int r = 0; r < v.rows; ++r) {
            for (int c = 0; c < v.cols; ++c, ++k) x[k] = m(r, c);
          }
          break;
      }
    }
    return x;
  }

  detail::Compiled compile() const {
    require(!blocks_.empty(), "lmi_empty", "LMI problem has no blocks");
    detail::Compiled out;
    out.nvar = nvar_;
    const Values zero_vals = values_from_x(VectorXd::Zero(nvar_));
    std::vector<bool> referenced(vars_.size(), false);

    for (const auto& blk : blocks_) {
      detail::CompiledBlock cb;
      cb.name = blk.name;
      cb.C = blk.expr(zero_vals);
      require(cb.C.size() > 0, "lmi_empty", "block '" + blk.name + "' is empty");
      require(cb.C.rows() == cb.C.cols() && is_symmetric(cb.C, 1e-9),
              "lmi_block", "block '" + blk.name + "' must be square symmetric");
      cb.dim = static_cast<int>(cb.C.rows());
      cb.C = 0.5 * (cb.C + cb.C.transpose());
      for (int j = 0; j < nvar_; ++j) {
        VectorXd e = VectorXd::Zero(nvar_);
        e[j] = 1.0;
        MatrixXd F = blk.expr(values_from_x(e)) - cb.C;
        require(is_symmetric(F, 1e-9), "lmi_block",
                "block '" + blk.name + "' has an asymmetric variable term");
        F = 0.5 * (F + F.transpose());
        if (F.cwiseAbs().maxCoeff() > 0.0) {
          cb.terms.emplace_back(j, std::move(F));
          referenced[var_of_unknown(j)] = true;
        }
      }
      // affinity spot-check at a fixed pseudo-random point
      VectorXd xr(nvar_);
      for (int j = 0; j < nvar_; ++j) {
        xr[j] = std::sin(13.7 * (j + 1)) + 0.3;
      }
      MatrixXd lin = cb.C;
      for (const auto& [j, F] : cb.terms) lin += xr[j] * F;
      const MatrixXd full = blk.expr(values_from_x(xr));
      const double scale = 1.0 + full.cwiseAbs().maxCoeff();
      require((lin - full).cwiseAbs().maxCoeff() <= 1e-8 * scale, "lmi_block",
              "block '" + blk.name + "' is not affine in the declared variables");
      out.blocks.push_back(std::move(cb));
    }

    if (objective_) {
      out.has_objective = true;
      out.cost0 = objective_(zero_vals);
      out.cost.resize(nvar_);
      for (int j = 0; j < nvar_; ++j) {
        VectorXd e = VectorXd::Zero(nvar_);
        e[j] = 1.0;
        out.cost[j] = objective_(values_from_x(e)) - out.cost0;
        if (out.cost[j] != 0.0) referenced[var_of_unknown(j)] = true;
      }
    } else {
      out.cost = VectorXd::Zero(nvar_);
    }

    for (std::size_t v = 0; v < vars_.size(); ++v) {
      if (!referenced[v]) {
        out.warnings.push_back("variable '" + vars_[v].name +
                               "' is not referenced by any block");
      }
    }
    return out;
  }

  // Two-phase solve. Phase I maximizes the uniform slack margin t subject to
  // every block dominating t*I (t capped above so the subproblem stays
  // bounded); t <= 0 at the optimum means infeasible. Pure feasibility
  // problems return the max-margin point itself, which keeps certification
  // margins comfortably positive. With an objective, phase II restarts the
  // path-following iteration on the true cost from the phase-I point.
  LmiSolution solve(double tol_psd = 1e-7, int max_iter = 200) const {
    const detail::Compiled cp = compile();
    // diagonal equilibration per block
    std::vector<detail::CompiledBlock> scaled = cp.blocks;
    for (auto& blk : scaled) {
      VectorXd rowmax = blk.C.cwiseAbs().rowwise().maxCoeff();
      for (const auto& [i, F] : blk.terms) {
        rowmax = rowmax.cwiseMax(F.cwiseAbs().rowwise().maxCoeff());
      }
      VectorXd dscale(blk.dim);
      for (int r = 0; r < blk.dim; ++r) {
        dscale[r] = 1.0 / std::sqrt(std::clamp(rowmax[r], 1e-8, 1e16));
      }
      const auto D = dscale.asDiagonal();
      blk.C = D * blk.C * D;
      for (auto& [i, F] : blk.terms) F = D * F * D;
    }

    // phase I
    const int t_idx = cp.nvar;
    std::vector<detail::CompiledBlock> ph1 = scaled;
    for (auto& blk : ph1) {
      blk.terms.emplace_back(t_idx, -MatrixXd::Identity(blk.dim, blk.dim));
    }
    detail::CompiledBlock cap;
    cap.name = "_t_cap";
    cap.dim = 1;
    cap.C = MatrixXd::Constant(1, 1, 100.0);
    cap.terms.emplace_back(t_idx, -MatrixXd::Identity(1, 1));
    ph1.push_back(cap);
    VectorXd cost1 = VectorXd::Zero(cp.nvar + 1);
    cost1[t_idx] = -1.0;  // maximize t

    detail::Ipm ipm1(ph1, cost1, cp.nvar + 1);
    auto r1 = ipm1.run(max_iter, solver_tol_);
    LmiSolution sol;
    sol.iterations = r1.iterations;
    if (r1.status != SolveStatus::Feasible) {
      sol.status = SolveStatus::NumericalFailure;
      sol.values = values_from_x(r1.x.head(cp.nvar));
      finalize(cp, sol);
      return sol;
    }
    const double margin = r1.x[t_idx];
    sol.feasibility_margin = margin;
    if (margin <= feas_margin_) {
      sol.status = SolveStatus::Infeasible;
      sol.values = values_from_x(r1.x.head(cp.nvar));
      finalize(cp, sol);
      return sol;
    }

    const VectorXd x1 = r1.x.head(cp.nvar);
    if (cp.has_objective) {
      detail::Ipm ipm2(scaled, cp.cost, cp.nvar);
      auto r2 = ipm2.run(max_iter, solver_tol_, &x1);
      sol.iterations += r2.iterations;
      // Prefer the optimized point; fall back to the max-margin phase-I
      // point when the optimizer stalled or its iterate fails the
      // certificate.
      sol.status = SolveStatus::Feasible;
      sol.values = values_from_x(r2.x);
      finalize(cp, sol, tol_psd);
      if (sol.status == SolveStatus::Feasible) return sol;
    }
    sol.status = SolveStatus::Feasible;
    sol.values = values_from_x(x1);
    finalize(cp, sol, tol_psd);
    return sol;
  }

  // Independent residual certificate: dense eigendecomposition of every block
  // evaluated at the given values, in original (unscaled) units.
  std::vector<double> block_min_eigs(const Values& vals) const {
    std::vector<double> eigs;
    eigs.reserve(blocks_.size());
    for (const auto& blk : blocks_) {
      eigs.push_back(min_eig_sym(blk.expr(vals)));
    }
    return eigs;
  }

  // Sparse triplet dump of the compiled cone program. Per block, the constant
  // part is listed under var -1 followed by one section per participating
  // scalar unknown; entries are "block row col value" lines.
  void debug_dump(std::ostream& os) const {
    const detail::Compiled cp = compile();
    os << "# deltiss cone program: " << cp.blocks.size() << " blocks, "
       << cp.nvar << " scalar unknowns\n";
    for (std::size_t j = 0; j < cp.blocks.size(); ++j) {
      const auto& blk = cp.blocks[j];
      os << "# block " << j << " '" << blk.name << "' dim " << blk.dim
         << " var -1\n";
      dump_matrix(os, j, blk.C);
      for (const auto& [i, F] : blk.terms) {
        os << "# block " << j << " var " << i << "\n";
        dump_matrix(os, j, F);
      }
    }
    if (cp.has_objective) {
      os << "# objective (minimize), constant " << cp.cost0 << "\n";
      for (int i = 0; i < cp.nvar; ++i) {
        if (cp.cost[i] != 0.0) os << "obj " << i << " " << cp.cost[i] << "\n";
      }
    }
  }

 private:
  struct Block {
    std::string name;
    std::function<MatrixXd(const Values&)> expr;
  };

  int add(const std::string& name, VarKind kind, int r, int c, int count) {
    require(r > 0 && c > 0, "lmi_var", "variable '" + name + "' must be sized");
    VarInfo v{name, kind, r, c, nvar_, count};
    vars_.push_back(v);
    nvar_ += count;
    unknown_owner_.resize(nvar_, static_cast<int>(vars_.size()) - 1);
    return static_cast<int>(vars_.size()) - 1;
  }

  int var_of_unknown(int j) const { return unknown_owner_[j]; }

  void finalize(const detail::Compiled& cp, LmiSolution& sol,
                double tol_psd = 1e-7) const {
    sol.block_min_eigs = block_min_eigs(sol.values);
    if (cp.has_objective) sol.objective_value = objective_(sol.values);
    if (sol.status == SolveStatus::Feasible) {
      for (double e : sol.block_min_eigs) {
        if (e < -tol_psd) {
          sol.status = SolveStatus::NumericalFailure;
          break;
        }
      }
    }
  }

  static void dump_matrix(std::ostream& os, std::size_t block, const MatrixXd& M) {
    for (int r = 0; r < M.rows(); ++r) {
      for (int c = 0; c < M.cols(); ++c) {
        if (M(r, c) != 0.0) {
          os << block << " " << r << " " << c << " " << M(r, c) << "\n";
        }
      }
    }
  }

  std::vector<VarInfo> vars_;
  std::vector<Block> blocks_;
  std::vector<int> unknown_owner_;
  std::function<double(const Values&)> objective_;
  int nvar_ = 0;
  double solver_tol_ = 1e-9;
  double feas_margin_ = 1e-9;
};

}  // namespace deltiss::sdp
