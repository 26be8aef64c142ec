#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "deltiss/common.hpp"
#include "deltiss/rng.hpp"

namespace deltiss::geom {

// Ellipsoid E(Q) = { v : (v-c)' Q (v-c) <= 1 } with Q symmetric positive
// definite. Stored by the shape matrix Q; the Cholesky factor of Q is cached
// lazily for support evaluation and sampling. Immutable after construction.
class Ellipsoid {
 public:
  explicit Ellipsoid(MatrixXd shape, std::optional<VectorXd> center = {})
      : shape_(std::move(shape)) {
    require(shape_.rows() == shape_.cols(), "ellipsoid_shape",
            "ellipsoid shape matrix must be square");
    require(is_symmetric(shape_, 1e-10), "ellipsoid_shape",
            "ellipsoid shape matrix must be symmetric");
    shape_ = 0.5 * (shape_ + shape_.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(shape_, Eigen::EigenvaluesOnly);
    require(es.eigenvalues().minCoeff() > 0.0, "ellipsoid_shape",
            "ellipsoid shape matrix must be positive definite");
    center_ = center ? std::move(*center) : VectorXd::Zero(shape_.rows());
    require(center_.size() == shape_.rows(), "ellipsoid_shape",
            "ellipsoid center dimension mismatch");
  }

  int dim() const { return static_cast<int>(shape_.rows()); }
  const MatrixXd& shape() const { return shape_; }
  const VectorXd& center() const { return center_; }

  double quadratic_form(const VectorXd& v) const {
    const VectorXd d = v - center_;
    return d.dot(shape_ * d);
  }

  bool contains(const VectorXd& v, double tol = 1e-12) const {
    return quadratic_form(v) <= 1.0 + tol;
  }

  // max_{v in E, centered} a' M v = sqrt(a' M Q^{-1} M' a).
  double support(const MatrixXd& map, const VectorXd& dir) const {
    require(map.cols() == dim() && map.rows() == dir.size(), "dimension",
            "support: incompatible map/direction dimensions");
    // a' M Q^{-1} M' a via triangular solve with Q = L L'.
    const VectorXd g = map.transpose() * dir;
    const VectorXd z = chol().matrixL().solve(g);
    return z.norm();
  }

  double support(const VectorXd& dir) const {
    return support(MatrixXd::Identity(dim(), dim()), dir);
  }

  // Uniform draw from the unit ball pushed through the inverse Cholesky
  // factor of Q; covers interior and boundary of the centered set.
  VectorXd sample(Rng& rng) const {
    return center_ + chol().matrixU().solve(rng.ball_vector(dim()));
  }

  // Draw on the boundary surface (unit sphere pushed through L^{-T}).
  VectorXd sample_boundary(Rng& rng) const {
    return center_ + chol().matrixU().solve(rng.unit_vector(dim()));
  }

  // Boundary point maximizing dir' v over the centered set.
  VectorXd extremal_point(const VectorXd& dir) const {
    const VectorXd w = chol().solve(dir);  // Q^{-1} dir
    const double s = std::sqrt(dir.dot(w));
    require(s > 0.0, "dimension", "extremal_point: zero direction");
    return center_ + w / s;
  }

 private:
  const Eigen::LLT<MatrixXd>& chol() const {
    if (!chol_) {
      chol_.emplace(shape_);
      require(chol_->info() == Eigen::Success, "ellipsoid_shape",
              "ellipsoid shape matrix not positive definite (LLT failed)");
    }
    return *chol_;
  }

  MatrixXd shape_;
  VectorXd center_;
  mutable std::optional<Eigen::LLT<MatrixXd>> chol_;
};

// Polytope { v : G v <= b } by row normals and offsets.
struct Polytope {
  MatrixXd G;
  VectorXd b;

  Polytope(MatrixXd G_, VectorXd b_) : G(std::move(G_)), b(std::move(b_)) {
    require(G.rows() == b.size(), "polytope_shape",
            "polytope row/offset count mismatch");
    for (int r = 0; r < G.rows(); ++r) {
      require(G.row(r).norm() > 0.0, "polytope_shape",
              "polytope has a zero row normal");
    }
  }

  int dim() const { return static_cast<int>(G.cols()); }
  int rows() const { return static_cast<int>(G.rows()); }

  bool contains(const VectorXd& v, double tol = 1e-12) const {
    return ((G * v - b).array() <= tol).all();
  }

  // Worst-case slack; negative inside.
  double violation(const VectorXd& v) const {
    return (G * v - b).maxCoeff();
  }
};

// Axis-aligned box |v_i| <= half_widths[i]; +inf marks an unconstrained
// coordinate, which must propagate exactly (no large sentinel).
struct Box {
  VectorXd half_widths;

  explicit Box(VectorXd hw) : half_widths(std::move(hw)) {
    for (int i = 0; i < half_widths.size(); ++i) {
      require(half_widths[i] > 0.0, "box_shape",
              "box half-width must be positive (or +inf)");
    }
  }

  static Box unconstrained(int n) {
    return Box(VectorXd::Constant(n, kInf));
  }

  int dim() const { return static_cast<int>(half_widths.size()); }

  bool bounded(int i) const { return std::isfinite(half_widths[i]); }

  bool contains(const VectorXd& v, double tol = 1e-12) const {
    for (int i = 0; i < v.size(); ++i) {
      if (bounded(i) && std::abs(v[i]) > half_widths[i] + tol) return false;
    }
    return true;
  }

  double violation(const VectorXd& v) const {
    double worst = -kInf;
    for (int i = 0; i < v.size(); ++i) {
      if (bounded(i)) worst = std::max(worst, std::abs(v[i]) - half_widths[i]);
    }
    return std::isfinite(worst) ? worst : -kInf;
  }

  VectorXd sample(Rng& rng, double fallback_width = 1.0) const {
    VectorXd v(dim());
    for (int i = 0; i < dim(); ++i) {
      const double w = bounded(i) ? half_widths[i] : fallback_width;
      v[i] = rng.uniform(-w, w);
    }
    return v;
  }
};

// Closed form for max over the affine images M_j * E_j of a' v.
inline double support(const Ellipsoid& e, const MatrixXd& map, const VectorXd& dir) {
  return e.support(map, dir);
}

// One tightened halfspace offset b' = b - sum_j support(E_j, M_j, g'). The
// result may be negative; the caller decides what emptiness means.
inline double tighten_halfspace(
    const Eigen::RowVectorXd& g, double b,
    const std::vector<std::pair<MatrixXd, Ellipsoid>>& images) {
  double out = b;
  const VectorXd dir = g.transpose();
  for (const auto& [map, e] : images) out -= e.support(map, dir);
  return out;
}

// Brute-force check of |sum_i G_i v_i| <= bound over products of ellipsoids,
// used as the sampling oracle for the sufficient-condition LMI. Boundary
// draws only: the maximum of the norm over a product of ellipsoids is
// attained with every factor on its boundary. One-sided: a `true` answer is
// evidence, not proof.
inline bool lemma5_oracle(const std::vector<Ellipsoid>& ellipsoids,
                          const std::vector<MatrixXd>& maps, double bound,
                          Rng& rng, int n_samples = 100000,
                          double tol = 1e-9) {
  require(ellipsoids.size() == maps.size(), "dimension",
          "lemma5_oracle: one map per ellipsoid");
  const int out_dim = maps.empty() ? 0 : static_cast<int>(maps[0].rows());
  for (std::size_t j = 0; j < maps.size(); ++j) {
    require(maps[j].rows() == out_dim, "dimension",
            "lemma5_oracle: inconsistent map output dimensions");
    require(maps[j].cols() == ellipsoids[j].dim(), "dimension",
            "lemma5_oracle: map/ellipsoid dimension mismatch");
    require(ellipsoids[j].dim() <= 4, "dimension",
            "lemma5_oracle: brute-force scale is dims <= 4");
  }
  for (int s = 0; s < n_samples; ++s) {
    VectorXd acc = VectorXd::Zero(out_dim);
    for (std::size_t j = 0; j < maps.size(); ++j) {
      acc += maps[j] * ellipsoids[j].sample_boundary(rng);
    }
    if (acc.norm() > bound + tol) return false;
  }
  return true;
}

}  // namespace deltiss::geom
