#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace deltiss {

inline constexpr const char* kVersion = "0.1.0";

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Domain error with a stable machine-readable kind tag (e.g. "detectability",
// "empty_tightened_set", "setpoint_infeasible"). The CLI maps these to exit
// code 1 and a JSON error record; anything else is a plain bug.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

inline void require(bool cond, const std::string& kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

inline bool all_finite(const Eigen::Ref<const MatrixXd>& m) {
  return m.allFinite();
}

inline double sym_error(const Eigen::Ref<const MatrixXd>& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

// Largest symmetry defect relative to the matrix magnitude.
inline bool is_symmetric(const Eigen::Ref<const MatrixXd>& m, double rel_tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return sym_error(m) <= rel_tol * scale;
}

inline double min_eig_sym(const Eigen::Ref<const MatrixXd>& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Shortest round-trip decimal representation, locale-independent; used for
// every numeric artifact we write so reruns are bitwise reproducible.
inline std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace deltiss
