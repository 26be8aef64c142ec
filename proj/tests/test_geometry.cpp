#include <catch2/catch_amalgamated.hpp>

#include "deltiss/geometry.hpp"

using namespace deltiss;
using namespace deltiss::geom;
using Catch::Approx;

namespace {

MatrixXd mat2(double a, double b, double c, double d) {
  MatrixXd m(2, 2);
  m << a, b, c, d;
  return m;
}

VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("ellipsoid construction validates the shape matrix") {
  CHECK_THROWS_AS(Ellipsoid(mat2(1, 0.5, 0.1, 1)), Error);   // asymmetric
  CHECK_THROWS_AS(Ellipsoid(mat2(1, 0, 0, -1)), Error);      // indefinite
  CHECK_THROWS_AS(Ellipsoid(mat2(1, 1, 1, 1)), Error);       // singular
  const Ellipsoid e(mat2(4, 0, 0, 1));
  CHECK(e.contains(e.center()));
  CHECK(e.contains(vec2(0.5, 0.0)));
  CHECK_FALSE(e.contains(vec2(0.51, 0.0)));
}

TEST_CASE("support function closed form") {
  const Ellipsoid unit(MatrixXd::Identity(2, 2));
  const MatrixXd I = MatrixXd::Identity(2, 2);
  CHECK(unit.support(I, vec2(1, 0)) == Approx(1.0));
  CHECK(unit.support(MatrixXd::Zero(2, 2), vec2(3, -1)) == Approx(0.0));

  const Ellipsoid e(mat2(4, 0, 0, 1));
  CHECK(e.support(I, vec2(1, 0)) == Approx(0.5));

  // sampling oracle: max over boundary draws approaches the closed form
  Rng rng(7);
  double best = 0.0;
  for (int i = 0; i < 100000; ++i) {
    best = std::max(best, vec2(1, 0).dot(e.sample_boundary(rng)));
  }
  CHECK(best <= 0.5 + 1e-9);
  CHECK(best == Approx(0.5).epsilon(0.02));
}

TEST_CASE("support symmetry and positive homogeneity") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd R(3, 3);
    for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = rng.gaussian();
    const MatrixXd Q = R * R.transpose() + 0.5 * MatrixXd::Identity(3, 3);
    const Ellipsoid e(Q);
    const VectorXd a = rng.gaussian_vector(3);
    const MatrixXd I = MatrixXd::Identity(3, 3);
    CHECK(e.support(I, a) == Approx(e.support(I, -a)));
    const double lam = rng.uniform(0.0, 5.0);
    CHECK(e.support(I, (lam * a).eval()) == Approx(lam * e.support(I, a)).margin(1e-12));
  }
}

TEST_CASE("sampled points are members and cover the set") {
  Rng rng(11);
  const Ellipsoid e(mat2(4, 0, 0, 1));
  for (int i = 0; i < 10000; ++i) {
    CHECK(e.contains(e.sample(rng), 1e-9));
  }
  // max of g'v over samples matches support within 2%
  const VectorXd g = vec2(1.0, 2.0);
  double best = -kInf;
  for (int i = 0; i < 100000; ++i) best = std::max(best, g.dot(e.sample(rng)));
  CHECK(best == Approx(e.support(g)).epsilon(0.02));
}

TEST_CASE("extreme axis scaling keeps samples inside") {
  Rng rng(5);
  const Ellipsoid e(mat2(1e12, 0, 0, 1));
  for (int i = 0; i < 1000; ++i) {
    const VectorXd v = e.sample(rng);
    CHECK(std::abs(v[0]) <= 1e-6 + 1e-12);
    CHECK(e.contains(v, 1e-9));
  }
}

TEST_CASE("tighten_halfspace rowwise Minkowski arithmetic") {
  Eigen::RowVectorXd g(2);
  g << 1, 0;
  const Ellipsoid unit(MatrixXd::Identity(2, 2));
  const MatrixXd I = MatrixXd::Identity(2, 2);
  CHECK(tighten_halfspace(g, 1.0, {{I, unit}}) == Approx(0.0).margin(1e-12));
  CHECK(tighten_halfspace(g, 1.0, {}) == Approx(1.0));

  Eigen::RowVectorXd g2(2);
  g2 << 1, 1;
  const Ellipsoid e(mat2(4, 0, 0, 1));
  const double got = tighten_halfspace(g2, 3.0, {{I, e}, {I, unit}});
  CHECK(got == Approx(3.0 - std::sqrt(0.25 + 1.0) - std::sqrt(2.0)));

  // independent check: sum of sampled support maxima
  Rng rng(23);
  double m1 = 0, m2 = 0;
  for (int i = 0; i < 100000; ++i) {
    m1 = std::max(m1, (g2 * e.sample_boundary(rng)).value());
    m2 = std::max(m2, (g2 * unit.sample_boundary(rng)).value());
  }
  CHECK(got == Approx(3.0 - m1 - m2).epsilon(0.02));
}

TEST_CASE("polytope membership and validation") {
  MatrixXd G(2, 2);
  G << 1, 0, -1, 0;
  VectorXd b(2);
  b << 1, 1;
  const Polytope P(G, b);
  CHECK(P.contains(vec2(0.5, 100.0)));
  CHECK_FALSE(P.contains(vec2(1.5, 0.0)));
  CHECK(P.violation(vec2(1.5, 0.0)) == Approx(0.5));

  MatrixXd Gz(2, 2);
  Gz << 1, 0, 0, 0;
  CHECK_THROWS_AS(Polytope(Gz, b), Error);
}

TEST_CASE("box with infinite half-widths") {
  VectorXd hw(2);
  hw << 1.0, kInf;
  const Box box(hw);
  CHECK(box.contains(vec2(0.5, 1e9)));
  CHECK_FALSE(box.contains(vec2(1.5, 0.0)));
  CHECK(Box::unconstrained(3).contains(VectorXd::Constant(3, 1e12)));
  CHECK_THROWS_AS(Box(vec2(1.0, -2.0)), Error);
}

TEST_CASE("lemma5 oracle on hand-checked instances") {
  Rng rng(101);
  const Ellipsoid e1(MatrixXd::Identity(1, 1));
  const MatrixXd G1 = MatrixXd::Constant(1, 1, 1.0);
  CHECK(lemma5_oracle({e1}, {G1}, 1.0, rng));

  const MatrixXd G2 = MatrixXd::Constant(1, 1, 2.0);
  CHECK_FALSE(lemma5_oracle({e1}, {G2}, 1.0, rng));

  const Ellipsoid b1(MatrixXd::Identity(1, 1)), b2(MatrixXd::Identity(1, 1));
  const MatrixXd G = MatrixXd::Constant(1, 1, 0.4);
  CHECK(lemma5_oracle({b1, b2}, {G, G}, 1.0, rng));  // max is 0.8
}
