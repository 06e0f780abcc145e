#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <set>

#include "scenefit/geometry.hpp"
#include "test_util.hpp"

namespace scenefit {
namespace {

using testing::numerical_jacobian;
using testing::relative_error;

BodyFrameHull box_hull(const Vec3& lo, const Vec3& hi) {
  BodyFrameHull h;
  for (int i = 0; i < 8; ++i)
    h.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  return h;
}

Vec3 random_theta(std::mt19937_64& rng, double max_norm) {
  std::uniform_real_distribution<double> u(0.0, max_norm);
  return testing::random_unit(rng) * u(rng);
}

TEST(Rodrigues, IdentityAndGenerators) {
  const auto rot = rodrigues_derivatives(Vec3::Zero());
  EXPECT_TRUE(rot.rotation.isApprox(Mat3::Identity(), 1e-15));
  EXPECT_TRUE(rot.first[0].isApprox(cross_matrix(Vec3::UnitX()), 1e-15));
  EXPECT_TRUE(rot.first[1].isApprox(cross_matrix(Vec3::UnitY()), 1e-15));
  EXPECT_TRUE(rot.first[2].isApprox(cross_matrix(Vec3::UnitZ()), 1e-15));
}

TEST(Rodrigues, QuarterTurnAboutZ) {
  const Mat3 r = rodrigues(Vec3(0, 0, std::numbers::pi / 2));
  EXPECT_LT((r * Vec3::UnitX() - Vec3::UnitY()).norm(), 1e-15);
}

TEST(Rodrigues, OrthonormalEverywhere) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 theta = random_theta(rng, i % 2 ? 1e-3 : 6.0);
    const Mat3 r = rodrigues(theta);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(Rodrigues, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  double worst1 = 0.0, worst2 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    // Include samples on both sides of the series switch.
    const Vec3 theta = random_theta(rng, i % 3 == 0 ? 0.6 : 3.0);
    const auto rot = rodrigues_derivatives(theta);
    auto flat_r = [](const VectorXd& th) {
      const Mat3 r = rodrigues(th);
      return VectorXd(Eigen::Map<const VectorXd>(r.data(), 9));
    };
    const MatrixXd num = numerical_jacobian(flat_r, theta);
    MatrixXd ana(9, 3);
    for (int a = 0; a < 3; ++a) ana.col(a) = Eigen::Map<const VectorXd>(rot.first[a].data(), 9);
    worst1 = std::max(worst1, relative_error(ana, num));

    auto flat_dr = [](const VectorXd& th) {
      const auto d = rodrigues_derivatives(th);
      VectorXd out(27);
      for (int a = 0; a < 3; ++a) out.segment(9 * a, 9) = Eigen::Map<const VectorXd>(d.first[a].data(), 9);
      return out;
    };
    const MatrixXd num2 = numerical_jacobian(flat_dr, theta);
    MatrixXd ana2(27, 3);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) ana2.block(9 * a, b, 9, 1) = Eigen::Map<const VectorXd>(rot.second[a][b].data(), 9);
    worst2 = std::max(worst2, relative_error(ana2, num2));
  }
  EXPECT_LE(worst1, 1e-6);
  EXPECT_LE(worst2, 1e-6);
}

TEST(Pose, CanonicalizeKeepsRotation) {
  Pose p;
  p.theta = Vec3(0.3, -0.2, 1.0).normalized() * 4.0;
  const Mat3 before = p.rotation();
  p.canonicalize();
  EXPECT_LT(p.theta.norm(), std::numbers::pi);
  EXPECT_TRUE(p.rotation().isApprox(before, 1e-12));
}

TEST(TransformVertex, SimpleCases) {
  EXPECT_TRUE(transform_vertex(Pose{}, Vec3(1, 2, 3)).world.isApprox(Vec3(1, 2, 3)));
  Pose shifted;
  shifted.t = Vec3(0, 0, 5);
  EXPECT_TRUE(transform_vertex(shifted, Vec3(1, 0, 0)).world.isApprox(Vec3(1, 0, 5)));
}

TEST(TransformVertex, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    VectorXd z(9);
    z.head<3>() = random_theta(rng, 3.0);
    for (int k = 3; k < 9; ++k) z[k] = n(rng);
    auto f = [](const VectorXd& v) {
      Pose p;
      p.theta = v.head<3>();
      p.t = v.segment<3>(3);
      return VectorXd(transform_vertex(p, v.tail<3>()).world);
    };
    Pose p;
    p.theta = z.head<3>();
    p.t = z.segment<3>(3);
    const auto tv = transform_vertex(p, z.tail<3>());
    MatrixXd ana(3, 9);
    ana << tv.d_theta, tv.d_t, tv.d_x;
    worst = std::max(worst, relative_error(ana, numerical_jacobian(f, z)));
  }
  EXPECT_LE(worst, 1e-6);
}

bool is_closed_manifold(const TriangulatedBoundary& b) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : b.triangles)
    for (int e = 0; e < 3; ++e) directed[{t[e], t[(e + 1) % 3]}]++;
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

TEST(HullBoundary, Tetrahedron) {
  BodyFrameHull h{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}};
  const auto b = hull_boundary(h, Pose{});
  EXPECT_EQ(b.triangles.size(), 4u);
  EXPECT_TRUE(is_closed_manifold(b));
  EXPECT_NEAR(b.volume(), 1.0 / 6.0, 1e-14);
}

TEST(HullBoundary, UnitCube) {
  const auto b = hull_boundary(box_hull(Vec3(0, 0, 0), Vec3(1, 1, 1)), Pose{});
  EXPECT_EQ(b.triangles.size(), 12u);
  EXPECT_NEAR(b.area(), 6.0, 1e-12);
  EXPECT_NEAR(b.volume(), 1.0, 1e-12);
  EXPECT_TRUE(is_closed_manifold(b));
}

TEST(HullBoundary, SpherePointsAreAllExtreme) {
  std::mt19937_64 rng(5);
  BodyFrameHull h;
  for (int i = 0; i < 50; ++i) h.vertices.push_back(testing::random_unit(rng));
  // Certificate for extremeness: direction p separates p from every other point.
  for (std::size_t i = 0; i < h.vertices.size(); ++i)
    for (std::size_t j = 0; j < h.vertices.size(); ++j)
      if (i != j) ASSERT_GT(h.vertices[i].dot(h.vertices[i]), h.vertices[i].dot(h.vertices[j]));
  const auto b = hull_boundary(h, Pose{});
  std::set<int> used;
  for (const auto& t : b.triangles) used.insert(t.begin(), t.end());
  EXPECT_EQ(used.size(), 50u);
  EXPECT_TRUE(is_closed_manifold(b));
  EXPECT_EQ(b.triangles.size(), 2u * 50u - 4u);  // Euler, simplicial sphere
}

TEST(HullBoundary, CoplanarThrows) {
  BodyFrameHull h{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 5e-10)}};
  try {
    hull_boundary(h, Pose{});
    FAIL() << "expected DegenerateHull";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateHull);
  }
}

TEST(ClosestPointOnMesh, SimpleCases) {
  TriangulatedBoundary square;
  square.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  square.triangles = {{0, 1, 2}, {0, 2, 3}};
  auto on_face = closest_point_on_mesh(Vec3(0.7, 0.2, 0.0), square);
  EXPECT_LT((on_face.point - Vec3(0.7, 0.2, 0.0)).norm(), 1e-15);
  EXPECT_NEAR(on_face.distance, 0.0, 1e-15);
  auto above = closest_point_on_mesh(Vec3(0, 0, 2), square);
  EXPECT_LT(above.point.norm(), 1e-15);
  EXPECT_NEAR(above.distance, 2.0, 1e-15);
}

// Dense area-uniform-ish sampling of a triangle set (grid in barycentric coordinates).
std::vector<Vec3> dense_samples(const TriangulatedBoundary& b, int res) {
  std::vector<Vec3> out;
  for (const auto& t : b.triangles)
    for (int i = 0; i <= res; ++i)
      for (int j = 0; i + j <= res; ++j) {
        const double u = double(i) / res, v = double(j) / res;
        out.push_back((1 - u - v) * b.vertices[t[0]] + u * b.vertices[t[1]] + v * b.vertices[t[2]]);
      }
  return out;
}

TEST(ClosestPointOnMesh, MatchesDenseSampling) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const auto b = hull_boundary(box_hull(Vec3(-0.5, -0.3, -0.2), Vec3(0.5, 0.3, 0.2)), Pose{Vec3(0.2, 0.4, -0.1), Vec3(0.1, 0, 0)});
  const int res = 60;
  const auto samples = dense_samples(b, res);
  const double resolution = 1.2 / res;  // longest triangle edge / res
  for (int q = 0; q < 100; ++q) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const auto exact = closest_point_on_mesh(p, b);
    double brute = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) brute = std::min(brute, (s - p).norm());
    EXPECT_GE(brute, exact.distance - 1e-12);
    EXPECT_LE(brute - exact.distance, resolution);
  }
}

RigidBody make_body(std::vector<BodyFrameHull> hulls, Pose pose = {}) {
  RigidBody b;
  b.hulls = std::move(hulls);
  b.pose = pose;
  return b;
}

TEST(UnionBoundary, SingleHullReducesToMesh) {
  const auto body = make_body({box_hull(Vec3(0, 0, 0), Vec3(1, 1, 1))});
  const Vec3 p(1.5, 0.3, 2.0);
  const auto u = closest_point_on_union_boundary(p, body);
  const auto m = closest_point_on_mesh(p, hull_boundary(body.hulls[0], body.pose));
  EXPECT_NEAR(u.distance, m.distance, 1e-15);
  EXPECT_LT((u.point - m.point).norm(), 1e-15);
}

TEST(UnionBoundary, SeamPointNotInsideSibling) {
  const auto body = make_body({box_hull(Vec3(0, 0, 0), Vec3(1, 1, 1)), box_hull(Vec3(0.6, 0, 0), Vec3(1.6, 1, 1))});
  const auto ub = UnionBoundary::of(body);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(0.8 + u(rng), 0.5 + u(rng), 1.05 + std::abs(u(rng)));
    const auto c = closest_point_on_union_boundary(p, ub);
    for (std::size_t s = 0; s < ub.hulls.size(); ++s) {
      if (static_cast<int>(s) == c.hull) continue;
      EXPECT_GE(ub.half_spaces[s].signed_distance_bound(c.point), -1e-9);
    }
  }
}

TEST(UnionBoundary, LShapeMatchesDenseSamplingAndBarycentrics) {
  const Pose pose{Vec3(0.1, -0.2, 0.3), Vec3(0.5, 0.0, -0.2)};
  const auto body = make_body({box_hull(Vec3(0, 0, 0), Vec3(2, 0.5, 0.5)), box_hull(Vec3(0, 0, 0), Vec3(0.5, 0.5, 2))}, pose);
  const auto ub = UnionBoundary::of(body);
  const int res = 80;
  std::vector<Vec3> samples;
  for (std::size_t j = 0; j < ub.hulls.size(); ++j)
    for (const auto& s : dense_samples(ub.hulls[j], res)) {
      bool inside_other = false;
      for (std::size_t o = 0; o < ub.hulls.size(); ++o)
        if (o != j && ub.half_spaces[o].signed_distance_bound(s) < -1e-9) inside_other = true;
      if (!inside_other) samples.push_back(s);
    }
  const double resolution = std::sqrt(2.0 * 2.0 + 0.5 * 0.5) / res;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  int queries = 0;
  while (queries < 200) {
    const Vec3 p = pose.apply(Vec3(u(rng), u(rng), u(rng)));
    bool inside = false;
    for (const auto& h : ub.half_spaces) inside |= h.signed_distance_bound(p) < 0.0;
    if (inside) continue;
    ++queries;
    const auto c = closest_point_on_union_boundary(p, ub);
    double brute = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) brute = std::min(brute, (s - p).norm());
    EXPECT_GE(brute, c.distance - 1e-12);
    EXPECT_LE(brute - c.distance, resolution);

    // Barycentric reconstruction from the hull's own world vertices.
    const auto world = world_vertices(body, c.hull);
    Vec3 rebuilt = Vec3::Zero();
    for (int m = 0; m < 3; ++m) rebuilt += c.weights[m] * world[c.vertices[m]];
    EXPECT_LT((rebuilt - c.point).norm(), 1e-12);
    EXPECT_GE(c.weights.minCoeff(), 0.0);
    EXPECT_NEAR(c.weights.sum(), 1.0, 1e-14);
  }
}

}  // namespace
}  // namespace scenefit
