#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "skinret/objectives.hpp"
#include "skinret/synthetic.hpp"
#include "test_util.hpp"

using namespace skinret;

namespace {

std::vector<double> flat(const std::vector<Quaternion>& q) {
  std::vector<double> out;
  for (const auto& r : q) out.insert(out.end(), {r.w, r.x, r.y, r.z});
  return out;
}

template <class T>
std::vector<Quat<T>> unflat(std::span<const T> x) {
  std::vector<Quat<T>> q;
  for (std::size_t j = 0; j + 3 < x.size(); j += 4) q.emplace_back(x[j], x[j + 1], x[j + 2], x[j + 3]);
  return q;
}

// Arms swung across the chest so the limbs cut into the torso.
std::vector<Quaternion> hugging_pose(const Skeleton& s) {
  std::vector<Quaternion> q(s.size(), Quaternion::identity());
  q[static_cast<std::size_t>(s.index_of("LeftArm"))] = quat_from_axis_angle({0, 1, 0}, deg2rad(-80));
  q[static_cast<std::size_t>(s.index_of("RightArm"))] = quat_from_axis_angle({0, 1, 0}, deg2rad(80));
  q[static_cast<std::size_t>(s.index_of("LeftForeArm"))] = quat_from_axis_angle({0, 1, 0}, deg2rad(-60));
  q[static_cast<std::size_t>(s.index_of("RightForeArm"))] = quat_from_axis_angle({0, 1, 0}, deg2rad(60));
  return q;
}

}  // namespace

TEST(Weights, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.mu, 10.0);
  EXPECT_EQ(w.nu, 100.0);
  EXPECT_EQ(w.kappa, 0.5);
  EXPECT_EQ(w.iota, 0.5);
  EXPECT_EQ(w.tau, 0.005);
  EXPECT_EQ(w.alpha, 100.0);
  LossWeights bad;
  bad.nu = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.alpha = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Reconstruction, QuaternionTermByHand) {
  const std::vector<Quaternion> a{Quaternion::identity()};
  const std::vector<Quaternion> b{quat_from_axis_angle({0, 0, 1}, std::numbers::pi / 2)};
  const double expect = 2.0 - std::sqrt(2.0);
  EXPECT_NEAR(quaternion_distance<double>(a, b), expect, 1e-15);
  const std::vector<Quaternion> nb{-b[0]};
  EXPECT_NEAR(quaternion_distance<double>(a, nb), expect, 1e-15);
  EXPECT_EQ(quaternion_distance<double>(b, b), 0.0);
  const std::vector<Quaternion> two(2);
  EXPECT_THROW(quaternion_distance<double>(a, two), DimensionError);
}

TEST(Reconstruction, PositionTermByHand) {
  const auto s = testutil::two_joint({0, 1, 0});
  const std::vector<Quaternion> a(2, Quaternion::identity());
  const std::vector<Quaternion> b{quat_from_axis_angle({0, 0, 1}, std::numbers::pi / 2), Quaternion::identity()};
  // Child moves from (0,1,0) to (-1,0,0).
  EXPECT_NEAR(position_distance<double>(s, a, b), 2.0, 1e-15);
  EXPECT_NEAR(reconstruction_loss<double>(s, a, b), 2.0 + 2.0 - std::sqrt(2.0), 1e-15);
  const std::vector<std::vector<Quaternion>> qa{a, a}, qb{a, b};
  EXPECT_NEAR(reconstruction_loss(s, qa, qb), (4.0 - std::sqrt(2.0)) / 2.0, 1e-15);
  EXPECT_THROW(reconstruction_loss(s, {}, {}), UndefinedMean);
}

TEST(RotationConstraint, HingeOnYawBeyondAlpha) {
  const std::vector<Quaternion> q120{quat_from_axis_angle({0, 1, 0}, deg2rad(120))};
  EXPECT_NEAR(rotation_constraint_loss<double>(q120, 100.0), 400.0, 1e-9);
  const std::vector<Quaternion> qm120{quat_from_axis_angle({0, 1, 0}, deg2rad(-120))};
  EXPECT_NEAR(rotation_constraint_loss<double>(qm120, 100.0), 400.0, 1e-9);
  const std::vector<Quaternion> q90{quat_from_axis_angle({0, 1, 0}, deg2rad(90)),
                                    quat_from_axis_angle({1, 0, 0}, deg2rad(60))};
  EXPECT_EQ(rotation_constraint_loss<double>(q90, 100.0), 0.0);
  const std::vector<Quaternion> both{q120[0], qm120[0], q90[0]};
  EXPECT_NEAR(rotation_constraint_loss<double>(both, 100.0), 800.0, 1e-9);
  EXPECT_THROW(rotation_constraint_loss<double>(both, 0.0), ConfigError);
}

TEST(RotationConstraint, GradientMatchesFiniteDifferences) {
  const auto q0 = std::vector<Quaternion>{hamilton_product(quat_from_axis_angle({0, 1, 0}, deg2rad(130)),
                                                           quat_from_axis_angle({1, 0, 0}, deg2rad(20))),
                                          quat_from_axis_angle({0, 1, 0}, deg2rad(-150))};
  auto f = [](auto x) {
    using T = std::remove_cvref_t<decltype(x[0])>;
    const auto q = unflat<T>(x);
    return rotation_constraint_loss<T>(q, 100.0);
  };
  EXPECT_LT(gradcheck(f, flat(q0)).max_rel_error, 1e-6);
}

TEST(GateRegularizer, SumOfSquares) {
  const std::vector<double> w{0.5, 0.25, 1.0};
  EXPECT_DOUBLE_EQ(gate_regularizer<double>(w), 1.3125);
}

TEST(Stage1, TermsCombineWithWeights) {
  const auto a = make_skeleton(armfold_family()[0]);
  const auto b = make_skeleton(armfold_family()[1]);
  std::mt19937_64 rng(51);
  const auto cp = testutil::random_pose(rng, 22, 40.0);
  auto g = cp;
  g[3] = quat_from_axis_angle({0, 1, 0}, deg2rad(140));
  const LossWeights w;
  const auto cross = stage1_objective<double>(a, b, cp, g, false, w);
  EXPECT_EQ(cross.rec, 0.0);
  EXPECT_NEAR(cross.rot, 1600.0, 1e-7);
  EXPECT_NEAR(cross.sem, semantics_loss(forward_kinematics(a, cp), a.height(), forward_kinematics(b, g), b.height()),
              1e-15);
  EXPECT_NEAR(cross.total, w.mu * cross.rot + w.nu * cross.sem, 1e-9);
  const auto self = stage1_objective<double>(a, a, cp, g, true, w);
  EXPECT_NEAR(self.rec, reconstruction_loss<double>(a, cp, g), 1e-15);
  EXPECT_NEAR(self.total, self.rec + w.mu * self.rot + w.nu * self.sem, 1e-9);
  EXPECT_EQ(loss_term_names().size(), loss_term_values(self).size());
}

TEST(Stage1, GradientMatchesFiniteDifferences) {
  const auto a = make_skeleton(armfold_family()[0]);
  const auto b = make_skeleton(armfold_family()[1]);
  std::mt19937_64 rng(52);
  const auto cp = testutil::random_pose(rng, 22, 40.0);
  auto g = testutil::random_pose(rng, 22, 40.0);
  g[5] = quat_from_axis_angle({0, 1, 0}, deg2rad(125));
  auto f = [&](auto x) {
    using T = std::remove_cvref_t<decltype(x[0])>;
    const auto q = unflat<T>(x);
    return stage1_objective<T>(a, b, cp, q, true, LossWeights{}).total;
  };
  // The hinge term puts f near 6e3, so differences carry ~1e-6 roundoff.
  GradcheckOptions o;
  o.floor = 0.1;
  EXPECT_LT(gradcheck(f, flat(g), o).max_rel_error, 1e-5);
}

class GeometryObjective : public ::testing::Test {
 protected:
  GeometryObjective() : c(make_character(penetration_family()[1])), scene(c.skeleton, *c.mesh) {}
  Character c;
  GeometryScene scene;
};

TEST_F(GeometryObjective, FieldCacheReusesIdenticalPoses) {
  FieldCache cache;
  const auto q = hugging_pose(c.skeleton);
  const auto f1 = cache.get(scene, q);
  const auto f2 = cache.get(scene, q);
  EXPECT_EQ(f1.get(), f2.get());
  EXPECT_EQ(cache.size(), 1u);
  auto q2 = q;
  q2[static_cast<std::size_t>(c.skeleton.index_of("Spine"))] = quat_from_axis_angle({1, 0, 0}, deg2rad(10));
  EXPECT_NE(cache.get(scene, q2).get(), f1.get());
  EXPECT_EQ(cache.size(), 2u);
  // Arm rotations do not move body vertices, so the field is shared.
  auto q3 = q;
  q3[static_cast<std::size_t>(c.skeleton.index_of("LeftForeArm"))] = Quaternion::identity();
  EXPECT_EQ(cache.get(scene, q3).get(), f1.get());
}

TEST_F(GeometryObjective, HuggingArmsPenetrate) {
  FieldCache cache;
  const auto q = hugging_pose(c.skeleton);
  const auto fields = cache.get(scene, q);
  const auto rest = std::vector<Quaternion>(c.skeleton.size(), Quaternion::identity());
  const auto hug = stage2_geometry_objective<double>(scene, fields.get(), q, q, LossWeights{});
  EXPECT_GT(hug.rep, 0.0);
  EXPECT_EQ(hug.rec, 0.0);
  const auto rest_fields = cache.get(scene, rest);
  const auto open = stage2_geometry_objective<double>(scene, rest_fields.get(), rest, rest, LossWeights{});
  EXPECT_EQ(open.rep, 0.0);
  EXPECT_THROW(stage2_geometry_objective<double>(scene, nullptr, q, q, LossWeights{}), ConfigError);
}

TEST_F(GeometryObjective, GeometryGradientMatchesFiniteDifferences) {
  FieldCache cache;
  const auto q = hugging_pose(c.skeleton);
  const auto fields = cache.get(scene, q);
  std::mt19937_64 rng(53);
  auto geo = q;
  for (auto& r : geo) r = hamilton_product(r, testutil::small_quat(rng, 5.0));
  LossWeights w;
  w.kappa = 100.0;
  auto f = [&](auto x) {
    using T = std::remove_cvref_t<decltype(x[0])>;
    const auto qg = unflat<T>(x);
    return stage2_geometry_objective<T>(scene, fields.get(), q, qg, w).total;
  };
  GradcheckOptions o;
  o.max_coords = 40;
  o.floor = 1e-3;
  EXPECT_LT(gradcheck(f, flat(geo), o).max_rel_error, 1e-4);
}

TEST_F(GeometryObjective, GateEndpointsAndGradient) {
  FieldCache cache;
  const auto gamma = hugging_pose(c.skeleton);
  const auto fields = cache.get(scene, gamma);
  std::mt19937_64 rng(54);
  auto geo = gamma;
  for (auto& r : geo) r = hamilton_product(r, testutil::small_quat(rng, 15.0));
  const std::vector<double> zero(22, 0.0), one(22, 1.0);
  const LossWeights lw;
  const auto at0 = stage2_gate_objective<double>(scene, fields.get(), gamma, geo, zero, lw);
  EXPECT_NEAR(at0.rec, reconstruction_loss<double>(c.skeleton, geo, gamma), 1e-12);
  EXPECT_EQ(at0.reg, 0.0);
  const auto at1 = stage2_gate_objective<double>(scene, fields.get(), gamma, geo, one, lw);
  EXPECT_EQ(at1.rec, 0.0);
  EXPECT_DOUBLE_EQ(at1.reg, 22.0);
  EXPECT_NEAR(at1.total, at1.rot * lw.mu + at1.rep * lw.kappa + at1.att * lw.iota + at1.reg * lw.tau, 1e-12);
  std::vector<double> w0(22);
  for (auto& x : w0) x = testutil::uniform(rng, 0.2, 0.8);
  auto f = [&](auto x) {
    using T = std::remove_cvref_t<decltype(x[0])>;
    return stage2_gate_objective<T>(scene, fields.get(), gamma, geo, x, lw).total;
  };
  GradcheckOptions o;
  o.floor = 1e-3;
  EXPECT_LT(gradcheck(f, w0, o).max_rel_error, 1e-4);
}

TEST(Blend, EndpointsAndSizeCheck) {
  std::mt19937_64 rng(55);
  const auto a = testutil::random_pose(rng, 3), b = testutil::random_pose(rng, 3);
  const std::vector<double> w{0.0, 1.0, 0.5};
  const auto q = blend_rotations<double>(a, b, w);
  EXPECT_TRUE(q[0] == a[0]);
  EXPECT_TRUE(q[1] == b[1]);
  const std::vector<double> w2{0.0};
  EXPECT_THROW(blend_rotations<double>(a, b, w2), DimensionError);
}
