#include <gtest/gtest.h>

#include "skinret/meshgen.hpp"
#include "skinret/metrics.hpp"
#include "skinret/synthetic.hpp"

using namespace skinret;

namespace {

// Axis-aligned unit cube [0,1]^3, outward winding.
TriMesh unit_cube() {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  m.triangles = {{0, 3, 2}, {0, 2, 1}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                 {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
  return m;
}

MotionSequence still(const Skeleton& s, std::size_t frames, Vec3d velocity = {}) {
  MotionSequence m;
  m.joint_names = s.joint_names();
  m.fps = 30.0;
  for (std::size_t t = 0; t < frames; ++t) {
    MotionFrame f;
    f.root.linear_velocity = velocity;
    f.rotations.assign(s.size(), Quaternion::identity());
    m.frames.push_back(f);
  }
  return m;
}

}  // namespace

TEST(PositionMse, UniformShiftIsGlobalOnly) {
  const std::vector<std::vector<Vec3d>> ref{{{0, 0, 0}, {0, 1, 0}}, {{1, 0, 0}, {1, 1, 0}}};
  auto res = ref;
  for (auto& f : res)
    for (auto& p : f) p += Vec3d{1, 0, 0};
  const auto r = position_mse(res, ref, 2.0);
  EXPECT_DOUBLE_EQ(r.mse, 0.25);
  EXPECT_DOUBLE_EQ(r.local_mse, 0.0);
  EXPECT_EQ(r.per_frame, (std::vector<double>{0.25, 0.25}));
}

TEST(PositionMse, SingleJointError) {
  const std::vector<std::vector<Vec3d>> ref{{{0, 0, 0}, {0, 1, 0}}, {{0, 0, 0}, {0, 1, 0}}};
  auto res = ref;
  res[1][1] = {0, 3, 0};
  const auto r = position_mse(res, ref, 1.0);
  // Frame 1: (0 + 4) / 2 joints; overall 4 / 4 entries.
  EXPECT_EQ(r.per_frame, (std::vector<double>{0.0, 2.0}));
  EXPECT_DOUBLE_EQ(r.mse, 1.0);
  EXPECT_DOUBLE_EQ(r.local_mse, 1.0);
}

TEST(PositionMse, Errors) {
  const std::vector<std::vector<Vec3d>> one{{{0, 0, 0}}};
  EXPECT_THROW(position_mse({}, {}, 1.0), UndefinedMean);
  EXPECT_THROW(position_mse(one, {}, 1.0), DimensionError);
  EXPECT_THROW(position_mse(one, {{{0, 0, 0}, {1, 1, 1}}}, 1.0), DimensionError);
  EXPECT_THROW(position_mse(one, one, 0.0), InvalidSkeleton);
}

TEST(PositionMse, MotionOfItselfIsZero) {
  const auto s = make_skeleton(CharacterParams{});
  const auto m = make_motion(s, MotionParams{MotionStyle::kArmFold, 8, 30.0, 2});
  const auto r = eval_mse(m, m, s);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.local_mse, 0.0);
  EXPECT_THROW(eval_mse(m, still(s, 3), s), DimensionError);
}

TEST(Penetration, FivePointsOfFifty) {
  const auto cube = unit_cube();
  std::vector<Vec3d> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({0.1 + 0.2 * i, 0.5, 0.5});
  for (int i = 0; i < 45; ++i) pts.push_back({1.5 + 0.01 * i, 0.5, 0.5});
  EXPECT_DOUBLE_EQ(penetration_rate(pts, cube.vertices, cube.triangles), 10.0);
}

TEST(Penetration, CapsuleInsideSphere) {
  const auto sphere = icosphere(3, 1.0);
  const auto cap = capsule({0, -0.3, 0}, {0, 0.3, 0}, 0.2);
  EXPECT_DOUBLE_EQ(penetration_rate(cap.vertices, sphere.vertices, sphere.triangles), 100.0);
  const auto far = capsule({3, -0.3, 0}, {3, 0.3, 0}, 0.2);
  EXPECT_DOUBLE_EQ(penetration_rate(far.vertices, sphere.vertices, sphere.triangles), 0.0);
}

TEST(Penetration, RequiresPointsAndClosedSurface) {
  const auto cube = unit_cube();
  EXPECT_THROW(penetration_rate({}, cube.vertices, cube.triangles), UndefinedMean);
  auto open = cube;
  open.triangles.pop_back();
  const std::vector<Vec3d> p{{0.5, 0.5, 0.5}};
  EXPECT_THROW(penetration_rate(p, open.vertices, open.triangles), NonWatertight);
}

TEST(Contact, HandsHoveringAtFiveCentimetres) {
  const auto cube = unit_cube();
  const std::vector<Vec3d> hands{{0.5, 0.5, 1.05}, {-0.05, 0.3, 0.7}, {0.2, 1.05, 0.9}};
  EXPECT_NEAR(mean_surface_distance(hands, cube.vertices, cube.triangles), 0.05, 1e-15);
  EXPECT_THROW(mean_surface_distance({}, cube.vertices, cube.triangles), UndefinedMean);
}

TEST(CharacterMetrics, RestPoseIsClear) {
  const auto c = make_character(penetration_family()[0]);
  const auto m = still(c.skeleton, 2);
  const auto p = eval_penetration(m, c);
  EXPECT_EQ(p.per_frame.size(), 2u);
  EXPECT_EQ(p.mean, 0.0);
  const auto d = eval_contact(m, c);
  EXPECT_GT(d.mean, 0.0);
  EXPECT_EQ(d.per_frame[0], d.per_frame[1]);
  Character bare("bare", c.skeleton);
  EXPECT_THROW(eval_penetration(m, bare), ConfigError);
  EXPECT_THROW(eval_contact(m, bare), ConfigError);
}

TEST(Trace, StaticAndLinear) {
  const auto s = make_skeleton(CharacterParams{});
  const auto rest = s.rest_positions()[static_cast<std::size_t>(s.index_of("LeftHand"))].y;
  const auto a = end_effector_trace(still(s, 4), s, "LeftHand");
  EXPECT_EQ(a, (std::vector<double>(4, rest)));
  const auto b = end_effector_trace(still(s, 4, {0.3, 0.01, 0.0}), s, "LeftHand");
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(b[t], rest + 0.01 * static_cast<double>(t + 1), 1e-15);
  EXPECT_THROW(end_effector_trace(still(s, 1), s, "Tail"), ValidationError);
}
