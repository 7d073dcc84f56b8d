#include "clipmatrix/body/humanoid.hpp"
#include "clipmatrix/body/model_io.hpp"
#include "clipmatrix/body/skinning.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

namespace cm = clipmatrix;
using cm::Vec3d;
using cm::body::BodyParams;
using cm::body::TemplateModel;

namespace {

// A chain of `joints` joints along +x. Vertex j sits on joint j and the
// regressor picks it out exactly; vertex weights are one-hot on their joint.
TemplateModel<double> chain_model(int joints) {
  TemplateModel<double> m;
  for (int j = 0; j < joints; ++j) {
    m.template_vertices.push_back(Vec3d(j, 0, 0));
    m.uv_coords.push_back(cm::Vec2d(0.5, 0.5));
    m.parent.push_back(j - 1);
  }
  m.template_vertices.push_back(Vec3d(0.3, 0.4, 0.0));  // extra vertex used by skinning cases
  m.uv_coords.push_back(cm::Vec2d(0.5, 0.5));
  m.faces = {{{0, 1, static_cast<std::uint32_t>(joints)}}};
  const int n = joints + 1;
  m.joint_regressor = cm::body::RowMatrix<double>::Zero(joints, n);
  m.skin_weights = cm::body::RowMatrix<double>::Zero(n, joints);
  for (int j = 0; j < joints; ++j) {
    m.joint_regressor(j, j) = 1;
    m.skin_weights(j, j) = 1;
  }
  m.skin_weights(joints, 0) = 1;
  return m;
}

// Homogeneous 4x4 chain: G_j = G_parent * T(J_j - J_parent) * R(theta_j).
std::vector<Vec3d> naive_joint_positions(const TemplateModel<double>& m, const std::vector<Vec3d>& rest_joints,
                                         const std::vector<Vec3d>& theta) {
  std::vector<Eigen::Matrix4d> g(m.joint_count());
  std::vector<Vec3d> out;
  for (std::size_t j = 0; j < m.joint_count(); ++j) {
    Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
    const double angle = theta[j].norm();
    if (angle > 0) local.topLeftCorner<3, 3>() = Eigen::AngleAxisd(angle, theta[j] / angle).toRotationMatrix();
    const int p = m.parent[j];
    local.topRightCorner<3, 1>() = p < 0 ? rest_joints[j] : Vec3d(rest_joints[j] - rest_joints[p]);
    g[j] = p < 0 ? local : Eigen::Matrix4d(g[p] * local);
    out.push_back(g[j].topRightCorner<3, 1>());
  }
  return out;
}

}  // namespace

TEST(BlendShape, ZeroParametersReturnTemplateExactly) {
  const auto model = cm::body::make_test_humanoid(1);
  const auto rest = cm::body::blend_shape(model, BodyParams<double>::zeros(model));
  EXPECT_EQ(rest, model.template_vertices);
}

TEST(BlendShape, UniformFieldShiftsEveryVertex) {
  auto model = chain_model(2);
  model.shape_basis = {std::vector<Vec3d>(model.vertex_count(), Vec3d(0.1, 0, 0))};
  auto p = BodyParams<double>::zeros(model);
  p.beta = {2.0};
  const auto rest = cm::body::blend_shape(model, p);
  for (std::size_t i = 0; i < rest.size(); ++i) {
    EXPECT_NEAR(rest[i].x() - model.template_vertices[i].x(), 0.2, 1e-15);
    EXPECT_EQ(rest[i].y(), model.template_vertices[i].y());
  }
}

TEST(BlendShape, DisplacementCancelsShapeOffsets) {
  const auto model = cm::body::make_test_humanoid(1);
  cm::Rng rng(7);
  auto p = BodyParams<double>::zeros(model);
  for (auto& b : p.beta) b = cm::uniform(rng, -1, 1);
  for (std::size_t i = 0; i < model.vertex_count(); ++i) {
    for (std::size_t k = 0; k < model.shape_count(); ++k) p.delta[i] -= p.beta[k] * model.shape_basis[k][i];
  }
  const auto rest = cm::body::blend_shape(model, p);
  for (std::size_t i = 0; i < rest.size(); ++i) EXPECT_LT((rest[i] - model.template_vertices[i]).norm(), 1e-12);
}

TEST(BlendShape, WrongBetaSizeNamesField) {
  const auto model = cm::body::make_test_humanoid(1);
  auto p = BodyParams<double>::zeros(model);
  p.beta.push_back(0);
  try {
    cm::body::blend_shape(model, p);
    FAIL();
  } catch (const cm::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
  }
}

TEST(ForwardKinematics, IdentityPoseIsPureTranslation) {
  const auto model = cm::body::make_test_humanoid(1);
  const std::vector<Vec3d> theta(model.joint_count(), Vec3d::Zero());
  const auto fk = cm::body::forward_kinematics<double>(model, model.template_vertices, theta);
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    EXPECT_EQ(fk.world[j].rotation, cm::Mat3d::Identity());
    EXPECT_LT((fk.world[j].translation - fk.rest_joints[j]).norm(), 1e-12);
  }
}

TEST(ForwardKinematics, TwoLinkQuarterTurn) {
  const auto model = chain_model(2);
  const std::vector<Vec3d> theta{Vec3d(0, 0, cm::kPi / 2), Vec3d::Zero()};
  const auto fk = cm::body::forward_kinematics<double>(model, model.template_vertices, theta);
  EXPECT_LT((fk.world[1].translation - (fk.world[0].translation + Vec3d(0, 1, 0))).norm(), 1e-12);
}

TEST(ForwardKinematics, ThreeJointChainMatchesMatrixProductOracle) {
  const auto model = chain_model(3);
  cm::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3d> theta(3);
    for (auto& t : theta) t = Vec3d(cm::uniform(rng, -2, 2), cm::uniform(rng, -2, 2), cm::uniform(rng, -2, 2));
    const auto fk = cm::body::forward_kinematics<double>(model, model.template_vertices, theta);
    const auto oracle = naive_joint_positions(model, fk.rest_joints, theta);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_LT((fk.world[j].translation - oracle[j]).norm(), 1e-10);
  }
}

TEST(ForwardKinematics, HumanoidMatchesMatrixProductOracle) {
  const auto model = cm::body::make_test_humanoid(1);
  cm::Rng rng(3);
  std::vector<Vec3d> theta(model.joint_count());
  for (auto& t : theta) t = Vec3d(cm::uniform(rng, -1, 1), cm::uniform(rng, -1, 1), cm::uniform(rng, -1, 1));
  const auto fk = cm::body::forward_kinematics<double>(model, model.template_vertices, theta);
  const auto oracle = naive_joint_positions(model, fk.rest_joints, theta);
  for (std::size_t j = 0; j < model.joint_count(); ++j) EXPECT_LT((fk.world[j].translation - oracle[j]).norm(), 1e-10);
}

TEST(Skinning, IdentityPoseIsFixedPoint) {
  const auto model = cm::body::make_test_humanoid(1);
  const auto posed = cm::body::pose_mesh(model, BodyParams<double>::zeros(model));
  for (std::size_t i = 0; i < model.vertex_count(); ++i) {
    EXPECT_LT((posed.vertices[i] - model.template_vertices[i]).norm(), 1e-12);
  }
}

TEST(Skinning, SingleWeightFollowsJointTransform) {
  const auto model = chain_model(2);
  auto p = BodyParams<double>::zeros(model);
  p.theta[0] = Vec3d(0.3, -0.5, 0.9);
  const auto fk = cm::body::forward_kinematics<double>(model, model.template_vertices, p.theta);
  const auto posed = cm::body::skin<double>(model, model.template_vertices, fk);
  const Vec3d v = model.template_vertices.back();
  const Vec3d expected = fk.world[0].rotation * (v - fk.rest_joints[0]) + fk.world[0].translation;
  EXPECT_LT((posed.vertices.back() - expected).norm(), 1e-12);
}

TEST(Skinning, HalfWeightsAverageTranslations) {
  auto model = chain_model(2);
  model.skin_weights.row(2) << 0.5, 0.5;
  cm::body::JointTransforms<double> fk;
  fk.rest_joints = {Vec3d::Zero(), Vec3d(1, 0, 0)};
  const Vec3d t1(0.2, 0.1, 0), t2(-0.4, 0.3, 0.7);
  fk.world = {{cm::Mat3d::Identity(), fk.rest_joints[0] + t1}, {cm::Mat3d::Identity(), fk.rest_joints[1] + t2}};
  const auto posed = cm::body::skin<double>(model, model.template_vertices, fk);
  EXPECT_LT((posed.vertices[2] - (model.template_vertices[2] + 0.5 * (t1 + t2))).norm(), 1e-12);
}

TEST(PoseVjp, ZeroUpstreamGivesZeroGradients) {
  const auto model = cm::body::make_test_humanoid(1);
  auto p = BodyParams<double>::zeros(model);
  p.theta[3] = Vec3d(0.2, 0.1, -0.3);
  const std::vector<Vec3d> upstream(model.vertex_count(), Vec3d::Zero());
  const auto g = cm::body::pose_vjp<double>(model, p, upstream);
  for (double b : g.beta) EXPECT_EQ(b, 0.0);
  for (const auto& t : g.theta) EXPECT_EQ(t, Vec3d::Zero());
  for (const auto& d : g.delta) EXPECT_EQ(d, Vec3d::Zero());
}

TEST(Humanoid, SmallestInstanceIsValid) {
  const auto model = cm::body::make_test_humanoid(1);
  EXPECT_FALSE(cm::body::find_invariant_violation(model).has_value());
  EXPECT_EQ(model.joint_count(), 16u);
  EXPECT_EQ(model.vertex_groups.count("head"), 1u);
}

TEST(Humanoid, SegmentsFiveReachesTargetScale) {
  const auto model = cm::body::make_test_humanoid(5);
  EXPECT_FALSE(cm::body::find_invariant_violation(model).has_value());
  EXPECT_NEAR(static_cast<double>(model.vertex_count()), 10000.0, 1000.0);
  EXPECT_NEAR(static_cast<double>(model.face_count()), 20000.0, 2000.0);
}

TEST(Humanoid, Deterministic) {
  EXPECT_EQ(cm::body::make_test_humanoid(2), cm::body::make_test_humanoid(2));
}

TEST(Humanoid, MirrorSymmetricAboutX) {
  const auto model = cm::body::make_test_humanoid(1);
  for (const auto& v : model.template_vertices) {
    const Vec3d m(-v.x(), v.y(), v.z());
    double best = 1e9;
    for (const auto& w : model.template_vertices) best = std::min(best, (w - m).norm());
    EXPECT_LT(best, 1e-6);
  }
}

TEST(Humanoid, TriangulationMirrorsAboutX) {
  const auto model = cm::body::make_test_humanoid(2);
  std::vector<std::uint32_t> mirror(model.vertex_count());
  for (std::size_t i = 0; i < mirror.size(); ++i) {
    const Vec3d& v = model.template_vertices[i];
    const Vec3d target(-v.x(), v.y(), v.z());
    double best = 1e9;
    for (std::size_t j = 0; j < mirror.size(); ++j) {
      const double d = (model.template_vertices[j] - target).norm();
      if (d < best) {
        best = d;
        mirror[i] = static_cast<std::uint32_t>(j);
      }
    }
    ASSERT_LT(best, 1e-6);
  }
  std::set<std::array<std::uint32_t, 3>> faces;
  for (auto f : model.faces) {
    std::sort(f.begin(), f.end());
    faces.insert(f);
  }
  for (const auto& f : model.faces) {
    std::array<std::uint32_t, 3> m{mirror[f[0]], mirror[f[1]], mirror[f[2]]};
    std::sort(m.begin(), m.end());
    EXPECT_TRUE(faces.count(m));
  }
}

TEST(ModelFile, RoundTrip) {
  const auto model = cm::body::make_test_humanoid(1);
  cm::testing::TempDir dir;
  cm::body::save_model(model, dir / "m.mmx");
  EXPECT_TRUE(cm::body::load_model(dir / "m.mmx") == model);
}

TEST(ModelFile, UnnormalizedSkinWeightRowIsNamed) {
  auto model = cm::body::make_test_humanoid(1);
  model.skin_weights.row(5) *= 0.8;
  try {
    cm::body::parse_model(cm::body::serialize_model(model));
    FAIL();
  } catch (const cm::LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos) << e.what();
  }
}

TEST(ModelFile, TruncatedFileIsRejected) {
  const auto bytes = cm::body::serialize_model(cm::body::make_test_humanoid(1));
  EXPECT_THROW(cm::body::parse_model(bytes.substr(0, bytes.size() - 17)), cm::LoadError);
  EXPECT_THROW(cm::body::parse_model(bytes.substr(0, 10)), cm::LoadError);
}
