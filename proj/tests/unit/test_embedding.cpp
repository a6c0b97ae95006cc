#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "rayemb/embedding.hpp"
#include "rayemb/error.hpp"
#include "rayemb/subspace.hpp"
#include "test_util.hpp"

using namespace rayemb;
using rayemb::testing::random_rigid;
using rayemb::testing::random_unit;
using rayemb::testing::TempDir;

namespace {

CameraModel tiny_camera(int size = 16) {
  CameraModel c;
  c.focal_mm = 1000.0;
  c.width = size;
  c.height = size;
  c.pixel_mm = 2.0;
  c.principal_px = {(size - 1) / 2.0, (size - 1) / 2.0};
  return c;
}

DetectorImage blank(int w, int h, double value = 0.0) {
  DetectorImage img;
  img.width = w;
  img.height = h;
  img.values.assign(static_cast<std::size_t>(w) * h, value);
  return img;
}

DetectorImage random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DetectorImage img = blank(w, h);
  for (auto& x : img.values) x = u(rng);
  return img;
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no rayemb::Error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Plucker, MomentIsOriginCrossDirection) {
  const Ray r{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(0, 0, 1)};
  const Vector6d p = plucker(r);
  EXPECT_EQ(p.head<3>(), Eigen::Vector3d(0, 0, 1));
  EXPECT_EQ(p.tail<3>(), Eigen::Vector3d(2, -1, 0));
}

TEST(Plucker, MomentIndependentOfPointOnLine) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d o = random_unit(rng) * 50.0;
    const Eigen::Vector3d d = random_unit(rng);
    const Vector6d a = plucker({o, d});
    const Vector6d b = plucker({o + 37.5 * d, d});
    EXPECT_LT((a - b).norm(), 1e-10);
  }
}

TEST(OracleProvider, MatchesIndependentComputation) {
  std::mt19937_64 rng(11);
  const CameraModel cam = tiny_camera(12);
  const auto provider = oracle_plucker_provider();
  EXPECT_EQ(provider->dim(), 6);
  EXPECT_TRUE(provider->needs_pose());
  EXPECT_EQ(provider->name(), "oracle");
  for (int trial = 0; trial < 5; ++trial) {
    const PoseSE3 pose = random_rigid(rng, 3.0, 200.0);
    const EmbeddingMap map = embed_image(*provider, blank(12, 12), cam, pose);
    ASSERT_EQ(map.width, 12);
    ASSERT_EQ(map.dim, 6);
    map.validate(true);
    const Eigen::Matrix3d rt = pose.rotation().transpose();
    const Eigen::Vector3d centre = -rt * pose.translation();
    for (int v = 0; v < 12; ++v) {
      for (int u = 0; u < 12; ++u) {
        const Eigen::Vector3d dc((u - cam.principal_px.x()) * cam.pixel_mm, (v - cam.principal_px.y()) * cam.pixel_mm,
                                 cam.focal_mm);
        const Eigen::Vector3d d = (rt * dc).normalized();
        Vector6d e;
        e << d, centre.cross(d);
        e.normalize();
        for (int c = 0; c < 6; ++c) EXPECT_NEAR(map.at(u, v)[c], e[c], 1e-6);
      }
    }
  }
}

TEST(OracleProvider, MomentScaleDividesMoment) {
  const CameraModel cam = tiny_camera(4);
  const PoseSE3 pose(so3_exp(Eigen::Vector3d(0.1, -0.2, 0.3)), Eigen::Vector3d(10, 20, 500));
  const auto plain = embed_image(*oracle_plucker_provider(), blank(4, 4), cam, pose);
  const auto scaled = embed_image(*make_provider("oracle:100"), blank(4, 4), cam, pose);
  EXPECT_EQ(make_provider("oracle:100")->name(), "oracle:100");
  for (int v = 0; v < 4; ++v) {
    for (int u = 0; u < 4; ++u) {
      Vector6d a, b;
      for (int c = 0; c < 6; ++c) a[c] = plain.at(u, v)[c], b[c] = scaled.at(u, v)[c];
      a.tail<3>() /= 100.0;
      a.normalize();
      EXPECT_LT((a - b).norm(), 1e-6);
    }
  }
}

TEST(OracleProvider, StrideUsesCellCentres) {
  const CameraModel cam = tiny_camera(16);
  const PoseSE3 pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 400));
  const auto map = embed_image(*oracle_plucker_provider(4), blank(16, 16), cam, pose);
  EXPECT_EQ(map.width, 4);
  EXPECT_EQ(map.grid_stride_px, 4);
  EXPECT_EQ(map.cell_center_px(0, 0), Eigen::Vector2d(1.5, 1.5));
  const Ray r = backproject(cam, pose, {5.5, 9.5});
  Vector6d e = plucker(r).normalized();
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(map.at(1, 2)[c], e[c], 1e-6);
}

TEST(OracleProvider, Errors) {
  const CameraModel cam = tiny_camera(8);
  EXPECT_EQ(code_of([&] { embed_image(*oracle_plucker_provider(), blank(8, 8), cam, std::nullopt); }),
            ErrorCode::kMissingPose);
  EXPECT_EQ(code_of([&] { embed_image(*oracle_plucker_provider(), blank(9, 8), cam, PoseSE3::identity()); }),
            ErrorCode::kSizeMismatch);
  EXPECT_EQ(code_of([] { oracle_plucker_provider(0); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { make_provider("oracle:abc"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { make_provider("oracle:-3"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { make_provider("resnet"); }), ErrorCode::kInvalidArgument);
}

TEST(OracleSubspace, RaysThroughPointSpanRankThree) {
  const Eigen::Vector3d x(1, 2, 3);
  Eigen::MatrixXd f(6, 3);
  f.col(0) = plucker({x, Eigen::Vector3d::UnitX()});
  f.col(1) = plucker({x, Eigen::Vector3d::UnitY()});
  f.col(2) = plucker({x, Eigen::Vector3d::UnitZ()});
  const LandmarkSubspace s = subspace_from_columns(f);
  EXPECT_EQ(s.rank(), 3);
  const Eigen::Vector3d d4 = Eigen::Vector3d(1, 1, 1).normalized();
  EXPECT_NEAR(subspace_similarity(s.basis, plucker({x - 5.0 * d4, d4})), 1.0, 1e-9);
  const Eigen::Vector3d y(1, 2, 4);
  EXPECT_LT(subspace_similarity(s.basis, plucker({y, d4})), 1.0 - 1e-6);
}

TEST(OracleSubspace, FourRaysThroughPointStayRankThree) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d x = random_unit(rng) * 80.0;
    Eigen::MatrixXd f(6, 6);
    for (int k = 0; k < 6; ++k) f.col(k) = plucker({x, random_unit(rng)}).normalized();
    EXPECT_EQ(subspace_from_columns(f).rank(), 3);
  }
}

TEST(PatchProvider, DimensionAndNormalisation) {
  const auto p = patch_descriptor_provider(3, {1, 2, 4});
  EXPECT_EQ(p->dim(), 3 * (2 + 8));
  EXPECT_FALSE(p->needs_pose());
  const DetectorImage img = random_image(24, 20, 7);
  const EmbeddingMap map = embed_image(*p, img, tiny_camera(1).resized(24, 20), std::nullopt);
  EXPECT_EQ(map.width, 24);
  EXPECT_EQ(map.height, 20);
  EXPECT_EQ(map.dim, 30);
  map.validate(true);
}

TEST(PatchProvider, ConstantImageIsUniform) {
  const auto p = patch_descriptor_provider(2, {1, 2});
  const EmbeddingMap map = embed_image(*p, blank(10, 10, 3.0), tiny_camera(10), std::nullopt);
  map.validate(true);
  for (int v = 0; v < 10; ++v)
    for (int u = 0; u < 10; ++u)
      for (int c = 0; c < map.dim; ++c) EXPECT_EQ(map.at(u, v)[c], map.at(0, 0)[c]);
}

TEST(PatchProvider, Deterministic) {
  const auto p = patch_descriptor_provider(3, {1, 2});
  const DetectorImage img = random_image(16, 16, 3);
  const auto a = embed_image(*p, img, tiny_camera(16), std::nullopt);
  const auto b = embed_image(*p, img, tiny_camera(16), std::nullopt);
  EXPECT_EQ(a.vectors, b.vectors);
}

TEST(PatchProvider, TranslationEquivariantAwayFromBorder) {
  const int w = 64, shift = 10;
  const DetectorImage base = random_image(w, w, 5);
  DetectorImage moved = blank(w, w);
  for (int v = 0; v < w; ++v)
    for (int u = 0; u < w; ++u) moved.at(u, v) = base.at((u - shift + w) % w, v);
  // Same min/max so the normalisation agrees.
  const auto p = patch_descriptor_provider(2, {1, 2});
  const auto a = embed_image(*p, base, tiny_camera(w), std::nullopt);
  const auto b = embed_image(*p, moved, tiny_camera(w), std::nullopt);
  const int margin = 2 * 2 + 2;
  for (int v = margin; v < w - margin; ++v)
    for (int u = margin + shift; u < w - margin; ++u)
      for (int c = 0; c < a.dim; ++c) EXPECT_NEAR(b.at(u, v)[c], a.at(u - shift, v)[c], 1e-6);
}

TEST(PatchProvider, RejectsBadParameters) {
  EXPECT_EQ(code_of([] { patch_descriptor_provider(0, {1}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { patch_descriptor_provider(2, {}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { patch_descriptor_provider(2, {0}); }), ErrorCode::kInvalidArgument);
}

TEST(EmbeddingFile, RoundTrip) {
  TempDir dir("remb");
  EmbeddingMap m;
  m.width = 5;
  m.height = 3;
  m.dim = 32;
  m.grid_stride_px = 2;
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  m.vectors.resize(m.cell_count() * 32);
  for (auto& x : m.vectors) x = n(rng);
  save_embeddings(dir.path() / "a.remb", m);
  const EmbeddingMap r = load_embeddings(dir.path() / "a.remb", 32);
  EXPECT_EQ(r.width, 5);
  EXPECT_EQ(r.height, 3);
  EXPECT_EQ(r.grid_stride_px, 2);
  EXPECT_EQ(r.vectors, m.vectors);
  EXPECT_EQ(code_of([&] { load_embeddings(dir.path() / "a.remb", 16); }), ErrorCode::kDimMismatch);
}

TEST(EmbeddingFile, RejectsCorruptFiles) {
  TempDir dir("remb_bad");
  {
    std::ofstream f(dir.path() / "magic.remb", std::ios::binary);
    f << "NOPE0000000000000000000000000000";
  }
  EXPECT_EQ(code_of([&] { load_embeddings(dir.path() / "magic.remb"); }), ErrorCode::kBadMagic);

  EmbeddingMap m;
  m.width = m.height = 2;
  m.dim = 4;
  m.vectors.assign(16, 0.5f);
  save_embeddings(dir.path() / "t.remb", m);
  const auto full = std::filesystem::file_size(dir.path() / "t.remb");
  std::filesystem::resize_file(dir.path() / "t.remb", full - 4);
  EXPECT_EQ(code_of([&] { load_embeddings(dir.path() / "t.remb"); }), ErrorCode::kDimMismatch);
  EXPECT_EQ(code_of([&] { load_embeddings(dir.path() / "missing.remb"); }), ErrorCode::kUnreadableFile);
}

TEST(FileProvider, LoadsByKeyAndChecksGrid) {
  TempDir dir("fileprov");
  EmbeddingMap m;
  m.width = 4;
  m.height = 4;
  m.dim = 3;
  m.grid_stride_px = 2;
  m.vectors.assign(m.cell_count() * 3, 0.0f);
  for (std::size_t i = 0; i < m.cell_count(); ++i) m.vectors[i * 3] = 1.0f;
  save_embeddings(dir.path() / "q0.remb", m);

  const auto p = make_provider("file:" + dir.path().string());
  EXPECT_EQ(p->name(), "file");
  const auto got = embed_image(*p, blank(8, 8), tiny_camera(8), std::nullopt, "q0");
  EXPECT_EQ(got.vectors, m.vectors);
  EXPECT_EQ(code_of([&] { embed_image(*p, blank(16, 16), tiny_camera(16), std::nullopt, "q0"); }),
            ErrorCode::kSizeMismatch);
  EXPECT_EQ(code_of([&] { embed_image(*p, blank(8, 8), tiny_camera(8), std::nullopt, ""); }),
            ErrorCode::kInvalidArgument);
  const auto strict = file_embedding_provider(dir.path(), 5);
  EXPECT_EQ(code_of([&] { embed_image(*strict, blank(8, 8), tiny_camera(8), std::nullopt, "q0"); }),
            ErrorCode::kDimMismatch);
}

TEST(EmbeddingMap, BilinearAndCellMapping) {
  EmbeddingMap m;
  m.width = 3;
  m.height = 2;
  m.dim = 1;
  m.grid_stride_px = 2;
  m.vectors = {0, 1, 2, 10, 11, 12};
  EXPECT_DOUBLE_EQ(m.sample_bilinear({0.5, 0.5})[0], 5.5);
  EXPECT_DOUBLE_EQ(m.sample_bilinear({2.0, 1.0})[0], 12.0);
  EXPECT_DOUBLE_EQ(m.sample_bilinear({-4.0, 9.0})[0], 10.0);
  const Eigen::Vector2d px = m.cell_center_px(1.25, 0.5);
  EXPECT_LT((m.grid_from_pixel(px) - Eigen::Vector2d(1.25, 0.5)).norm(), 1e-12);
}
