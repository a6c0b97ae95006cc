#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include <Eigen/Dense>

#include "rayemb/error.hpp"
#include "rayemb/registration.hpp"

namespace rayemb {

namespace {

Eigen::Vector3d bearing(const CameraModel& camera, const Eigen::Vector2d& px) {
  return Eigen::Vector3d((px.x() - camera.principal_px.x()) * camera.pixel_mm,
                         (px.y() - camera.principal_px.y()) * camera.pixel_mm, camera.focal_mm)
      .normalized();
}

// Eigenvalues of the 3D point scatter, ascending.
Eigen::Vector3d scatter_eigenvalues(std::span<const Correspondence> items) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& c : items) mean += c.point;
  mean /= static_cast<double>(items.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& c : items) cov += (c.point - mean) * (c.point - mean).transpose();
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov, Eigen::EigenvaluesOnly).eigenvalues();
}

// Rigid transform with dst = R * src + t (Kabsch).
PoseSE3 absolute_orientation(const std::array<Eigen::Vector3d, 3>& src, const std::array<Eigen::Vector3d, 3>& dst) {
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= 3.0;
  cd /= 3.0;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  return PoseSE3::unchecked(r, cd - r * cs);
}

std::vector<double> real_roots(const std::array<double, 5>& coeffs) {
  // coeffs[k] multiplies v^k. Drop vanishing leading terms.
  int degree = 4;
  const double scale = std::max({std::abs(coeffs[0]), std::abs(coeffs[1]), std::abs(coeffs[2]), std::abs(coeffs[3]),
                                 std::abs(coeffs[4])});
  if (scale == 0.0) return {};
  while (degree > 0 && std::abs(coeffs[degree]) < 1e-14 * scale) --degree;
  if (degree == 0) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < degree; ++i) companion(i, degree - 1) = -coeffs[i] / coeffs[degree];
  const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(companion, false).eigenvalues();

  auto poly = [&](double v, double& deriv) {
    double p = 0.0;
    deriv = 0.0;
    for (int k = degree; k >= 0; --k) {
      deriv = deriv * v + p;
      p = p * v + coeffs[k];
    }
    return p;
  };
  std::vector<double> out;
  for (const auto& z : eig) {
    if (std::abs(z.imag()) > 1e-4 * std::max(1.0, std::abs(z.real()))) continue;
    double v = z.real();
    for (int it = 0; it < 5; ++it) {
      double dp;
      const double p = poly(v, dp);
      if (dp == 0.0) break;
      v -= p / dp;
    }
    out.push_back(v);
  }
  return out;
}

// Grunert's three-point solution: distances along the bearings, then the
// rigid transform mapping world points onto the camera-frame points.
std::vector<PoseSE3> p3p(const std::array<Eigen::Vector3d, 3>& world, const std::array<Eigen::Vector3d, 3>& bearings) {
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  if (b2 < 1e-18 || c2 < 1e-18 || a2 < 1e-18) return {};
  const double ca = bearings[1].dot(bearings[2]);
  const double cb = bearings[0].dot(bearings[2]);
  const double cg = bearings[0].dot(bearings[1]);

  const double amc = (a2 - c2) / b2;
  const double apc = (a2 + c2) / b2;
  std::array<double, 5> k;
  k[4] = (amc - 1.0) * (amc - 1.0) - 4.0 * c2 / b2 * ca * ca;
  k[3] = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
  k[2] = 2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * ((b2 - c2) / b2) * ca * ca -
                4.0 * apc * ca * cb * cg + 2.0 * ((b2 - a2) / b2) * cg * cg);
  k[1] = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
  k[0] = (1.0 + amc) * (1.0 + amc) - 4.0 * a2 / b2 * cg * cg;

  std::vector<PoseSE3> out;
  for (double v : real_roots(k)) {
    if (!(v > 0.0)) continue;
    const double denom = 2.0 * (cg - v * ca);
    if (std::abs(denom) < 1e-14) continue;
    const double u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
    if (!(u > 0.0)) continue;
    const double q = 1.0 + u * u - 2.0 * u * cg;
    if (!(q > 0.0)) continue;
    const double s1 = std::sqrt(c2 / q);
    const std::array<Eigen::Vector3d, 3> cam{s1 * bearings[0], u * s1 * bearings[1], v * s1 * bearings[2]};
    out.push_back(absolute_orientation(world, cam));
  }
  return out;
}

std::optional<PoseSE3> dlt(std::span<const Correspondence> items, const CameraModel& camera) {
  const auto n = static_cast<Eigen::Index>(items.size());
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& c : items) centroid += c.point;
  centroid /= static_cast<double>(n);
  double mean_dist = 0.0;
  for (const auto& c : items) mean_dist += (c.point - centroid).norm();
  mean_dist /= static_cast<double>(n);
  if (mean_dist <= 0.0) return std::nullopt;
  const double s = std::sqrt(3.0) / mean_dist;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d b = bearing(camera, items[i].pixel);
    const double x = b.x() / b.z(), y = b.y() / b.z();
    Eigen::Vector4d xh;
    xh << s * (items[i].point - centroid), 1.0;
    a.block<1, 4>(2 * i, 0) = xh.transpose();
    a.block<1, 4>(2 * i, 8) = -x * xh.transpose();
    a.block<1, 4>(2 * i + 1, 4) = xh.transpose();
    a.block<1, 4>(2 * i + 1, 8) = -y * xh.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv[10] < 1e-9 * sv[0]) return std::nullopt;
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> pn;
  pn << p.segment<4>(0).transpose(), p.segment<4>(4).transpose(), p.segment<4>(8).transpose();

  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() *= s;
  t.topRightCorner<3, 1>() = -s * centroid;
  Eigen::Matrix<double, 3, 4> pm = pn * t;

  int positive = 0;
  for (const auto& c : items) positive += (pm.row(2).head<3>().dot(c.point) + pm(2, 3)) > 0.0;
  if (2 * positive < n) pm = -pm;

  const Eigen::Matrix3d m = pm.leftCols<3>();
  Eigen::JacobiSVD<Eigen::Matrix3d> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = msvd.matrixU() * msvd.matrixV().transpose();
  if (r.determinant() < 0.0) return std::nullopt;
  const double scale = msvd.singularValues().mean();
  if (!(scale > 0.0)) return std::nullopt;
  return PoseSE3::unchecked(r, pm.col(3) / scale);
}

}  // namespace

std::vector<double> reprojection_errors(const PoseSE3& pose, std::span<const Correspondence> items,
                                        const CameraModel& camera) {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& c : items) {
    const Eigen::Vector3d pc = pose.apply(c.point);
    if (!(pc.z() > 0.0)) {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    out.push_back((project_camera_point(camera, pc) - c.pixel).norm());
  }
  return out;
}

double reprojection_rms(const PoseSE3& pose, std::span<const Correspondence> items, const CameraModel& camera) {
  double sum = 0.0;
  for (double r : reprojection_errors(pose, items, camera)) sum += r * r;
  return std::sqrt(sum / static_cast<double>(items.size()));
}

PoseSE3 polish_pose(const PoseSE3& pose, std::span<const Correspondence> items, const CameraModel& camera,
                    std::span<const double> weights, int max_steps) {
  const double f = camera.focal_px();
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  auto cost_of = [&](const PoseSE3& p) {
    double cost = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (weight(i) <= 0.0) continue;
      const Eigen::Vector3d pc = p.apply(items[i].point);
      if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
      cost += weight(i) * (project_camera_point(camera, pc) - items[i].pixel).squaredNorm();
    }
    return cost;
  };

  PoseSE3 current = pose;
  double cost = cost_of(current);
  if (!std::isfinite(cost)) return current;
  double lambda = 1e-4;
  for (int step = 0; step < max_steps; ++step) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vector6d g = Vector6d::Zero();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const double w = weight(i);
      if (w <= 0.0) continue;
      const Eigen::Vector3d pc = current.apply(items[i].point);
      const Eigen::Vector2d r = project_camera_point(camera, pc) - items[i].pixel;
      Eigen::Matrix<double, 2, 3> jp;
      jp << f / pc.z(), 0.0, -f * pc.x() / (pc.z() * pc.z()), 0.0, f / pc.z(), -f * pc.y() / (pc.z() * pc.z());
      Eigen::Matrix<double, 3, 6> jt;
      jt.leftCols<3>() = -skew(pc);
      jt.rightCols<3>().setIdentity();
      const Eigen::Matrix<double, 2, 6> j = jp * jt;
      h += w * j.transpose() * j;
      g += w * j.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 8 && !improved; ++attempt) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      const Vector6d delta = -damped.ldlt().solve(g);
      if (!delta.allFinite()) break;
      const PoseSE3 candidate = (se3_exp(delta) * current).reorthonormalized();
      const double c = cost_of(candidate);
      if (c < cost) {
        const double rel = (cost - c) / std::max(cost, 1e-300);
        current = candidate;
        cost = c;
        lambda = std::max(lambda * 0.1, 1e-12);
        improved = true;
        if (rel < 1e-15 || delta.norm() < 1e-14) return current;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return current;
}

std::vector<PoseSE3> pnp_minimal(std::span<const Correspondence> items, const CameraModel& camera) {
  if (items.size() < 4) fail(ErrorCode::kInvalidArgument, "PnP needs at least 4 correspondences");
  camera.validate();
  const Eigen::Vector3d ev = scatter_eigenvalues(items);
  if (!(ev[1] > 1e-10 * ev[2])) fail(ErrorCode::kDegenerateConfiguration, "3D points are collinear");
  const bool coplanar = !(ev[0] > 1e-8 * ev[2]);

  std::vector<PoseSE3> candidates;
  if (items.size() >= 6 && !coplanar) {
    if (auto p = dlt(items, camera)) candidates.push_back(*p);
  }
  if (candidates.empty()) {
    // Widest triangle among the points drives the three-point solve.
    const std::size_t n = items.size();
    std::size_t i0 = 0, i1 = 1, i2 = 2;
    double best_area = -1.0;
    const std::size_t limit = std::min<std::size_t>(n, 12);
    for (std::size_t a = 0; a < limit; ++a)
      for (std::size_t b = a + 1; b < limit; ++b)
        for (std::size_t c = b + 1; c < limit; ++c) {
          const double area = (items[b].point - items[a].point).cross(items[c].point - items[a].point).norm();
          if (area > best_area) {
            best_area = area;
            i0 = a;
            i1 = b;
            i2 = c;
          }
        }
    const std::array<Eigen::Vector3d, 3> world{items[i0].point, items[i1].point, items[i2].point};
    const std::array<Eigen::Vector3d, 3> rays{bearing(camera, items[i0].pixel), bearing(camera, items[i1].pixel),
                                              bearing(camera, items[i2].pixel)};
    if (rays[0].cross(rays[1]).dot(rays[2]) == 0.0 && rays[0].cross(rays[1]).norm() < 1e-12) {
      fail(ErrorCode::kDegenerateConfiguration, "image rays are degenerate");
    }
    candidates = p3p(world, rays);
  }

  std::vector<std::pair<double, PoseSE3>> scored;
  for (const auto& c : candidates) {
    const PoseSE3 polished = polish_pose(c, items, camera, {}, 10);
    const double rms = reprojection_rms(polished, items, camera);
    if (std::isfinite(rms)) scored.emplace_back(rms, polished);
  }
  if (scored.empty()) fail(ErrorCode::kDegenerateConfiguration, "no pose candidate places the points in front");
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<PoseSE3> out;
  for (auto& [rms, pose] : scored) out.push_back(pose);
  return out;
}

}  // namespace rayemb
