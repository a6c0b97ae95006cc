#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "rayemb/error.hpp"
#include "rayemb/registration.hpp"

namespace rayemb {

namespace {

// sqrt of the 0.99 quantile of chi-square with 2 degrees of freedom.
constexpr double kChi2Radius = 3.0348542587702925;
constexpr int kBatch = 32;

double sigma_node(const RobustConfig& config, int j) {
  return config.sigma_max_px * (j + 0.5) / config.quadrature_points;
}

// Reweighting term for IRLS on sum(1 - w): -(dw/dr) / r.
double irls_weight(double r, const RobustConfig& config) {
  double sum = 0.0;
  for (int j = 0; j < config.quadrature_points; ++j) {
    const double s = sigma_node(config, j);
    if (r > kChi2Radius * s) continue;
    sum += std::exp(-0.5 * r * r / (s * s)) / (s * s);
  }
  return sum / config.quadrature_points;
}

std::vector<std::size_t> draw_sample(std::size_t n, int k, std::uint64_t seed, std::uint64_t iteration) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(iteration >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out;
  while (static_cast<int>(out.size()) < k) {
    const std::size_t i = pick(rng);
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Hypothesis {
  PoseSE3 pose;
  double score = -1.0;
};

std::optional<Hypothesis> evaluate_sample(const CorrespondenceSet& items, const CameraModel& camera,
                                          const RobustConfig& config, std::uint64_t iteration) {
  const auto idx = draw_sample(items.size(), config.min_sample, config.seed, iteration);
  CorrespondenceSet sample;
  for (auto i : idx) sample.push_back(items[i]);
  std::vector<PoseSE3> candidates;
  try {
    candidates = pnp_minimal(sample, camera);
  } catch (const Error&) {
    return std::nullopt;
  }
  std::optional<Hypothesis> best;
  for (const auto& c : candidates) {
    double score = 0.0;
    for (double r : reprojection_errors(c, items, camera)) score += marginal_inlier_weight(r, config);
    if (!best || score > best->score) best = Hypothesis{c, score};
  }
  return best;
}

}  // namespace

void RobustConfig::validate() const {
  if (!(sigma_max_px > 0.0)) fail(ErrorCode::kInvalidArgument, "sigma_max_px must be positive");
  if (!(confidence > 0.0 && confidence < 1.0)) fail(ErrorCode::kInvalidArgument, "confidence must be in (0, 1)");
  if (max_iterations < 1) fail(ErrorCode::kInvalidArgument, "max_iterations must be at least 1");
  if (min_sample < 4) fail(ErrorCode::kInvalidArgument, "min_sample must be at least 4");
  if (quadrature_points < 1) fail(ErrorCode::kInvalidArgument, "quadrature_points must be at least 1");
}

double marginal_inlier_weight(double r, const RobustConfig& config) {
  if (!std::isfinite(r)) return 0.0;
  double sum = 0.0;
  for (int j = 0; j < config.quadrature_points; ++j) {
    const double s = sigma_node(config, j);
    if (r > kChi2Radius * s) continue;
    sum += std::exp(-0.5 * r * r / (s * s));
  }
  return sum / config.quadrature_points;
}

double marginal_cost(const PoseSE3& pose, std::span<const Correspondence> items, const CameraModel& camera,
                     const RobustConfig& config) {
  double cost = 0.0;
  for (double r : reprojection_errors(pose, items, camera)) cost += 1.0 - marginal_inlier_weight(r, config);
  return cost;
}

RegistrationResult magsac_pnp(const CorrespondenceSet& items, const CameraModel& camera, const RobustConfig& config) {
  config.validate();
  camera.validate();
  if (items.size() < 4 || items.size() < static_cast<std::size_t>(config.min_sample)) {
    fail(ErrorCode::kInvalidArgument, "robust PnP needs at least 4 correspondences");
  }
  const auto n = items.size();

  std::optional<Hypothesis> best;
  int done = 0;
  long long required = config.max_iterations;
  while (done < config.max_iterations && done < required) {
    const int count = std::min(kBatch, config.max_iterations - done);
    std::vector<std::optional<Hypothesis>> batch(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < count; ++b) {
      batch[static_cast<std::size_t>(b)] = evaluate_sample(items, camera, config, static_cast<std::uint64_t>(done + b));
    }
    bool improved = false;
    for (auto& h : batch) {
      if (h && (!best || h->score > best->score)) {
        best = std::move(h);
        improved = true;
      }
    }
    done += count;
    if (improved) {
      std::size_t inliers = 0;
      for (double r : reprojection_errors(best->pose, items, camera)) inliers += marginal_inlier_weight(r, config) > 0.5;
      const double eps = static_cast<double>(inliers) / static_cast<double>(n);
      const double p_good = std::pow(eps, config.min_sample);
      if (p_good >= 1.0) {
        required = 0;
      } else if (p_good > 0.0) {
        required = static_cast<long long>(std::ceil(std::log(1.0 - config.confidence) / std::log1p(-p_good)));
      }
    }
  }
  if (!best) fail(ErrorCode::kNoValidHypothesis, "every minimal sample was degenerate");

  RegistrationResult result;
  result.hypotheses = done;
  result.raw_cost = marginal_cost(best->pose, items, camera, config);

  PoseSE3 pose = best->pose;
  double cost = result.raw_cost;
  for (int round = 0; round < 10; ++round) {
    std::vector<double> w;
    w.reserve(n);
    for (double r : reprojection_errors(pose, items, camera)) w.push_back(std::isfinite(r) ? irls_weight(r, config) : 0.0);
    const PoseSE3 candidate = polish_pose(pose, items, camera, w, 10);
    const double c = marginal_cost(candidate, items, camera, config);
    if (!(c < cost)) break;
    const double gain = cost - c;
    pose = candidate;
    cost = c;
    if (gain < 1e-12 * std::max(1.0, cost)) break;
  }
  result.polished_cost = cost;
  result.initial_pose = pose;

  std::vector<double> w;
  double w_max = 0.0;
  result.score = 0.0;
  for (double r : reprojection_errors(pose, items, camera)) {
    w.push_back(marginal_inlier_weight(r, config));
    w_max = std::max(w_max, w.back());
    result.score += w.back();
  }
  result.inlier_flags.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.inlier_flags[i] = w_max > 0.0 && w[i] > 0.5 * w_max;
  return result;
}

}  // namespace rayemb
