#include "rayemb/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/SVD>

#include "rayemb/error.hpp"
#include "rayemb/io.hpp"

namespace rayemb {

void TemplateSet::validate() const {
  for (const auto& t : templates) {
    if (t.embedding.dim != dim()) fail(ErrorCode::kDimMismatch, "template embeddings disagree on dim");
  }
}

LandmarkSubspace subspace_from_columns(const Eigen::MatrixXd& columns, double sv_rel_tol) {
  if (columns.cols() < 1 || columns.rows() < 1) fail(ErrorCode::kInvalidArgument, "empty embedding matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(columns, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv[0] > 0.0)) fail(ErrorCode::kInvalidArgument, "embedding matrix is zero");
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv[rank] >= sv_rel_tol * sv[0]) ++rank;
  LandmarkSubspace out;
  out.basis = svd.matrixU().leftCols(rank);
  out.singular_values = sv;
  return out;
}

LandmarkSubspace build_subspace(const TemplateSet& templates, const Eigen::Vector3d& point,
                                std::span<const int> chosen, double sv_rel_tol) {
  if (chosen.size() < 2) fail(ErrorCode::kTooFewVisibleTemplates, "need at least two templates");
  const CameraModel& cam = templates.camera;
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(chosen.size());
  for (int idx : chosen) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= templates.templates.size()) {
      fail(ErrorCode::kInvalidArgument, "template index out of range");
    }
    const Template& t = templates.templates[idx];
    const Eigen::Vector3d pc = t.pose.apply(point);
    if (!(pc.z() > 0.0)) continue;
    const Eigen::Vector2d px = project_camera_point(cam, pc);
    if (px.x() < -0.5 || px.y() < -0.5 || px.x() > cam.width - 0.5 || px.y() > cam.height - 0.5) continue;
    cols.push_back(t.embedding.sample_bilinear(t.embedding.grid_from_pixel(px)));
  }
  if (cols.size() < 2) fail(ErrorCode::kTooFewVisibleTemplates, "fewer than two templates see the point");
  Eigen::MatrixXd f(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) f.col(static_cast<Eigen::Index>(i)) = cols[i];
  LandmarkSubspace out = subspace_from_columns(f, sv_rel_tol);
  out.point = point;
  return out;
}

double subspace_similarity(const Eigen::MatrixXd& basis, const Eigen::Ref<const Eigen::VectorXd>& e) {
  const double en = e.norm();
  if (en < 1e-12) return 0.0;
  const double pn = (basis.transpose() * e).norm();
  if (pn < 1e-12) return 0.0;
  return pn / en;
}

SimilarityHeatmap similarity_heatmap(const LandmarkSubspace& subspace, const EmbeddingMap& query) {
  if (query.dim != subspace.ambient_dim()) fail(ErrorCode::kDimMismatch, "query dim differs from subspace dim");
  SimilarityHeatmap hm;
  hm.width = query.width;
  hm.height = query.height;
  hm.grid_stride_px = query.grid_stride_px;
  hm.point = subspace.point;
  hm.values.assign(query.cell_count(), 0.0);

  const Eigen::Index d = query.dim;
  const Eigen::Index r = subspace.rank();
  // Row-major copy of basis^T so each cell is r dot products of length d.
  const Eigen::MatrixXd bt = subspace.basis.transpose();
  const auto cells = static_cast<long>(query.cell_count());
#pragma omp parallel for schedule(static)
  for (long c = 0; c < cells; ++c) {
    const float* e = query.vectors.data() + c * d;
    double en2 = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) en2 += static_cast<double>(e[i]) * e[i];
    const double en = std::sqrt(en2);
    if (en < 1e-12) continue;
    double pn2 = 0.0;
    for (Eigen::Index k = 0; k < r; ++k) {
      double dot = 0.0;
      for (Eigen::Index i = 0; i < d; ++i) dot += bt(k, i) * e[i];
      pn2 += dot * dot;
    }
    const double pn = std::sqrt(pn2);
    if (pn < 1e-12) continue;
    hm.values[c] = pn / en;
  }
  return hm;
}

Peak best_correspondence(const SimilarityHeatmap& heatmap, PeakMode mode) {
  if (heatmap.values.empty()) fail(ErrorCode::kInvalidArgument, "empty heatmap");
  std::size_t best = 0;
  for (std::size_t i = 1; i < heatmap.values.size(); ++i) {
    if (heatmap.values[i] > heatmap.values[best]) best = i;
  }
  Peak peak;
  peak.cell_u = static_cast<int>(best % heatmap.width);
  peak.cell_v = static_cast<int>(best / heatmap.width);
  peak.score = heatmap.values[best];

  double du = 0.0, dv = 0.0;
  if (mode == PeakMode::kBilinearRefined) {
    auto offset = [](double lo, double mid, double hi) {
      const double denom = lo - 2.0 * mid + hi;
      if (!(denom < 0.0)) return 0.0;
      return std::clamp(0.5 * (lo - hi) / denom, -0.5, 0.5);
    };
    const int u = peak.cell_u, v = peak.cell_v;
    if (u > 0 && u + 1 < heatmap.width) du = offset(heatmap.at(u - 1, v), peak.score, heatmap.at(u + 1, v));
    if (v > 0 && v + 1 < heatmap.height) dv = offset(heatmap.at(u, v - 1), peak.score, heatmap.at(u, v + 1));
  }
  const double s = heatmap.grid_stride_px;
  const double off = 0.5 * (s - 1.0);
  peak.pixel = {(peak.cell_u + du) * s + off, (peak.cell_v + dv) * s + off};
  return peak;
}

namespace {

std::mt19937_64 point_stream(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<int> draw_subset(std::mt19937_64& rng, int population, int count) {
  std::vector<int> pool(population);
  std::iota(pool.begin(), pool.end(), 0);
  count = std::min(count, population);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, population - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

struct Scored {
  bool valid = false;
  Peak peak;
};

Scored score_point(const TemplateSet& templates, const EmbeddingMap& query, const Eigen::Vector3d& point,
                   std::span<const int> subset, const CorrespondenceOptions& options) {
  try {
    const LandmarkSubspace sub = build_subspace(templates, point, subset, options.sv_rel_tol);
    return {true, best_correspondence(similarity_heatmap(sub, query), options.peak)};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kTooFewVisibleTemplates) return {};
    throw;
  }
}

}  // namespace

CorrespondenceSet estimate_correspondences(const TemplateSet& templates, const EmbeddingMap& query,
                                           const LandmarkSample& points, const CorrespondenceOptions& options) {
  const auto n_points = static_cast<long>(points.points.size());
  if (options.top_k < 1 || options.top_k > n_points) fail(ErrorCode::kInvalidArgument, "top_k must be in [1, |points|]");
  if (options.tta_rounds < 1) fail(ErrorCode::kInvalidArgument, "tta_rounds must be at least 1");
  if (options.n_subspace_templates < 2) fail(ErrorCode::kInvalidArgument, "need at least two templates per subspace");
  if (templates.templates.size() < 2) fail(ErrorCode::kInvalidArgument, "template set has fewer than two entries");
  templates.validate();
  if (query.dim != templates.dim()) fail(ErrorCode::kDimMismatch, "query and template dims differ");

  const int population = static_cast<int>(templates.templates.size());
  std::vector<std::mt19937_64> streams(n_points);
  std::vector<Scored> first(n_points);
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < n_points; ++i) {
    streams[i] = point_stream(options.seed, static_cast<std::size_t>(i));
    const auto subset = draw_subset(streams[i], population, options.n_subspace_templates);
    first[i] = score_point(templates, query, points.points[i], subset, options);
  }

  std::vector<long> order;
  for (long i = 0; i < n_points; ++i) {
    if (first[i].valid) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](long a, long b) { return first[a].peak.score > first[b].peak.score; });
  if (order.size() > static_cast<std::size_t>(options.top_k)) order.resize(options.top_k);
  std::sort(order.begin(), order.end());

  const auto n_kept = static_cast<long>(order.size());
  std::vector<Peak> best(n_kept);
#pragma omp parallel for schedule(dynamic, 1)
  for (long k = 0; k < n_kept; ++k) {
    const long i = order[k];
    best[k] = first[i].peak;
    for (int round = 1; round < options.tta_rounds; ++round) {
      const auto subset = draw_subset(streams[i], population, options.n_subspace_templates);
      const Scored s = score_point(templates, query, points.points[i], subset, options);
      if (s.valid && s.peak.score > best[k].score) best[k] = s.peak;
    }
  }

  CorrespondenceSet out;
  out.reserve(n_kept);
  for (long k = 0; k < n_kept; ++k) {
    out.push_back({points.points[order[k]], best[k].pixel, std::clamp(best[k].score, 0.0, 1.0)});
  }
  return out;
}

InfoNceResult info_nce_loss(const LandmarkSubspace& subspace, const Eigen::MatrixXd& query_vectors,
                            Eigen::Index positive, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorCode::kInvalidArgument, "temperature must be positive");
  if (positive < 0 || positive >= query_vectors.cols()) fail(ErrorCode::kInvalidArgument, "positive out of range");
  if (query_vectors.rows() != subspace.ambient_dim()) fail(ErrorCode::kDimMismatch, "query dim differs from subspace");

  const Eigen::Index n = query_vectors.cols();
  const Eigen::MatrixXd& b = subspace.basis;
  Eigen::VectorXd sim = Eigen::VectorXd::Zero(n);
  std::vector<bool> active(n, false);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double en = query_vectors.col(j).norm();
    if (en < 1e-12) continue;
    const double pn = (b.transpose() * query_vectors.col(j)).norm();
    if (pn < 1e-12) continue;
    sim[j] = pn / en;
    active[j] = true;
  }

  const Eigen::VectorXd logits = sim / temperature;
  const double m = logits.maxCoeff();
  const Eigen::VectorXd w = (logits.array() - m).exp();
  const double z = w.sum();

  InfoNceResult out;
  out.loss = -(logits[positive] - m - std::log(z));
  out.grad = Eigen::MatrixXd::Zero(query_vectors.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!active[j]) continue;
    const double dl_ds = (w[j] / z - (j == positive ? 1.0 : 0.0)) / temperature;
    const auto e = query_vectors.col(j);
    const double en = e.norm();
    const Eigen::VectorXd pe = b * (b.transpose() * e);
    const double pn = pe.norm();
    // d(|Pe| / |e|)/de = Pe / (|Pe| |e|) - sim * e / |e|^2
    out.grad.col(j) = dl_ds * (pe / (pn * en) - sim[j] * e / (en * en));
  }
  return out;
}

InfoNceResult info_nce_loss(const LandmarkSubspace& subspace, const EmbeddingMap& query, int positive_u,
                            int positive_v, double temperature) {
  if (positive_u < 0 || positive_v < 0 || positive_u >= query.width || positive_v >= query.height) {
    fail(ErrorCode::kInvalidArgument, "positive cell out of bounds");
  }
  return info_nce_loss(subspace, query.as_matrix(), static_cast<Eigen::Index>(positive_v) * query.width + positive_u,
                       temperature);
}

void save_correspondences(const std::filesystem::path& path, const CorrespondenceSet& set) {
  std::string text;
  for (const auto& c : set) {
    io::Json j = {{"X", {c.point.x(), c.point.y(), c.point.z()}},
                  {"x2d", {c.pixel.x(), c.pixel.y()}},
                  {"score", c.score}};
    text += j.dump() + "\n";
  }
  io::write_text(path, text);
}

CorrespondenceSet load_correspondences(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  CorrespondenceSet out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = io::Json::parse(line);
      const auto x = j.at("X").get<std::vector<double>>();
      const auto p = j.at("x2d").get<std::vector<double>>();
      if (x.size() != 3 || p.size() != 2) fail(ErrorCode::kBadHeader, "correspondence has wrong arity");
      out.push_back({{x[0], x[1], x[2]}, {p[0], p[1]}, j.at("score").get<double>()});
    } catch (const io::Json::exception& e) {
      fail(ErrorCode::kBadHeader, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rayemb
