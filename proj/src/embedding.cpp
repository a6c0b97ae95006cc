#include "rayemb/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "rayemb/error.hpp"
#include "rayemb/io.hpp"

namespace rayemb {

Eigen::Vector2d EmbeddingMap::cell_center_px(double u, double v) const {
  const double s = grid_stride_px;
  const double off = 0.5 * (s - 1.0);
  return {u * s + off, v * s + off};
}

Eigen::Vector2d EmbeddingMap::grid_from_pixel(const Eigen::Vector2d& pixel) const {
  const double s = grid_stride_px;
  const double off = 0.5 * (s - 1.0);
  return (pixel.array() - off) / s;
}

Eigen::VectorXd EmbeddingMap::sample_bilinear(const Eigen::Vector2d& grid) const {
  const double gx = std::clamp(grid.x(), 0.0, static_cast<double>(width - 1));
  const double gy = std::clamp(grid.y(), 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(gx), std::max(width - 2, 0));
  const int y0 = std::min(static_cast<int>(gy), std::max(height - 2, 0));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = gx - x0;
  const double fy = gy - y0;
  Eigen::VectorXd out(dim);
  const auto a = at(x0, y0), b = at(x1, y0), c = at(x0, y1), d = at(x1, y1);
  for (int i = 0; i < dim; ++i) {
    out[i] = (1.0 - fy) * ((1.0 - fx) * a[i] + fx * b[i]) + fy * ((1.0 - fx) * c[i] + fx * d[i]);
  }
  return out;
}

Eigen::MatrixXd EmbeddingMap::as_matrix() const {
  Eigen::Map<const Eigen::MatrixXf> m(vectors.data(), dim, static_cast<Eigen::Index>(cell_count()));
  return m.cast<double>();
}

void EmbeddingMap::validate(bool normalized) const {
  if (vectors.size() != cell_count() * static_cast<std::size_t>(dim)) {
    fail(ErrorCode::kDimMismatch, "embedding storage does not match width*height*dim");
  }
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double n2 = 0.0;
      for (float x : at(u, v)) {
        if (!std::isfinite(x)) fail(ErrorCode::kInvalidArgument, "non-finite embedding");
        n2 += static_cast<double>(x) * x;
      }
      if (normalized && std::abs(std::sqrt(n2) - 1.0) > 1e-6) fail(ErrorCode::kInvalidArgument, "non-unit embedding");
    }
  }
}

EmbeddingMap embed_image(const EmbeddingProvider& provider, const DetectorImage& image, const CameraModel& camera,
                         const std::optional<PoseSE3>& pose, const std::string& key) {
  if (image.width != camera.width || image.height != camera.height) {
    fail(ErrorCode::kSizeMismatch, "image size differs from camera detector size");
  }
  if (provider.needs_pose() && !pose) fail(ErrorCode::kMissingPose, provider.name() + " needs the image pose");
  return provider.embed(image, camera, pose, key);
}

Vector6d plucker(const Ray& ray) {
  Vector6d out;
  out.head<3>() = ray.direction;
  out.tail<3>() = ray.origin.cross(ray.direction);
  return out;
}

namespace {

class OraclePluckerProvider final : public EmbeddingProvider {
 public:
  OraclePluckerProvider(int stride, double moment_scale) : stride_(stride), moment_scale_(moment_scale) {
    if (stride_ < 1) fail(ErrorCode::kInvalidArgument, "grid stride must be at least 1");
    if (!(moment_scale_ > 0.0)) fail(ErrorCode::kInvalidArgument, "moment scale must be positive");
  }

  std::string name() const override {
    if (moment_scale_ == 1.0) return "oracle";
    std::ostringstream os;
    os << "oracle:" << moment_scale_;
    return os.str();
  }
  int dim() const override { return 6; }
  bool normalized() const override { return true; }
  bool needs_pose() const override { return true; }

  EmbeddingMap embed(const DetectorImage& image, const CameraModel& camera, const std::optional<PoseSE3>& pose,
                     const std::string&) const override {
    if (!pose) fail(ErrorCode::kMissingPose, "oracle provider needs the image pose");
    EmbeddingMap map;
    map.width = image.width / stride_;
    map.height = image.height / stride_;
    map.dim = 6;
    map.grid_stride_px = stride_;
    if (map.width < 1 || map.height < 1) fail(ErrorCode::kSizeMismatch, "image smaller than one grid cell");
    map.vectors.resize(map.cell_count() * 6);
    const int height = map.height;
#pragma omp parallel for schedule(static)
    for (int v = 0; v < height; ++v) {
      for (int u = 0; u < map.width; ++u) {
        Vector6d e = plucker(backproject(camera, *pose, map.cell_center_px(u, v)));
        e.tail<3>() /= moment_scale_;
        e.normalize();
        auto out = map.at(u, v);
        for (int c = 0; c < 6; ++c) out[c] = static_cast<float>(e[c]);
      }
    }
    return map;
  }

 private:
  int stride_;
  double moment_scale_;
};

// Separable box sum with clamp-to-edge indexing. Every output is summed in
// the same order from its own neighbourhood, so equal neighbourhoods give
// bitwise-equal results wherever the window stays inside the image.
std::vector<double> box_mean(const std::vector<double>& src, int w, int h, int radius) {
  std::vector<double> rows(src.size()), out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += src[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
      rows[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  const double norm = 1.0 / ((2.0 * radius + 1.0) * (2.0 * radius + 1.0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += rows[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s * norm;
    }
  }
  return out;
}

class PatchDescriptorProvider final : public EmbeddingProvider {
 public:
  PatchDescriptorProvider(int radius, std::vector<int> scales, int bins)
      : radius_(radius), scales_(std::move(scales)), bins_(bins) {
    if (radius_ < 1) fail(ErrorCode::kInvalidArgument, "patch radius must be at least 1");
    if (scales_.empty()) fail(ErrorCode::kInvalidArgument, "patch provider needs at least one scale");
    for (int s : scales_) {
      if (s < 1) fail(ErrorCode::kInvalidArgument, "patch scales must be positive");
    }
    if (bins_ < 1) fail(ErrorCode::kInvalidArgument, "histogram needs at least one bin");
  }

  std::string name() const override {
    std::string n = "patch:r" + std::to_string(radius_) + ":s";
    for (std::size_t i = 0; i < scales_.size(); ++i) n += (i ? "," : "") + std::to_string(scales_[i]);
    return n + ":b" + std::to_string(bins_);
  }
  int dim() const override { return static_cast<int>(scales_.size()) * (2 + bins_); }
  bool normalized() const override { return true; }

  EmbeddingMap embed(const DetectorImage& image, const CameraModel&, const std::optional<PoseSE3>&,
                     const std::string&) const override {
    const int w = image.width, h = image.height;
    const std::vector<double> img = min_max_normalized(image).values;
    const std::size_t n = img.size();
    const int d = dim();

    EmbeddingMap map;
    map.width = w;
    map.height = h;
    map.dim = d;
    map.grid_stride_px = 1;
    std::vector<double> features(n * d, 0.0);

    int offset = 0;
    for (int s : scales_) {
      const int r = radius_ * s;
      std::vector<double> sq(n);
      for (std::size_t i = 0; i < n; ++i) sq[i] = img[i] * img[i];
      const auto mean = box_mean(img, w, h, r);
      const auto mean_sq = box_mean(sq, w, h, r);

      std::vector<std::vector<double>> hist(bins_, std::vector<double>(n, 0.0));
      auto px = [&](int x, int y) { return img[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)]; };
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double gx = (px(x + s, y) - px(x - s, y)) / (2.0 * s);
          const double gy = (px(x, y + s) - px(x, y - s)) / (2.0 * s);
          const double mag = std::hypot(gx, gy);
          if (mag == 0.0) continue;
          const double a = std::atan2(gy, gx) + std::numbers::pi;
          const int b = std::min(bins_ - 1, static_cast<int>(a / (2.0 * std::numbers::pi) * bins_));
          hist[b][static_cast<std::size_t>(y) * w + x] = mag;
        }
      }
      for (auto& hb : hist) hb = box_mean(hb, w, h, r);

      for (std::size_t i = 0; i < n; ++i) {
        double* f = &features[i * d + offset];
        f[0] = mean[i];
        f[1] = std::max(0.0, mean_sq[i] - mean[i] * mean[i]);
        for (int b = 0; b < bins_; ++b) f[2 + b] = hist[b][i];
      }
      offset += 2 + bins_;
    }

    map.vectors.resize(n * d);
    const double uniform = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
      double n2 = 0.0;
      for (int c = 0; c < d; ++c) n2 += features[i * d + c] * features[i * d + c];
      const double norm = std::sqrt(n2);
      for (int c = 0; c < d; ++c) {
        map.vectors[i * d + c] = static_cast<float>(norm > 1e-12 ? features[i * d + c] / norm : uniform);
      }
    }
    return map;
  }

 private:
  int radius_;
  std::vector<int> scales_;
  int bins_;
};

class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  FileEmbeddingProvider(std::filesystem::path directory, int dim, bool normalized)
      : directory_(std::move(directory)), dim_(dim), normalized_(normalized) {}

  std::string name() const override { return "file"; }
  int dim() const override { return dim_; }
  bool normalized() const override { return normalized_; }

  EmbeddingMap embed(const DetectorImage& image, const CameraModel&, const std::optional<PoseSE3>&,
                     const std::string& key) const override {
    if (key.empty()) fail(ErrorCode::kInvalidArgument, "file provider needs an image key");
    const auto path = directory_ / (key + ".remb");
    EmbeddingMap map = dim_ > 0 ? load_embeddings(path, dim_) : load_embeddings(path);
    if (map.width * map.grid_stride_px > image.width || map.height * map.grid_stride_px > image.height ||
        map.width != image.width / map.grid_stride_px || map.height != image.height / map.grid_stride_px) {
      fail(ErrorCode::kSizeMismatch, path.string() + " does not cover the image grid");
    }
    map.validate(normalized_);
    return map;
  }

 private:
  std::filesystem::path directory_;
  int dim_;
  bool normalized_;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::unique_ptr<EmbeddingProvider> oracle_plucker_provider(int grid_stride_px, double moment_scale_mm) {
  return std::make_unique<OraclePluckerProvider>(grid_stride_px, moment_scale_mm);
}

std::unique_ptr<EmbeddingProvider> patch_descriptor_provider(int radius_px, std::vector<int> scales,
                                                             int histogram_bins) {
  return std::make_unique<PatchDescriptorProvider>(radius_px, std::move(scales), histogram_bins);
}

std::unique_ptr<EmbeddingProvider> file_embedding_provider(std::filesystem::path directory, int dim, bool normalized) {
  return std::make_unique<FileEmbeddingProvider>(std::move(directory), dim, normalized);
}

std::unique_ptr<EmbeddingProvider> make_provider(const std::string& spec, int patch_radius,
                                                 std::vector<int> patch_scales) {
  if (spec == "oracle") return oracle_plucker_provider();
  if (spec.rfind("oracle:", 0) == 0) {
    double scale = 0.0;
    try {
      std::size_t used = 0;
      scale = std::stod(spec.substr(7), &used);
      if (used != spec.size() - 7) scale = 0.0;
    } catch (const std::exception&) {
    }
    if (!(scale > 0.0)) fail(ErrorCode::kInvalidArgument, "bad oracle moment scale in \"" + spec + "\"");
    return oracle_plucker_provider(1, scale);
  }
  if (spec == "patch") return patch_descriptor_provider(patch_radius, std::move(patch_scales));
  if (spec.rfind("file:", 0) == 0 && spec.size() > 5) return file_embedding_provider(spec.substr(5));
  fail(ErrorCode::kInvalidArgument, "unknown provider \"" + spec + "\" (expected oracle, patch or file:<dir>)");
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMap& map) {
  if (map.vectors.size() != map.cell_count() * static_cast<std::size_t>(map.dim)) {
    fail(ErrorCode::kDimMismatch, "embedding storage does not match width*height*dim");
  }
  std::vector<std::uint8_t> out{'R', 'E', 'M', 'B'};
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(map.width));
  put_u32(out, static_cast<std::uint32_t>(map.height));
  put_u32(out, static_cast<std::uint32_t>(map.dim));
  put_u32(out, static_cast<std::uint32_t>(map.grid_stride_px));
  const auto* raw = reinterpret_cast<const std::uint8_t*>(map.vectors.data());
  out.insert(out.end(), raw, raw + map.vectors.size() * sizeof(float));
  io::write_bytes(path, out);
}

EmbeddingMap load_embeddings(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  constexpr std::size_t kHeader = 24;
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), "REMB", 4) != 0) {
    fail(ErrorCode::kBadMagic, path.string() + " is not an embedding file");
  }
  if (get_u32(bytes.data() + 4) != 1) fail(ErrorCode::kBadMagic, "unsupported embedding file version");
  EmbeddingMap map;
  map.width = static_cast<int>(get_u32(bytes.data() + 8));
  map.height = static_cast<int>(get_u32(bytes.data() + 12));
  map.dim = static_cast<int>(get_u32(bytes.data() + 16));
  map.grid_stride_px = static_cast<int>(get_u32(bytes.data() + 20));
  if (map.width < 1 || map.height < 1 || map.dim < 1 || map.grid_stride_px < 1) {
    fail(ErrorCode::kBadMagic, "embedding header has zero-sized fields");
  }
  const std::size_t count = map.cell_count() * static_cast<std::size_t>(map.dim);
  if (bytes.size() - kHeader != count * sizeof(float)) {
    fail(ErrorCode::kDimMismatch, path.string() + ": payload length does not match header");
  }
  map.vectors.resize(count);
  std::memcpy(map.vectors.data(), bytes.data() + kHeader, count * sizeof(float));
  return map;
}

EmbeddingMap load_embeddings(const std::filesystem::path& path, int expected_dim) {
  EmbeddingMap map = load_embeddings(path);
  if (map.dim != expected_dim) {
    fail(ErrorCode::kDimMismatch,
         "expected dim " + std::to_string(expected_dim) + ", file has " + std::to_string(map.dim));
  }
  return map;
}

}  // namespace rayemb
