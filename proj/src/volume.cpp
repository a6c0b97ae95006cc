#include "rayemb/volume.hpp"

#include <cstring>
#include <random>
#include <string>

#include "rayemb/error.hpp"
#include "rayemb/io.hpp"

namespace rayemb {

namespace {

void check_dims(const std::array<int, 3>& dims) {
  for (int d : dims) {
    if (d <= 0) fail(ErrorCode::kBadHeader, "volume dimensions must be positive");
  }
}

std::size_t product(const std::array<int, 3>& dims) {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
}

template <typename T>
T read_le(const std::uint8_t* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::filesystem::path data_path_for(const std::filesystem::path& header_path, const io::Json& header) {
  if (header.contains("data_file")) return header_path.parent_path() / header.at("data_file").get<std::string>();
  auto p = header_path;
  p.replace_extension(".raw");
  return p;
}

struct RawHeader {
  std::array<int, 3> dims;
  Eigen::Vector3d spacing;
  Eigen::Vector3d origin;
  std::string dtype;
  std::string unit;
  std::filesystem::path data_path;
};

RawHeader parse_raw_header(const std::filesystem::path& path) {
  const io::Json header = io::read_json(path);
  RawHeader out;
  try {
    const auto dims = header.at("dims").get<std::vector<int>>();
    const auto spacing = header.at("spacing").get<std::vector<double>>();
    const auto origin = header.value("origin", std::vector<double>{0.0, 0.0, 0.0});
    if (dims.size() != 3 || spacing.size() != 3 || origin.size() != 3) {
      fail(ErrorCode::kBadHeader, path.string() + ": dims/spacing/origin must have three entries");
    }
    out.dims = {dims[0], dims[1], dims[2]};
    out.spacing = {spacing[0], spacing[1], spacing[2]};
    out.origin = {origin[0], origin[1], origin[2]};
    out.dtype = header.value("dtype", std::string("f32"));
    out.unit = header.value("unit", std::string("mu"));
  } catch (const io::Json::exception& e) {
    fail(ErrorCode::kBadHeader, path.string() + ": " + e.what());
  }
  check_dims(out.dims);
  if ((out.spacing.array() <= 0.0).any()) fail(ErrorCode::kBadHeader, "spacing must be positive");
  out.data_path = data_path_for(path, header);
  return out;
}

Volume load_raw(const std::filesystem::path& path) {
  const RawHeader h = parse_raw_header(path);
  if (h.dtype != "f32") fail(ErrorCode::kUnsupportedDatatype, "volume dtype must be f32, got " + h.dtype);
  VolumeUnit unit;
  if (h.unit == "hu") {
    unit = VolumeUnit::kHounsfield;
  } else if (h.unit == "mu") {
    unit = VolumeUnit::kAttenuation;
  } else {
    fail(ErrorCode::kBadHeader, "unit must be \"hu\" or \"mu\"");
  }
  const auto bytes = io::read_bytes(h.data_path);
  const std::size_t n = product(h.dims);
  if (bytes.size() != n * sizeof(float)) fail(ErrorCode::kBadHeader, "data file size does not match dims");
  std::vector<float> data(n);
  std::memcpy(data.data(), bytes.data(), bytes.size());
  return Volume(h.dims, h.spacing, h.origin, std::move(data), unit);
}

// NIfTI-1 single-file reader. Only little-endian, axis-aligned files.
struct NiftiImage {
  std::array<int, 3> dims;
  Eigen::Vector3d spacing;
  Eigen::Vector3d origin;
  std::vector<float> data;
};

NiftiImage load_nifti(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  if (bytes.size() < 352) fail(ErrorCode::kBadHeader, "file too short for a NIfTI-1 header");
  const std::uint8_t* h = bytes.data();
  if (read_le<std::int32_t>(h) != 348) fail(ErrorCode::kBadHeader, "sizeof_hdr != 348 (big-endian files unsupported)");
  if (std::memcmp(h + 344, "n+1\0", 4) != 0) fail(ErrorCode::kBadHeader, "magic is not \"n+1\"");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = read_le<std::int16_t>(h + 40 + 2 * i);
  if (dim[0] < 3 || dim[0] > 7) fail(ErrorCode::kBadHeader, "dim[0] must describe a 3D image");
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) fail(ErrorCode::kBadHeader, "only scalar 3D images are supported");
  }
  NiftiImage out;
  out.dims = {dim[1], dim[2], dim[3]};
  check_dims(out.dims);

  const auto datatype = read_le<std::int16_t>(h + 70);
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = read_le<float>(h + 76 + 4 * i);
  const float vox_offset = read_le<float>(h + 108);
  float slope = read_le<float>(h + 112);
  const float inter = read_le<float>(h + 116);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

  out.spacing = {pixdim[1], pixdim[2], pixdim[3]};
  out.origin = Eigen::Vector3d::Zero();
  std::array<bool, 3> flip{false, false, false};

  const auto qform_code = read_le<std::int16_t>(h + 252);
  const auto sform_code = read_le<std::int16_t>(h + 254);
  if (sform_code > 0) {
    double srow[3][4];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) srow[r][c] = read_le<float>(h + 280 + 16 * r + 4 * c);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (r != c && srow[r][c] != 0.0) fail(ErrorCode::kBadHeader, "oblique sform is not supported");
      }
      if (srow[r][r] == 0.0) fail(ErrorCode::kBadHeader, "singular sform");
      out.spacing[r] = std::abs(srow[r][r]);
      flip[r] = srow[r][r] < 0.0;
      out.origin[r] = srow[r][3];
    }
  } else if (qform_code > 0) {
    const float qb = read_le<float>(h + 256), qc = read_le<float>(h + 260), qd = read_le<float>(h + 264);
    if (qb != 0.0f || qc != 0.0f || qd != 0.0f) fail(ErrorCode::kBadHeader, "rotated qform is not supported");
    for (int r = 0; r < 3; ++r) out.origin[r] = read_le<float>(h + 268 + 4 * r);
    flip[2] = pixdim[0] < 0.0f;
  }
  if ((out.spacing.array() <= 0.0).any() || !out.spacing.allFinite()) {
    fail(ErrorCode::kBadHeader, "pixdim spacing must be positive");
  }

  std::size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;    // uint8
    case 4: elem = 2; break;    // int16
    case 16: elem = 4; break;   // float32
    default: fail(ErrorCode::kUnsupportedDatatype, "NIfTI datatype " + std::to_string(datatype));
  }
  const std::size_t n = product(out.dims);
  const auto offset = static_cast<std::size_t>(vox_offset < 352.0f ? 352.0f : vox_offset);
  if (bytes.size() < offset + n * elem) fail(ErrorCode::kBadHeader, "NIfTI data shorter than dims imply");

  std::vector<float> raw(n);
  const std::uint8_t* p = h + offset;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (datatype) {
      case 2: v = p[i]; break;
      case 4: v = read_le<std::int16_t>(p + 2 * i); break;
      case 16: v = read_le<float>(p + 4 * i); break;
    }
    raw[i] = static_cast<float>(v * slope + inter);
  }

  // Negative axis scaling is folded into positive spacing by reversing the axis.
  out.data.resize(n);
  const auto [nx, ny, nz] = out.dims;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const int si = flip[0] ? nx - 1 - i : i;
        const int sj = flip[1] ? ny - 1 - j : j;
        const int sk = flip[2] ? nz - 1 - k : k;
        out.data[i + static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k)] =
            raw[si + static_cast<std::size_t>(nx) * (sj + static_cast<std::size_t>(ny) * sk)];
      }
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (flip[a]) out.origin[a] -= out.spacing[a] * (out.dims[a] - 1);
  }
  return out;
}

}  // namespace

Volume::Volume(std::array<int, 3> dims, Eigen::Vector3d spacing, Eigen::Vector3d origin, std::vector<float> data,
               VolumeUnit unit)
    : dims_(dims), spacing_(std::move(spacing)), origin_(std::move(origin)), data_(std::move(data)), unit_(unit) {
  check_dims(dims_);
  if ((spacing_.array() <= 0.0).any()) fail(ErrorCode::kBadHeader, "spacing must be positive");
  if (data_.size() != product(dims_)) fail(ErrorCode::kBadHeader, "data length does not match dims");
  for (float v : data_) {
    if (!std::isfinite(v)) fail(ErrorCode::kBadHeader, "non-finite voxel value");
    if (unit_ == VolumeUnit::kAttenuation && v < 0.0f) fail(ErrorCode::kBadHeader, "negative attenuation");
  }
}

Eigen::Vector3d Volume::bounds_max() const {
  const Eigen::Vector3d n(dims_[0], dims_[1], dims_[2]);
  return origin_ + (n.array() - 0.5).matrix().cwiseProduct(spacing_);
}

VolumeMask::VolumeMask(std::array<int, 3> dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
  check_dims(dims_);
  if (bits_.size() != product(dims_)) fail(ErrorCode::kBadHeader, "mask length does not match dims");
}

std::size_t VolumeMask::count() const {
  std::size_t n = 0;
  for (auto b : bits_) n += (b != 0);
  return n;
}

VolumeFormat guess_format(const std::filesystem::path& path) {
  return path.extension() == ".nii" ? VolumeFormat::kNifti1 : VolumeFormat::kRawHeader;
}

Volume load_volume(const std::filesystem::path& path, VolumeFormat format, VolumeUnit nifti_unit) {
  if (format == VolumeFormat::kRawHeader) return load_raw(path);
  NiftiImage img = load_nifti(path);
  return Volume(img.dims, img.spacing, img.origin, std::move(img.data), nifti_unit);
}

Volume load_volume(const std::filesystem::path& path) { return load_volume(path, guess_format(path)); }

void save_volume(const std::filesystem::path& header_path, const Volume& volume) {
  auto data_path = header_path;
  data_path.replace_extension(".raw");
  io::Json header = {
      {"dims", volume.dims()},
      {"spacing", {volume.spacing()[0], volume.spacing()[1], volume.spacing()[2]}},
      {"origin", {volume.origin()[0], volume.origin()[1], volume.origin()[2]}},
      {"dtype", "f32"},
      {"unit", volume.unit() == VolumeUnit::kHounsfield ? "hu" : "mu"},
      {"data_file", data_path.filename().string()},
  };
  const auto& d = volume.data();
  io::write_bytes(data_path, std::span(reinterpret_cast<const std::uint8_t*>(d.data()), d.size() * sizeof(float)));
  io::write_json(header_path, header);
}

VolumeMask load_mask(const std::filesystem::path& path) {
  if (guess_format(path) == VolumeFormat::kNifti1) {
    NiftiImage img = load_nifti(path);
    std::vector<std::uint8_t> bits(img.data.size());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = img.data[i] != 0.0f ? 1 : 0;
    return VolumeMask(img.dims, std::move(bits));
  }
  const RawHeader h = parse_raw_header(path);
  if (h.dtype != "u8") fail(ErrorCode::kUnsupportedDatatype, "mask dtype must be u8, got " + h.dtype);
  auto bytes = io::read_bytes(h.data_path);
  if (bytes.size() != product(h.dims)) fail(ErrorCode::kBadHeader, "mask data size does not match dims");
  for (auto& b : bytes) b = b != 0 ? 1 : 0;
  return VolumeMask(h.dims, std::move(bytes));
}

void save_mask(const std::filesystem::path& header_path, const VolumeMask& mask, const Volume& parent) {
  auto data_path = header_path;
  data_path.replace_extension(".raw");
  io::Json header = {
      {"dims", mask.dims()},
      {"spacing", {parent.spacing()[0], parent.spacing()[1], parent.spacing()[2]}},
      {"origin", {parent.origin()[0], parent.origin()[1], parent.origin()[2]}},
      {"dtype", "u8"},
      {"data_file", data_path.filename().string()},
  };
  io::write_bytes(data_path, mask.bits());
  io::write_json(header_path, header);
}

Volume hu_to_attenuation(const Volume& volume, double mu_water, double hu_clip_min) {
  std::vector<float> mu(volume.voxel_count());
  const auto& hu = volume.data();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double v = hu[i];
    const double m = v < hu_clip_min ? 0.0 : mu_water * (v + 1000.0) / 1000.0;
    mu[i] = static_cast<float>(std::max(0.0, m));
  }
  return Volume(volume.dims(), volume.spacing(), volume.origin(), std::move(mu), VolumeUnit::kAttenuation);
}

double sample_trilinear(const Volume& volume, const Eigen::Vector3d& point) {
  const Eigen::Vector3d q = volume.index_from_world(point);
  return volume.sample_index(q[0], q[1], q[2]);
}

LandmarkSample sample_mask_points(const VolumeMask& mask, const Volume& volume, int count, std::uint64_t seed) {
  if (mask.dims() != volume.dims()) fail(ErrorCode::kSizeMismatch, "mask dims differ from volume dims");
  if (count < 1) fail(ErrorCode::kInvalidArgument, "count must be at least 1");
  std::vector<std::size_t> voxels;
  for (std::size_t i = 0; i < mask.bits().size(); ++i) {
    if (mask.at(i)) voxels.push_back(i);
  }
  if (voxels.empty()) fail(ErrorCode::kEmptyMask, "mask has no true voxels");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, voxels.size() - 1);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  const auto nx = static_cast<std::size_t>(volume.dims()[0]);
  const auto ny = static_cast<std::size_t>(volume.dims()[1]);

  LandmarkSample out;
  out.points.reserve(count);
  for (int n = 0; n < count; ++n) {
    const std::size_t v = voxels[pick(rng)];
    const Eigen::Vector3d ijk(static_cast<double>(v % nx), static_cast<double>((v / nx) % ny),
                              static_cast<double>(v / (nx * ny)));
    const double a = jitter(rng), b = jitter(rng), c = jitter(rng);
    out.points.push_back(volume.world_from_index(ijk + Eigen::Vector3d(a, b, c)));
  }
  return out;
}

}  // namespace rayemb
