#include <cmath>
#include <cstring>

#include "rayemb/drr.hpp"
#include "rayemb/error.hpp"
#include "rayemb/io.hpp"

namespace rayemb {

namespace {

const char* kind_name(ImageKind kind) { return kind == ImageKind::kIntensity ? "intensity" : "log_attenuation"; }

ImageKind parse_kind(const std::string& name) {
  if (name == "intensity") return ImageKind::kIntensity;
  if (name == "log_attenuation") return ImageKind::kLogAttenuation;
  fail(ErrorCode::kBadHeader, "unknown image kind " + name);
}

io::Json header_for(const DetectorImage& image) {
  return {{"width", image.width}, {"height", image.height}, {"pixel_mm", image.pixel_mm}, {"kind", kind_name(image.kind)}};
}

void read_header(const io::Json& header, DetectorImage& image) {
  try {
    image.width = header.at("width").get<int>();
    image.height = header.at("height").get<int>();
    image.pixel_mm = header.value("pixel_mm", 1.0);
    image.kind = parse_kind(header.value("kind", std::string("intensity")));
  } catch (const io::Json::exception& e) {
    fail(ErrorCode::kBadHeader, std::string("image header: ") + e.what());
  }
  if (image.width < 1 || image.height < 1) fail(ErrorCode::kBadHeader, "image dims must be positive");
}

}  // namespace

void save_image_raw(const std::filesystem::path& header_path, const DetectorImage& image) {
  auto data_path = header_path;
  data_path.replace_extension(".f32");
  std::vector<float> data(image.values.begin(), image.values.end());
  io::Json header = header_for(image);
  header["data_file"] = data_path.filename().string();
  io::write_bytes(data_path, std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size() * sizeof(float)));
  io::write_json(header_path, header);
}

DetectorImage load_image_raw(const std::filesystem::path& header_path) {
  const io::Json header = io::read_json(header_path);
  DetectorImage image;
  read_header(header, image);
  auto data_path = header_path;
  data_path.replace_extension(".f32");
  if (header.contains("data_file")) data_path = header_path.parent_path() / header.at("data_file").get<std::string>();
  const auto bytes = io::read_bytes(data_path);
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  if (bytes.size() != n * sizeof(float)) fail(ErrorCode::kBadHeader, "image data size does not match header");
  std::vector<float> data(n);
  std::memcpy(data.data(), bytes.data(), bytes.size());
  image.values.assign(data.begin(), data.end());
  return image;
}

void save_image_pgm(const std::filesystem::path& pgm_path, const DetectorImage& image) {
  double lo = 0.0, hi = 0.0;
  if (!image.values.empty()) {
    lo = *std::min_element(image.values.begin(), image.values.end());
    hi = *std::max_element(image.values.begin(), image.values.end());
  }
  const std::string head = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  const double range = hi - lo;
  for (double v : image.values) {
    const auto q = static_cast<std::uint16_t>(range > 0.0 ? std::lround((v - lo) / range * 65535.0) : 0);
    bytes.push_back(static_cast<std::uint8_t>(q >> 8));
    bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  io::write_bytes(pgm_path, bytes);
  io::Json side = header_for(image);
  side["min"] = lo;
  side["max"] = hi;
  auto side_path = pgm_path;
  side_path.replace_extension(".json");
  io::write_json(side_path, side);
}

DetectorImage load_image_pgm(const std::filesystem::path& pgm_path) {
  auto side_path = pgm_path;
  side_path.replace_extension(".json");
  const io::Json side = io::read_json(side_path);
  DetectorImage image;
  read_header(side, image);
  const double lo = side.value("min", 0.0);
  const double hi = side.value("max", 1.0);

  const auto bytes = io::read_bytes(pgm_path);
  // Header: magic, width, height, maxval, each whitespace-separated.
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") fail(ErrorCode::kBadHeader, "not a binary PGM");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  ++pos;
  if (w != image.width || h != image.height) fail(ErrorCode::kBadHeader, "PGM dims differ from sidecar");
  if (maxval != 65535) fail(ErrorCode::kUnsupportedDatatype, "only 16-bit PGM is supported");
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + 2 * n) fail(ErrorCode::kBadHeader, "PGM data truncated");
  image.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned q = (static_cast<unsigned>(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    image.values[i] = lo + (hi - lo) * q / 65535.0;
  }
  return image;
}

void save_ppm(const std::filesystem::path& path, int width, int height, std::span<const Rgb> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) fail(ErrorCode::kSizeMismatch, "ppm pixel count");
  const std::string head = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (const auto& p : pixels) {
    bytes.push_back(p.r);
    bytes.push_back(p.g);
    bytes.push_back(p.b);
  }
  io::write_bytes(path, bytes);
}

}  // namespace rayemb
