#include "csr/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "byte_io.hpp"
#include "csr/errors.hpp"

namespace csr {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRawMagic = "CSRF0001";

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return in;
}

}  // namespace

void write_raw(std::ostream& out, const PlaneTensor& t) {
  out.write(kRawMagic, 8);
  detail::put_le(out, static_cast<std::uint32_t>(t.height()));
  detail::put_le(out, static_cast<std::uint32_t>(t.width()));
  detail::put_le(out, static_cast<std::uint32_t>(t.channels()));
  for (double v : t.data()) detail::put_f64(out, v);
}

PlaneTensor read_raw(std::istream& in) {
  detail::expect_magic(in, kRawMagic);
  const auto h = detail::get_le<std::uint32_t>(in);
  const auto w = detail::get_le<std::uint32_t>(in);
  const auto c = detail::get_le<std::uint32_t>(in);
  constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 28;
  if (h == 0 || w == 0 || c == 0 || std::uint64_t{h} * w * c > kMaxValues) {
    throw DataError("raw file has invalid dimensions");
  }
  std::vector<double> values(static_cast<std::size_t>(h) * w * c);
  for (double& v : values) v = detail::get_f64(in);
  return PlaneTensor(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(values));
}

void save_raw(const fs::path& path, const PlaneTensor& t) {
  auto out = open_out(path);
  write_raw(out, t);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

PlaneTensor load_raw(const fs::path& path) {
  auto in = open_in(path);
  try {
    return read_raw(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

unsigned char preview_level(double v, double scale) {
  double x = v * scale;
  if (!(x > 0.0)) x = 0.0;  // also maps NaN to black
  x = std::min(x, 1.0);
  return static_cast<unsigned char>(std::lround(255.0 * std::pow(x, 1.0 / 2.2)));
}

void save_png(const fs::path& path, const PlaneTensor& t, double scale) {
  if (t.channels() != 1 && t.channels() != 3) {
    throw std::invalid_argument("save_png: expected 1 or 3 channels");
  }
  std::vector<unsigned char> pixels(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) pixels[i] = preview_level(t[i], scale);

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(t.width());
  image.height = static_cast<png_uint_32>(t.height());
  image.format = t.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::string name = path.string();
  if (!png_image_write_to_file(&image, name.c_str(), 0, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write png " + name + ": " + msg);
  }
}

std::string scene_dir_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", id);
  return buf;
}

void save_dataset(const fs::path& dir, const std::vector<SceneRecord>& records) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream manifest;
  manifest << "# id seed split light_r light_g light_b\n";
  manifest.precision(17);
  for (const SceneRecord& r : records) {
    manifest << r.id << ' ' << r.seed << ' ' << to_string(r.split);
    for (double c : r.scene.light_color) manifest << ' ' << c;
    manifest << '\n';

    const fs::path sd = dir / scene_dir_name(r.id);
    fs::create_directories(sd, ec);
    if (ec) throw IoError("cannot create " + sd.string() + ": " + ec.message());
    save_raw(sd / "image.csrf", r.scene.image);
    save_raw(sd / "albedo.csrf", r.scene.albedo);
    save_raw(sd / "shading.csrf", r.scene.shading_gray);
    save_raw(sd / "mask.csrf", r.scene.violation_mask);
    save_png(sd / "image.png", r.scene.image);
    save_png(sd / "albedo.png", r.scene.albedo);
    save_png(sd / "shading.png", r.scene.shading_gray);
    save_png(sd / "mask.png", r.scene.violation_mask);
  }
  auto out = open_out(dir / "manifest.txt");
  out << manifest.str();
  if (!out) throw IoError("write failed: " + (dir / "manifest.txt").string());
}

std::vector<SceneRecord> load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("no dataset manifest at " + manifest_path.string());

  std::vector<SceneRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SceneRecord r;
    std::string split;
    ls >> r.id >> r.seed >> split;
    for (double& c : r.scene.light_color) ls >> c;
    std::string extra;
    if (!ls || (ls >> extra) || (split != "train" && split != "test") || r.id < 0) {
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) + ": malformed entry");
    }
    r.split = split == "train" ? Split::train : Split::test;

    const fs::path sd = dir / scene_dir_name(r.id);
    r.scene.image = load_raw(sd / "image.csrf");
    r.scene.albedo = load_raw(sd / "albedo.csrf");
    r.scene.shading_gray = load_raw(sd / "shading.csrf");
    r.scene.violation_mask = load_raw(sd / "mask.csrf");
    const Scene& s = r.scene;
    if (s.image.channels() != 3 || s.albedo.channels() != 3 || s.shading_gray.channels() != 1 ||
        s.violation_mask.channels() != 1 || !s.image.same_spatial(s.albedo) ||
        !s.image.same_spatial(s.shading_gray) || !s.image.same_spatial(s.violation_mask)) {
      throw DataError(sd.string() + ": inconsistent scene files");
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError(manifest_path.string() + ": no scenes");
  return records;
}

}  // namespace csr
