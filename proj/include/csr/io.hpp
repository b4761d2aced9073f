#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "csr/synthdata.hpp"
#include "csr/tensor.hpp"

namespace csr {

/// Raw float file: "CSRF0001", u32 height, width, channels (little-endian),
/// then float64 values in row-major HWC order. Round-trips bit-exactly.
void write_raw(std::ostream& out, const PlaneTensor& t);
PlaneTensor read_raw(std::istream& in);
void save_raw(const std::filesystem::path& path, const PlaneTensor& t);
PlaneTensor load_raw(const std::filesystem::path& path);

/// 8-bit preview value: clip(v * scale, 0, 1) ^ (1/2.2), rounded.
unsigned char preview_level(double v, double scale = 1.0);

/// Writes a 1- or 3-channel preview PNG. Previews are lossy and never read
/// back. `scale` multiplies values before tone mapping (heatmaps pass
/// 1/max to use the full range).
void save_png(const std::filesystem::path& path, const PlaneTensor& t, double scale = 1.0);

/// Dataset directory: `manifest.txt` with one `id seed split r g b` line per
/// scene, and `scene_NNN/{image,albedo,shading,mask}.csrf` plus PNG previews.
void save_dataset(const std::filesystem::path& dir, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> load_dataset(const std::filesystem::path& dir);

std::string scene_dir_name(int id);

}  // namespace csr
