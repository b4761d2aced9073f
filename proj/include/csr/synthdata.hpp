#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "csr/tensor.hpp"

namespace csr {

/// Parameters of one procedural scene.
struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 32;
  int width = 32;
  int albedo_cells = 8;        // Voronoi sites
  int shading_smoothness = 4;  // side of the low-res shading grid
  std::array<double, 3> light_color{1.0, 1.0, 1.0};  // each in [0.5, 1]
  double specular_fraction = 0.0;                     // [0, 0.5]
  double specular_strength = 0.0;                     // >= 0

  void validate() const;
};

/// Linear-domain scene. Off the violation mask,
///   image_c = albedo_c * shading_gray * light_color_c;
/// on it, specular_strength * shading_gray is added to every channel.
struct Scene {
  PlaneTensor image;           // HxWx3, in [0, 1 + strength]
  PlaneTensor albedo;          // HxWx3, in [0.1, 1]
  PlaneTensor shading_gray;    // HxWx1, in [0.2, 1]
  std::array<double, 3> light_color{};
  PlaneTensor violation_mask;  // HxWx1, 0 or 1
};

Scene generate(const SceneSpec& spec);

enum class Split { train, test };

const char* to_string(Split split);

struct SceneRecord {
  int id = 0;
  std::uint64_t seed = 0;
  Split split = Split::train;
  Scene scene;
};

/// n scenes seeded base_seed + index; even ids train, odd ids test. With
/// `vary_light`, each scene draws its own light color in [0.5, 1] from its
/// seed; otherwise the template's color is used.
std::vector<SceneRecord> make_dataset(int n_scenes, std::uint64_t base_seed,
                                      const SceneSpec& spec_template, bool vary_light = true);

std::vector<SceneRecord> select_split(const std::vector<SceneRecord>& all, Split split);

}  // namespace csr
