#include "csr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace csr {

namespace {

// Portable uniform draw in [lo, hi): the 53 high bits of a 64-bit word.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 rng_;
};

PlaneTensor voronoi_albedo(const SceneSpec& spec, Uniform& uni) {
  struct Site {
    double x, y;
    std::array<double, 3> color;
  };
  std::vector<Site> sites(spec.albedo_cells);
  for (Site& s : sites) {
    s.x = uni(0.0, spec.width);
    s.y = uni(0.0, spec.height);
    for (double& c : s.color) c = uni(0.1, 1.0);
  }
  PlaneTensor albedo(spec.height, spec.width, 3);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t i = 0; i < sites.size(); ++i) {
        const double dx = x + 0.5 - sites[i].x;
        const double dy = y + 0.5 - sites[i].y;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      for (int c = 0; c < 3; ++c) albedo(y, x, c) = sites[best].color[c];
    }
  }
  return albedo;
}

PlaneTensor smooth_shading(const SceneSpec& spec, Uniform& uni) {
  const int g = spec.shading_smoothness;
  std::vector<double> grid(static_cast<std::size_t>(g) * g);
  for (double& v : grid) v = uni(0.2, 1.0);
  auto coord = [g](int i, int n) { return n > 1 ? static_cast<double>(i) * (g - 1) / (n - 1) : 0.0; };
  PlaneTensor shading(spec.height, spec.width, 1);
  for (int y = 0; y < spec.height; ++y) {
    const double gy = coord(y, spec.height);
    const int y0 = std::min(static_cast<int>(gy), g - 2);
    const double ty = gy - y0;
    for (int x = 0; x < spec.width; ++x) {
      const double gx = coord(x, spec.width);
      const int x0 = std::min(static_cast<int>(gx), g - 2);
      const double tx = gx - x0;
      const double top = (1 - tx) * grid[y0 * g + x0] + tx * grid[y0 * g + x0 + 1];
      const double bottom = (1 - tx) * grid[(y0 + 1) * g + x0] + tx * grid[(y0 + 1) * g + x0 + 1];
      shading(y, x, 0) = std::clamp((1 - ty) * top + ty * bottom, 0.2, 1.0);
    }
  }
  return shading;
}

// Union of random discs until roughly `fraction` of the pixels are covered.
PlaneTensor blob_mask(const SceneSpec& spec, Uniform& uni) {
  PlaneTensor mask(spec.height, spec.width, 1);
  if (spec.specular_fraction <= 0.0) return mask;
  const double target = spec.specular_fraction * static_cast<double>(mask.pixels());
  const double short_side = std::min(spec.height, spec.width);
  const double r_min = std::max(1.5, short_side / 16.0);
  const double r_max = std::max(r_min, short_side / 6.0);
  double covered = 0.0;
  for (int attempt = 0; attempt < 10000 && covered < target; ++attempt) {
    const double cx = uni(0.0, spec.width);
    const double cy = uni(0.0, spec.height);
    const double r = uni(r_min, r_max);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= r * r && mask(y, x, 0) == 0.0) {
          mask(y, x, 0) = 1.0;
          covered += 1.0;
        }
      }
    }
  }
  return mask;
}

}  // namespace

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("scene: size must be positive");
  if (albedo_cells < 1) throw std::invalid_argument("scene: albedo_cells must be >= 1");
  if (shading_smoothness < 2) throw std::invalid_argument("scene: shading_smoothness must be >= 2");
  for (double c : light_color) {
    if (!(c >= 0.5 && c <= 1.0)) throw std::invalid_argument("scene: light color must lie in [0.5, 1]");
  }
  if (!(specular_fraction >= 0.0 && specular_fraction <= 0.5)) {
    throw std::invalid_argument("scene: specular_fraction must lie in [0, 0.5]");
  }
  if (!(specular_strength >= 0.0 && std::isfinite(specular_strength))) {
    throw std::invalid_argument("scene: specular_strength must be >= 0");
  }
}

Scene generate(const SceneSpec& spec) {
  spec.validate();
  Uniform uni(spec.seed);
  Scene scene;
  scene.albedo = voronoi_albedo(spec, uni);
  scene.shading_gray = smooth_shading(spec, uni);
  scene.light_color = spec.light_color;
  // Drawn last so that the mask never perturbs albedo or shading.
  scene.violation_mask = blob_mask(spec, uni);
  if (spec.specular_strength == 0.0) {
    for (double& m : scene.violation_mask.data()) m = 0.0;
  }

  scene.image = PlaneTensor(spec.height, spec.width, 3);
  for (std::size_t p = 0; p < scene.image.pixels(); ++p) {
    const double b = scene.shading_gray[p];
    const double highlight = scene.violation_mask[p] * spec.specular_strength * b;
    for (int c = 0; c < 3; ++c) {
      scene.image[p * 3 + c] = scene.albedo[p * 3 + c] * b * scene.light_color[c] + highlight;
    }
  }
  return scene;
}

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::vector<SceneRecord> make_dataset(int n_scenes, std::uint64_t base_seed,
                                      const SceneSpec& spec_template, bool vary_light) {
  if (n_scenes < 2) throw std::invalid_argument("make_dataset: need at least 2 scenes for a split");
  std::vector<SceneRecord> out;
  out.reserve(n_scenes);
  for (int i = 0; i < n_scenes; ++i) {
    SceneSpec spec = spec_template;
    spec.seed = base_seed + static_cast<std::uint64_t>(i);
    if (vary_light) {
      Uniform light_rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
      for (double& c : spec.light_color) c = light_rng(0.5, 1.0);
    }
    out.push_back({i, spec.seed, i % 2 == 0 ? Split::train : Split::test, generate(spec)});
  }
  return out;
}

std::vector<SceneRecord> select_split(const std::vector<SceneRecord>& all, Split split) {
  std::vector<SceneRecord> out;
  for (const SceneRecord& r : all)
    if (r.split == split) out.push_back(r);
  return out;
}

}  // namespace csr
