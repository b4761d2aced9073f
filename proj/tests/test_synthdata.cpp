#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csr/synthdata.hpp"

using namespace csr;

namespace {

SceneSpec spec_with(std::uint64_t seed, double fraction, double strength) {
  SceneSpec s;
  s.seed = seed;
  s.light_color = {0.9, 0.7, 0.6};
  s.specular_fraction = fraction;
  s.specular_strength = strength;
  return s;
}

void check_scene_invariants(const Scene& s) {
  std::size_t on_mask = 0;
  for (std::size_t p = 0; p < s.image.pixels(); ++p) {
    const bool masked = s.violation_mask[p] != 0.0;
    CHECK((s.violation_mask[p] == 0.0 || s.violation_mask[p] == 1.0));
    on_mask += masked;
    for (int c = 0; c < 3; ++c) {
      const double lambertian = s.albedo[p * 3 + c] * s.shading_gray[p] * s.light_color[c];
      if (masked) {
        CHECK(s.image[p * 3 + c] - lambertian > 0.0);
      } else {
        CHECK(std::abs(s.image[p * 3 + c] - lambertian) <= 1e-9);
      }
      CHECK(s.albedo[p * 3 + c] >= 0.1);
      CHECK(s.albedo[p * 3 + c] <= 1.0);
      CHECK(std::isfinite(std::log(s.image[p * 3 + c])));
    }
    CHECK(s.shading_gray[p] >= 0.2);
    CHECK(s.shading_gray[p] <= 1.0);
  }
}

}  // namespace

TEST_SUITE("synthdata") {
  TEST_CASE("same seed, same scene") {
    SceneSpec s = spec_with(42, 0.15, 1.0);
    s.albedo_cells = 8;
    const Scene a = generate(s);
    const Scene b = generate(s);
    CHECK(a.image == b.image);
    CHECK(a.albedo == b.albedo);
    CHECK(a.shading_gray == b.shading_gray);
    CHECK(a.violation_mask == b.violation_mask);
    s.seed = 43;
    CHECK(generate(s).image != a.image);
  }

  TEST_CASE("scene invariants hold exhaustively") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) check_scene_invariants(generate(spec_with(seed, 0.15, 1.0)));
  }

  TEST_CASE("no specular fraction: empty mask, Lambertian everywhere") {
    const Scene s = generate(spec_with(5, 0.0, 1.0));
    for (double m : s.violation_mask.data()) CHECK(m == 0.0);
    check_scene_invariants(s);
  }

  TEST_CASE("zero strength equals zero fraction") {
    const Scene a = generate(spec_with(6, 0.0, 0.0));
    const Scene b = generate(spec_with(6, 0.3, 0.0));
    CHECK(a.image == b.image);
    CHECK(a.albedo == b.albedo);
    CHECK(b.violation_mask == a.violation_mask);
  }

  TEST_CASE("mask covers roughly the requested fraction") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Scene s = generate(spec_with(seed, 0.15, 1.0));
      double covered = 0;
      for (double m : s.violation_mask.data()) covered += m;
      const double frac = covered / s.violation_mask.pixels();
      CHECK(frac >= 0.15);
      CHECK(frac < 0.3);
    }
  }

  TEST_CASE("albedo is piecewise constant") {
    SceneSpec s = spec_with(7, 0.0, 0.0);
    s.albedo_cells = 4;
    const Scene sc = generate(s);
    std::vector<std::array<double, 3>> colors;
    for (std::size_t p = 0; p < sc.albedo.pixels(); ++p) {
      const std::array<double, 3> c{sc.albedo[p * 3], sc.albedo[p * 3 + 1], sc.albedo[p * 3 + 2]};
      if (std::find(colors.begin(), colors.end(), c) == colors.end()) colors.push_back(c);
    }
    CHECK(colors.size() <= 4);
    CHECK(colors.size() >= 2);
  }

  TEST_CASE("scene parameters are validated") {
    SceneSpec s;
    s.light_color = {0.4, 1, 1};
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
    s = SceneSpec{};
    s.specular_fraction = 0.6;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
    s = SceneSpec{};
    s.specular_strength = -1;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
    s = SceneSpec{};
    s.height = 0;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
  }

  TEST_CASE("dataset split and determinism") {
    const SceneSpec t = spec_with(0, 0.15, 1.0);
    const auto two = make_dataset(2, 10, t);
    CHECK(select_split(two, Split::train).size() == 1);
    CHECK(select_split(two, Split::test).size() == 1);
    CHECK_THROWS_AS(make_dataset(1, 10, t), std::invalid_argument);

    const auto a = make_dataset(20, 7, t);
    const auto b = make_dataset(20, 7, t);
    REQUIRE(a.size() == 20);
    CHECK(select_split(a, Split::train).size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == static_cast<int>(i));
      CHECK(a[i].seed == 7 + i);
      CHECK(a[i].split == (i % 2 == 0 ? Split::train : Split::test));
      CHECK(a[i].scene.image == b[i].scene.image);
      for (double c : a[i].scene.light_color) {
        CHECK(c >= 0.5);
        CHECK(c <= 1.0);
      }
      check_scene_invariants(a[i].scene);
    }
    CHECK(a[0].scene.light_color != a[1].scene.light_color);
  }
}
