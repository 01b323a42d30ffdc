#pragma once

// Synthetic tubular trees standing in for optical-microscopy neuron stacks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "neurogir/volume.hpp"

namespace neurogir {

struct PhantomSpec {
  Dims dims{64, 64, 64};
  std::size_t n_branches = 6;
  double radius_min = 1.0;
  double radius_max = 2.5;
  // Gaussian noise level. Zero switches off the whole corruption model
  // (noise, speckle, contrast variation), leaving image == label when no gaps are cut.
  double noise_sigma = 0.25;
  // Chance that a segment of a thin branch loses its signal over a short stretch.
  double gap_probability = 0.1;
  // Bright background blobs per voxel.
  double speckle_density = 0.0015;
  // Lowest foreground intensity; each branch draws from [contrast_min, 1].
  double contrast_min = 0.55;
  std::uint64_t seed = 0;

  void validate() const {
    for (auto d : dims)
      if (d < 4) throw std::invalid_argument("phantom dims must be at least 4 voxels per axis");
    if (n_branches == 0) throw std::invalid_argument("phantom needs at least one branch");
    if (radius_min < 1.0 || radius_max < radius_min) throw std::invalid_argument("phantom radii must satisfy 1 <= min <= max");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be non-negative");
    for (double p : {gap_probability, speckle_density, contrast_min}) {
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("phantom probabilities must lie in [0, 1]");
    }
  }
};

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"dims", s.dims},
       {"n_branches", s.n_branches},
       {"radius_min", s.radius_min},
       {"radius_max", s.radius_max},
       {"noise_sigma", s.noise_sigma},
       {"gap_probability", s.gap_probability},
       {"speckle_density", s.speckle_density},
       {"contrast_min", s.contrast_min},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
  PhantomSpec d;
  for (const auto& [key, _] : j.items()) {
    nlohmann::json probe;
    to_json(probe, d);
    if (!probe.contains(key)) throw std::invalid_argument("unknown phantom spec key '" + key + "'");
  }
  s.dims = j.value("dims", d.dims);
  s.n_branches = j.value("n_branches", d.n_branches);
  s.radius_min = j.value("radius_min", d.radius_min);
  s.radius_max = j.value("radius_max", d.radius_max);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.gap_probability = j.value("gap_probability", d.gap_probability);
  s.speckle_density = j.value("speckle_density", d.speckle_density);
  s.contrast_min = j.value("contrast_min", d.contrast_min);
  s.seed = j.value("seed", d.seed);
}

namespace detail {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(Vec3 a, Vec3 b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 normalized(Vec3 a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

struct Segment {
  Vec3 from, to;
  double radius;
  double intensity;
  bool gap = false;
  double gap_begin = 0.0, gap_end = 0.0;  // stretch of the segment without signal, as fractions
};

template <typename Rng>
Vec3 random_direction(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v{n(rng), n(rng), n(rng)};
    if (dot(v, v) > 1e-12) return normalized(v);
  }
}

}  // namespace detail

/// Voxelized tree of piecewise-linear tubes plus the degraded image. Each
/// branch after the first sprouts from a random point of an earlier one with
/// a thinner radius. Pure function of `spec`.
inline Sample synth_phantom(const PhantomSpec& spec) {
  using namespace detail;
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3 extent{double(spec.dims[0]), double(spec.dims[1]), double(spec.dims[2])};
  const double shortest = std::min({extent[0], extent[1], extent[2]});
  const bool corrupt = spec.noise_sigma > 0.0;
  const double thin_cutoff = 0.5 * (spec.radius_min + spec.radius_max);

  std::vector<Segment> segments;
  std::vector<std::vector<Vec3>> branch_points;
  std::vector<double> branch_radius;
  auto keep_inside = [&](Vec3 p, Vec3& dir) {
    for (int a = 0; a < 3; ++a) {
      const double margin = 2.0;
      if ((p[a] < margin && dir[a] < 0) || (p[a] > extent[a] - 1 - margin && dir[a] > 0)) dir[a] = -dir[a];
    }
  };
  auto clamp_inside = [&](Vec3 p) {
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], 1.0, extent[a] - 2.0);
    return p;
  };

  for (std::size_t b = 0; b < spec.n_branches; ++b) {
    Vec3 start;
    Vec3 dir;
    double radius;
    if (b == 0) {
      start = {extent[0] * (0.3 + 0.4 * unit(rng)), extent[1] * (0.3 + 0.4 * unit(rng)), 2.0 + 2.0 * unit(rng)};
      dir = normalized(random_direction(rng) + Vec3{0.0, 0.0, 1.5});
      radius = spec.radius_max;
    } else {
      const std::size_t parent = std::uniform_int_distribution<std::size_t>(0, b - 1)(rng);
      const auto& pts = branch_points[parent];
      start = pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)];
      dir = random_direction(rng);
      radius = std::max(spec.radius_min, branch_radius[parent] * (0.6 + 0.25 * unit(rng)));
    }
    const double intensity = corrupt ? spec.contrast_min + (1.0 - spec.contrast_min) * unit(rng) : 1.0;
    const std::size_t pieces = 3 + std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    std::vector<Vec3> pts{start};
    Vec3 p = start;
    for (std::size_t s = 0; s < pieces; ++s) {
      const double length = shortest * (0.12 + 0.12 * unit(rng));
      dir = normalized(dir + 0.6 * random_direction(rng));
      keep_inside(p, dir);
      const Vec3 q = clamp_inside(p + length * dir);
      Segment seg{p, q, radius, intensity};
      if (radius <= thin_cutoff && unit(rng) < spec.gap_probability) {
        const double span = std::min(0.5, 2.5 / std::max(1.0, length));
        seg.gap = true;
        seg.gap_begin = 0.2 + 0.5 * unit(rng);
        seg.gap_end = std::min(1.0, seg.gap_begin + span);
      }
      segments.push_back(seg);
      pts.push_back(q);
      p = q;
    }
    branch_points.push_back(std::move(pts));
    branch_radius.push_back(radius);
  }

  Volume label = Volume::zeros_u8(spec.dims);
  std::vector<double> signal(label.size(), 0.0);
  for (const auto& seg : segments) {
    const Vec3 axis = seg.to - seg.from;
    const double len2 = std::max(dot(axis, axis), 1e-12);
    std::array<std::size_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      const double mn = std::min(seg.from[a], seg.to[a]) - seg.radius - 1;
      const double mx = std::max(seg.from[a], seg.to[a]) + seg.radius + 1;
      lo[a] = std::size_t(std::clamp(std::floor(mn), 0.0, extent[a] - 1));
      hi[a] = std::size_t(std::clamp(std::ceil(mx), 0.0, extent[a] - 1));
    }
    for (std::size_t z = lo[0]; z <= hi[0]; ++z)
      for (std::size_t y = lo[1]; y <= hi[1]; ++y)
        for (std::size_t x = lo[2]; x <= hi[2]; ++x) {
          const Vec3 c{double(z), double(y), double(x)};
          const double t = std::clamp(dot(c - seg.from, axis) / len2, 0.0, 1.0);
          const Vec3 d = c - (seg.from + t * axis);
          if (dot(d, d) > seg.radius * seg.radius) continue;
          const std::size_t i = label.index(z, y, x);
          label.u8()[i] = 1;
          if (!seg.gap || t < seg.gap_begin || t > seg.gap_end) signal[i] = std::max(signal[i], seg.intensity);
        }
  }

  Volume image = Volume::zeros_f32(spec.dims);
  if (corrupt) {
    const auto blobs = std::size_t(std::llround(spec.speckle_density * double(label.size())));
    for (std::size_t k = 0; k < blobs; ++k) {
      const std::size_t z = std::uniform_int_distribution<std::size_t>(0, spec.dims[0] - 1)(rng);
      const std::size_t y = std::uniform_int_distribution<std::size_t>(0, spec.dims[1] - 1)(rng);
      const std::size_t x = std::uniform_int_distribution<std::size_t>(0, spec.dims[2] - 1)(rng);
      const double level = spec.contrast_min + (1.0 - spec.contrast_min) * unit(rng);
      const bool big = unit(rng) < 0.5;
      for (int dz = 0; dz <= int(big); ++dz)
        for (int dy = 0; dy <= int(big); ++dy)
          for (int dx = 0; dx <= int(big); ++dx) {
            if (z + dz < spec.dims[0] && y + dy < spec.dims[1] && x + dx < spec.dims[2]) {
              auto& v = signal[label.index(z + dz, y + dy, x + dx)];
              v = std::max(v, level);
            }
          }
    }
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : signal) v += noise(rng);
  }
  for (std::size_t i = 0; i < signal.size(); ++i) image.f32()[i] = float(std::clamp(signal[i], 0.0, 1.0));
  image.meta = {{"source", "phantom"}, {"seed", spec.seed}};
  label.meta = image.meta;
  return {std::move(image), std::move(label)};
}

}  // namespace neurogir
