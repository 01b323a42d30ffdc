#pragma once

// Voxelwise precision / recall / F1 over a probability-threshold sweep, the
// intensity-threshold baseline, and max-intensity projections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "neurogir/volume.hpp"

namespace neurogir {

struct MetricsRecord {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct SweepResult {
  std::vector<MetricsRecord> records;
  MetricsRecord best;
};

/// 0.05, 0.10, ..., 0.95.
inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 19; ++k) t.push_back(double(k) / 20.0);
  return t;
}

/// Harmonic mean, with 0 when both inputs are 0.
inline double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

inline MetricsRecord metrics_from_counts(double threshold, std::size_t tp, std::size_t fp, std::size_t fn,
                                         std::size_t tn = 0) {
  MetricsRecord r{threshold, 0.0, 0.0, 0.0, tp, fp, fn, tn};
  r.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  r.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

/// A voxel counts as predicted foreground when its probability is >= the
/// threshold. The best record maximizes F1; ties keep the lower threshold.
inline SweepResult threshold_sweep(std::span<const float> prob, std::span<const std::uint8_t> label,
                                   const std::vector<double>& thresholds = default_thresholds()) {
  if (prob.size() != label.size()) {
    throw std::invalid_argument("threshold_sweep: " + std::to_string(prob.size()) + " probabilities vs " +
                                std::to_string(label.size()) + " labels");
  }
  SweepResult out;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    const auto tf = float(t);
    for (std::size_t i = 0; i < prob.size(); ++i) {
      const bool pred = prob[i] >= tf;
      const bool truth = label[i] != 0;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
      tn += !pred && !truth;
    }
    out.records.push_back(metrics_from_counts(t, tp, fp, fn, tn));
    if (out.records.size() == 1 || out.records.back().f1 > out.best.f1) out.best = out.records.back();
  }
  return out;
}

inline SweepResult threshold_sweep(const Volume& prob, const Volume& label,
                                   const std::vector<double>& thresholds = default_thresholds()) {
  if (prob.dims != label.dims) throw std::invalid_argument("threshold_sweep: volume dims differ");
  return threshold_sweep(std::span<const float>(prob.f32()), std::span<const std::uint8_t>(label.u8()), thresholds);
}

/// The same sweep applied straight to image intensities in [0, 1].
inline SweepResult simple_threshold_baseline(const Volume& image, const Volume& label,
                                             const std::vector<double>& thresholds = default_thresholds()) {
  return threshold_sweep(normalize_image(image), label, thresholds);
}

enum class Axis { depth, height, width };

inline Axis parse_axis(std::string_view s) {
  if (s == "depth") return Axis::depth;
  if (s == "height") return Axis::height;
  if (s == "width") return Axis::width;
  throw std::invalid_argument("bad projection axis '" + std::string(s) + "' (expected depth|height|width)");
}

struct Image2D {
  std::size_t rows = 0, cols = 0;
  std::vector<float> pixels;
};

/// Per-pixel maximum along `axis`; the remaining two axes keep their order.
inline Image2D max_projection(const Volume& v, Axis axis) {
  const auto& d = v.dims;
  Image2D img;
  switch (axis) {
    case Axis::depth: img.rows = d[1], img.cols = d[2]; break;
    case Axis::height: img.rows = d[0], img.cols = d[2]; break;
    case Axis::width: img.rows = d[0], img.cols = d[1]; break;
  }
  img.pixels.assign(img.rows * img.cols, -std::numeric_limits<float>::infinity());
  for (std::size_t z = 0; z < d[0]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[2]; ++x) {
        std::size_t p = 0;
        switch (axis) {
          case Axis::depth: p = y * d[2] + x; break;
          case Axis::height: p = z * d[2] + x; break;
          case Axis::width: p = z * d[1] + y; break;
        }
        img.pixels[p] = std::max(img.pixels[p], v.value(v.index(z, y, x)));
      }
  return img;
}

/// 8-bit binary PGM (P5). Pixel values are clamped to [0, 1] and scaled to 0..255.
inline void write_pgm(const Image2D& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << img.cols << ' ' << img.rows << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace neurogir
