#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "otgym/vec2.hpp"

namespace otgym {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrajectoryMetrics {
  double total_length = 0.0;     // µm
  double mean_curvature = 0.0;   // 1/µm
  double angular_deviation = 0.0;  // degrees
  double hf_energy_ratio = 0.0;  // [0, 1]
};

double path_length(std::span<const Vec2> polyline);

/// Mean of 2|turn angle| / (|s_i| + |s_i+1|) over interior vertices. Zero-length
/// segments are skipped.
double mean_curvature(std::span<const Vec2> polyline);

/// Mean absolute heading change over interior vertices, in degrees.
double angular_deviation(std::span<const Vec2> polyline);

/// Fraction of spectral energy above cutoff_fraction * Nyquist, averaged over the
/// x and y coordinates. The polyline is resampled to `samples` points uniformly in
/// arc length and the chord between its endpoints is subtracted first, so a
/// straight segment has no energy at all.
double spectral_smoothness(std::span<const Vec2> polyline, double cutoff_fraction = 0.25,
                           int samples = 256);

TrajectoryMetrics compute_metrics(std::span<const Vec2> polyline, double cutoff_fraction = 0.25);

/// Uniform arc-length resampling to n points.
std::vector<Vec2> resample_by_arc_length(std::span<const Vec2> polyline, int n);

}  // namespace otgym
