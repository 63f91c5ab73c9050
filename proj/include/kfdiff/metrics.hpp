#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kfdiff/matrix.hpp"
#include "kfdiff/motion_data.hpp"

namespace kfdiff {

// Mean per-frame L2 distance over non-keyframe rows, minimized over samples.
double ade(const MatrixF& gt, std::span<const MatrixF> samples, const KeyframeMask& mask);

// Mean L2 distance between generated rows and keyframes at the keyframe indices.
double k_err(const MatrixF& gen, const MatrixF& keyframes, std::span<const int> indices);

// Per keyframe i: mean of ||kf_i - x_{i-1}|| and ||x_{i+1} - kf_i|| over the
// neighbours that exist; averaged over keyframes.
double k_trans(const MatrixF& gen, const MatrixF& keyframes, std::span<const int> indices);

// Randomly split the samples into two halves and average the L2 distance of
// `pair_count` pairs drawn across the halves.
double diversity(std::span<const MatrixF> samples, int pair_count, std::uint64_t seed);

// Per-motion features: channel means, channel stds, mean speed and mean
// acceleration magnitude (2D + 2 values).
std::vector<double> motion_features(const MatrixF& motion);

// Frechet distance between Gaussian fits of two feature sets (rows = items).
double frechet_distance(const MatrixD& a, const MatrixD& b);
double frechet_feature_distance(std::span<const MatrixF> a, std::span<const MatrixF> b);

struct MetricBundle {
  double ade = 0.0;
  double k_err = 0.0;
  double k_trans = 0.0;
  double diversity = 0.0;
  double frechet = 0.0;
};

}  // namespace kfdiff
