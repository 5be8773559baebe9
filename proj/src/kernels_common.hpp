#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "cwb/kernels.hpp"

namespace cwb::kernels::detail {

// Unbiased-enough multiply-shift reduction; portable across standard
// libraries, unlike std::uniform_int_distribution.
inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline double resample_mean(std::span<const double> values, std::uint64_t seed, std::size_t b) {
  std::mt19937_64 rng(stream_seed(seed, b));
  const std::size_t n = values.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += values[draw_index(rng, n)];
  return sum / static_cast<double>(n);
}

inline double resample_hajek(std::span<const double> y, std::span<const double> t, std::span<const double> w,
                             std::uint64_t seed, std::size_t b) {
  std::mt19937_64 rng(stream_seed(seed, b));
  const std::size_t n = y.size();
  double wy1 = 0.0, w1 = 0.0, wy0 = 0.0, w0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = draw_index(rng, n);
    if (t[k] == 1.0) {
      wy1 += w[k] * y[k];
      w1 += w[k];
    } else {
      wy0 += w[k] * y[k];
      w0 += w[k];
    }
  }
  if (w1 == 0.0 || w0 == 0.0) return std::nan("");
  return wy1 / w1 - wy0 / w0;
}

inline double kde_at(std::span<const double> data, double h, double x) {
  const double norm = 1.0 / (static_cast<double>(data.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  double acc = 0.0;
  for (double d : data) {
    const double u = (x - d) / h;
    acc += std::exp(-0.5 * u * u);
  }
  return acc * norm;
}

// Strict improvement test for argmin scans with id tie-breaking.
inline bool improves(double d, std::int64_t key, double best_d, std::int64_t best_key, bool have_best) {
  if (!have_best) return true;
  if (d < best_d) return true;
  return d == best_d && key < best_key;
}

}  // namespace cwb::kernels::detail
