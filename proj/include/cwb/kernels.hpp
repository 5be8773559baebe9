#pragma once

// Data-parallel inner loops shared by the estimators.
//
// Every kernel has a plain serial reference in `kernels::serial` and an
// OpenMP version in `kernels::parallel`. The parallel versions split work
// into fixed-size blocks and merge partial results in block order, so their
// output does not depend on the number of threads. Argmin scans, bootstrap
// draws and KDE evaluation match the serial reference exactly; the Gram
// accumulation agrees up to floating-point reassociation.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cwb::kernels {

inline constexpr std::size_t kBlockRows = 1024;

struct Gram {
  Eigen::MatrixXd xtwx;  // X' diag(w) X
  Eigen::VectorXd xtr;   // X' r
};

struct Nearest {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t index = npos;  // position in the candidate arrays
  double distance = std::numeric_limits<double>::infinity();
  bool found() const { return index != npos; }
};

// Deterministic stream for resample `stream` of a run seeded with `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

namespace serial {

Gram weighted_gram(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> r);

// Closest available candidate to `query` by |query - values[j]|, limited to
// distance <= caliper. Ties go to the smaller tie_key.
Nearest nearest_scalar(double query, std::span<const double> values, std::span<const std::uint8_t> available,
                       std::span<const std::int64_t> tie_key, double caliper);

// Same, with Euclidean distance between `query` and the columns of `points`.
Nearest nearest_vector(const Eigen::VectorXd& query, const Eigen::MatrixXd& points,
                       std::span<const std::uint8_t> available, std::span<const std::int64_t> tie_key, double caliper);

// Mean of each of n_boot resamples (with replacement) of `values`.
std::vector<double> bootstrap_means(std::span<const double> values, std::size_t n_boot, std::uint64_t seed);

// Normalized IPW difference in means for each of n_boot row resamples.
// Resamples lacking a treated or control row yield NaN.
std::vector<double> bootstrap_hajek(std::span<const double> outcome, std::span<const double> treated,
                                    std::span<const double> weights, std::size_t n_boot, std::uint64_t seed);

// Gaussian KDE evaluated at every grid point.
std::vector<double> gaussian_kde(std::span<const double> data, double bandwidth, std::span<const double> grid);

}  // namespace serial

namespace parallel {

Gram weighted_gram(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> r);
Nearest nearest_scalar(double query, std::span<const double> values, std::span<const std::uint8_t> available,
                       std::span<const std::int64_t> tie_key, double caliper);
Nearest nearest_vector(const Eigen::VectorXd& query, const Eigen::MatrixXd& points,
                       std::span<const std::uint8_t> available, std::span<const std::int64_t> tie_key, double caliper);
std::vector<double> bootstrap_means(std::span<const double> values, std::size_t n_boot, std::uint64_t seed);
std::vector<double> bootstrap_hajek(std::span<const double> outcome, std::span<const double> treated,
                                    std::span<const double> weights, std::size_t n_boot, std::uint64_t seed);
std::vector<double> gaussian_kde(std::span<const double> data, double bandwidth, std::span<const double> grid);

}  // namespace parallel

}  // namespace cwb::kernels
