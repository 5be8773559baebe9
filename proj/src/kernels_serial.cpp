#include "cwb/kernels.hpp"

#include "kernels_common.hpp"

namespace cwb::kernels {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over a mix of both inputs.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace serial {

Gram weighted_gram(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> r) {
  const auto n = x.rows();
  const auto p = x.cols();
  Gram g{Eigen::MatrixXd::Zero(p, p), Eigen::VectorXd::Zero(p)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index a = 0; a < p; ++a) {
      g.xtr(a) += x(i, a) * r[i];
      for (Eigen::Index b = 0; b < p; ++b) g.xtwx(a, b) += w[i] * x(i, a) * x(i, b);
    }
  }
  return g;
}

Nearest nearest_scalar(double query, std::span<const double> values, std::span<const std::uint8_t> available,
                       std::span<const std::int64_t> tie_key, double caliper) {
  Nearest best;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (!available[j]) continue;
    const double d = std::abs(query - values[j]);
    if (d > caliper) continue;
    if (detail::improves(d, tie_key[j], best.distance, best.found() ? tie_key[best.index] : 0, best.found())) {
      best.index = j;
      best.distance = d;
    }
  }
  return best;
}

Nearest nearest_vector(const Eigen::VectorXd& query, const Eigen::MatrixXd& points,
                       std::span<const std::uint8_t> available, std::span<const std::int64_t> tie_key, double caliper) {
  Nearest best;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (!available[uj]) continue;
    const double d = (points.col(j) - query).norm();
    if (d > caliper) continue;
    if (detail::improves(d, tie_key[uj], best.distance, best.found() ? tie_key[best.index] : 0, best.found())) {
      best.index = uj;
      best.distance = d;
    }
  }
  return best;
}

std::vector<double> bootstrap_means(std::span<const double> values, std::size_t n_boot, std::uint64_t seed) {
  std::vector<double> out(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) out[b] = detail::resample_mean(values, seed, b);
  return out;
}

std::vector<double> bootstrap_hajek(std::span<const double> outcome, std::span<const double> treated,
                                    std::span<const double> weights, std::size_t n_boot, std::uint64_t seed) {
  std::vector<double> out(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) out[b] = detail::resample_hajek(outcome, treated, weights, seed, b);
  return out;
}

std::vector<double> gaussian_kde(std::span<const double> data, double bandwidth, std::span<const double> grid) {
  std::vector<double> out(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) out[g] = detail::kde_at(data, bandwidth, grid[g]);
  return out;
}

}  // namespace serial
}  // namespace cwb::kernels
