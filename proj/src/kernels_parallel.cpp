#include "cwb/kernels.hpp"

#include <algorithm>

#include "kernels_common.hpp"

namespace cwb::kernels::parallel {

namespace {

std::size_t block_count(std::size_t n) { return (n + kBlockRows - 1) / kBlockRows; }

template <typename DistanceFn>
Nearest blocked_argmin(std::size_t n, std::span<const std::uint8_t> available, std::span<const std::int64_t> tie_key,
                       double caliper, DistanceFn&& distance) {
  const std::size_t blocks = block_count(n);
  std::vector<Nearest> partial(blocks);
  const auto nb = static_cast<std::int64_t>(blocks);
#pragma omp parallel for schedule(static)
  for (std::int64_t blk = 0; blk < nb; ++blk) {
    const std::size_t lo = static_cast<std::size_t>(blk) * kBlockRows;
    const std::size_t hi = std::min(n, lo + kBlockRows);
    Nearest best;
    for (std::size_t j = lo; j < hi; ++j) {
      if (!available[j]) continue;
      const double d = distance(j);
      if (d > caliper) continue;
      if (detail::improves(d, tie_key[j], best.distance, best.found() ? tie_key[best.index] : 0, best.found())) {
        best.index = j;
        best.distance = d;
      }
    }
    partial[static_cast<std::size_t>(blk)] = best;
  }
  Nearest best;
  for (const auto& p : partial) {
    if (!p.found()) continue;
    if (detail::improves(p.distance, tie_key[p.index], best.distance, best.found() ? tie_key[best.index] : 0,
                         best.found())) {
      best = p;
    }
  }
  return best;
}

}  // namespace

Gram weighted_gram(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> r) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = x.cols();
  const std::size_t blocks = block_count(n);
  std::vector<Gram> partial(blocks);
  const auto nb = static_cast<std::int64_t>(blocks);
#pragma omp parallel for schedule(static)
  for (std::int64_t blk = 0; blk < nb; ++blk) {
    const std::size_t lo = static_cast<std::size_t>(blk) * kBlockRows;
    const auto len = static_cast<Eigen::Index>(std::min(n, lo + kBlockRows) - lo);
    const auto rows = x.middleRows(static_cast<Eigen::Index>(lo), len);
    Eigen::Map<const Eigen::VectorXd> wb(w.data() + lo, len);
    Eigen::Map<const Eigen::VectorXd> rb(r.data() + lo, len);
    Gram g;
    g.xtwx = rows.transpose() * wb.asDiagonal() * rows;
    g.xtr = rows.transpose() * rb;
    partial[static_cast<std::size_t>(blk)] = std::move(g);
  }
  Gram total{Eigen::MatrixXd::Zero(p, p), Eigen::VectorXd::Zero(p)};
  for (const auto& g : partial) {
    total.xtwx += g.xtwx;
    total.xtr += g.xtr;
  }
  return total;
}

Nearest nearest_scalar(double query, std::span<const double> values, std::span<const std::uint8_t> available,
                       std::span<const std::int64_t> tie_key, double caliper) {
  return blocked_argmin(values.size(), available, tie_key, caliper,
                        [&](std::size_t j) { return std::abs(query - values[j]); });
}

Nearest nearest_vector(const Eigen::VectorXd& query, const Eigen::MatrixXd& points,
                       std::span<const std::uint8_t> available, std::span<const std::int64_t> tie_key, double caliper) {
  return blocked_argmin(static_cast<std::size_t>(points.cols()), available, tie_key, caliper,
                        [&](std::size_t j) { return (points.col(static_cast<Eigen::Index>(j)) - query).norm(); });
}

std::vector<double> bootstrap_means(std::span<const double> values, std::size_t n_boot, std::uint64_t seed) {
  std::vector<double> out(n_boot);
  const auto nb = static_cast<std::int64_t>(n_boot);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    out[static_cast<std::size_t>(b)] = detail::resample_mean(values, seed, static_cast<std::size_t>(b));
  }
  return out;
}

std::vector<double> bootstrap_hajek(std::span<const double> outcome, std::span<const double> treated,
                                    std::span<const double> weights, std::size_t n_boot, std::uint64_t seed) {
  std::vector<double> out(n_boot);
  const auto nb = static_cast<std::int64_t>(n_boot);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    out[static_cast<std::size_t>(b)] =
        detail::resample_hajek(outcome, treated, weights, seed, static_cast<std::size_t>(b));
  }
  return out;
}

std::vector<double> gaussian_kde(std::span<const double> data, double bandwidth, std::span<const double> grid) {
  std::vector<double> out(grid.size());
  const auto ng = static_cast<std::int64_t>(grid.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < ng; ++g) {
    out[static_cast<std::size_t>(g)] = detail::kde_at(data, bandwidth, grid[static_cast<std::size_t>(g)]);
  }
  return out;
}

}  // namespace cwb::kernels::parallel
