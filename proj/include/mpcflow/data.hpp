#pragma once

// Synthetic datasets: hexagon boundary points, Gaussian base samples and the
// 16x16 discs image corpus. Every sampler is a pure function of its arguments.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpcflow/rng.hpp"

namespace mpcflow {

using Vec = std::vector<double>;

inline constexpr double kHexagonSide = 2.0;
inline constexpr std::size_t kDiscsSide = 16;

/// Vertices of the regular hexagon with circumradius 2 centred at the origin,
/// vertex 0 on the positive x axis, counter-clockwise.
std::array<std::array<double, 2>, 6> hexagon_vertices();
/// The vertex at angle -60 degrees, (1, -sqrt(3)).
Vec hexagon_lower_right_corner();
/// Euclidean distance from `p` to the hexagon boundary.
double distance_to_hexagon(const Vec& p);
/// Index of the edge (0..5, edge i joins vertex i and i+1) closest to `p`.
std::size_t nearest_hexagon_edge(const Vec& p);

std::vector<Vec> sample_hexagon(std::size_t n, std::uint64_t seed);
std::vector<Vec> sample_hexagon(Rng& rng, std::size_t n);

std::vector<Vec> sample_base(std::size_t n, std::size_t dim, std::uint64_t seed);
std::vector<Vec> sample_base(Rng& rng, std::size_t n, std::size_t dim);

/// 16x16 images in [0,1]: 1-3 anti-aliased discs with intensity in [0.4, 1]
/// summed over a zero background and clipped.
std::vector<Vec> sample_discs16(std::size_t n, std::uint64_t seed);
std::vector<Vec> sample_discs16(Rng& rng, std::size_t n);

/// A named data distribution usable for training.
struct DatasetSampler {
  std::string tag;
  std::size_t dim = 0;
  std::function<std::vector<Vec>(Rng&, std::size_t)> draw;
};

/// "hexagon" or "discs16". Throws std::invalid_argument for anything else.
DatasetSampler dataset_sampler(const std::string& tag);

}  // namespace mpcflow
