#include "mpcflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace mpcflow {

namespace {

double segment_distance(const Vec& p, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = b[0] - a[0];
  const double dy = b[1] - a[1];
  double s = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy);
  s = std::clamp(s, 0.0, 1.0);
  return std::hypot(p[0] - (a[0] + s * dx), p[1] - (a[1] + s * dy));
}

}  // namespace

std::array<std::array<double, 2>, 6> hexagon_vertices() {
  std::array<std::array<double, 2>, 6> v{};
  for (std::size_t i = 0; i < 6; ++i) {
    const double angle = static_cast<double>(i) * std::numbers::pi / 3.0;
    v[i] = {kHexagonSide * std::cos(angle), kHexagonSide * std::sin(angle)};
  }
  // Exact values where the trigonometry rounds.
  v[0] = {2.0, 0.0};
  v[3] = {-2.0, 0.0};
  return v;
}

Vec hexagon_lower_right_corner() {
  const auto v = hexagon_vertices();
  return {v[5][0], v[5][1]};
}

double distance_to_hexagon(const Vec& p) {
  const auto v = hexagon_vertices();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 6; ++i) best = std::min(best, segment_distance(p, v[i], v[(i + 1) % 6]));
  return best;
}

std::size_t nearest_hexagon_edge(const Vec& p) {
  const auto v = hexagon_vertices();
  std::size_t best_edge = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 6; ++i) {
    const double d = segment_distance(p, v[i], v[(i + 1) % 6]);
    if (d < best) {
      best = d;
      best_edge = i;
    }
  }
  return best_edge;
}

std::vector<Vec> sample_hexagon(Rng& rng, std::size_t n) {
  const auto v = hexagon_vertices();
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Arc-length position on the perimeter; each edge has length 2.
    const double s = rng.uniform(0.0, 6.0);
    const std::size_t edge = std::min<std::size_t>(static_cast<std::size_t>(s), 5);
    const double frac = s - static_cast<double>(edge);
    const auto& a = v[edge];
    const auto& b = v[(edge + 1) % 6];
    out.push_back({a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])});
  }
  return out;
}

std::vector<Vec> sample_hexagon(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_hexagon(rng, n);
}

std::vector<Vec> sample_base(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<Vec> out(n, Vec(dim));
  for (auto& x : out) {
    for (double& v : x) v = rng.normal();
  }
  return out;
}

std::vector<Vec> sample_base(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return sample_base(rng, n, dim);
}

std::vector<Vec> sample_discs16(Rng& rng, std::size_t n) {
  constexpr std::size_t side = kDiscsSide;
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Vec img(side * side, 0.0);
    const std::size_t discs = 1 + rng.below(3);
    for (std::size_t d = 0; d < discs; ++d) {
      const double cx = rng.uniform(1.0, 15.0);
      const double cy = rng.uniform(1.0, 15.0);
      const double radius = rng.uniform(1.5, 4.0);
      const double intensity = rng.uniform(0.4, 1.0);
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const double dist = std::hypot(static_cast<double>(c) + 0.5 - cx, static_cast<double>(r) + 0.5 - cy);
          // Linear coverage ramp one pixel wide around the rim.
          const double coverage = std::clamp(radius - dist + 0.5, 0.0, 1.0);
          img[r * side + c] += intensity * coverage;
        }
      }
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<Vec> sample_discs16(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_discs16(rng, n);
}

DatasetSampler dataset_sampler(const std::string& tag) {
  if (tag == "hexagon") {
    return {tag, 2, [](Rng& rng, std::size_t n) { return sample_hexagon(rng, n); }};
  }
  if (tag == "discs16") {
    return {tag, kDiscsSide * kDiscsSide, [](Rng& rng, std::size_t n) { return sample_discs16(rng, n); }};
  }
  throw std::invalid_argument("unknown dataset '" + tag + "' (expected hexagon or discs16)");
}

}  // namespace mpcflow
