#include "mpcflow/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "mpcflow/errors.hpp"

namespace mpcflow {

namespace {

void require_same_size(const char* op, std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError(std::string(op) + ": sizes " + std::to_string(a) + " and " + std::to_string(b) + " differ");
}

}  // namespace

double psnr(std::span<const double> x, std::span<const double> reference, double data_range) {
  require_same_size("psnr", x.size(), reference.size());
  if (x.empty()) throw ShapeError("psnr: empty images");
  if (!(data_range > 0.0)) throw DomainError("psnr: data range must be positive");
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - reference[i];
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(x.size());
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(std::span<const double> x, std::span<const double> reference, std::size_t height, std::size_t width,
            double data_range) {
  require_same_size("ssim", x.size(), reference.size());
  require_same_size("ssim", x.size(), height * width);
  if (height < kSsimWindow || width < kSsimWindow) {
    throw ShapeError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                     std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) + " window");
  }
  if (!(data_range > 0.0)) throw DomainError("ssim: data range must be positive");
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double n = static_cast<double>(kSsimWindow * kSsimWindow);

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t r0 = 0; r0 + kSsimWindow <= height; ++r0) {
    for (std::size_t c0 = 0; c0 + kSsimWindow <= width; ++c0) {
      double sx = 0.0, sy = 0.0;
      for (std::size_t r = r0; r < r0 + kSsimWindow; ++r) {
        for (std::size_t c = c0; c < c0 + kSsimWindow; ++c) {
          sx += x[r * width + c];
          sy += reference[r * width + c];
        }
      }
      const double mx = sx / n;
      const double my = sy / n;
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (std::size_t r = r0; r < r0 + kSsimWindow; ++r) {
        for (std::size_t c = c0; c < c0 + kSsimWindow; ++c) {
          const double dx = x[r * width + c] - mx;
          const double dy = reference[r * width + c] - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      }
      vx /= n - 1.0;
      vy /= n - 1.0;
      cxy /= n - 1.0;
      total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double trajectory_distance(const Trajectory& a, const Trajectory& b) {
  if (!(a.grid == b.grid) || a.states.size() != b.states.size()) {
    throw ShapeError("trajectory_distance: trajectories live on different grids");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    require_same_size("trajectory_distance", a.states[k].size(), b.states[k].size());
    double sq = 0.0;
    for (std::size_t i = 0; i < a.states[k].size(); ++i) {
      const double d = a.states[k][i] - b.states[k][i];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(a.states.size());
}

std::string results_csv_header() { return "method,task,lambda,N,K,seed,psnr,ssim,terminal_loss,energy,wall_time_s"; }

std::string results_csv_line(const ResultRow& row) {
  std::ostringstream out;
  out.precision(17);
  auto optional = [&](const std::optional<double>& v) {
    if (!v) return;
    if (std::isinf(*v)) {
      out << (*v > 0 ? "inf" : "-inf");
    } else {
      out << *v;
    }
  };
  out << row.method << ',' << row.task << ',' << row.lambda << ',' << row.steps << ',';
  if (row.horizon) out << *row.horizon;
  out << ',' << row.seed << ',';
  optional(row.metrics.psnr);
  out << ',';
  optional(row.metrics.ssim);
  out << ',' << row.metrics.terminal_loss << ',' << row.metrics.control_energy << ',' << row.wall_time_s;
  return out.str();
}

}  // namespace mpcflow
