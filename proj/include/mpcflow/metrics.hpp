#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpcflow/dynamics.hpp"

namespace mpcflow {

/// 10 log10(L^2 / MSE) in dB; +infinity when the images are identical.
double psnr(std::span<const double> x, std::span<const double> reference, double data_range = 1.0);

/// Side of the uniform SSIM window.
inline constexpr std::size_t kSsimWindow = 7;

/// Mean SSIM over every fully contained 7x7 window, with C1 = (0.01 L)^2,
/// C2 = (0.03 L)^2 and unbiased window variances. Images are row-major h x w.
double ssim(std::span<const double> x, std::span<const double> reference, std::size_t height, std::size_t width,
            double data_range = 1.0);

/// Mean over grid nodes of ||a(t_k) - b(t_k)||.
double trajectory_distance(const Trajectory& a, const Trajectory& b);

struct MetricReport {
  std::optional<double> psnr;
  std::optional<double> ssim;
  double terminal_loss = 0.0;
  double control_energy = 0.0;
  std::optional<double> trajectory_distance;
};

/// One line of the results table, in the column order of results_csv_header().
struct ResultRow {
  std::string method;
  std::string task;
  double lambda = 0.0;
  std::size_t steps = 0;
  std::optional<std::size_t> horizon;
  unsigned long long seed = 0;
  MetricReport metrics;
  double wall_time_s = 0.0;
};

/// "method,task,lambda,N,K,seed,psnr,ssim,terminal_loss,energy,wall_time_s".
std::string results_csv_header();
/// Missing values are left empty; an infinite PSNR is written as "inf".
std::string results_csv_line(const ResultRow& row);

}  // namespace mpcflow
