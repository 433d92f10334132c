#include "urgent/model/surrogate.hpp"

#include "urgent/error.hpp"

#include <algorithm>
#include <random>

namespace urgent::model {

double thermal_response(double t, double t_min, double t_max) {
  const double span = t_max - t_min;
  return std::max(0.0, 4.0 * (t - t_min) * (t_max - t) / (span * span));
}

double trailing_mean(std::span<const double> series, std::size_t day, std::size_t window) {
  require(day < series.size(), "day out of range");
  require(window >= 1, "window must be at least one day");
  const std::size_t first = day + 1 >= window ? day + 1 - window : 0;
  double sum = 0.0;
  for (std::size_t d = first; d <= day; ++d) sum += series[d];
  return sum / static_cast<double>(day - first + 1);
}

double carrying_capacity(double p, double h, double k0, double p_half, double h_half) {
  require(p >= 0.0 && h >= 0.0, "precipitation and host density must be non-negative");
  return k0 * (0.1 + 0.9 * p / (p + p_half)) * (1.0 + h / (h + h_half));
}

double step_abundance(double m, double k, double f, double r_m, double mu_m, double floor) {
  const double next = m + r_m * f * m * (1.0 - m / k) - mu_m * (1.0 - f) * m;
  return std::max(floor, next);
}

double r0_field(double m, double h, double f, double beta) {
  if (h <= 0.0) return 0.0;
  return beta * f * m / std::max(h, 1.0);
}

namespace {

double unit(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace

MemberParams sample_member(std::uint64_t seed, std::uint64_t member, const SurrogateConstants& c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(member), static_cast<std::uint32_t>(member >> 32)};
  std::mt19937_64 gen(seq);
  MemberParams p;
  p.r_m = c.r_m_lo + (c.r_m_hi - c.r_m_lo) * unit(gen);
  p.k0 = c.k0_lo + (c.k0_hi - c.k0_lo) * unit(gen);
  p.beta = c.beta_lo + (c.beta_hi - c.beta_lo) * unit(gen);
  return p;
}

}  // namespace urgent::model
