#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace urgent::model {

// Constants of the surrogate abundance/R0 model. Everything here is a
// modelling choice of this project, not a calibrated literature value.
struct SurrogateConstants {
  double mu_m = 0.05;       // daily decay under unfavourable temperature
  double t_min = 10.0;      // degC
  double t_max = 35.0;      // degC
  double p_half = 10.0;     // mm, half-saturation of the precipitation term
  double h_half = 5000.0;   // persons, half-saturation of the host term
  std::size_t window = 7;   // days of temperature/precipitation persistence
  double gdp_weight = 0.0;  // capacity modifier 1 + w (1 - G/Gmax); off by default
  double initial_fraction = 0.01;
  double floor_fraction = 1e-6;

  double r_m_lo = 0.1, r_m_hi = 0.3;
  double k0_lo = 3000.0, k0_hi = 7000.0;
  double beta_lo = 1.0, beta_hi = 3.0;
};

struct MemberParams {
  double r_m = 0.0;
  double k0 = 0.0;
  double beta = 0.0;
};

// Quadratic thermal suitability clamped to [0, 1]; peaks midway between the limits.
double thermal_response(double temperature_c, double t_min = 10.0, double t_max = 35.0);

// Mean of series[max(0, day - window + 1) .. day].
double trailing_mean(std::span<const double> series, std::size_t day, std::size_t window);

double carrying_capacity(double precip_mm, double humans, double k0, double p_half,
                         double h_half);

// One day of logistic growth scaled by suitability, minus decay when unsuitable.
double step_abundance(double m, double k, double f, double r_m, double mu_m, double floor);

// beta * f * M / max(H, 1); zero where there are no hosts.
double r0_field(double m, double humans, double f, double beta);

// Member i draws from a stream that depends only on (scenario_seed, i).
MemberParams sample_member(std::uint64_t scenario_seed, std::uint64_t member,
                           const SurrogateConstants& c = {});

}  // namespace urgent::model
