#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "esrsim/dynamics.hpp"

namespace esrsim::detection {

enum class AmpMode { PhasePreserving, Degenerate };

struct NoiseModel {
    double n_tilde = 0.5;  // photons, input-referred
    double gain = 1.0;
    AmpMode mode = AmpMode::Degenerate;
    void validate() const;
};

struct FluctuationModel {
    double relative_sigma = 0.0;
    double correlation_time = 3.0;  // s
};

struct EchoResult {
    double integral_Ae = 0.0;
    double t0 = 0.0, t1 = 0.0;
    double snr = 0.0;
    std::uint64_t seed = 0;
};

enum class IntegralMode { Boxcar, Matched };

dynamics::TraceRecord add_noise(const dynamics::TraceRecord& trace,
                                const NoiseModel& noise, std::uint64_t seed);

/// (plus - minus) / 2; the echo flips sign with the cycled pulse and survives.
dynamics::TraceRecord phase_cycle(const dynamics::TraceRecord& plus,
                                  const dynamics::TraceRecord& minus);

EchoResult echo_integral(const dynamics::TraceRecord& trace,
                         const dynamics::AcquireWindow& window,
                         IntegralMode mode = IntegralMode::Boxcar,
                         const std::vector<double>* matched_template = nullptr);

struct SpinCountEstimate {
    double n_spin = 0.0;
    double uncertainty = 0.0;
};

/// 1D search over the ensemble scale factor so the simulated echo/pulse ratio
/// matches the measured one. `simulated_ratio(scale)` must be monotone
/// increasing from 0.
SpinCountEstimate estimate_spin_count(
    double measured_ratio, const std::function<double(double)>& simulated_ratio,
    double baseline_count, double ratio_rel_sigma = 0.1);

/// N_min = kappa / (2 P g0) * sqrt(n_tilde)
double sensitivity_formula(double kappa, double g0, double n_tilde,
                           double polarization_P);

struct SensitivityReport {
    double n_min_single = 0.0;
    double spins_per_sqrt_hz = 0.0;
};

SensitivityReport sensitivity_pipeline(double snr_single, double n_spin,
                                       double rep_rate);

struct SigmaPoint {
    int n = 0;
    double sigma = 0.0;
    int blocks = 0;
};

std::vector<SigmaPoint> sigma_scaling(const std::vector<double>& series,
                                      const std::vector<int>& n_values,
                                      int decimation = 1);

std::vector<double> ou_series(double mean_A, const FluctuationModel& fluct,
                              double white_sigma, std::size_t n_samples,
                              double rate, std::uint64_t seed);

struct CpmgSnr {
    std::vector<double> snr;          // SNR(n), n = 1..N
    std::vector<double> improvement;  // SNR(n)/SNR(1)
    int best_n = 1;
    double best_improvement = 1.0;
};

CpmgSnr cpmg_snr(const std::vector<double>& echo_amplitudes, double noise_sigma,
                 bool with_correlations = false);

void export_sigma_csv(const std::vector<SigmaPoint>& table,
                      const std::string& path);

}  // namespace esrsim::detection
