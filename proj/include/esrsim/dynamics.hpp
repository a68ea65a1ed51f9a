#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esrsim/resonator.hpp"
#include "esrsim/sample.hpp"
#include "esrsim/sequences.hpp"

namespace esrsim::dynamics {

struct TraceRecord {
    std::vector<double> t;  // s
    std::vector<double> I;  // Re(a_out), sqrt(photon flux)
    std::vector<double> Q;  // Im(a_out)
    double sample_rate = 0;  // Hz
    std::uint64_t seed = 0;
    nlohmann::json meta;
};

struct AcquireWindow {
    double t0 = 0, t1 = 0;
};

/// Time bounds of each acquire segment in sequence order.
std::vector<AcquireWindow> acquire_windows(const sequences::PulseSequence& seq);

struct SimulateOptions {
    double sample_rate = 20e6;       // Hz
    bool fast_forward_delays = false;  // analytic free evolution in delay segments
    double bloch_tolerance = 1e-9;
    double step_safety = 20.0;       // phase steps per fastest scale
    bool warn_nonlinear = true;
    double initial_sz = -0.5;        // thermal default; 0 = saturated start
};

/// Purcell relaxation rate, Gamma1 = kappa g0^2 / ((kappa/2)^2 + detuning^2).
double purcell_rate(double g0, double kappa, double detuning);

/// Coupling selected by a two-pulse echo of amplitude beta and duration dt:
/// g0(beta) = pi sqrt(kappa) / (4 beta dt). Assumes kappa_ext ~ kappa.
double selected_coupling(double beta, double dt, double kappa);

/// Closed-form Rabi angle for dt >> 2/kappa: theta = 2 g0 alpha_ss dt with
/// alpha_ss = 2 sqrt(kappa_ext) beta / kappa.
double rabi_angle(double beta, double dt, double g0, double kappa,
                  double kappa_ext);

/// Mean-field cavity-Bloch integration of a pulse sequence; noiseless output.
TraceRecord simulate(const sequences::PulseSequence& seq,
                     const std::vector<sample::SpinPacket>& ensemble,
                     const resonator::ResonatorModel& res,
                     const SimulateOptions& opt = {});

/// Two-pulse ESEEM modulation factor V(tau) in [0, 1].
double eseem_kernel(const sample::NuclearBath& bath, double tau);

struct SweepPoint {
    double B0 = 0;
    double echo_integral = 0;
};

using EchoIntegrator = std::function<double(const TraceRecord&)>;
using EnsembleBuilder =
    std::function<std::vector<sample::SpinPacket>(double /*B0*/)>;

std::vector<SweepPoint> field_sweep(const std::vector<double>& B0_values,
                                    const sequences::PulseSequence& seq,
                                    const EnsembleBuilder& builder,
                                    const resonator::ResonatorModel& res,
                                    const EchoIntegrator& integrator,
                                    const SimulateOptions& opt = {});

void export_trace_csv(const TraceRecord& trace, const std::string& path);

}  // namespace esrsim::dynamics
