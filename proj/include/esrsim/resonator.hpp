#pragma once

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "esrsim/constants.hpp"

namespace esrsim::resonator {

struct ResonatorModel {
    double omega0 = constants::two_pi * 7.25e9;  // rad/s
    double q_ext = 3.0e4;
    double q_int = 8.0e4;
    double impedance_Zc = 15.0;      // ohm
    double wire_width = 100e-9;      // m
    double wire_thickness = 50e-9;   // m
    double wire_length = 10e-6;      // m
    double kerr_K = 0.0;             // rad/s per photon

    double kappa_ext() const { return omega0 / q_ext; }
    double kappa_int() const { return omega0 / q_int; }
    double kappa() const { return kappa_ext() + kappa_int(); }
    void validate() const;
};

struct ReflectionTrace {
    std::vector<double> frequencies;          // rad/s
    std::vector<std::complex<double>> s11;
    double input_power = 0.0;                 // W
};

struct FitResult {
    double omega0 = 0.0;
    double q_ext = 0.0;
    double q_int = 0.0;
    double residual = 0.0;  // rms of complex residuals / rms of data
    int iterations = 0;
};

struct TlsModel {
    double q_tls0 = 0.0;
    double n_c = 0.0;
    double q_other = 0.0;
};

struct DuffingRoot {
    double photons = 0.0;  // |alpha|^2
    bool stable = false;
};

/// Single-photon current fluctuation amplitude, delta_i = omega0 sqrt(hbar/2Zc).
double photon_current(const ResonatorModel& model);

/// Single-photon magnetic field of the rectangular wire cross-section at a
/// point (x, y) in the plane transverse to the wire. Uniform current density,
/// fixed nested quadrature refined to `rel_tol`.
std::array<double, 2> b1_field(const ResonatorModel& model, double x, double y,
                               double rel_tol = 1e-6);

double coupling_strength(const std::array<double, 2>& b1, double sx_elem,
                         double gamma_e = constants::gamma_e);

/// S11(omega) = (k_ext - k_int - 2i Delta) / (k_ext + k_int + 2i Delta),
/// Delta = omega - omega0.
std::complex<double> s11_linear(const ResonatorModel& model, double omega);

/// Complex least-squares fit with amplitude/phase/delay nuisance parameters.
FitResult fit_s11(const ReflectionTrace& trace);

double tls_qint(const TlsModel& tls, double n_photons);

/// Steady states of the Kerr (Duffing) cavity at drive amplitude beta
/// [s^-1/2] and detuning Delta = omega_drive - omega0.
std::vector<DuffingRoot> duffing_steady_state(const ResonatorModel& model,
                                              double detuning, double beta);

ReflectionTrace load_reflection_csv(const std::string& path);
ReflectionTrace load_reflection_db_deg(const std::string& path);
void export_field_map_csv(const ResonatorModel& model,
                          const std::vector<double>& xs,
                          const std::vector<double>& ys,
                          const std::string& path);

}  // namespace esrsim::resonator
