#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "esrsim/constants.hpp"
#include "esrsim/resonator.hpp"
#include "esrsim/spin_hamiltonian.hpp"

namespace esrsim::sample {

struct ImplantProfile {
    std::vector<double> depth_grid;  // m, ascending
    std::vector<double> density;     // donors / m^3

    double at(double depth) const;  // linear interpolation, 0 outside support
    double areal_dose() const;      // donors / m^2
};

enum class StrainSource { Analytic, Imported };

struct StrainMap {
    std::vector<double> xs;       // m, ascending
    std::vector<double> ys;       // m (depth), ascending
    std::vector<double> eps_h;    // row-major [iy * nx + ix]
    StrainSource source = StrainSource::Analytic;

    double at(double x, double y) const;  // bilinear, clamped at edges
    void validate() const;
};

struct SpinPacket {
    double x = 0, y = 0;        // m, representative position
    double g0 = 0;              // rad/s
    int transition_id = 0;
    double detuning = 0;        // rad/s vs omega0, includes strain shift
    double weight = 0;          // donor count represented
    double T1 = 0;              // s (Purcell at this detuning)
    double T2 = 0;              // s (phenomenological)
};

struct BathNucleus {
    std::array<double, 3> position;  // m, relative to the donor
    double omega_I = 0;              // rad/s
    double a_secular = 0;            // rad/s
    double b_pseudosecular = 0;      // rad/s
};

using NuclearBath = std::vector<BathNucleus>;

struct EnsembleOptions {
    int n_packets = 50000;        // Monte Carlo donor draws (capped at 50000)
    std::uint64_t seed = 1;
    double x_half_span = 0.5e-6;  // m, lateral sampling window
    double detuning_window = constants::two_pi * 2e6;  // keep |delta| below this
    double T2 = 0.85e-3;          // s
    int g0_bins = 60;             // log-spaced aggregation bins
    int detuning_bins = 40;       // linear aggregation bins
    bool aggregate = true;
};

ImplantProfile implant_profile(double peak_density, double depth_min = 50e-9,
                               double depth_max = 100e-9);
ImplantProfile implant_profile_from_csv(const std::string& path);

/// Hydrostatic strain from two opposite tangential edge line-forces of the
/// contracted film wire (plane-strain Flamant solution on the half-space).
StrainMap strain_analytic(const resonator::ResonatorModel& model,
                          const constants::MaterialConstants& mat,
                          const std::vector<double>& xs,
                          const std::vector<double>& ys);
double strain_analytic_at(const resonator::ResonatorModel& model,
                          const constants::MaterialConstants& mat, double x,
                          double y);
/// Single tangential edge line-force contribution (force along +x, applied at
/// the surface origin); dx, y locate the observation point relative to it.
double strain_edge_at(double line_force, double nu, double bulk_modulus,
                      double dx, double y);

StrainMap strain_import(const std::string& path);
void strain_export(const StrainMap& map, const std::string& path);

double hyperfine_shift(double epsilon_h,
                       double dA_deps = constants::bi_dA_deps);

std::vector<SpinPacket> build_ensemble(const ImplantProfile& profile,
                                       const StrainMap* strain,
                                       const resonator::ResonatorModel& res,
                                       const spin::SpinSystem& sys, double B0,
                                       const EnsembleOptions& opt);

struct Histogram {
    std::vector<double> bin_edges;  // rad/s, size = counts.size() + 1
    std::vector<double> counts;     // donors
};

Histogram coupling_histogram(const std::vector<SpinPacket>& ensemble, int bins,
                             int transition_id = -1);

NuclearBath nuclear_bath(double concentration, double r_max, double B0,
                         std::uint64_t seed,
                         double gamma_n = constants::gamma_n_si29);

void export_ensemble_csv(const std::vector<SpinPacket>& ensemble,
                         const std::string& path);
void export_histogram_csv(const Histogram& h, const std::string& path);

}  // namespace esrsim::sample
