#pragma once

#include <cmath>
#include <map>
#include <string>

namespace esrsim::constants {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

// CODATA values
inline constexpr double hbar = 1.054571817e-34;     // J s
inline constexpr double mu0 = 1.25663706212e-6;     // N / A^2
inline constexpr double kB = 1.380649e-23;          // J / K

// Free-electron gyromagnetic ratio, 28 GHz/T
inline constexpr double gamma_e = two_pi * 28.0e9;  // rad/s per T

// 29Si nuclear gyromagnetic ratio (magnitude), 8.465 MHz/T
inline constexpr double gamma_n_si29 = two_pi * 8.465e6;  // rad/s per T

// Bismuth donor hyperfine constant. 5A gives the 7.377 GHz zero-field
// splitting of the coupled F=4/F=5 manifolds.
inline constexpr double bi_hyperfine_A = two_pi * 1.4754e9;  // rad/s

// Hyperfine sensitivity to hydrostatic strain, dA/deps / 2pi = 29 GHz
inline constexpr double bi_dA_deps = two_pi * 29.0e9;  // rad/s per unit strain

// Silicon lattice constant (diamond cubic)
inline constexpr double si_lattice_a = 0.5431e-9;  // m

/// Material constants used by the analytic strain model. Values come from
/// standard room-temperature tables; overridable from a key-value file.
struct MaterialConstants {
    double si_bulk_modulus = 97.8e9;    // Pa
    double si_poisson = 0.28;
    double al_youngs = 70.0e9;          // Pa
    double al_poisson = 0.33;
    double al_expansion = 23.1e-6;      // 1/K
    double si_expansion = 2.6e-6;       // 1/K
    double delta_T = 293.0;             // K, cooldown span

    // Biaxial film stress from differential thermal contraction.
    double film_stress() const {
        const double mismatch = (al_expansion - si_expansion) * delta_T;
        return al_youngs / (1.0 - al_poisson) * mismatch;
    }
};

MaterialConstants load_material_constants(const std::string& path);
void save_material_constants(const MaterialConstants& c, const std::string& path);

}  // namespace esrsim::constants
