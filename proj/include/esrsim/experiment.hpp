#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esrsim/detection.hpp"
#include "esrsim/dynamics.hpp"
#include "esrsim/resonator.hpp"
#include "esrsim/sample.hpp"
#include "esrsim/sequences.hpp"
#include "esrsim/spin_hamiltonian.hpp"

namespace esrsim::experiment {

/// Schema or semantic violation in a config file (exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numeric failure during execution (exit code 3).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem failure (exit code 4).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Kind {
    Spectrum,
    EchoDecay,
    T1,
    Rabi,
    Cpmg,
    Stats,
    S11Fit,
    CouplingMap,
    StrainMap,
    Sensitivity,
};

Kind kind_from_string(const std::string& s);
std::string to_string(Kind k);

struct ExperimentConfig {
    Kind kind = Kind::Spectrum;
    std::string name;
    std::uint64_t seed = 1;
    int threads = 1;

    spin::SpinSystem spin_system;
    resonator::ResonatorModel resonator;
    detection::NoiseModel noise;
    detection::IntegralMode integral = detection::IntegralMode::Boxcar;

    // sample section
    double peak_density = 8e22;       // donors / m^3
    double depth_min = 50e-9, depth_max = 100e-9;
    std::string strain = "analytic";  // "analytic" | "none" | CSV path
    sample::EnsembleOptions ensemble;

    // sequence section
    std::string sequence_type = "hahn";
    sequences::HahnParams hahn;
    int n_refocus = 1;
    double rep_rate = 100.0;
    double acquire_window = 0.0;
    double sat_duration = 10e-3;
    double beta_inv = 1e5, dt_inv = 1e-6;

    nlohmann::json params;  // per-kind parameters (validated per kind)

    nlohmann::json raw;  // canonical parsed config, for hashing/persistence
};

/// Parse + validate; throws ConfigError on schema violations (unknown keys,
/// wrong types, out-of-range values).
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

std::string config_hash(const nlohmann::json& canonical);

/// Execute the experiment, writing CSV outputs, an SVG rendering, and
/// manifest.json into out_dir. Returns the manifest.
nlohmann::json run(const ExperimentConfig& cfg, const std::string& out_dir);

struct ReplayMismatch {
    std::string file;
    int line = 0;  // 1-based first differing line; 0 = size/missing
    std::string detail;
};

struct ReplayReport {
    bool all_match = false;
    std::vector<ReplayMismatch> mismatches;
};

/// Re-run from the stored manifest and compare outputs byte-for-byte.
ReplayReport replay(const std::string& results_dir);

/// Minimal polyline SVG plot used for every experiment's rendering.
void write_svg(const std::string& path, const std::vector<double>& xs,
               const std::vector<double>& ys, const std::string& title,
               const std::string& xlabel, const std::string& ylabel,
               bool log_x = false);

}  // namespace esrsim::experiment
