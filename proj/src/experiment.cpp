#include "esrsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "esrsim/rng.hpp"

namespace esrsim::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using constants::two_pi;

namespace {

[[noreturn]] void bad_config(const std::string& msg) {
    throw ConfigError("config: " + msg);
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad_config(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) bad_config("unknown key '" + where + "." + it.key() + "'");
    }
}

double num(const json& j, const std::string& where, const char* key,
           double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) bad_config(where + "." + key + " must be a number");
    return j.at(key).get<double>();
}

double pos(const json& j, const std::string& where, const char* key,
           double fallback) {
    const double v = num(j, where, key, fallback);
    if (!(v > 0)) bad_config(where + "." + key + " must be > 0");
    return v;
}

int integer(const json& j, const std::string& where, const char* key,
            int fallback, int lo, int hi) {
    const double v = num(j, where, key, fallback);
    const int k = static_cast<int>(v);
    if (v != k || k < lo || k > hi)
        bad_config(where + "." + key + " must be an integer in [" +
                   std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return k;
}

std::string text(const json& j, const std::string& where, const char* key,
                 const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) bad_config(where + "." + key + " must be a string");
    return j.at(key).get<std::string>();
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v;
    if (n == 1) { v.push_back(a); return v; }
    for (int k = 0; k < n; ++k) v.push_back(a + (b - a) * k / (n - 1));
    return v;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw IoError("io: cannot open " + p.string() + " for writing");
    os.precision(12);
    return os;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("io: cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

Kind kind_from_string(const std::string& s) {
    if (s == "spectrum") return Kind::Spectrum;
    if (s == "echo_decay") return Kind::EchoDecay;
    if (s == "t1") return Kind::T1;
    if (s == "rabi") return Kind::Rabi;
    if (s == "cpmg") return Kind::Cpmg;
    if (s == "stats") return Kind::Stats;
    if (s == "s11_fit") return Kind::S11Fit;
    if (s == "coupling_map") return Kind::CouplingMap;
    if (s == "strain_map") return Kind::StrainMap;
    if (s == "sensitivity") return Kind::Sensitivity;
    bad_config("unknown experiment kind '" + s + "'");
}

std::string to_string(Kind k) {
    switch (k) {
        case Kind::Spectrum: return "spectrum";
        case Kind::EchoDecay: return "echo_decay";
        case Kind::T1: return "t1";
        case Kind::Rabi: return "rabi";
        case Kind::Cpmg: return "cpmg";
        case Kind::Stats: return "stats";
        case Kind::S11Fit: return "s11_fit";
        case Kind::CouplingMap: return "coupling_map";
        case Kind::StrainMap: return "strain_map";
        case Kind::Sensitivity: return "sensitivity";
    }
    return "?";
}

ExperimentConfig parse_config(const json& j) {
    check_keys(j, "", {"experiment", "name", "seed", "threads", "spin_system",
                       "resonator", "sample", "sequence", "detection", "params"});
    if (!j.contains("experiment")) bad_config("missing required key 'experiment'");

    ExperimentConfig cfg;
    cfg.raw = j;
    cfg.kind = kind_from_string(text(j, "", "experiment", ""));
    cfg.name = text(j, "", "name", to_string(cfg.kind));
    const double seed = num(j, "", "seed", 1.0);
    if (seed < 0 || seed != std::floor(seed)) bad_config("seed must be a non-negative integer");
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.threads = integer(j, "", "threads", 1, 1, 256);

    if (j.contains("spin_system")) {
        const json& s = j.at("spin_system");
        check_keys(s, "spin_system", {"hyperfine_GHz", "include_nuclear_zeeman"});
        cfg.spin_system.hyperfine_A = two_pi * 1e9 * pos(s, "spin_system", "hyperfine_GHz", 1.4754);
        if (s.contains("include_nuclear_zeeman")) {
            if (!s.at("include_nuclear_zeeman").is_boolean())
                bad_config("spin_system.include_nuclear_zeeman must be a boolean");
            cfg.spin_system.include_nuclear_zeeman = s.at("include_nuclear_zeeman").get<bool>();
        }
    }

    if (j.contains("resonator")) {
        const json& r = j.at("resonator");
        check_keys(r, "resonator",
                   {"frequency_GHz", "q_ext", "q_int", "impedance_ohm",
                    "wire_width_nm", "wire_thickness_nm", "wire_length_um",
                    "kerr_K_rad_s"});
        auto& m = cfg.resonator;
        m.omega0 = two_pi * 1e9 * pos(r, "resonator", "frequency_GHz", 7.25);
        m.q_ext = pos(r, "resonator", "q_ext", 3e4);
        m.q_int = pos(r, "resonator", "q_int", 8e4);
        m.impedance_Zc = pos(r, "resonator", "impedance_ohm", 15.0);
        m.wire_width = 1e-9 * pos(r, "resonator", "wire_width_nm", 100.0);
        m.wire_thickness = 1e-9 * pos(r, "resonator", "wire_thickness_nm", 50.0);
        m.wire_length = 1e-6 * pos(r, "resonator", "wire_length_um", 10.0);
        m.kerr_K = num(r, "resonator", "kerr_K_rad_s", 0.0);
    }

    if (j.contains("sample")) {
        const json& s = j.at("sample");
        check_keys(s, "sample",
                   {"peak_density_cm3", "depth_min_nm", "depth_max_nm", "strain",
                    "n_packets", "x_half_span_um", "detuning_window_MHz", "T2_ms",
                    "g0_bins", "detuning_bins"});
        cfg.peak_density = 1e6 * pos(s, "sample", "peak_density_cm3", 8e16);
        cfg.depth_min = 1e-9 * pos(s, "sample", "depth_min_nm", 50.0);
        cfg.depth_max = 1e-9 * pos(s, "sample", "depth_max_nm", 100.0);
        if (cfg.depth_max <= cfg.depth_min)
            bad_config("sample.depth_max_nm must exceed depth_min_nm");
        cfg.strain = text(s, "sample", "strain", "analytic");
        cfg.ensemble.n_packets = integer(s, "sample", "n_packets", 4000, 1, 50000);
        cfg.ensemble.x_half_span = 1e-6 * pos(s, "sample", "x_half_span_um", 0.5);
        cfg.ensemble.detuning_window =
            two_pi * 1e6 * pos(s, "sample", "detuning_window_MHz", 2.0);
        cfg.ensemble.T2 = 1e-3 * pos(s, "sample", "T2_ms", 0.85);
        cfg.ensemble.g0_bins = integer(s, "sample", "g0_bins", 60, 2, 1000);
        cfg.ensemble.detuning_bins = integer(s, "sample", "detuning_bins", 40, 2, 1000);
    }
    cfg.ensemble.seed = cfg.seed;

    if (j.contains("sequence")) {
        const json& s = j.at("sequence");
        check_keys(s, "sequence",
                   {"type", "beta", "dt_us", "tau_us", "n_refocus", "rep_rate_Hz",
                    "acquire_window_us", "sat_duration_ms", "beta_inv", "dt_inv_us"});
        cfg.sequence_type = text(s, "sequence", "type", "hahn");
        cfg.hahn.beta = pos(s, "sequence", "beta", 6e4);
        cfg.hahn.dt = 1e-6 * pos(s, "sequence", "dt_us", 1.0);
        cfg.hahn.tau = 1e-6 * pos(s, "sequence", "tau_us", 50.0);
        cfg.n_refocus = integer(s, "sequence", "n_refocus", 1, 1, 10000);
        cfg.rep_rate = pos(s, "sequence", "rep_rate_Hz", 100.0);
        cfg.acquire_window = 1e-6 * num(s, "sequence", "acquire_window_us", 0.0);
        cfg.sat_duration = 1e-3 * pos(s, "sequence", "sat_duration_ms", 10.0);
        cfg.beta_inv = num(s, "sequence", "beta_inv", 1e5);
        cfg.dt_inv = 1e-6 * pos(s, "sequence", "dt_inv_us", 1.0);
    }

    if (j.contains("detection")) {
        const json& d = j.at("detection");
        check_keys(d, "detection", {"n_tilde", "gain", "mode", "integral"});
        cfg.noise.n_tilde = num(d, "detection", "n_tilde", 0.0);
        if (cfg.noise.n_tilde < 0) bad_config("detection.n_tilde must be >= 0");
        cfg.noise.gain = pos(d, "detection", "gain", 1.0);
        const std::string mode = text(d, "detection", "mode", "degenerate");
        if (mode == "degenerate") cfg.noise.mode = detection::AmpMode::Degenerate;
        else if (mode == "phase_preserving")
            cfg.noise.mode = detection::AmpMode::PhasePreserving;
        else bad_config("detection.mode must be 'degenerate' or 'phase_preserving'");
        const std::string im = text(d, "detection", "integral", "boxcar");
        if (im == "boxcar") cfg.integral = detection::IntegralMode::Boxcar;
        else if (im == "matched") cfg.integral = detection::IntegralMode::Matched;
        else bad_config("detection.integral must be 'boxcar' or 'matched'");
        cfg.noise.validate();
    } else {
        cfg.noise.n_tilde = 0.0;
    }

    cfg.params = j.value("params", json::object());
    if (!cfg.params.is_object()) bad_config("params must be an object");
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("io: cannot open config " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        bad_config(std::string("invalid JSON in ") + path + ": " + e.what());
    }
    return parse_config(j);
}

std::string config_hash(const json& canonical) {
    return hex64(fnv1a(canonical.dump()));
}

void write_svg(const std::string& path, const std::vector<double>& xs,
               const std::vector<double>& ys, const std::string& title,
               const std::string& xlabel, const std::string& ylabel, bool log_x) {
    if (xs.size() != ys.size()) throw NumericError("numeric: svg series mismatch");
    auto os = open_out(path);
    const int W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    std::vector<double> px(xs);
    if (log_x)
        for (double& v : px) v = v > 0 ? std::log10(v) : 0.0;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!px.empty()) {
        x0 = *std::min_element(px.begin(), px.end());
        x1 = *std::max_element(px.begin(), px.end());
        y0 = *std::min_element(ys.begin(), ys.end());
        y1 = *std::max_element(ys.begin(), ys.end());
    }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    auto X = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto Y = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
       << "\" height=\"" << H << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
          "font-size=\"16\">" << title << "</text>\n"
       << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
       << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
       << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel
       << (log_x ? " (log10)" : "") << "</text>\n"
       << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
       << (mt + H - mb) / 2 << ")\">" << ylabel << "</text>\n";
    if (!px.empty()) {
        os << "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" points=\"";
        for (size_t k = 0; k < px.size(); ++k)
            os << X(px[k]) << ',' << Y(ys[k]) << ' ';
        os << "\"/>\n";
    }
    os << "</svg>\n";
}

namespace {

struct RunContext {
    const ExperimentConfig& cfg;
    fs::path out;
    json report = json::object();
    std::vector<std::pair<std::string, bool>> outputs;  // (file, stochastic)

    fs::path file(const std::string& name, bool stochastic) {
        outputs.push_back({name, stochastic});
        return out / name;
    }
};

sample::ImplantProfile profile_of(const ExperimentConfig& cfg) {
    return sample::implant_profile(cfg.peak_density, cfg.depth_min, cfg.depth_max);
}

// nullptr when strain is disabled; map over the sampled cross-section otherwise
std::unique_ptr<sample::StrainMap> strain_of(const ExperimentConfig& cfg) {
    if (cfg.strain == "none") return nullptr;
    auto m = std::make_unique<sample::StrainMap>();
    if (cfg.strain == "analytic") {
        constants::MaterialConstants mat;
        const double xh = cfg.ensemble.x_half_span;
        *m = sample::strain_analytic(cfg.resonator, mat, linspace(-xh, xh, 161),
                                     linspace(0.5 * cfg.depth_min,
                                              cfg.depth_max + 30e-9, 61));
    } else {
        *m = sample::strain_import(cfg.strain);
    }
    return m;
}

double default_field(const ExperimentConfig& cfg) {
    return spin::transition_field(cfg.spin_system, 0, cfg.resonator.omega0);
}

sequences::PulseSequence detection_sequence(const ExperimentConfig& cfg) {
    if (cfg.sequence_type == "hahn")
        return sequences::build_hahn(cfg.hahn.beta, cfg.hahn.dt, cfg.hahn.tau,
                                     cfg.acquire_window, cfg.rep_rate);
    if (cfg.sequence_type == "cpmg")
        return sequences::build_cpmg(cfg.hahn.beta, cfg.hahn.dt, cfg.hahn.tau,
                                     cfg.n_refocus, cfg.acquire_window, cfg.rep_rate);
    bad_config("sequence.type '" + cfg.sequence_type + "' not valid here");
}

struct EchoChain {
    std::vector<double> amplitudes;  // one per acquire window
    double window_width = 0;
};

// Phase-cycled echo amplitudes: the spectrometer phase is chosen from the
// noiseless cycled trace so the echo lies in the retained quadrature.
EchoChain measure_echoes(const sequences::PulseSequence& seq,
                         const std::vector<sample::SpinPacket>& ensemble,
                         const ExperimentConfig& cfg,
                         const dynamics::SimulateOptions& opt,
                         std::uint64_t noise_seed) {
    EchoChain out;
    const auto windows = dynamics::acquire_windows(seq);
    if (windows.empty()) throw NumericError("numeric: sequence has no acquire window");
    out.window_width = windows.front().t1 - windows.front().t0;
    if (ensemble.empty()) {
        out.amplitudes.assign(windows.size(), 0.0);
        return out;
    }

    dynamics::TraceRecord plus = dynamics::simulate(seq, ensemble, cfg.resonator, opt);
    dynamics::TraceRecord minus = dynamics::simulate(
        seq.with_first_pulse_phase_offset(constants::pi), ensemble, cfg.resonator, opt);
    dynamics::TraceRecord clean = detection::phase_cycle(plus, minus);

    std::complex<double> z(0, 0);
    for (size_t k = 0; k < clean.t.size(); ++k)
        if (clean.t[k] >= windows.front().t0 && clean.t[k] <= windows.front().t1)
            z += std::complex<double>(clean.I[k], clean.Q[k]);
    const double phase = std::abs(z) > 0 ? std::arg(z) : 0.0;
    auto rotate = [&](dynamics::TraceRecord& tr) {
        const std::complex<double> r = std::exp(std::complex<double>(0, -phase));
        for (size_t k = 0; k < tr.I.size(); ++k) {
            const std::complex<double> v = std::complex<double>(tr.I[k], tr.Q[k]) * r;
            tr.I[k] = v.real();
            tr.Q[k] = v.imag();
        }
    };
    rotate(clean);

    dynamics::TraceRecord detected = clean;
    if (cfg.noise.n_tilde > 0 || cfg.noise.gain != 1.0) {
        rotate(plus);
        rotate(minus);
        const auto np = detection::add_noise(plus, cfg.noise, noise_seed * 2 + 1);
        const auto nm = detection::add_noise(minus, cfg.noise, noise_seed * 2 + 2);
        detected = detection::phase_cycle(np, nm);
    }

    for (const auto& w0 : windows) {
        // the sampled grid ends just short of the sequence end; clip the window
        dynamics::AcquireWindow w = w0;
        w.t0 = std::max(w.t0, clean.t.front());
        w.t1 = std::min(w.t1, clean.t.back());
        if (cfg.integral == detection::IntegralMode::Matched) {
            std::vector<double> tmpl;
            for (size_t k = 0; k < clean.t.size(); ++k)
                if (clean.t[k] >= w.t0 && clean.t[k] <= w.t1) tmpl.push_back(clean.I[k]);
            double n2 = 0;
            for (double v : tmpl) n2 += v * v;
            if (n2 <= 0) {
                out.amplitudes.push_back(0.0);
                continue;
            }
            out.amplitudes.push_back(
                detection::echo_integral(detected, w, detection::IntegralMode::Matched,
                                         &tmpl)
                    .integral_Ae);
        } else {
            out.amplitudes.push_back(
                detection::echo_integral(detected, w).integral_Ae);
        }
    }
    return out;
}

// Exponential-recovery fit A(T) = A_inf (1 - exp(-T/T1)) by 1D search on T1.
std::pair<double, double> fit_recovery(const std::vector<double>& T,
                                       const std::vector<double>& A) {
    auto cost_amp = [&](double t1) {
        double num = 0, den = 0;
        for (size_t k = 0; k < T.size(); ++k) {
            const double m = 1.0 - std::exp(-T[k] / t1);
            num += A[k] * m;
            den += m * m;
        }
        const double amp = den > 0 ? num / den : 0.0;
        double c = 0;
        for (size_t k = 0; k < T.size(); ++k) {
            const double r = A[k] - amp * (1.0 - std::exp(-T[k] / t1));
            c += r * r;
        }
        return std::make_pair(c, amp);
    };
    const double t_hi = *std::max_element(T.begin(), T.end());
    double lo = std::log(t_hi * 1e-3), hi = std::log(t_hi * 10);
    for (int it = 0; it < 120; ++it) {
        const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
        if (cost_amp(std::exp(m1)).first < cost_amp(std::exp(m2)).first) hi = m2;
        else lo = m1;
    }
    const double t1 = std::exp(0.5 * (lo + hi));
    return {t1, cost_amp(t1).second};
}

void run_spectrum(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params", {"b0_min_mT", "b0_max_mT", "n_points"});
    const double b_lo = 1e-3 * num(p, "params", "b0_min_mT", 0.05);
    const double b_hi = 1e-3 * num(p, "params", "b0_max_mT", 9.0);
    const int n = integer(p, "params", "n_points", 41, 2, 2000);
    if (b_lo < 0 || b_hi <= b_lo) bad_config("params: need 0 <= b0_min_mT < b0_max_mT");

    const auto prof = profile_of(cfg);
    const auto strain = strain_of(cfg);
    const auto seq = detection_sequence(cfg);
    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;

    std::vector<double> fields = linspace(b_lo, b_hi, n), amps;
    for (int k = 0; k < n; ++k) {
        const auto ens = sample::build_ensemble(prof, strain.get(), cfg.resonator,
                                                cfg.spin_system, fields[k],
                                                cfg.ensemble);
        const auto echoes =
            measure_echoes(seq, ens, cfg, opt, cfg.seed + static_cast<std::uint64_t>(k));
        amps.push_back(echoes.amplitudes.front());
    }

    auto os = open_out(rc.file("spectrum.csv", cfg.noise.n_tilde > 0));
    os << "B0_mT,echo_integral\n";
    for (size_t k = 0; k < fields.size(); ++k)
        os << fields[k] * 1e3 << ',' << amps[k] << '\n';
    std::vector<double> mT(fields);
    for (double& v : mT) v *= 1e3;
    write_svg((rc.out / "spectrum.svg").string(), mT, amps, "Echo-detected spectrum",
              "B0 (mT)", "echo integral");
    rc.outputs.push_back({"spectrum.svg", cfg.noise.n_tilde > 0});
    rc.report["n_points"] = n;
    rc.report["max_echo"] = amps.empty() ? 0.0 : *std::max_element(amps.begin(), amps.end());
}

void run_echo_decay(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params",
               {"tau_min_us", "tau_max_us", "n_points", "b0_mT",
                "si29_concentration", "bath_r_max_nm"});
    const double t_lo = 1e-6 * pos(p, "params", "tau_min_us", 50.0);
    const double t_hi = 1e-6 * pos(p, "params", "tau_max_us", 1000.0);
    const int n = integer(p, "params", "n_points", 40, 2, 2000);
    const double conc = num(p, "params", "si29_concentration", 0.0);
    if (conc < 0 || conc > 1) bad_config("params.si29_concentration must be in [0, 1]");
    const double r_max = 1e-9 * pos(p, "params", "bath_r_max_nm", 3.0);
    const double B0 = p.contains("b0_mT") ? 1e-3 * pos(p, "params", "b0_mT", 1.0)
                                          : default_field(cfg);

    const auto prof = profile_of(cfg);
    const auto strain = strain_of(cfg);
    const auto ens = sample::build_ensemble(prof, strain.get(), cfg.resonator,
                                            cfg.spin_system, B0, cfg.ensemble);
    const auto bath = sample::nuclear_bath(conc, r_max, B0, cfg.seed);
    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;

    std::vector<double> taus = linspace(t_lo, t_hi, n), amps, mods;
    for (int k = 0; k < n; ++k) {
        const auto seq = sequences::build_hahn(cfg.hahn.beta, cfg.hahn.dt, taus[k],
                                               cfg.acquire_window, cfg.rep_rate);
        const auto echoes =
            measure_echoes(seq, ens, cfg, opt, cfg.seed + static_cast<std::uint64_t>(k));
        const double v = dynamics::eseem_kernel(bath, taus[k]);
        mods.push_back(v);
        amps.push_back(echoes.amplitudes.front() * v);
    }

    auto os = open_out(rc.file("echo_decay.csv", cfg.noise.n_tilde > 0 || conc > 0));
    os << "tau_us,echo_integral,eseem_factor\n";
    for (int k = 0; k < n; ++k)
        os << taus[k] * 1e6 << ',' << amps[k] << ',' << mods[k] << '\n';
    std::vector<double> us(taus);
    for (double& v : us) v *= 1e6;
    write_svg((rc.out / "echo_decay.svg").string(), us, amps, "Echo decay",
              "tau (us)", "echo integral");
    rc.outputs.push_back({"echo_decay.svg", cfg.noise.n_tilde > 0 || conc > 0});
    double depth = 0;
    for (double v : mods) depth = std::max(depth, 1.0 - v);
    rc.report["eseem_depth"] = depth;
    rc.report["B0_mT"] = B0 * 1e3;
}

void run_t1(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params", {"t_min_ms", "t_max_ms", "n_points", "b0_mT"});
    const double t_lo = 1e-3 * pos(p, "params", "t_min_ms", 0.05);
    const double t_hi = 1e-3 * pos(p, "params", "t_max_ms", 10.0);
    const int n = integer(p, "params", "n_points", 12, 3, 500);
    const double B0 = p.contains("b0_mT") ? 1e-3 * pos(p, "params", "b0_mT", 1.0)
                                          : default_field(cfg);

    const auto prof = profile_of(cfg);
    const auto strain = strain_of(cfg);
    const auto ens = sample::build_ensemble(prof, strain.get(), cfg.resonator,
                                            cfg.spin_system, B0, cfg.ensemble);

    // saturation modeled as an instantaneous depolarized start (s_z = 0); the
    // recovery delay T then precedes a standard two-pulse detection block
    std::vector<double> times = linspace(t_lo, t_hi, n), amps;
    for (int k = 0; k < n; ++k) {
        sequences::PulseSequence det = sequences::build_hahn(
            cfg.hahn.beta, cfg.hahn.dt, cfg.hahn.tau, cfg.acquire_window, cfg.rep_rate);
        sequences::PulseSequence seq;
        seq.name = "saturation_recovery";
        seq.segments.push_back({sequences::SegmentKind::Delay, times[k], 0, 0});
        seq.cycle_segment = 1;  // detection pi/2 sits after the recovery delay
        seq.segments.insert(seq.segments.end(), det.segments.begin(),
                            det.segments.end());
        // long recovery delays must still fit in the repetition period
        seq.repetition_rate = std::min(cfg.rep_rate, 0.5 / seq.total_duration());
        dynamics::SimulateOptions opt;
        opt.fast_forward_delays = true;
        opt.initial_sz = 0.0;
        const auto echoes =
            measure_echoes(seq, ens, cfg, opt, cfg.seed + static_cast<std::uint64_t>(k));
        amps.push_back(echoes.amplitudes.front());
    }

    const auto [t1, amp] = fit_recovery(times, amps);
    auto os = open_out(rc.file("t1_recovery.csv", cfg.noise.n_tilde > 0));
    os << "T_ms,echo_integral\n";
    for (int k = 0; k < n; ++k) os << times[k] * 1e3 << ',' << amps[k] << '\n';
    std::vector<double> ms(times);
    for (double& v : ms) v *= 1e3;
    write_svg((rc.out / "t1_recovery.svg").string(), ms, amps,
              "Saturation recovery", "T (ms)", "echo integral");
    rc.outputs.push_back({"t1_recovery.svg", cfg.noise.n_tilde > 0});
    rc.report["fitted_T1_ms"] = t1 * 1e3;
    rc.report["fitted_amplitude"] = amp;
    rc.report["B0_mT"] = B0 * 1e3;
}

void run_rabi(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params", {"beta_inv_min", "beta_inv_max", "n_points", "b0_mT"});
    const double b_lo = num(p, "params", "beta_inv_min", 0.0);
    const double b_hi = pos(p, "params", "beta_inv_max", 4e5);
    const int n = integer(p, "params", "n_points", 30, 2, 1000);
    if (b_lo < 0 || b_hi <= b_lo) bad_config("params: need 0 <= beta_inv_min < beta_inv_max");
    const double B0 = p.contains("b0_mT") ? 1e-3 * pos(p, "params", "b0_mT", 1.0)
                                          : default_field(cfg);

    const auto prof = profile_of(cfg);
    const auto strain = strain_of(cfg);
    const auto ens = sample::build_ensemble(prof, strain.get(), cfg.resonator,
                                            cfg.spin_system, B0, cfg.ensemble);
    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;

    std::vector<double> betas = linspace(b_lo, b_hi, n), amps;
    for (int k = 0; k < n; ++k) {
        const auto seq = sequences::build_rabi_nutation(betas[k], cfg.dt_inv, cfg.hahn,
                                                        cfg.acquire_window, cfg.rep_rate);
        const auto echoes =
            measure_echoes(seq, ens, cfg, opt, cfg.seed + static_cast<std::uint64_t>(k));
        amps.push_back(echoes.amplitudes.front());
    }

    auto os = open_out(rc.file("rabi.csv", cfg.noise.n_tilde > 0));
    os << "beta_inv,echo_integral\n";
    for (int k = 0; k < n; ++k) os << betas[k] << ',' << amps[k] << '\n';
    write_svg((rc.out / "rabi.svg").string(), betas, amps, "Rabi nutation",
              "inversion amplitude (s^-1/2)", "echo integral");
    rc.outputs.push_back({"rabi.svg", cfg.noise.n_tilde > 0});
    rc.report["B0_mT"] = B0 * 1e3;
}

void run_cpmg(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params", {"n_echoes", "b0_mT", "noise_sigma"});
    const int n_echo = integer(p, "params", "n_echoes", 20, 1, 5000);
    const double B0 = p.contains("b0_mT") ? 1e-3 * pos(p, "params", "b0_mT", 1.0)
                                          : default_field(cfg);

    const auto prof = profile_of(cfg);
    const auto strain = strain_of(cfg);
    const auto ens = sample::build_ensemble(prof, strain.get(), cfg.resonator,
                                            cfg.spin_system, B0, cfg.ensemble);
    const auto seq = sequences::build_cpmg(cfg.hahn.beta, cfg.hahn.dt, cfg.hahn.tau,
                                           n_echo, cfg.acquire_window, cfg.rep_rate);
    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;
    // the train itself is the noiseless mean; detection noise enters the SNR
    // estimate analytically through sigma below
    ExperimentConfig quiet = cfg;
    quiet.noise.n_tilde = 0.0;
    quiet.noise.gain = 1.0;
    const auto echoes = measure_echoes(seq, ens, quiet, opt, cfg.seed);

    double sigma = std::sqrt(std::max(cfg.noise.n_tilde, 0.5) *
                             echoes.window_width / 2.0);
    sigma = num(p, "params", "noise_sigma", sigma);
    if (!(sigma > 0)) bad_config("params.noise_sigma must be > 0");
    const auto snr = detection::cpmg_snr(echoes.amplitudes, sigma);

    auto os = open_out(rc.file("cpmg.csv", false));
    os << "n,echo_integral,snr,improvement\n";
    for (size_t k = 0; k < echoes.amplitudes.size(); ++k)
        os << k + 1 << ',' << echoes.amplitudes[k] << ',' << snr.snr[k] << ','
           << snr.improvement[k] << '\n';
    std::vector<double> ns, imp;
    for (size_t k = 0; k < snr.improvement.size(); ++k) {
        ns.push_back(static_cast<double>(k + 1));
        imp.push_back(snr.improvement[k]);
    }
    write_svg((rc.out / "cpmg.svg").string(), ns, imp, "CPMG SNR improvement",
              "number of echoes", "SNR(n)/SNR(1)");
    rc.outputs.push_back({"cpmg.svg", false});
    rc.report["best_n"] = snr.best_n;
    rc.report["best_improvement"] = snr.best_improvement;
    rc.report["B0_mT"] = B0 * 1e3;
}

void run_stats(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params",
               {"n_samples", "rep_rate_Hz", "relative_sigma", "correlation_time_s",
                "white_sigma", "mean_A", "n_values", "decimation"});
    const auto n_samples = static_cast<std::size_t>(
        pos(p, "params", "n_samples", 1e5));
    const double rate = pos(p, "params", "rep_rate_Hz", 100.0);
    detection::FluctuationModel fl;
    fl.relative_sigma = num(p, "params", "relative_sigma", 0.1);
    fl.correlation_time = num(p, "params", "correlation_time_s", 3.0);
    const double white = num(p, "params", "white_sigma", 0.3);
    const double mean = num(p, "params", "mean_A", 1.0);
    const int decim = integer(p, "params", "decimation", 100, 1, 1 << 20);
    std::vector<int> n_values = {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000};
    if (p.contains("n_values")) {
        if (!p.at("n_values").is_array()) bad_config("params.n_values must be an array");
        n_values.clear();
        for (const auto& v : p.at("n_values")) {
            if (!v.is_number()) bad_config("params.n_values entries must be numbers");
            n_values.push_back(v.get<int>());
        }
    }

    const auto series = detection::ou_series(mean, fl, white, n_samples, rate, cfg.seed);
    std::vector<int> feasible, feasible_dec;
    for (int n : n_values) {
        if (n_samples / static_cast<std::size_t>(n) >= 2) feasible.push_back(n);
        if (n_samples / static_cast<std::size_t>(decim) /
                std::max<std::size_t>(n, 1) >= 2)
            feasible_dec.push_back(n);
    }
    if (feasible.empty()) bad_config("params.n_values leaves no feasible block size");
    const auto raw = detection::sigma_scaling(series, feasible);
    const auto dec = detection::sigma_scaling(series, feasible_dec, decim);

    {
        auto os = open_out(rc.file("sigma_raw.csv", true));
        os << "n,sigma,blocks\n";
        for (const auto& q : raw) os << q.n << ',' << q.sigma << ',' << q.blocks << '\n';
    }
    {
        auto os = open_out(rc.file("sigma_decimated.csv", true));
        os << "n,sigma,blocks\n";
        for (const auto& q : dec) os << q.n << ',' << q.sigma << ',' << q.blocks << '\n';
    }
    std::vector<double> ns, scaled;
    for (const auto& q : raw) {
        ns.push_back(q.n);
        scaled.push_back(q.sigma * std::sqrt(double(q.n)));
    }
    write_svg((rc.out / "sigma_scaling.svg").string(), ns, scaled,
              "Averaging deviation (flat = 1/sqrt n)", "n", "sigma(n) sqrt(n)", true);
    rc.outputs.push_back({"sigma_scaling.svg", true});
    rc.report["sigma1"] = raw.front().sigma;
    rc.report["decimation"] = decim;
}

void run_s11_fit(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params",
               {"trace_csv", "format", "span_linewidths", "n_points", "snr_db"});
    resonator::ReflectionTrace tr;
    bool stochastic = false;
    if (p.contains("trace_csv")) {
        const std::string path = text(p, "params", "trace_csv", "");
        const std::string fmt = text(p, "params", "format", "reim");
        if (fmt == "reim") tr = resonator::load_reflection_csv(path);
        else if (fmt == "db_deg") tr = resonator::load_reflection_db_deg(path);
        else bad_config("params.format must be 'reim' or 'db_deg'");
        if (tr.frequencies.empty()) throw IoError("io: no data rows in " + path);
    } else {
        const double span = pos(p, "params", "span_linewidths", 10.0);
        const int n = integer(p, "params", "n_points", 401, 50, 100000);
        const double snr_db = num(p, "params", "snr_db", 0.0);
        const double kappa = cfg.resonator.kappa();
        rng::Stream rs(cfg.seed, 0x511);
        const double sigma =
            snr_db > 0 ? std::pow(10.0, -snr_db / 20.0) / std::sqrt(2.0) : 0.0;
        stochastic = sigma > 0;
        for (int k = 0; k < n; ++k) {
            const double w =
                cfg.resonator.omega0 + kappa * span * (double(k) / (n - 1) - 0.5);
            tr.frequencies.push_back(w);
            auto v = resonator::s11_linear(cfg.resonator, w);
            if (sigma > 0)
                v += std::complex<double>(sigma * rs.normal(), sigma * rs.normal());
            tr.s11.push_back(v);
        }
    }

    resonator::FitResult fit;
    try {
        fit = resonator::fit_s11(tr);
    } catch (const std::exception& e) {
        throw NumericError(std::string("numeric: ") + e.what());
    }

    auto os = open_out(rc.file("s11_trace.csv", stochastic));
    os << "freq_Hz,re,im,mag\n";
    for (size_t k = 0; k < tr.frequencies.size(); ++k)
        os << tr.frequencies[k] / two_pi << ',' << tr.s11[k].real() << ','
           << tr.s11[k].imag() << ',' << std::abs(tr.s11[k]) << '\n';
    std::vector<double> fs, mags;
    for (size_t k = 0; k < tr.frequencies.size(); ++k) {
        fs.push_back(tr.frequencies[k] / two_pi / 1e9);
        mags.push_back(std::abs(tr.s11[k]));
    }
    write_svg((rc.out / "s11_fit.svg").string(), fs, mags, "Reflection magnitude",
              "frequency (GHz)", "|S11|");
    rc.outputs.push_back({"s11_fit.svg", stochastic});
    rc.report["omega0_GHz"] = fit.omega0 / two_pi / 1e9;
    rc.report["q_ext"] = fit.q_ext;
    rc.report["q_int"] = fit.q_int;
    rc.report["residual"] = fit.residual;
    rc.report["iterations"] = fit.iterations;
}

void run_coupling_map(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params", {"b0_mT", "bins"});
    const double B0 = p.contains("b0_mT") ? 1e-3 * pos(p, "params", "b0_mT", 1.0)
                                          : default_field(cfg);
    const int bins = integer(p, "params", "bins", 60, 2, 2000);

    const auto prof = profile_of(cfg);
    const auto strain = strain_of(cfg);
    sample::EnsembleOptions opt = cfg.ensemble;
    opt.aggregate = false;  // keep per-donor positions for the map statistics
    const auto ens = sample::build_ensemble(prof, strain.get(), cfg.resonator,
                                            cfg.spin_system, B0, opt);
    if (ens.empty()) throw NumericError("numeric: empty ensemble in coupling_map");
    const auto hist = sample::coupling_histogram(ens, bins);

    double g_max = 0, x_at = 0, y_at = 0;
    for (const auto& pk : ens)
        if (pk.g0 > g_max) { g_max = pk.g0; x_at = pk.x; y_at = pk.y; }

    auto os = open_out(rc.file("coupling_histogram.csv", true));
    os << "g0_lo_Hz,g0_hi_Hz,donors\n";
    for (size_t k = 0; k < hist.counts.size(); ++k)
        os << hist.bin_edges[k] / two_pi << ',' << hist.bin_edges[k + 1] / two_pi
           << ',' << hist.counts[k] << '\n';
    std::vector<double> centers, counts;
    for (size_t k = 0; k < hist.counts.size(); ++k) {
        centers.push_back(0.5 * (hist.bin_edges[k] + hist.bin_edges[k + 1]) / two_pi);
        counts.push_back(hist.counts[k]);
    }
    write_svg((rc.out / "coupling_map.svg").string(), centers, counts,
              "Coupling distribution", "g0/2pi (Hz)", "donors", true);
    rc.outputs.push_back({"coupling_map.svg", true});
    rc.report["max_g0_Hz"] = g_max / two_pi;
    rc.report["max_g0_x_nm"] = x_at * 1e9;
    rc.report["max_g0_depth_nm"] = y_at * 1e9;
    rc.report["B0_mT"] = B0 * 1e3;
}

void run_strain_map(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params",
               {"x_min_um", "x_max_um", "nx", "y_min_nm", "y_max_nm", "ny"});
    const double x0 = 1e-6 * num(p, "params", "x_min_um", -0.5);
    const double x1 = 1e-6 * num(p, "params", "x_max_um", 0.5);
    const double y0 = 1e-9 * num(p, "params", "y_min_nm", 5.0);
    const double y1 = 1e-9 * num(p, "params", "y_max_nm", 150.0);
    const int nx = integer(p, "params", "nx", 101, 2, 2000);
    const int ny = integer(p, "params", "ny", 30, 2, 2000);
    if (x1 <= x0 || y1 <= y0) bad_config("params: strain grid bounds inverted");

    constants::MaterialConstants mat;
    const auto map = sample::strain_analytic(cfg.resonator, mat, linspace(x0, x1, nx),
                                             linspace(y0, y1, ny));
    sample::strain_export(map, (rc.file("strain_map.csv", false)).string());

    // center-depth profile for the rendering
    std::vector<double> xs, es;
    const double y_mid = 0.5 * (y0 + y1);
    for (double x : map.xs) {
        xs.push_back(x * 1e6);
        es.push_back(map.at(x, y_mid));
    }
    write_svg((rc.out / "strain_map.svg").string(), xs, es, "Hydrostatic strain",
              "x (um)", "eps_h");
    rc.outputs.push_back({"strain_map.svg", false});
    double emax = 0;
    for (double e : map.eps_h) emax = std::max(emax, std::abs(e));
    rc.report["max_abs_strain"] = emax;
    rc.report["max_shift_5A_MHz"] =
        5 * sample::hyperfine_shift(emax) / two_pi / 1e6;
}

void run_sensitivity(RunContext& rc) {
    const auto& cfg = rc.cfg;
    const json& p = cfg.params;
    check_keys(p, "params",
               {"g0_kHz", "n_tilde", "polarization", "snr_single", "n_spin",
                "rep_rate_Hz"});
    const double g0 = two_pi * 1e3 * pos(p, "params", "g0_kHz", 2.7);
    const double n_tilde = num(p, "params", "n_tilde", 0.5);
    const double pol = pos(p, "params", "polarization", 1.0);
    const double snr = pos(p, "params", "snr_single", 0.33);
    const double n_spin = pos(p, "params", "n_spin", 36.0);
    const double rep = pos(p, "params", "rep_rate_Hz", 100.0);

    const double kappa = cfg.resonator.kappa();
    const double n_min = detection::sensitivity_formula(kappa, g0, n_tilde, pol);
    const auto pipe = detection::sensitivity_pipeline(snr, n_spin, rep);

    auto os = open_out(rc.file("sensitivity.csv", false));
    os << "kappa_Hz,g0_Hz,n_tilde,n_min_formula,n_min_single,spins_per_sqrt_hz\n";
    os << kappa / two_pi << ',' << g0 / two_pi << ',' << n_tilde << ',' << n_min
       << ',' << pipe.n_min_single << ',' << pipe.spins_per_sqrt_hz << '\n';

    std::vector<double> gs, nm;
    for (double g_khz = 0.5; g_khz <= 10.0; g_khz += 0.25) {
        gs.push_back(g_khz);
        nm.push_back(detection::sensitivity_formula(kappa, two_pi * 1e3 * g_khz,
                                                    n_tilde, pol));
    }
    write_svg((rc.out / "sensitivity.svg").string(), gs, nm,
              "Minimum detectable spins", "g0/2pi (kHz)", "N_min");
    rc.outputs.push_back({"sensitivity.svg", false});
    rc.report["n_min_formula"] = n_min;
    rc.report["n_min_single"] = pipe.n_min_single;
    rc.report["spins_per_sqrt_hz"] = pipe.spins_per_sqrt_hz;
}

}  // namespace

json run(const ExperimentConfig& cfg, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("io: cannot create output directory " + out_dir);

    RunContext rc{cfg, fs::path(out_dir)};
    try {
        switch (cfg.kind) {
            case Kind::Spectrum: run_spectrum(rc); break;
            case Kind::EchoDecay: run_echo_decay(rc); break;
            case Kind::T1: run_t1(rc); break;
            case Kind::Rabi: run_rabi(rc); break;
            case Kind::Cpmg: run_cpmg(rc); break;
            case Kind::Stats: run_stats(rc); break;
            case Kind::S11Fit: run_s11_fit(rc); break;
            case Kind::CouplingMap: run_coupling_map(rc); break;
            case Kind::StrainMap: run_strain_map(rc); break;
            case Kind::Sensitivity: run_sensitivity(rc); break;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const IoError&) {
        throw;
    } catch (const NumericError&) {
        throw;
    } catch (const std::exception& e) {
        throw NumericError(std::string("numeric: ") + e.what());
    }

    json manifest;
    manifest["schema_version"] = 1;
    manifest["experiment"] = to_string(cfg.kind);
    manifest["name"] = cfg.name;
    manifest["seed"] = cfg.seed;
    manifest["config"] = cfg.raw;
    manifest["config_hash"] = config_hash(cfg.raw);
    manifest["report"] = rc.report;
    manifest["outputs"] = json::array();
    for (const auto& [file, stochastic] : rc.outputs) {
        json o;
        o["file"] = file;
        o["hash"] = hex64(fnv1a(read_file(rc.out / file)));
        o["stochastic"] = stochastic;
        manifest["outputs"].push_back(o);
    }
    {
        auto os = open_out(rc.out / "manifest.json");
        os << manifest.dump(2) << '\n';
    }
    return manifest;
}

ReplayReport replay(const std::string& results_dir) {
    const fs::path dir(results_dir);
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw IoError("io: missing manifest " + mpath.string());
    json manifest;
    {
        std::ifstream is(mpath);
        try {
            is >> manifest;
        } catch (const json::exception& e) {
            throw IoError(std::string("io: unreadable manifest: ") + e.what());
        }
    }
    const ExperimentConfig cfg = parse_config(manifest.at("config"));
    const fs::path tmp = dir / ".replay_tmp";
    run(cfg, tmp.string());

    ReplayReport rep;
    rep.all_match = true;
    for (const auto& o : manifest.at("outputs")) {
        const std::string file = o.at("file").get<std::string>();
        const fs::path stored = dir / file;
        const fs::path fresh = tmp / file;
        if (!fs::exists(stored)) {
            rep.mismatches.push_back({file, 0, "missing stored file"});
            rep.all_match = false;
            continue;
        }
        const std::string a = read_file(stored);
        const std::string b = read_file(fresh);
        if (a == b) continue;
        rep.all_match = false;
        // locate the first differing line for diagnosis
        int line = 1;
        size_t ka = 0, kb = 0;
        while (ka < a.size() && kb < b.size()) {
            const size_t ea = a.find('\n', ka), eb = b.find('\n', kb);
            const std::string la = a.substr(ka, ea == std::string::npos
                                                    ? std::string::npos : ea - ka);
            const std::string lb = b.substr(kb, eb == std::string::npos
                                                    ? std::string::npos : eb - kb);
            if (la != lb) break;
            if (ea == std::string::npos || eb == std::string::npos) break;
            ka = ea + 1;
            kb = eb + 1;
            ++line;
        }
        rep.mismatches.push_back({file, line, "first difference at line " +
                                                  std::to_string(line)});
    }
    std::error_code ec;
    fs::remove_all(tmp, ec);
    return rep;
}

}  // namespace esrsim::experiment
