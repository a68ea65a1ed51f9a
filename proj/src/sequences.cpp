#include "esrsim/sequences.hpp"

#include <cmath>
#include <stdexcept>

#include "esrsim/constants.hpp"

namespace esrsim::sequences {

namespace {

constexpr double kNominalKappa = constants::two_pi * 332e3;

double default_window(double acquire_window) {
    // 8 cavity time constants at the nominal linewidth
    return acquire_window > 0 ? acquire_window : 8.0 * 2.0 / kNominalKappa;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

double PulseSequence::total_duration() const {
    double t = 0;
    for (const auto& s : segments) t += s.duration;
    return t;
}

void PulseSequence::validate() const {
    require(!segments.empty(), "sequence has no segments");
    for (const auto& s : segments) {
        require(std::isfinite(s.duration) && s.duration > 0,
                "segment durations must be > 0");
        if (s.kind == SegmentKind::Drive)
            require(std::isfinite(s.beta) && s.beta >= 0 && std::isfinite(s.phase),
                    "drive amplitude/phase invalid");
    }
    require(repetition_rate > 0, "repetition rate must be > 0");
    require(total_duration() <= 1.0 / repetition_rate,
            "sequence exceeds the repetition period");
}

PulseSequence PulseSequence::with_first_pulse_phase_offset(double delta) const {
    PulseSequence out = *this;
    if (cycle_segment >= 0 && cycle_segment < static_cast<int>(out.segments.size())) {
        out.segments[static_cast<size_t>(cycle_segment)].phase += delta;
        return out;
    }
    for (auto& s : out.segments) {
        if (s.kind == SegmentKind::Drive) {
            s.phase += delta;
            break;
        }
    }
    return out;
}

PulseSequence build_hahn(double beta, double dt, double tau, double acquire_window,
                         double rep_rate) {
    require(beta > 0 && dt > 0 && tau > 0, "Hahn parameters must be > 0");
    const double win = default_window(acquire_window);
    require(tau > win / 2 + dt / 2,
            "tau too short: acquisition window overlaps the refocusing pulse");
    PulseSequence seq;
    seq.name = "hahn";
    seq.repetition_rate = rep_rate;
    seq.phase_cycle = PhaseCycle::FirstPulse;
    seq.segments = {
        {SegmentKind::Drive, dt, beta / 2, constants::pi / 2},
        {SegmentKind::Delay, tau, 0, 0},
        {SegmentKind::Drive, dt, beta, 0},
        {SegmentKind::Delay, tau - win / 2, 0, 0},
        {SegmentKind::Acquire, win, 0, 0},
    };
    seq.validate();
    return seq;
}

PulseSequence build_cpmg(double beta, double dt, double tau, int n_refocus,
                         double acquire_window, double rep_rate) {
    require(n_refocus >= 1, "n_refocus must be >= 1");
    PulseSequence seq = build_hahn(beta, dt, tau, acquire_window, rep_rate);
    seq.name = "cpmg";
    const double win = default_window(acquire_window);
    require(tau / 2 > win / 2 + dt / 2, "tau too short for the CPMG echo spacing");
    for (int k = 1; k < n_refocus; ++k) {
        seq.segments.push_back({SegmentKind::Delay, tau / 2 - win / 2, 0, 0});
        seq.segments.push_back({SegmentKind::Drive, dt, beta, 0});
        seq.segments.push_back({SegmentKind::Delay, tau / 2 - win / 2, 0, 0});
        seq.segments.push_back({SegmentKind::Acquire, win, 0, 0});
    }
    seq.validate();
    return seq;
}

PulseSequence build_saturation_recovery(double T_delay, const HahnParams& det,
                                        double sat_duration, double sat_beta,
                                        double acquire_window, double rep_rate) {
    require(T_delay >= 0, "T_delay must be >= 0");
    if (sat_beta <= 0) sat_beta = det.beta;
    PulseSequence hahn = build_hahn(det.beta, det.dt, det.tau, acquire_window, rep_rate);
    PulseSequence seq;
    seq.name = "saturation_recovery";
    seq.repetition_rate = rep_rate;
    seq.phase_cycle = PhaseCycle::FirstPulse;
    seq.segments.push_back({SegmentKind::Drive, sat_duration, sat_beta, 0});
    if (T_delay > 0) seq.segments.push_back({SegmentKind::Delay, T_delay, 0, 0});
    seq.cycle_segment = static_cast<int>(seq.segments.size());  // detection pi/2
    seq.segments.insert(seq.segments.end(), hahn.segments.begin(), hahn.segments.end());
    seq.validate();
    return seq;
}

PulseSequence build_rabi_nutation(double beta_inv, double dt_inv,
                                  const HahnParams& det, double acquire_window,
                                  double rep_rate) {
    require(beta_inv >= 0 && dt_inv > 0, "nutation pulse parameters invalid");
    PulseSequence hahn = build_hahn(det.beta, det.dt, det.tau, acquire_window, rep_rate);
    PulseSequence seq;
    seq.name = "rabi_nutation";
    seq.repetition_rate = rep_rate;
    seq.phase_cycle = PhaseCycle::FirstPulse;
    seq.segments.push_back({SegmentKind::Drive, dt_inv, beta_inv, 0});
    seq.segments.push_back({SegmentKind::Delay, det.tau, 0, 0});
    // phase cycling applies to the first detection pulse, not the inversion
    seq.cycle_segment = static_cast<int>(seq.segments.size());
    seq.segments.insert(seq.segments.end(), hahn.segments.begin(), hahn.segments.end());
    seq.validate();
    return seq;
}

namespace {

std::string kind_name(SegmentKind k) {
    switch (k) {
        case SegmentKind::Drive: return "drive";
        case SegmentKind::Delay: return "delay";
        case SegmentKind::Acquire: return "acquire";
    }
    return "delay";
}

SegmentKind kind_from(const std::string& s) {
    if (s == "drive") return SegmentKind::Drive;
    if (s == "delay") return SegmentKind::Delay;
    if (s == "acquire") return SegmentKind::Acquire;
    throw std::invalid_argument("unknown segment kind: " + s);
}

}  // namespace

nlohmann::json to_json(const PulseSequence& seq) {
    nlohmann::json j;
    j["name"] = seq.name;
    j["repetition_rate_hz"] = seq.repetition_rate;
    j["phase_cycle"] = seq.phase_cycle == PhaseCycle::FirstPulse ? "first_pulse" : "none";
    if (seq.cycle_segment >= 0) j["cycle_segment"] = seq.cycle_segment;
    j["segments"] = nlohmann::json::array();
    for (const auto& s : seq.segments) {
        nlohmann::json js;
        js["kind"] = kind_name(s.kind);
        js["duration_s"] = s.duration;
        if (s.kind == SegmentKind::Drive) {
            js["beta"] = s.beta;
            js["phase_rad"] = s.phase;
        }
        j["segments"].push_back(js);
    }
    return j;
}

PulseSequence sequence_from_json(const nlohmann::json& j) {
    PulseSequence seq;
    seq.name = j.value("name", "");
    seq.repetition_rate = j.at("repetition_rate_hz").get<double>();
    const std::string pc = j.value("phase_cycle", "none");
    seq.phase_cycle = pc == "first_pulse" ? PhaseCycle::FirstPulse : PhaseCycle::None;
    seq.cycle_segment = j.value("cycle_segment", -1);
    for (const auto& js : j.at("segments")) {
        Segment s;
        s.kind = kind_from(js.at("kind").get<std::string>());
        s.duration = js.at("duration_s").get<double>();
        if (s.kind == SegmentKind::Drive) {
            s.beta = js.at("beta").get<double>();
            s.phase = js.value("phase_rad", 0.0);
        }
        seq.segments.push_back(s);
    }
    seq.validate();
    return seq;
}

}  // namespace esrsim::sequences
