#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace esrsim::sequences {

enum class SegmentKind { Drive, Delay, Acquire };

struct Segment {
    SegmentKind kind = SegmentKind::Delay;
    double duration = 0.0;  // s
    double beta = 0.0;      // s^-1/2, drive only
    double phase = 0.0;     // rad, drive only
};

enum class PhaseCycle { None, FirstPulse };

struct PulseSequence {
    std::vector<Segment> segments;
    double repetition_rate = 100.0;  // Hz
    PhaseCycle phase_cycle = PhaseCycle::None;
    std::string name;
    int cycle_segment = -1;  // segment index cycled; -1 = first drive

    double total_duration() const;
    /// Throws std::invalid_argument on any violated invariant.
    void validate() const;
    /// Copy with the first drive phase shifted by `delta` (phase cycling).
    PulseSequence with_first_pulse_phase_offset(double delta) const;
};

struct HahnParams {
    double beta = 6e4;   // s^-1/2, amplitude of the refocusing pulse
    double dt = 1e-6;    // s
    double tau = 50e-6;  // s
};

/// Two-pulse echo: beta/2 for dt, wait tau, beta for dt, acquire around the
/// echo at tau after the second pulse. `acquire_window` <= 0 selects the
/// default of 8 cavity time constants (caller rewrites via set_acquire_window).
PulseSequence build_hahn(double beta, double dt, double tau,
                         double acquire_window = 0.0, double rep_rate = 100.0);

/// (pi/2)_{+-x} - tau - pi_y - tau - echo - (tau/2 - pi_y - tau/2 - echo)_(n-1)
PulseSequence build_cpmg(double beta, double dt, double tau, int n_refocus,
                         double acquire_window = 0.0, double rep_rate = 100.0);

PulseSequence build_saturation_recovery(double T_delay, const HahnParams& det,
                                        double sat_duration = 10e-3,
                                        double sat_beta = 0.0,
                                        double acquire_window = 0.0,
                                        double rep_rate = 50.0);

PulseSequence build_rabi_nutation(double beta_inv, double dt_inv,
                                  const HahnParams& det,
                                  double acquire_window = 0.0,
                                  double rep_rate = 50.0);

nlohmann::json to_json(const PulseSequence& seq);
PulseSequence sequence_from_json(const nlohmann::json& j);

}  // namespace esrsim::sequences
