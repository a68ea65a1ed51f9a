// Acceptance gate: one line per criterion, PASS/FAIL, nonzero exit on failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "esrsim/constants.hpp"
#include "esrsim/detection.hpp"
#include "esrsim/dynamics.hpp"
#include "esrsim/resonator.hpp"
#include "esrsim/rng.hpp"
#include "esrsim/sample.hpp"
#include "esrsim/sequences.hpp"
#include "esrsim/spin_hamiltonian.hpp"

using namespace esrsim;
using constants::two_pi;

namespace {

int g_failures = 0;

void report(int id, const std::string& what, bool ok, const std::string& detail) {
    std::printf("%s  criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", id,
                what.c_str(), detail.c_str());
    if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

resonator::ResonatorModel reference_resonator() {
    resonator::ResonatorModel res;
    // equal-split coupling giving kappa/2pi = 332 kHz at 7.25 GHz
    const double kappa = two_pi * 332e3;
    res.q_ext = 2.0 * res.omega0 / kappa;
    res.q_int = res.q_ext;
    return res;
}

// drive amplitude rotating a spin of coupling g0 by theta in dt (steady-state)
double beta_for_angle(double theta, double dt, double g0,
                      const resonator::ResonatorModel& res) {
    return theta * res.kappa() / (4.0 * g0 * std::sqrt(res.kappa_ext()) * dt);
}

sample::SpinPacket lone_packet(double g0, double detuning) {
    sample::SpinPacket p;
    p.g0 = g0;
    p.detuning = detuning;
    p.weight = 1e-8;  // negligible backaction on the cavity
    p.T1 = 1e6;
    p.T2 = 1e6;
    return p;
}

// exponential decay rate of |I + iQ| between t0 and t1 by linear regression
double envelope_rate(const dynamics::TraceRecord& tr, double t0, double t1) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (size_t k = 0; k < tr.t.size(); ++k) {
        if (tr.t[k] < t0 || tr.t[k] > t1) continue;
        const double m = std::hypot(tr.I[k], tr.Q[k]);
        if (m <= 0) continue;
        const double lm = std::log(m);
        sx += tr.t[k];
        sy += lm;
        sxx += tr.t[k] * tr.t[k];
        sxy += tr.t[k] * lm;
        ++n;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return -slope;
}

double emission_at(const dynamics::TraceRecord& tr, double t) {
    double best = 0, bd = 1e9;
    for (size_t k = 0; k < tr.t.size(); ++k)
        if (std::abs(tr.t[k] - t) < bd) {
            bd = std::abs(tr.t[k] - t);
            best = std::hypot(tr.I[k], tr.Q[k]);
        }
    return best;
}

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    spin::SpinSystem sys;
    rng::Stream rs(2024, 1);
    double worst = 0;
    for (int k = 0; k < 1000; ++k) {
        const double B0 = rs.uniform(0.0, 50e-3);
        const auto lv = spin::eigensystem(spin::build_hamiltonian(sys, B0));
        const spin::Vector ref = spin::breit_rabi(sys, B0);
        const double scale = std::max(std::abs(ref.minCoeff()), ref.maxCoeff());
        for (int i = 0; i < ref.size(); ++i)
            worst = std::max(worst, std::abs(lv.energies[i] - ref[i]) / scale);
    }
    const auto zf = spin::eigensystem(spin::build_hamiltonian(sys, 0.0));
    const double split =
        (zf.energies.maxCoeff() - zf.energies.minCoeff()) / two_pi / 1e9;
    const double dt = seconds_since(t0);
    const bool ok = worst <= 1e-9 && std::abs(split - 5 * 1.4754) < 1e-9 &&
                    dt < 10.0;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "worst rel err %.2e, zero-field splitting %.4f GHz, %.1f s",
                  worst, split, dt);
    report(1, "eigenvalues match the closed form", ok, buf);
}

void criterion_2() {
    spin::SpinSystem sys;
    const auto table = spin::transitions(sys, 0.1e-3, 0.05);
    double lowest_el = 0;
    if (!table.entries.empty()) lowest_el = table.entries.front().sx_matrix_element;
    const bool ok = table.entries.size() == 10 &&
                    std::abs(lowest_el - 0.4743) <= 1e-3;
    char buf[120];
    std::snprintf(buf, sizeof buf, "%zu lines, lowest element %.4f",
                  table.entries.size(), lowest_el);
    report(2, "ten allowed transitions near zero field", ok, buf);
}

void criterion_3() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = reference_resonator();
    const double kappa = res.kappa();
    const double g0 = two_pi * 2700.0;
    const double gamma = dynamics::purcell_rate(g0, kappa, 0.0);
    const double T1 = 1.0 / gamma;

    const double dt_pulse = 16e-6;
    sequences::PulseSequence seq;
    seq.repetition_rate = 20.0;
    seq.segments.push_back(
        {sequences::SegmentKind::Drive, dt_pulse,
         beta_for_angle(constants::pi / 2, dt_pulse, g0, res), 0.0});
    seq.segments.push_back({sequences::SegmentKind::Delay, 5 * T1, 0, 0});

    sample::SpinPacket pk = lone_packet(g0, 0.0);
    pk.weight = 1e-6;  // still negligible backaction, well above roundoff
    const auto tr = dynamics::simulate(seq, {pk}, res, {});
    // transverse polarization radiates at half the energy relaxation rate;
    // start the fit after the drive ring-down has fully died away
    const double rate =
        2.0 * envelope_rate(tr, dt_pulse + 0.2e-3, dt_pulse + 5 * T1);
    const double T1_sim = 1.0 / rate;
    const double dt = seconds_since(t0);
    const bool ok = std::abs(rate - gamma) / gamma <= 0.005 &&
                    std::abs(T1_sim - 1.81e-3) / 1.81e-3 <= 0.005 && dt < 60.0;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "rate err %.3f%%, simulated T1 = %.4f ms, %.1f s",
                  100 * std::abs(rate - gamma) / gamma, T1_sim * 1e3, dt);
    report(3, "cavity-enhanced relaxation consistency", ok, buf);
}

void criterion_4() {
    const auto res = reference_resonator();
    const double kappa = res.kappa();

    // (a) full-dynamics rotation angle vs closed form at dt = 10 * (2/kappa)
    const double g = two_pi * 100.0;
    const double dt = 10.0 * 2.0 / kappa;
    const double beta_lin = 1e2, beta_big = beta_for_angle(1.0, dt, g, res);
    auto angle_run = [&](double beta) {
        sequences::PulseSequence seq;
        seq.segments.push_back({sequences::SegmentKind::Drive, dt, beta, 0.0});
        seq.segments.push_back({sequences::SegmentKind::Delay, 90.0 / kappa, 0, 0});
        sample::SpinPacket pk = lone_packet(g, 0.0);
        pk.weight = 1e-3;  // lifts spin emission far above the drive ring-down
        const auto tr = dynamics::simulate(seq, {pk}, res, {});
        return emission_at(tr, dt + 70.0 / kappa);
    };
    const double theta_lin = dynamics::rabi_angle(beta_lin, dt, g, kappa,
                                                  res.kappa_ext());
    const double sin_big = angle_run(beta_big) / angle_run(beta_lin) *
                           std::sin(theta_lin);
    const double theta_sim = std::asin(std::min(sin_big, 1.0));
    const double theta_ref =
        dynamics::rabi_angle(beta_big, dt, g, kappa, res.kappa_ext());
    const double angle_err = std::abs(theta_sim - theta_ref) / theta_ref;

    // (b) coupling selected by an echo at beta = 6e4, dt = 1 us
    const double g_sel = dynamics::selected_coupling(6e4, 1e-6, kappa);
    const double sel_err = std::abs(g_sel - two_pi * 2700.0) / (two_pi * 2700.0);

    // (c) relaxation time of the selected spins scales as beta^2
    std::vector<double> lb, lt;
    for (double beta : {2e4, 4e4, 8e4}) {
        const double gb = dynamics::selected_coupling(beta, 1e-6, kappa);
        const double t1b = 1.0 / dynamics::purcell_rate(gb, kappa, 0.0);
        const double dtp = 16e-6;
        sequences::PulseSequence seq;
        seq.repetition_rate = 20.0;
        seq.segments.push_back(
            {sequences::SegmentKind::Drive, dtp,
             beta_for_angle(constants::pi / 2, dtp, gb, res), 0.0});
        seq.segments.push_back({sequences::SegmentKind::Delay, 2.0 * t1b, 0, 0});
        sample::SpinPacket pk = lone_packet(gb, 0.0);
        pk.weight = 1e-6;
        const auto tr = dynamics::simulate(seq, {pk}, res, {});
        const double rate =
            2.0 * envelope_rate(tr, dtp + 0.2 * t1b, dtp + 2.0 * t1b);
        lb.push_back(std::log(beta));
        lt.push_back(std::log(1.0 / rate));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t k = 0; k < lb.size(); ++k) {
        sx += lb[k];
        sy += lt[k];
        sxx += lb[k] * lb[k];
        sxy += lb[k] * lt[k];
    }
    const double n = static_cast<double>(lb.size());
    const double expo = (n * sxy - sx * sy) / (n * sxx - sx * sx);

    const bool ok = angle_err <= 0.05 && sel_err <= 0.15 &&
                    std::abs(expo - 2.0) <= 0.1;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "angle err %.2f%%, g_sel/2pi = %.0f Hz, T1 exponent %.3f",
                  100 * angle_err, g_sel / two_pi, expo);
    report(4, "drive-amplitude spin selection formula", ok, buf);
}

void criterion_5() {
    const auto t0 = std::chrono::steady_clock::now();
    resonator::ResonatorModel res;
    spin::SpinSystem sys;
    const auto prof = sample::implant_profile(8e22, 50e-9, 100e-9);
    const double B0 = spin::transition_field(sys, 0, res.omega0);
    sample::EnsembleOptions opt;
    opt.n_packets = 50000;
    opt.aggregate = false;
    const auto ens = sample::build_ensemble(prof, nullptr, res, sys, B0, opt);
    double g_max = 0, x_at = 0, y_at = 0;
    for (const auto& p : ens)
        if (p.g0 > g_max) {
            g_max = p.g0;
            x_at = p.x;
            y_at = p.y;
        }
    const double dist = std::hypot(
        std::max(std::abs(x_at) - res.wire_width / 2, 0.0), y_at);
    const double dt = seconds_since(t0);
    const bool ok = g_max >= two_pi * 3e3 && g_max <= two_pi * 5e3 &&
                    dist <= 40e-9 && dt < 60.0;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "max g0/2pi = %.2f kHz at %.0f nm from the wire, %.1f s",
                  g_max / two_pi / 1e3, dist * 1e9, dt);
    report(5, "coupling map maximum and location", ok, buf);
}

// Deterministic stratified ensemble for the spectrum morphology sweep: the
// in-window depth interval of each lateral column is captured by linear
// interpolation of the detuning, which resolves the nm-thin resonance
// contours that defeat Monte Carlo sampling.
std::vector<sample::SpinPacket> morphology_ensemble(
    const resonator::ResonatorModel& res, const spin::SpinSystem& sys,
    const sample::ImplantProfile& prof, const std::vector<double>& bmag,
    int cnx, int cny, double xspan, bool with_strain, double B0) {
    constants::MaterialConstants mat;
    const double y_lo = prof.depth_grid.front(), y_hi = prof.depth_grid.back();
    const double window = two_pi * 2e6;
    auto b1_at = [&](double x, double y) {
        const double fx = (x + xspan) / (2 * xspan) * (cnx - 1);
        const double fy = (y - y_lo) / (y_hi - y_lo) * (cny - 1);
        const int i = std::clamp(static_cast<int>(fx), 0, cnx - 2);
        const int j = std::clamp(static_cast<int>(fy), 0, cny - 2);
        const double tx = fx - i, ty = fy - j;
        return (1 - tx) * (1 - ty) * bmag[j * cnx + i] +
               tx * (1 - ty) * bmag[j * cnx + i + 1] +
               (1 - tx) * ty * bmag[(j + 1) * cnx + i] +
               tx * ty * bmag[(j + 1) * cnx + i + 1];
    };

    const auto table = spin::transitions(sys, B0, 0.05);
    struct Acc {
        double w = 0, g = 0, d = 0;
    };
    std::map<std::tuple<int, int, int>, Acc> bins;
    const int nx = 2400, ny = 640;
    for (int i = 0; i < nx; ++i) {
        const double x = -xspan + 2 * xspan * (i + 0.5) / nx;
        const double dx_w = 2 * xspan / nx;
        for (int j = 0; j < ny; ++j) {
            const double ya = y_lo + (y_hi - y_lo) * j / ny;
            const double yb = y_lo + (y_hi - y_lo) * (j + 1) / ny;
            const double ym = 0.5 * (ya + yb);
            const double rho = prof.at(ym);
            if (rho <= 0) continue;
            const double dA_a =
                with_strain ? sample::hyperfine_shift(
                                  sample::strain_analytic_at(res, mat, x, ya))
                            : 0.0;
            const double dA_b =
                with_strain ? sample::hyperfine_shift(
                                  sample::strain_analytic_at(res, mat, x, yb))
                            : 0.0;
            double b1 = 0;
            for (size_t t = 0; t < table.entries.size(); ++t) {
                const auto& trn = table.entries[t];
                const double da = trn.frequency + trn.dfreq_dA * dA_a - res.omega0;
                const double db = trn.frequency + trn.dfreq_dA * dA_b - res.omega0;
                const double lo = std::min(da, db), hi = std::max(da, db);
                const double ov_lo = std::max(lo, -window);
                const double ov_hi = std::min(hi, window);
                double frac, dmid;
                if (hi - lo < 1e-9) {
                    if (std::abs(da) > window) continue;
                    frac = 1.0;
                    dmid = da;
                } else {
                    if (ov_hi <= ov_lo) continue;
                    frac = (ov_hi - ov_lo) / (hi - lo);
                    dmid = 0.5 * (ov_lo + ov_hi);
                }
                const double w =
                    rho * dx_w * (yb - ya) * frac * res.wire_length;
                if (w <= 0) continue;
                if (b1 == 0) b1 = b1_at(x, ym);
                const double g = resonator::coupling_strength(
                    {b1, 0.0}, trn.sx_matrix_element);
                const int gb = std::clamp(
                    static_cast<int>(
                        20 * (std::log(g / two_pi) / std::log(2e4))),
                    0, 19);
                const int dbn =
                    std::clamp(static_cast<int>((dmid / window + 1) * 20), 0, 39);
                Acc& a = bins[{static_cast<int>(t), gb, dbn}];
                a.w += w;
                a.g += w * g;
                a.d += w * dmid;
            }
        }
    }
    std::vector<sample::SpinPacket> out;
    for (const auto& [key, a] : bins) {
        sample::SpinPacket p;
        p.g0 = a.g / a.w;
        p.detuning = a.d / a.w;
        p.weight = a.w;
        p.T1 = 1e3;
        p.T2 = 0.85e-3;
        out.push_back(p);
    }
    return out;
}

void criterion_6() {
    resonator::ResonatorModel res;
    spin::SpinSystem sys;
    // dilute sample keeps the ensemble in the linear (weak backaction) regime
    const auto prof = sample::implant_profile(8e20);
    const double xspan = 0.3e-6;

    const int cnx = 121, cny = 61;
    std::vector<double> bmag(static_cast<size_t>(cnx) * cny);
    const double y_lo = prof.depth_grid.front(), y_hi = prof.depth_grid.back();
    for (int j = 0; j < cny; ++j)
        for (int i = 0; i < cnx; ++i) {
            const double x = -xspan + 2 * xspan * i / (cnx - 1);
            const double y = y_lo + (y_hi - y_lo) * j / (cny - 1);
            const auto b =
                resonator::b1_field(res, x, y + res.wire_thickness / 2, 1e-4);
            bmag[static_cast<size_t>(j) * cnx + i] = std::hypot(b[0], b[1]);
        }

    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;

    auto sweep = [&](const std::vector<double>& fields, double beta,
                     bool with_strain) {
        const auto seq = sequences::build_hahn(beta, 1e-6, 50e-6);
        const auto windows = dynamics::acquire_windows(seq);
        const auto builder = [&](double B0) {
            return morphology_ensemble(res, sys, prof, bmag, cnx, cny, xspan,
                                       with_strain, B0);
        };
        // two-step phase cycle: the echo flips sign with the first pulse,
        // instrument-like transients of the refocusing pulse do not
        std::vector<std::complex<double>> zs;
        const auto window_sum = [&](const dynamics::TraceRecord& tr) {
            std::complex<double> z(0, 0);
            for (size_t k = 0; k < tr.t.size(); ++k)
                if (tr.t[k] >= windows[0].t0 && tr.t[k] <= windows[0].t1)
                    z += std::complex<double>(tr.I[k], tr.Q[k]);
            zs.push_back(z / tr.sample_rate);
            return std::abs(z);
        };
        // one field at a time: an empty ensemble yields no trace, so the
        // cycled sum must be padded with zero to stay aligned
        std::vector<double> a;
        for (double f : fields) {
            zs.clear();
            dynamics::field_sweep({f}, seq, builder, res, window_sum, opt);
            const std::complex<double> zp = zs.empty() ? 0.0 : zs[0];
            zs.clear();
            dynamics::field_sweep(
                {f}, seq.with_first_pulse_phase_offset(constants::pi), builder,
                res, window_sum, opt);
            const std::complex<double> zm = zs.empty() ? 0.0 : zs[0];
            a.push_back(std::abs(zp - zm) / 2.0);
        }
        return a;
    };

    // resolved peaks without strain, high drive amplitude
    const double b_peak1 = spin::transition_field(sys, 0, res.omega0);
    double b_peak2 = 0;
    for (double b = 5.5e-3; b <= 8e-3; b += 0.02e-3) {
        const auto tb = spin::transitions(sys, b, 0.05);
        double best = 1e18;
        for (const auto& trn : tb.entries)
            best = std::min(best, std::abs(trn.frequency - res.omega0));
        if (best < two_pi * 0.2e6) {
            b_peak2 = b;
            break;
        }
    }
    const auto pk =
        sweep({b_peak1, b_peak1 + 0.4e-3, b_peak2, b_peak2 + 0.4e-3}, 2e5, false);
    const bool peaks_ok = b_peak2 > 0 && pk[0] > 10 * (pk[1] + 1e-12) &&
                          pk[2] > 10 * (pk[3] + 1e-12);

    // flat strained spectrum, moderate drive amplitude
    const std::vector<double> fields = {0.05e-3, 0.5e-3, 1.5e-3,
                                        2.64e-3, 3.9e-3, 5.05e-3};
    const auto fl = sweep(fields, 6e4, true);
    double mean = 0;
    for (double a : fl) mean += a;
    mean /= static_cast<double>(fl.size());
    double dev = 0;
    for (double a : fl) dev = std::max(dev, std::abs(a / mean - 1.0));
    const bool flat_ok = dev <= 0.30;

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "peak contrasts %.0fx/%.0fx, strained flatness +-%.0f%%",
                  pk[0] / (pk[1] + 1e-12), pk[2] / (pk[3] + 1e-12), 100 * dev);
    report(6, "spectrum morphology with and without strain", peaks_ok && flat_ok,
           buf);
}

void criterion_7() {
    // nuclear-bath modulation on the two-pulse echo
    const auto bath = sample::nuclear_bath(5e-4, 3e-9, 0.5e-3, 1);
    double vmin = 1.0;
    for (int k = 1; k <= 400; ++k)
        vmin = std::min(vmin, dynamics::eseem_kernel(bath, k * 1.5e-6));
    const double depth = 1.0 - vmin;
    const auto empty = sample::nuclear_bath(0.0, 3e-9, 0.5e-3, 1);
    double vmin0 = 1.0;
    for (int k = 1; k <= 400; ++k)
        vmin0 = std::min(vmin0, dynamics::eseem_kernel(empty, k * 1.5e-6));
    const double depth0 = 1.0 - vmin0;

    // echo envelope follows the configured coherence time; a spread of
    // detunings dephases the unrefocused free-induction tails so only the
    // echo survives in the window
    const auto res = reference_resonator();
    const double g = two_pi * 100.0;
    std::vector<sample::SpinPacket> ens;
    for (int j = 0; j < 41; ++j) {
        sample::SpinPacket p =
            lone_packet(g, two_pi * 300e3 * (j - 20) / 20.0);
        p.weight = 1e-3;
        p.T2 = 0.85e-3;
        ens.push_back(p);
    }
    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;
    std::vector<double> taus = {100e-6, 200e-6, 300e-6, 400e-6}, amps;
    for (double tau : taus) {
        const auto seq =
            sequences::build_hahn(beta_for_angle(constants::pi, 1e-6, g, res),
                                  1e-6, tau, 0.0, 100.0);
        const auto windows = dynamics::acquire_windows(seq);
        const auto tr = dynamics::simulate(seq, ens, res, opt);
        std::complex<double> z(0, 0);
        for (size_t k = 0; k < tr.t.size(); ++k)
            if (tr.t[k] >= windows[0].t0 &&
                tr.t[k] <= std::min(windows[0].t1, tr.t.back()))
                z += std::complex<double>(tr.I[k], tr.Q[k]);
        amps.push_back(std::abs(z));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t k = 0; k < taus.size(); ++k) {
        const double x = 2 * taus[k], y = std::log(amps[k]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double nn = static_cast<double>(taus.size());
    const double t2_fit = -1.0 / ((nn * sxy - sx * sy) / (nn * sxx - sx * sx));
    const double t2_err = std::abs(t2_fit - 0.85e-3) / 0.85e-3;

    const bool ok = depth > 0.02 && depth0 < 0.02 && t2_err <= 0.05;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "depth %.1f%% (%.2f%% empty), T2 fit %.3f ms", 100 * depth,
                  100 * depth0, t2_fit * 1e3);
    report(7, "nuclear modulation and echo decay envelope", ok, buf);
}

void criterion_8() {
    const double n_min = detection::sensitivity_formula(two_pi * 332e3,
                                                        two_pi * 2.7e3, 0.5, 1.0);
    const auto pipe = detection::sensitivity_pipeline(0.33, 36.0, 100.0);
    const bool ok = n_min >= 43.0 && n_min <= 51.0 &&
                    std::abs(pipe.n_min_single - 109.0909) < 0.01 &&
                    std::abs(pipe.spins_per_sqrt_hz - 10.909) < 0.01;
    char buf[160];
    std::snprintf(buf, sizeof buf, "N_min %.1f, pipeline (%.2f, %.3f)", n_min,
                  pipe.n_min_single, pipe.spins_per_sqrt_hz);
    report(8, "spin-number sensitivity chain", ok, buf);
}

void criterion_9() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n_samples = 1000000;
    const double rate = 100.0;

    // pure white noise follows 1/sqrt(n)
    const auto white =
        detection::ou_series(1.0, {0.0, 3.0}, 0.3, n_samples, rate, 42);
    const std::vector<int> ns = {1, 10, 100, 1000, 10000};
    const auto sw = detection::sigma_scaling(white, ns);
    bool white_ok = true;
    double worst_pull = 0;
    for (const auto& q : sw) {
        const double expect = sw.front().sigma / std::sqrt(double(q.n));
        const double rel_3sigma = 3.0 / std::sqrt(2.0 * (q.blocks - 1));
        const double pull = std::abs(q.sigma / expect - 1.0) / rel_3sigma;
        worst_pull = std::max(worst_pull, pull);
        if (pull > 1.0) white_ok = false;
    }

    // slow fluctuations break the scaling beyond n ~ rate * tau_c
    const auto drift =
        detection::ou_series(1.0, {0.02, 3.0}, 0.2, n_samples, rate, 43);
    const auto sd = detection::sigma_scaling(drift, {1, 1000});
    const double ratio_drift =
        sd[1].sigma * std::sqrt(1000.0) / sd[0].sigma;
    const bool drift_ok = ratio_drift > 1.10;

    // decimation spreads each average over many correlation times
    const auto sdec = detection::sigma_scaling(drift, {1, 10, 100}, 100);
    bool dec_ok = true;
    double worst_dec = 0;
    for (const auto& q : sdec) {
        const double expect = sdec.front().sigma / std::sqrt(double(q.n));
        const double rel_3sigma = 3.0 / std::sqrt(2.0 * (q.blocks - 1));
        const double pull = std::abs(q.sigma / expect - 1.0) / rel_3sigma;
        worst_dec = std::max(worst_dec, pull);
        if (pull > 1.0) dec_ok = false;
    }
    const double dt = seconds_since(t0);
    const bool ok = white_ok && drift_ok && dec_ok && dt < 120.0;
    char buf[180];
    std::snprintf(buf, sizeof buf,
                  "white worst pull %.2f, drift ratio %.2f, decimated worst "
                  "pull %.2f, %.1f s",
                  worst_pull, ratio_drift, worst_dec, dt);
    report(9, "averaging statistics with slow fluctuations", ok, buf);
}

void criterion_10() {
    const auto res = reference_resonator();
    const double kappa = res.kappa();
    const double g_sel = dynamics::selected_coupling(6e4, 1e-6, kappa);

    // same-axis refocusing train: spread of rotation angles from the coupling
    // distribution accumulates as pulse error and dominates the decay
    auto seq = sequences::build_cpmg(6e4, 1e-6, 50e-6, 20, 0.0, 100.0);
    seq.segments[0].phase = constants::pi / 2;  // store along the refocus axis
    std::vector<sample::SpinPacket> ens;
    rng::Stream rs(11, 5);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 200; ++j) {
            sample::SpinPacket p = lone_packet(
                g_sel * (0.8 + 0.4 * i / 14.0),
                two_pi * rs.uniform(-150e3, 150e3));
            p.T2 = 0.85e-3;
            ens.push_back(p);
        }
    dynamics::SimulateOptions opt;
    opt.fast_forward_delays = true;
    const auto windows = dynamics::acquire_windows(seq);
    auto window_sums = [&](const sequences::PulseSequence& s) {
        const auto tr = dynamics::simulate(s, ens, res, opt);
        std::vector<std::complex<double>> z(windows.size(), 0.0);
        for (size_t k = 0; k < tr.t.size(); ++k)
            for (size_t w = 0; w < windows.size(); ++w)
                if (tr.t[k] >= windows[w].t0 && tr.t[k] <= windows[w].t1)
                    z[w] += std::complex<double>(tr.I[k], tr.Q[k]);
        return z;
    };
    const auto zp = window_sums(seq);
    const auto zm = window_sums(seq.with_first_pulse_phase_offset(constants::pi));
    std::vector<double> amps;
    for (size_t w = 0; w < windows.size(); ++w)
        amps.push_back(std::abs(zp[w] - zm[w]) / 2.0);
    bool monotone = amps.size() == 20;
    for (size_t k = 2; k < amps.size(); ++k)
        if (amps[k] > amps[k - 1] * 1.02) monotone = false;

    const auto snr = detection::cpmg_snr(amps, 1.0);
    const bool peak_ok =
        snr.best_improvement >= 1.5 && snr.best_improvement <= 2.5;

    std::vector<double> flat(20, 1.0);
    const auto snrf = detection::cpmg_snr(flat, 1.0);
    bool sqrt_ok = true;
    for (size_t k = 0; k < snrf.improvement.size(); ++k)
        if (std::abs(snrf.improvement[k] - std::sqrt(double(k + 1))) > 1e-12)
            sqrt_ok = false;

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "train %s, improvement peak %.2f at n=%d, constant train "
                  "sqrt(n) %s",
                  monotone ? "monotone" : "non-monotone", snr.best_improvement,
                  snr.best_n, sqrt_ok ? "exact" : "broken");
    report(10, "multi-echo train and its averaging gain",
           monotone && peak_ok && sqrt_ok, buf);
}

void criterion_11() {
    const auto t0 = std::chrono::steady_clock::now();
    resonator::ResonatorModel truth;
    truth.q_ext = 3e4;
    truth.q_int = 8e4;
    const double kappa = truth.kappa();

    auto synth = [&](double sigma, std::uint64_t seed) {
        resonator::ReflectionTrace tr;
        rng::Stream rs(seed, 7);
        const int n = 1001;
        for (int k = 0; k < n; ++k) {
            const double w = truth.omega0 + kappa * 10.0 * (double(k) / (n - 1) - 0.5);
            tr.frequencies.push_back(w);
            auto v = resonator::s11_linear(truth, w);
            if (sigma > 0)
                v += std::complex<double>(sigma * rs.normal(),
                                          sigma * rs.normal());
            tr.s11.push_back(v);
        }
        return tr;
    };

    const auto clean = resonator::fit_s11(synth(0.0, 1));
    const double clean_err = std::max(
        {std::abs(clean.omega0 - truth.omega0) / truth.omega0 * 1e4,
         std::abs(clean.q_ext - truth.q_ext) / truth.q_ext,
         std::abs(clean.q_int - truth.q_int) / truth.q_int});

    const double sigma20 = std::pow(10.0, -20.0 / 20.0) / std::sqrt(2.0);
    std::vector<double> errs;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto fit = resonator::fit_s11(synth(sigma20, s + 10));
        errs.push_back(std::max(std::abs(fit.q_ext - truth.q_ext) / truth.q_ext,
                                std::abs(fit.q_int - truth.q_int) / truth.q_int));
    }
    std::sort(errs.begin(), errs.end());
    const double med_err = errs[errs.size() / 2];

    // bistable-response invariants on a detuning/drive grid
    resonator::ResonatorModel kerr = truth;
    kerr.kerr_K = two_pi * 1.0;
    bool roots_ok = true, fold_ok = true;
    for (int i = 0; i < 100 && roots_ok && fold_ok; ++i) {
        const double det = -3.0 * kappa + 6.0 * kappa * i / 99.0;
        int prev = 1;
        int flips = 0;
        for (int j = 0; j < 100; ++j) {
            const double beta = 1e2 * std::pow(10.0, 4.0 * j / 99.0);
            const auto roots = resonator::duffing_steady_state(kerr, det, beta);
            const int n_roots = static_cast<int>(roots.size());
            int n_stable = 0;
            for (const auto& r : roots) n_stable += r.stable ? 1 : 0;
            if ((n_roots != 1 && n_roots != 3) ||
                n_stable != (n_roots == 3 ? 2 : 1))
                roots_ok = false;
            if (n_roots != prev) {
                ++flips;
                prev = n_roots;
            }
        }
        if (flips > 2) fold_ok = false;  // single bistable window per ramp
    }
    const double dt = seconds_since(t0);
    const bool ok = clean_err <= 1e-3 && med_err <= 0.02 && roots_ok &&
                    fold_ok && dt < 60.0;
    char buf[180];
    std::snprintf(buf, sizeof buf,
                  "noiseless err %.4f%%, 20 dB median err %.2f%%, roots %s, "
                  "folds %s, %.1f s",
                  100 * clean_err, 100 * med_err, roots_ok ? "ok" : "bad",
                  fold_ok ? "ok" : "bad", dt);
    report(11, "reflection fit round trip and bistability invariants", ok, buf);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    criterion_11();
    if (g_failures == 0) std::printf("all acceptance criteria passed\n");
    else std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
