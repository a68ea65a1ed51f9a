#include "esrsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace esrsim::dynamics {

namespace {

using Complex = std::complex<double>;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

double purcell_rate(double g0, double kappa, double detuning) {
    require(kappa > 0, "kappa must be > 0");
    require(g0 >= 0 && std::isfinite(detuning), "invalid purcell inputs");
    return kappa * g0 * g0 / ((kappa / 2) * (kappa / 2) + detuning * detuning);
}

double selected_coupling(double beta, double dt, double kappa) {
    require(beta > 0 && dt > 0 && kappa > 0, "selected_coupling inputs must be > 0");
    return constants::pi * std::sqrt(kappa) / (4.0 * beta * dt);
}

double rabi_angle(double beta, double dt, double g0, double kappa,
                  double kappa_ext) {
    require(beta >= 0 && dt > 0 && g0 >= 0 && kappa > 0 && kappa_ext > 0,
            "invalid rabi_angle inputs");
    const double alpha_ss = 2.0 * std::sqrt(kappa_ext) * beta / kappa;
    return 2.0 * g0 * alpha_ss * dt;
}

std::vector<AcquireWindow> acquire_windows(const sequences::PulseSequence& seq) {
    std::vector<AcquireWindow> out;
    double t = 0;
    for (const auto& s : seq.segments) {
        if (s.kind == sequences::SegmentKind::Acquire)
            out.push_back({t, t + s.duration});
        t += s.duration;
    }
    return out;
}

namespace {

struct PacketState {
    std::vector<double> g, w, delta, gamma1, gamma2;  // gamma2 = 1/T2 + Gamma1/2
    std::vector<Complex> sm;
    std::vector<double> sz;
    size_t size() const { return g.size(); }
};

struct Deriv {
    Complex dalpha;
    std::vector<Complex> dsm;
    std::vector<double> dsz;
};

// one RHS evaluation of the cavity-Bloch system in the omega0 frame
void rhs(const PacketState& p, Complex alpha, const std::vector<Complex>& sm,
         const std::vector<double>& sz, double kappa, Complex drive, Deriv& d) {
    Complex source(0, 0);
    for (size_t j = 0; j < p.size(); ++j) source += p.w[j] * p.g[j] * sm[j];
    d.dalpha = -(kappa / 2) * alpha + drive - Complex(0, 1) * source;
    for (size_t j = 0; j < p.size(); ++j) {
        const Complex decay(-p.gamma2[j], -p.delta[j]);
        d.dsm[j] = decay * sm[j] + Complex(0, 2.0 * p.g[j] * sz[j]) * alpha;
        d.dsz[j] = -p.gamma1[j] * (sz[j] + 0.5) -
                   2.0 * p.g[j] * std::imag(std::conj(alpha) * sm[j]);
    }
}

}  // namespace

TraceRecord simulate(const sequences::PulseSequence& seq,
                     const std::vector<sample::SpinPacket>& ensemble,
                     const resonator::ResonatorModel& res,
                     const SimulateOptions& opt) {
    seq.validate();
    res.validate();
    require(std::abs(opt.initial_sz) <= 0.5, "initial_sz must lie in [-1/2, 1/2]");
    const double kappa = res.kappa();
    const double sqrt_ke = std::sqrt(res.kappa_ext());

    if (opt.warn_nonlinear && res.kerr_K != 0.0) {
        for (const auto& s : seq.segments) {
            if (s.kind != sequences::SegmentKind::Drive || s.beta <= 0) continue;
            const auto roots = resonator::duffing_steady_state(res, 0.0, s.beta);
            if (roots.size() > 1 ||
                (roots.size() == 1 &&
                 std::abs(res.kerr_K) * roots[0].photons > kappa / 10)) {
                std::cerr << "simulate: drive beta=" << s.beta
                          << " leaves the linear cavity regime; Kerr phase not "
                             "modeled\n";
                break;
            }
        }
    }

    PacketState p;
    double max_delta = 0;
    for (const auto& pk : ensemble) {
        p.g.push_back(pk.g0);
        p.w.push_back(pk.weight);
        p.delta.push_back(pk.detuning);
        const double g1 = purcell_rate(pk.g0, kappa, pk.detuning);
        p.gamma1.push_back(g1);
        const double t2 = pk.T2 > 0 ? pk.T2 : 1e6;
        p.gamma2.push_back(1.0 / t2 + g1 / 2);
        p.sm.push_back({0, 0});
        p.sz.push_back(opt.initial_sz);
        max_delta = std::max(max_delta, std::abs(pk.detuning));
    }
    const size_t n = p.size();

    double min_drive_dt = 1e300;
    double beta_max = 0;
    for (const auto& s : seq.segments) {
        if (s.kind != sequences::SegmentKind::Drive) continue;
        min_drive_dt = std::min(min_drive_dt, s.duration);
        beta_max = std::max(beta_max, s.beta);
    }
    double g_max = 0;
    for (const auto& pk : ensemble) g_max = std::max(g_max, pk.g0);
    double h_max = 1.0 / (opt.step_safety * kappa);
    if (max_delta > 0) h_max = std::min(h_max, 1.0 / (opt.step_safety * max_delta));
    if (min_drive_dt < 1e300) h_max = std::min(h_max, min_drive_dt / 50.0);
    // fastest spin time scale: Rabi rate 2 g alpha at the steady-state field
    const double rabi_rate = 2.0 * g_max * 2.0 * sqrt_ke * beta_max / kappa;
    if (rabi_rate > 0) h_max = std::min(h_max, 1.0 / (opt.step_safety * rabi_rate));

    TraceRecord trace;
    trace.sample_rate = opt.sample_rate;
    trace.meta["sequence"] = sequences::to_json(seq);

    const double total = seq.total_duration();
    const size_t n_samples = static_cast<size_t>(total * opt.sample_rate) + 1;
    trace.t.reserve(n_samples);
    trace.I.reserve(n_samples);
    trace.Q.reserve(n_samples);

    Complex alpha(0, 0);
    double t_seg_start = 0;
    size_t next_sample = 0;
    const double dt_sample = 1.0 / opt.sample_rate;

    Deriv k1, k2, k3, k4;
    for (Deriv* d : {&k1, &k2, &k3, &k4}) {
        d->dsm.resize(n);
        d->dsz.resize(n);
    }
    std::vector<Complex> sm_tmp(n);
    std::vector<double> sz_tmp(n);

    auto record_until = [&](double t_end, auto value_at) {
        while (next_sample * dt_sample <= t_end + 1e-15) {
            const double ts = next_sample * dt_sample;
            const Complex a = value_at(ts);
            trace.t.push_back(ts);
            trace.I.push_back(a.real());
            trace.Q.push_back(a.imag());
            ++next_sample;
        }
    };

    // When fast-forwarding, still integrate a ring-down head of each delay so
    // the decaying cavity field after a pulse keeps acting on the spins; only
    // the quiescent remainder is advanced analytically.
    std::vector<std::pair<sequences::Segment, bool>> segs;
    const double t_head = 30.0 / kappa;
    for (const auto& seg : seq.segments) {
        if (opt.fast_forward_delays && seg.kind == sequences::SegmentKind::Delay &&
            seg.duration > 2 * t_head) {
            sequences::Segment head = seg, tail = seg;
            head.duration = t_head;
            tail.duration = seg.duration - t_head;
            segs.push_back({head, false});
            segs.push_back({tail, true});
        } else {
            segs.push_back({seg, false});
        }
    }

    for (const auto& [seg, analytic] : segs) {
        const double t_seg_end = t_seg_start + seg.duration;
        const bool driven = seg.kind == sequences::SegmentKind::Drive && seg.beta > 0;
        const Complex drive_out =
            driven ? seg.beta * std::exp(Complex(0, seg.phase)) : Complex(0, 0);
        const Complex drive_in = sqrt_ke * drive_out;

        if (analytic) {
            // analytic free evolution; spin back-action on the (unobserved)
            // cavity field is dropped here
            const Complex alpha0 = alpha;
            record_until(t_seg_end, [&](double ts) {
                return sqrt_ke * alpha0 *
                       std::exp(-(kappa / 2) * (ts - t_seg_start));
            });
            const double dtau = seg.duration;
            alpha *= std::exp(-(kappa / 2) * dtau);
            for (size_t j = 0; j < n; ++j) {
                p.sm[j] *= std::exp(Complex(-p.gamma2[j] * dtau, -p.delta[j] * dtau));
                p.sz[j] = -0.5 + (p.sz[j] + 0.5) * std::exp(-p.gamma1[j] * dtau);
            }
            t_seg_start = t_seg_end;
            continue;
        }

        const int n_steps = std::max(1, static_cast<int>(std::ceil(seg.duration / h_max)));
        const double h = seg.duration / n_steps;
        for (int step = 0; step < n_steps; ++step) {
            const double t0 = t_seg_start + step * h;
            const Complex a_prev = alpha;

            rhs(p, alpha, p.sm, p.sz, kappa, drive_in, k1);
            for (size_t j = 0; j < n; ++j) {
                sm_tmp[j] = p.sm[j] + 0.5 * h * k1.dsm[j];
                sz_tmp[j] = p.sz[j] + 0.5 * h * k1.dsz[j];
            }
            rhs(p, alpha + 0.5 * h * k1.dalpha, sm_tmp, sz_tmp, kappa, drive_in, k2);
            for (size_t j = 0; j < n; ++j) {
                sm_tmp[j] = p.sm[j] + 0.5 * h * k2.dsm[j];
                sz_tmp[j] = p.sz[j] + 0.5 * h * k2.dsz[j];
            }
            rhs(p, alpha + 0.5 * h * k2.dalpha, sm_tmp, sz_tmp, kappa, drive_in, k3);
            for (size_t j = 0; j < n; ++j) {
                sm_tmp[j] = p.sm[j] + h * k3.dsm[j];
                sz_tmp[j] = p.sz[j] + h * k3.dsz[j];
            }
            rhs(p, alpha + h * k3.dalpha, sm_tmp, sz_tmp, kappa, drive_in, k4);

            alpha += h / 6.0 *
                     (k1.dalpha + 2.0 * k2.dalpha + 2.0 * k3.dalpha + k4.dalpha);
            for (size_t j = 0; j < n; ++j) {
                p.sm[j] += h / 6.0 *
                           (k1.dsm[j] + 2.0 * k2.dsm[j] + 2.0 * k3.dsm[j] + k4.dsm[j]);
                p.sz[j] += h / 6.0 *
                           (k1.dsz[j] + 2.0 * k2.dsz[j] + 2.0 * k3.dsz[j] + k4.dsz[j]);
                const double norm2 = std::norm(p.sm[j]) + p.sz[j] * p.sz[j];
                if (norm2 > 0.25 + 1e-4)
                    throw std::runtime_error(
                        "Bloch-ball violation at t=" + std::to_string(t0) +
                        " s, packet " + std::to_string(j) +
                        ", |s|^2=" + std::to_string(norm2));
                if (norm2 > 0.25 + opt.bloch_tolerance) {
                    // project the small outward RK4 truncation drift back onto
                    // the ball so containment holds exactly
                    const double scale = std::sqrt(0.25 / norm2);
                    p.sm[j] *= scale;
                    p.sz[j] *= scale;
                }
            }
            if (!(std::abs(h) > 0) || !std::isfinite(alpha.real()))
                throw std::runtime_error("integration step underflow");

            const Complex a_new = alpha;
            record_until(std::min(t0 + h, t_seg_end), [&](double ts) {
                const double f = (ts - t0) / h;
                const Complex a = a_prev + f * (a_new - a_prev);
                return sqrt_ke * a - drive_out;
            });
        }
        t_seg_start = t_seg_end;
    }
    return trace;
}

double eseem_kernel(const sample::NuclearBath& bath, double tau) {
    require(tau >= 0, "tau must be >= 0");
    double v = 1.0;
    for (const auto& nuc : bath) {
        const double wa = std::abs(nuc.omega_I + nuc.a_secular / 2);
        const double wb = std::abs(nuc.omega_I - nuc.a_secular / 2);
        if (wa <= 0 || wb <= 0) {
            std::cerr << "eseem_kernel: skipping nucleus with vanishing "
                         "sublevel frequency\n";
            continue;
        }
        const double k =
            std::pow(nuc.b_pseudosecular * nuc.omega_I / (wa * wb), 2);
        const double mod =
            1.0 - (k / 4.0) * (2.0 - 2.0 * std::cos(wa * tau) - 2.0 * std::cos(wb * tau) +
                               std::cos((wa - wb) * tau) + std::cos((wa + wb) * tau));
        v *= std::clamp(mod, 0.0, 1.0);
    }
    return v;
}

std::vector<SweepPoint> field_sweep(const std::vector<double>& B0_values,
                                    const sequences::PulseSequence& seq,
                                    const EnsembleBuilder& builder,
                                    const resonator::ResonatorModel& res,
                                    const EchoIntegrator& integrator,
                                    const SimulateOptions& opt) {
    std::vector<SweepPoint> out;
    for (double B0 : B0_values) {
        const auto ensemble = builder(B0);
        double ae = 0;
        if (!ensemble.empty()) {
            const TraceRecord tr = simulate(seq, ensemble, res, opt);
            ae = integrator(tr);
        }
        out.push_back({B0, ae});
    }
    return out;
}

void export_trace_csv(const TraceRecord& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "t_s,I,Q\n";
    os.precision(12);
    for (size_t k = 0; k < trace.t.size(); ++k)
        os << trace.t[k] << ',' << trace.I[k] << ',' << trace.Q[k] << '\n';
}

}  // namespace esrsim::dynamics
