#include "esrsim/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "esrsim/rng.hpp"

namespace esrsim::detection {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void NoiseModel::validate() const {
    require(gain > 0, "gain must be > 0");
    if (mode == AmpMode::PhasePreserving)
        require(n_tilde >= 0.5, "phase-preserving noise is bounded below by 1/2");
    else
        require(n_tilde >= 0, "n_tilde must be >= 0");
}

dynamics::TraceRecord add_noise(const dynamics::TraceRecord& trace,
                                const NoiseModel& noise, std::uint64_t seed) {
    noise.validate();
    require(trace.sample_rate > 0, "trace sample rate not set");
    dynamics::TraceRecord out = trace;
    out.seed = seed;
    const double sigma =
        noise.n_tilde > 0
            ? std::sqrt(noise.n_tilde * trace.sample_rate / 2.0)  // var = n~/(2 dt)
            : 0.0;
    rng::Stream rs(seed, 0xda7a);
    for (size_t k = 0; k < out.I.size(); ++k) {
        out.I[k] = noise.gain * (out.I[k] + (sigma > 0 ? sigma * rs.normal() : 0.0));
        if (noise.mode == AmpMode::Degenerate) {
            out.Q[k] = 0.0;  // conjugate quadrature discarded
        } else {
            out.Q[k] =
                noise.gain * (out.Q[k] + (sigma > 0 ? sigma * rs.normal() : 0.0));
        }
    }
    return out;
}

dynamics::TraceRecord phase_cycle(const dynamics::TraceRecord& plus,
                                  const dynamics::TraceRecord& minus) {
    require(plus.I.size() == minus.I.size() && plus.sample_rate == minus.sample_rate,
            "phase_cycle traces must share shape and rate");
    dynamics::TraceRecord out = plus;
    for (size_t k = 0; k < out.I.size(); ++k) {
        out.I[k] = (plus.I[k] - minus.I[k]) / 2.0;
        out.Q[k] = (plus.Q[k] - minus.Q[k]) / 2.0;
    }
    return out;
}

EchoResult echo_integral(const dynamics::TraceRecord& trace,
                         const dynamics::AcquireWindow& window, IntegralMode mode,
                         const std::vector<double>* matched_template) {
    require(!trace.t.empty(), "empty trace");
    require(window.t1 > window.t0, "empty window");
    require(window.t0 >= trace.t.front() - 1e-12 &&
                window.t1 <= trace.t.back() + 1e-12,
            "window outside trace span");
    const double dt = 1.0 / trace.sample_rate;

    std::vector<size_t> idx;
    for (size_t k = 0; k < trace.t.size(); ++k)
        if (trace.t[k] >= window.t0 && trace.t[k] <= window.t1) idx.push_back(k);
    require(!idx.empty(), "window contains no samples");

    EchoResult res;
    res.t0 = window.t0;
    res.t1 = window.t1;
    res.seed = trace.seed;
    if (mode == IntegralMode::Boxcar) {
        double s = 0;
        for (size_t k : idx) s += trace.I[k];
        res.integral_Ae = s * dt;
    } else {
        require(matched_template && matched_template->size() == idx.size(),
                "matched template must match window sample count");
        double norm2 = 0;
        for (double v : *matched_template) norm2 += v * v * dt;
        require(norm2 > 0, "matched template is identically zero");
        double s = 0;
        for (size_t k = 0; k < idx.size(); ++k)
            s += trace.I[idx[k]] * (*matched_template)[k] * dt;
        res.integral_Ae = s / std::sqrt(norm2);
    }
    return res;
}

SpinCountEstimate estimate_spin_count(
    double measured_ratio, const std::function<double(double)>& simulated_ratio,
    double baseline_count, double ratio_rel_sigma) {
    require(measured_ratio >= 0, "ratio must be >= 0");
    require(baseline_count > 0, "baseline count must be > 0");
    if (measured_ratio == 0) return {0.0, 0.0};

    // bracket the root of simulated_ratio(scale) - measured_ratio
    double lo = 0.0, hi = 1.0;
    double f_hi = simulated_ratio(hi) - measured_ratio;
    int grow = 0;
    while (f_hi < 0 && grow++ < 40) {
        lo = hi;
        hi *= 2;
        f_hi = simulated_ratio(hi) - measured_ratio;
    }
    if (f_hi < 0)
        throw std::runtime_error("estimate_spin_count: minimum not bracketed");
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (simulated_ratio(mid) - measured_ratio < 0) lo = mid;
        else hi = mid;
        if ((hi - lo) < 1e-6 * hi) break;
    }
    const double scale = 0.5 * (lo + hi);

    // finite-difference sensitivity dN/d(ratio) as an uncertainty proxy
    const double dr = std::max(1e-6, 0.01 * measured_ratio);
    const double r0 = simulated_ratio(scale);
    const double r1 = simulated_ratio(scale * 1.05);
    const double dscale_dratio = (r1 - r0) > 0 ? (0.05 * scale) / (r1 - r0) : 0.0;
    (void)dr;
    SpinCountEstimate est;
    est.n_spin = scale * baseline_count;
    est.uncertainty =
        dscale_dratio * baseline_count * ratio_rel_sigma * measured_ratio;
    return est;
}

double sensitivity_formula(double kappa, double g0, double n_tilde,
                           double polarization_P) {
    require(kappa > 0 && g0 > 0 && n_tilde >= 0 && polarization_P > 0,
            "sensitivity inputs must be > 0");
    return kappa / (2.0 * polarization_P * g0) * std::sqrt(n_tilde);
}

SensitivityReport sensitivity_pipeline(double snr_single, double n_spin,
                                       double rep_rate) {
    require(snr_single > 0 && n_spin >= 0 && rep_rate > 0,
            "pipeline inputs must be > 0");
    SensitivityReport r;
    r.n_min_single = n_spin / snr_single;
    r.spins_per_sqrt_hz = r.n_min_single / std::sqrt(rep_rate);
    return r;
}

std::vector<SigmaPoint> sigma_scaling(const std::vector<double>& series,
                                      const std::vector<int>& n_values,
                                      int decimation) {
    require(decimation >= 1, "decimation must be >= 1");
    std::vector<double> dec;
    for (size_t k = 0; k < series.size(); k += static_cast<size_t>(decimation))
        dec.push_back(series[k]);

    std::vector<SigmaPoint> out;
    for (int n : n_values) {
        require(n >= 1, "n must be >= 1");
        const size_t blocks = dec.size() / static_cast<size_t>(n);
        if (blocks < 2)
            throw std::invalid_argument("sigma_scaling: insufficient data for n=" +
                                        std::to_string(n));
        std::vector<double> means(blocks);
        for (size_t b = 0; b < blocks; ++b) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += dec[b * n + k];
            means[b] = s / n;
        }
        const double mu =
            std::accumulate(means.begin(), means.end(), 0.0) / blocks;
        double var = 0;
        for (double m : means) var += (m - mu) * (m - mu);
        var /= (blocks - 1);
        out.push_back({n, std::sqrt(var), static_cast<int>(blocks)});
    }
    return out;
}

std::vector<double> ou_series(double mean_A, const FluctuationModel& fluct,
                              double white_sigma, std::size_t n_samples,
                              double rate, std::uint64_t seed) {
    require(rate > 0, "rate must be > 0");
    require(fluct.relative_sigma >= 0 && fluct.correlation_time >= 0,
            "fluctuation parameters must be >= 0");
    rng::Stream rs(seed, 0xab);
    std::vector<double> out(n_samples);
    const double dt = 1.0 / rate;
    double eta = 0;
    const bool ou = fluct.relative_sigma > 0 && fluct.correlation_time > 0;
    const double decay = ou ? std::exp(-dt / fluct.correlation_time) : 0.0;
    const double kick =
        ou ? fluct.relative_sigma * std::sqrt(1.0 - decay * decay) : 0.0;
    if (ou) eta = fluct.relative_sigma * rs.normal();  // stationary start
    for (std::size_t k = 0; k < n_samples; ++k) {
        out[k] = mean_A * (1.0 + eta) + white_sigma * rs.normal();
        if (ou) eta = eta * decay + kick * rs.normal();
    }
    return out;
}

CpmgSnr cpmg_snr(const std::vector<double>& echo_amplitudes, double noise_sigma,
                 bool with_correlations) {
    require(!echo_amplitudes.empty(), "no echo amplitudes");
    require(noise_sigma > 0, "noise sigma must be > 0");
    CpmgSnr out;
    double cum = 0;
    for (size_t n = 1; n <= echo_amplitudes.size(); ++n) {
        cum += echo_amplitudes[n - 1];
        // fully correlated noise adds linearly, uncorrelated as sqrt(n)
        const double sig =
            with_correlations ? noise_sigma * n : noise_sigma * std::sqrt(double(n));
        out.snr.push_back(cum / sig);
    }
    const double base = out.snr.front();
    for (size_t n = 0; n < out.snr.size(); ++n) {
        out.improvement.push_back(out.snr[n] / base);
        if (out.improvement.back() > out.best_improvement) {
            out.best_improvement = out.improvement.back();
            out.best_n = static_cast<int>(n + 1);
        }
    }
    return out;
}

void export_sigma_csv(const std::vector<SigmaPoint>& table,
                      const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "n,sigma,blocks\n";
    os.precision(10);
    for (const auto& p : table) os << p.n << ',' << p.sigma << ',' << p.blocks << '\n';
}

}  // namespace esrsim::detection
