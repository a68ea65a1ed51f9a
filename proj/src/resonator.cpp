#include "esrsim/resonator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace esrsim::resonator {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void ResonatorModel::validate() const {
    require(omega0 > 0 && q_ext > 0 && q_int > 0 && impedance_Zc > 0,
            "resonator parameters must be > 0");
    require(wire_width > 0 && wire_thickness > 0 && wire_length > 0,
            "wire geometry must be > 0");
}

double photon_current(const ResonatorModel& model) {
    model.validate();
    return model.omega0 * std::sqrt(constants::hbar / (2.0 * model.impedance_Zc));
}

std::array<double, 2> b1_field(const ResonatorModel& model, double x, double y,
                               double rel_tol) {
    model.validate();
    require(std::isfinite(x) && std::isfinite(y), "field point must be finite");
    const double w = model.wire_width;
    const double t = model.wire_thickness;
    const double current = photon_current(model);
    const double pref = constants::mu0 * current / (constants::two_pi * w * t);

    // Composite midpoint over the cross-section, refined until stable.
    auto evaluate = [&](int n) -> std::array<double, 2> {
        const double hx = w / n;
        const double hy = t / n;
        double bx = 0, by = 0;
        for (int i = 0; i < n; ++i) {
            const double xs = -w / 2 + (i + 0.5) * hx;
            const double dx = x - xs;
            for (int j = 0; j < n; ++j) {
                const double ys = -t / 2 + (j + 0.5) * hy;
                const double dy = y - ys;
                const double r2 = dx * dx + dy * dy;
                if (r2 < 1e-30) continue;
                bx -= dy / r2;
                by += dx / r2;
            }
        }
        const double cell = hx * hy;
        return {pref * bx * cell, pref * by * cell};
    };

    std::array<double, 2> prev = evaluate(16);
    for (int n = 32; n <= 512; n *= 2) {
        const std::array<double, 2> cur = evaluate(n);
        const double diff = std::hypot(cur[0] - prev[0], cur[1] - prev[1]);
        const double mag = std::hypot(cur[0], cur[1]);
        if (diff <= rel_tol * std::max(mag, 1e-300)) return cur;
        prev = cur;
    }
    const double achieved =
        std::hypot(prev[0], prev[1]) > 0
            ? std::hypot(prev[0], prev[1]) : 0.0;
    throw std::runtime_error("b1_field quadrature did not converge to requested "
                             "tolerance (last |B| = " + std::to_string(achieved) + ")");
}

double coupling_strength(const std::array<double, 2>& b1, double sx_elem,
                         double gamma_e) {
    require(std::isfinite(b1[0]) && std::isfinite(b1[1]) && sx_elem >= 0 &&
                gamma_e >= 0,
            "coupling inputs must be finite and non-negative");
    // Static field lies along the wire; the whole cross-section field is
    // transverse to it.
    return gamma_e * sx_elem * std::hypot(b1[0], b1[1]);
}

std::complex<double> s11_linear(const ResonatorModel& model, double omega) {
    model.validate();
    const double ke = model.kappa_ext();
    const double ki = model.kappa_int();
    const std::complex<double> i(0, 1);
    const double delta = omega - model.omega0;
    return (ke - ki - 2.0 * i * delta) / (ke + ki + 2.0 * i * delta);
}

double tls_qint(const TlsModel& tls, double n_photons) {
    require(tls.q_tls0 > 0 && tls.n_c > 0 && tls.q_other > 0 && n_photons >= 0,
            "TLS parameters must be > 0");
    const double inv =
        (1.0 / tls.q_tls0) / std::sqrt(1.0 + n_photons / tls.n_c) + 1.0 / tls.q_other;
    return 1.0 / inv;
}

namespace {

// Model for the fit: c * exp(-i omega tau) * S11(omega; omega0, ke, ki).
struct FitParams {
    double omega0, log_ke, log_ki, re_c, im_c, tau;
};

std::complex<double> fit_model(const FitParams& p, double omega) {
    const double ke = std::exp(p.log_ke);
    const double ki = std::exp(p.log_ki);
    const std::complex<double> i(0, 1);
    const double delta = omega - p.omega0;
    const std::complex<double> s =
        (ke - ki - 2.0 * i * delta) / (ke + ki + 2.0 * i * delta);
    return std::complex<double>(p.re_c, p.im_c) * std::exp(-i * omega * p.tau) * s;
}

double residual_norm(const FitParams& p, const ReflectionTrace& tr) {
    double s = 0;
    for (size_t k = 0; k < tr.frequencies.size(); ++k)
        s += std::norm(tr.s11[k] - fit_model(p, tr.frequencies[k]));
    return s;
}

// Levenberg-Marquardt on the stacked real/imag residual vector.
std::pair<FitParams, double> levmar(FitParams p, const ReflectionTrace& tr,
                                    int max_iter, int& iters) {
    const int n = static_cast<int>(tr.frequencies.size());
    const int np = 6;
    double lambda = 1e-3;
    double cost = residual_norm(p, tr);

    auto pack = [](const FitParams& q) {
        return Eigen::Matrix<double, 6, 1>{q.omega0, q.log_ke, q.log_ki,
                                           q.re_c, q.im_c, q.tau};
    };
    auto unpack = [](const Eigen::Matrix<double, 6, 1>& v) {
        return FitParams{v(0), v(1), v(2), v(3), v(4), v(5)};
    };

    const double span = tr.frequencies.back() - tr.frequencies.front();
    const Eigen::Matrix<double, 6, 1> steps{
        1e-7 * span, 1e-6, 1e-6, 1e-7, 1e-7, 1e-4 / span};

    for (iters = 0; iters < max_iter; ++iters) {
        Eigen::MatrixXd J(2 * n, np);
        Eigen::VectorXd r(2 * n);
        for (int k = 0; k < n; ++k) {
            const std::complex<double> d = tr.s11[k] - fit_model(p, tr.frequencies[k]);
            r(2 * k) = d.real();
            r(2 * k + 1) = d.imag();
        }
        Eigen::Matrix<double, 6, 1> v = pack(p);
        for (int j = 0; j < np; ++j) {
            Eigen::Matrix<double, 6, 1> vp = v, vm = v;
            vp(j) += steps(j);
            vm(j) -= steps(j);
            const FitParams pp = unpack(vp), pm = unpack(vm);
            for (int k = 0; k < n; ++k) {
                const std::complex<double> dm =
                    (fit_model(pp, tr.frequencies[k]) - fit_model(pm, tr.frequencies[k])) /
                    (2 * steps(j));
                J(2 * k, j) = dm.real();
                J(2 * k + 1, j) = dm.imag();
            }
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd Jtr = J.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 12; ++tries) {
            Eigen::MatrixXd Am = JtJ;
            Am.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-30);
            const Eigen::VectorXd dv = Am.ldlt().solve(Jtr);
            const FitParams cand = unpack(v + dv);
            const double c2 = residual_norm(cand, tr);
            if (std::isfinite(c2) && c2 < cost) {
                p = cand;
                cost = c2;
                lambda = std::max(lambda * 0.3, 1e-12);
                improved = true;
                break;
            }
            lambda *= 4;
        }
        if (!improved) break;
        if (cost < 1e-24) break;
    }
    return {p, cost};
}

}  // namespace

FitResult fit_s11(const ReflectionTrace& tr) {
    const size_t n = tr.frequencies.size();
    require(n >= 50 && tr.s11.size() == n, "trace needs >= 50 points");

    // Locate the resonance as the point of maximum complex deviation from the
    // off-resonant baseline (robust for phase-only resonances where the
    // amplitude dip is shallow).
    const std::complex<double> c0 = 0.5 * (tr.s11.front() + tr.s11.back());
    double devmax = 0;
    size_t ires = 0;
    double amax = 0;
    for (size_t k = 0; k < n; ++k) {
        amax = std::max(amax, std::abs(tr.s11[k]));
        const double d = std::abs(tr.s11[k] - c0);
        if (d > devmax) { devmax = d; ires = k; }
    }
    if (amax <= 0 || devmax < 0.05 * amax)
        throw std::runtime_error("fit_s11: no resonance visible in trace");

    const double w0 = tr.frequencies[ires];
    // full width of the deviation peak at half height
    const double half = 0.5 * devmax;
    double flo = tr.frequencies.front(), fhi = tr.frequencies.back();
    for (size_t k = ires; k-- > 0;)
        if (std::abs(tr.s11[k] - c0) < half) { flo = tr.frequencies[k]; break; }
    for (size_t k = ires + 1; k < n; ++k)
        if (std::abs(tr.s11[k] - c0) < half) { fhi = tr.frequencies[k]; break; }
    double kappa = std::max(fhi - flo, (tr.frequencies.back() - tr.frequencies.front()) / n);

    // Resonance circle diameter is 2 kappa_ext / kappa times the baseline
    // amplitude, independent of over/under coupling.
    const double ke_frac =
        std::clamp(0.5 * devmax / std::max(std::abs(c0), 1e-30), 1e-4, 1.0 - 1e-4);

    FitResult best;
    double best_cost = 1e300;
    int best_iters = 0;
    {
        const double ke = kappa * ke_frac;
        const double ki = kappa - ke;
        FitParams p{w0, std::log(ke), std::log(ki), c0.real(), c0.imag(), 0.0};
        int iters = 0;
        auto [pf, cost] = levmar(p, tr, 200, iters);
        best_cost = cost;
        best.omega0 = pf.omega0;
        best.q_ext = pf.omega0 / std::exp(pf.log_ke);
        best.q_int = pf.omega0 / std::exp(pf.log_ki);
        best_iters = iters;
    }
    double data2 = 0;
    for (const auto& s : tr.s11) data2 += std::norm(s);
    best.residual = std::sqrt(best_cost / std::max(data2, 1e-300));
    best.iterations = best_iters;
    if (best.residual > 0.25)
        throw std::runtime_error(
            "fit_s11 failed to converge; residual = " + std::to_string(best.residual) +
            " at omega0/2pi = " + std::to_string(best.omega0 / constants::two_pi));
    return best;
}

std::vector<DuffingRoot> duffing_steady_state(const ResonatorModel& model,
                                              double detuning, double beta) {
    model.validate();
    require(beta >= 0 && std::isfinite(detuning), "invalid drive parameters");
    const double K = model.kerr_K;
    const double kap = model.kappa();
    const double ke = model.kappa_ext();
    const double drive = ke * beta * beta;
    const double lin = (kap / 2) * (kap / 2) + detuning * detuning;

    std::vector<double> roots;
    if (K == 0.0) {
        roots.push_back(drive / lin);
    } else {
        // K^2 n^3 + 2 K Delta n^2 + ((kappa/2)^2 + Delta^2) n - drive = 0
        const double a = K * K;
        const double b = 2 * K * detuning;
        Eigen::Matrix3d comp = Eigen::Matrix3d::Zero();
        comp(0, 2) = drive / a;
        comp(1, 0) = 1;
        comp(1, 2) = -lin / a;
        comp(2, 1) = 1;
        comp(2, 2) = -b / a;
        const Eigen::EigenSolver<Eigen::Matrix3d> es(comp);
        const double scale = std::abs(drive / a) + lin / a + 1.0;
        for (int k = 0; k < 3; ++k) {
            const std::complex<double> z = es.eigenvalues()(k);
            if (std::abs(z.imag()) < 1e-8 * std::cbrt(scale) && z.real() >= 0)
                roots.push_back(z.real());
        }
        std::sort(roots.begin(), roots.end());
        // collapse numerically duplicated real roots from the eigensolver
        roots.erase(std::unique(roots.begin(), roots.end(),
                                [&](double x, double y) {
                                    return std::abs(x - y) <= 1e-9 * (1 + std::abs(y));
                                }),
                    roots.end());
    }

    std::vector<DuffingRoot> out;
    for (double nph : roots) {
        const double d = detuning + K * nph;
        const double slope = (kap / 2) * (kap / 2) + d * d + 2 * K * nph * d;
        out.push_back({nph, slope > 0});
    }
    return out;
}

ReflectionTrace load_reflection_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    ReflectionTrace tr;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || !(std::isdigit(line[0]) || line[0] == '-' || line[0] == '+'))
            continue;
        std::istringstream ls(line);
        double f, re, im;
        char c;
        if (ls >> f >> c >> re >> c >> im) {
            tr.frequencies.push_back(f * constants::two_pi);
            tr.s11.emplace_back(re, im);
        }
    }
    return tr;
}

ReflectionTrace load_reflection_db_deg(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    ReflectionTrace tr;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || !(std::isdigit(line[0]) || line[0] == '-' || line[0] == '+'))
            continue;
        std::istringstream ls(line);
        double f, mag_db, ph_deg;
        char c;
        if (ls >> f >> c >> mag_db >> c >> ph_deg) {
            const double mag = std::pow(10.0, mag_db / 20.0);
            const double ph = ph_deg * constants::pi / 180.0;
            tr.frequencies.push_back(f * constants::two_pi);
            tr.s11.emplace_back(mag * std::cos(ph), mag * std::sin(ph));
        }
    }
    return tr;
}

void export_field_map_csv(const ResonatorModel& model,
                          const std::vector<double>& xs,
                          const std::vector<double>& ys,
                          const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "x_m,y_m,Bx_T,By_T,Bnorm_T\n";
    os.precision(10);
    for (double y : ys)
        for (double x : xs) {
            const auto b = b1_field(model, x, y);
            os << x << ',' << y << ',' << b[0] << ',' << b[1] << ','
               << std::hypot(b[0], b[1]) << '\n';
        }
}

}  // namespace esrsim::resonator
