#include "esrsim/sample.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "esrsim/rng.hpp"

namespace esrsim::sample {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

double lerp_on_grid(const std::vector<double>& grid, const std::vector<double>& vals,
                    double x) {
    if (grid.empty()) return 0;
    if (x <= grid.front() || x >= grid.back()) {
        if (x == grid.front()) return vals.front();
        if (x == grid.back()) return vals.back();
        return 0;
    }
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const size_t i = static_cast<size_t>(it - grid.begin()) - 1;
    const double t = (x - grid[i]) / (grid[i + 1] - grid[i]);
    return vals[i] + t * (vals[i + 1] - vals[i]);
}

}  // namespace

double ImplantProfile::at(double depth) const {
    return lerp_on_grid(depth_grid, density, depth);
}

double ImplantProfile::areal_dose() const {
    double s = 0;
    for (size_t i = 0; i + 1 < depth_grid.size(); ++i)
        s += 0.5 * (density[i] + density[i + 1]) * (depth_grid[i + 1] - depth_grid[i]);
    return s;
}

ImplantProfile implant_profile(double peak_density, double depth_min,
                               double depth_max) {
    require(peak_density >= 0, "peak density must be >= 0");
    require(depth_min >= 0 && depth_min < depth_max, "invalid depth range");
    // Raised-cosine roll-off of half the plateau width on each side.
    const double ramp = 0.5 * (depth_max - depth_min);
    const double lo = std::max(depth_min - ramp, 0.0);
    const double hi = depth_max + ramp;

    ImplantProfile p;
    const int n = 400;
    for (int k = 0; k <= n; ++k) {
        const double y = lo + (hi - lo) * k / n;
        double v;
        if (y >= depth_min && y <= depth_max) v = 1.0;
        else if (y < depth_min)
            v = 0.5 * (1.0 + std::cos(constants::pi * (depth_min - y) / ramp));
        else
            v = 0.5 * (1.0 + std::cos(constants::pi * (y - depth_max) / ramp));
        p.depth_grid.push_back(y);
        p.density.push_back(peak_density * v);
    }
    return p;
}

ImplantProfile implant_profile_from_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    ImplantProfile p;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || !(std::isdigit(line[0]) || line[0] == '-' || line[0] == '+'))
            continue;
        std::istringstream ls(line);
        double y, d;
        char c;
        if (ls >> y >> c >> d) {
            require(d >= 0, "implant profile density must be >= 0");
            p.depth_grid.push_back(y);
            p.density.push_back(d);
        }
    }
    require(p.depth_grid.size() >= 2, "profile needs at least two nodes");
    require(std::is_sorted(p.depth_grid.begin(), p.depth_grid.end()),
            "profile depth grid must be ascending");
    return p;
}

void StrainMap::validate() const {
    require(xs.size() >= 2 && ys.size() >= 2, "strain grid too small");
    require(eps_h.size() == xs.size() * ys.size(), "strain grid size mismatch");
    require(std::is_sorted(xs.begin(), xs.end()) && std::is_sorted(ys.begin(), ys.end()),
            "strain grid must be rectilinear ascending");
    for (double e : eps_h)
        require(std::abs(e) <= 1e-2, "strain exceeds sanity bound 1e-2");
}

double StrainMap::at(double x, double y) const {
    auto locate = [](const std::vector<double>& g, double v) {
        const size_t n = g.size();
        if (v <= g.front()) return std::pair<size_t, double>{0, 0.0};
        if (v >= g.back()) return std::pair<size_t, double>{n - 2, 1.0};
        const auto it = std::upper_bound(g.begin(), g.end(), v);
        const size_t i = static_cast<size_t>(it - g.begin()) - 1;
        return std::pair<size_t, double>{i, (v - g[i]) / (g[i + 1] - g[i])};
    };
    const auto [ix, tx] = locate(xs, x);
    const auto [iy, ty] = locate(ys, y);
    const size_t nx = xs.size();
    const double v00 = eps_h[iy * nx + ix];
    const double v10 = eps_h[iy * nx + ix + 1];
    const double v01 = eps_h[(iy + 1) * nx + ix];
    const double v11 = eps_h[(iy + 1) * nx + ix + 1];
    return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

double strain_edge_at(double line_force, double nu, double bulk_modulus,
                      double dx, double y) {
    const double r_min = 1e-9;
    double r2 = dx * dx + y * y;
    if (r2 < r_min * r_min) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "strain_analytic: point within 1 nm of an edge "
                         "singularity, clamping\n";
            warned = true;
        }
        r2 = r_min * r_min;
    }
    // Tangential line force on a half-space: sigma_rr = -2 P cos(phi) / (pi r)
    // is the only nonzero stress; its trace sets the hydrostatic strain.
    const double sigma_trace =
        -(2.0 * line_force / constants::pi) * dx / r2 * (1.0 + nu);
    return sigma_trace / (3.0 * bulk_modulus);
}

double strain_analytic_at(const resonator::ResonatorModel& model,
                          const constants::MaterialConstants& mat, double x,
                          double y) {
    // Tangential line forces f = sigma_film * t_film at the wire edges,
    // pointing toward the wire center (film contracts more than substrate).
    const double f = mat.film_stress() * model.wire_thickness;
    const double nu = mat.si_poisson;
    const double K = mat.si_bulk_modulus;
    return strain_edge_at(-f, nu, K, x - model.wire_width / 2, y) +
           strain_edge_at(f, nu, K, x + model.wire_width / 2, y);
}

StrainMap strain_analytic(const resonator::ResonatorModel& model,
                          const constants::MaterialConstants& mat,
                          const std::vector<double>& xs,
                          const std::vector<double>& ys) {
    model.validate();
    StrainMap m;
    m.xs = xs;
    m.ys = ys;
    m.source = StrainSource::Analytic;
    m.eps_h.reserve(xs.size() * ys.size());
    for (double y : ys)
        for (double x : xs) m.eps_h.push_back(strain_analytic_at(model, mat, x, y));
    m.validate();
    return m;
}

StrainMap strain_import(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::map<double, std::map<double, double>> rows;  // y -> x -> eps
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || !(std::isdigit(line[0]) || line[0] == '-' || line[0] == '+'))
            continue;
        std::istringstream ls(line);
        double x, y, e;
        char c;
        if (ls >> x >> c >> y >> c >> e) rows[y][x] = e;
    }
    StrainMap m;
    m.source = StrainSource::Imported;
    require(rows.size() >= 2, "strain map needs >= 2 rows");
    for (const auto& [x, e] : rows.begin()->second) m.xs.push_back(x);
    for (const auto& [y, row] : rows) {
        m.ys.push_back(y);
        if (row.size() != m.xs.size())
            throw std::runtime_error("strain map grid is not rectilinear");
        size_t k = 0;
        for (const auto& [x, e] : row) {
            if (std::abs(x - m.xs[k++]) > 1e-15 + 1e-9 * std::abs(x))
                throw std::runtime_error("strain map grid is not rectilinear");
            m.eps_h.push_back(e);
        }
    }
    m.validate();
    return m;
}

void strain_export(const StrainMap& map, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "x_m,y_m,eps_h\n";
    os.precision(12);
    for (size_t iy = 0; iy < map.ys.size(); ++iy)
        for (size_t ix = 0; ix < map.xs.size(); ++ix)
            os << map.xs[ix] << ',' << map.ys[iy] << ','
               << map.eps_h[iy * map.xs.size() + ix] << '\n';
}

double hyperfine_shift(double epsilon_h, double dA_deps) {
    require(std::abs(epsilon_h) <= 1e-2, "strain outside sanity bound");
    return dA_deps * epsilon_h;
}

namespace {

double purcell_T1(double g0, double kappa, double detuning) {
    if (g0 <= 0) return 1e6;  // effectively infinite
    const double rate =
        kappa * g0 * g0 / ((kappa / 2) * (kappa / 2) + detuning * detuning);
    return 1.0 / rate;
}

// Precomputed B1 magnitude on a bilinear grid over the sampling window.
struct FieldGrid {
    std::vector<double> xs, ys, mag;  // ys are depths below the surface
    double at(double x, double y) const {
        StrainMap m;  // reuse the bilinear interpolator
        m.xs = xs;
        m.ys = ys;
        m.eps_h = mag;
        return m.at(x, y);
    }
};

}  // namespace

std::vector<SpinPacket> build_ensemble(const ImplantProfile& profile,
                                       const StrainMap* strain,
                                       const resonator::ResonatorModel& res,
                                       const spin::SpinSystem& sys, double B0,
                                       const EnsembleOptions& opt) {
    require(opt.n_packets >= 1, "n_packets must be >= 1");
    const int n_draws = std::min(opt.n_packets, 50000);
    const double dose = profile.areal_dose();
    require(dose > 0, "implant profile has zero total density");

    // depth sampling: piecewise-linear density via fine discrete CDF
    const int n_cdf = 2000;
    const double y_lo = profile.depth_grid.front();
    const double y_hi = profile.depth_grid.back();
    std::vector<double> cdf(n_cdf + 1, 0.0);
    for (int k = 1; k <= n_cdf; ++k) {
        const double y = y_lo + (y_hi - y_lo) * (k - 0.5) / n_cdf;
        cdf[k] = cdf[k - 1] + std::max(profile.at(y), 0.0);
    }
    require(cdf.back() > 0, "implant profile support is empty");
    for (auto& c : cdf) c /= cdf.back();

    // total donors represented by the sampling window
    const double total_donors = dose * 2 * opt.x_half_span * res.wire_length;
    const double w_draw = total_donors / n_draws;

    const spin::TransitionTable table = spin::transitions(sys, B0, 0.05);
    require(!table.entries.empty(), "no ESR-allowed transitions at this field");
    const int n_tr = static_cast<int>(table.entries.size());

    FieldGrid grid;
    {
        const int nx = 161, ny = 121;
        for (int i = 0; i < nx; ++i)
            grid.xs.push_back(-opt.x_half_span + 2 * opt.x_half_span * i / (nx - 1));
        for (int j = 0; j < ny; ++j)
            grid.ys.push_back(y_lo + (y_hi - y_lo) * j / (ny - 1));
        for (double y : grid.ys)
            for (double x : grid.xs) {
                // wire-centered coordinates: wire sits on the surface
                const auto b =
                    resonator::b1_field(res, x, y + res.wire_thickness / 2, 1e-5);
                grid.mag.push_back(std::hypot(b[0], b[1]));
            }
    }

    struct Accum {
        double w = 0, g0 = 0, det = 0, x = 0, y = 0;
    };
    // key: (transition, g0 bin, detuning bin)
    std::map<std::tuple<int, int, int>, Accum> bins;
    std::vector<SpinPacket> raw;

    const double g_min = constants::two_pi * 1.0;     // 1 Hz floor for log bins
    const double g_max = constants::two_pi * 20e3;    // above any reachable g0
    const double log_g_min = std::log(g_min), log_g_max = std::log(g_max);

    for (int d = 0; d < n_draws; ++d) {
        rng::Stream rs(opt.seed, static_cast<std::uint64_t>(d));
        const double x = rs.uniform(-opt.x_half_span, opt.x_half_span);
        const double u = rs.uniform();
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const int ky = std::clamp(static_cast<int>(it - cdf.begin()) - 1, 0, n_cdf - 1);
        const double y = y_lo + (y_hi - y_lo) * (ky + rs.uniform()) / n_cdf;

        const double eps = strain ? strain->at(x, y) : 0.0;
        const double dA = hyperfine_shift(eps);
        const double b1 = grid.at(x, y);

        for (int t = 0; t < n_tr; ++t) {
            const auto& tr = table.entries[static_cast<size_t>(t)];
            const double det = tr.frequency + tr.dfreq_dA * dA - res.omega0;
            if (std::abs(det) > opt.detuning_window) continue;
            const double g0 = resonator::coupling_strength({b1, 0.0},
                                                           tr.sx_matrix_element,
                                                           sys.gamma_e);
            // ten transitions equally weighted
            const double w = w_draw / n_tr;
            if (!opt.aggregate) {
                SpinPacket p;
                p.x = x;
                p.y = y;
                p.g0 = g0;
                p.transition_id = t;
                p.detuning = det;
                p.weight = w;
                p.T2 = opt.T2;
                p.T1 = purcell_T1(g0, res.kappa(), det);
                raw.push_back(p);
                continue;
            }
            const int gb = std::clamp(
                static_cast<int>((std::log(std::max(g0, g_min)) - log_g_min) /
                                 (log_g_max - log_g_min) * opt.g0_bins),
                0, opt.g0_bins - 1);
            const int db = std::clamp(
                static_cast<int>((det + opt.detuning_window) /
                                 (2 * opt.detuning_window) * opt.detuning_bins),
                0, opt.detuning_bins - 1);
            Accum& a = bins[{t, gb, db}];
            a.w += w;
            a.g0 += w * g0;
            a.det += w * det;
            a.x += w * x;
            a.y += w * y;
        }
    }

    if (!opt.aggregate) return raw;

    std::vector<SpinPacket> out;
    out.reserve(bins.size());
    for (const auto& [key, a] : bins) {
        SpinPacket p;
        p.transition_id = std::get<0>(key);
        p.weight = a.w;
        p.g0 = a.g0 / a.w;
        p.detuning = a.det / a.w;
        p.x = a.x / a.w;
        p.y = a.y / a.w;
        p.T2 = opt.T2;
        p.T1 = purcell_T1(p.g0, res.kappa(), p.detuning);
        out.push_back(p);
    }
    return out;
}

Histogram coupling_histogram(const std::vector<SpinPacket>& ensemble, int bins,
                             int transition_id) {
    require(!ensemble.empty(), "empty ensemble");
    require(bins >= 1, "bins must be >= 1");
    double g_lo = 1e300, g_hi = 0;
    for (const auto& p : ensemble) {
        if (transition_id >= 0 && p.transition_id != transition_id) continue;
        g_lo = std::min(g_lo, p.g0);
        g_hi = std::max(g_hi, p.g0);
    }
    require(g_hi > 0, "no packets for the requested transition");
    if (g_hi == g_lo) g_hi = g_lo * (1 + 1e-9) + 1e-12;

    Histogram h;
    h.counts.assign(static_cast<size_t>(bins), 0.0);
    for (int k = 0; k <= bins; ++k)
        h.bin_edges.push_back(g_lo + (g_hi - g_lo) * k / bins);
    for (const auto& p : ensemble) {
        if (transition_id >= 0 && p.transition_id != transition_id) continue;
        int b = static_cast<int>((p.g0 - g_lo) / (g_hi - g_lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        h.counts[static_cast<size_t>(b)] += p.weight;
    }
    return h;
}

NuclearBath nuclear_bath(double concentration, double r_max, double B0,
                         std::uint64_t seed, double gamma_n) {
    require(concentration >= 0 && concentration <= 1, "concentration in [0,1]");
    require(r_max > 0, "r_max must be > 0");
    const double a = constants::si_lattice_a;
    // diamond cubic: fcc + basis shift a/4(1,1,1)
    const std::array<std::array<double, 3>, 8> basis = {{{0, 0, 0},
                                                         {0, 0.5, 0.5},
                                                         {0.5, 0, 0.5},
                                                         {0.5, 0.5, 0},
                                                         {0.25, 0.25, 0.25},
                                                         {0.25, 0.75, 0.75},
                                                         {0.75, 0.25, 0.75},
                                                         {0.75, 0.75, 0.25}}};
    const int nc = static_cast<int>(r_max / a) + 1;
    NuclearBath bath;
    std::uint64_t site_index = 0;
    const double prefactor =
        1e-7 * constants::gamma_e * gamma_n * constants::hbar;  // mu0/4pi * ...
    for (int i = -nc; i <= nc; ++i)
        for (int j = -nc; j <= nc; ++j)
            for (int k = -nc; k <= nc; ++k)
                for (const auto& b : basis) {
                    const double x = (i + b[0]) * a;
                    const double y = (j + b[1]) * a;
                    const double z = (k + b[2]) * a;
                    const std::uint64_t idx = site_index++;
                    const double r = std::sqrt(x * x + y * y + z * z);
                    if (r < 0.5 * a * 0.4 || r > r_max) continue;  // skip donor site
                    rng::Stream rs(seed, idx);
                    if (rs.uniform() >= concentration) continue;
                    const double ct = z / r;  // B0 along z
                    const double st = std::sqrt(std::max(0.0, 1 - ct * ct));
                    const double dd = prefactor / (r * r * r);
                    BathNucleus n;
                    n.position = {x, y, z};
                    n.omega_I = gamma_n * B0;
                    n.a_secular = dd * (1 - 3 * ct * ct);
                    n.b_pseudosecular = dd * 3 * st * ct;
                    bath.push_back(n);
                }
    return bath;
}

void export_ensemble_csv(const std::vector<SpinPacket>& ensemble,
                         const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "x_m,y_m,g0_rad_s,transition_id,detuning_rad_s,weight,T1_s,T2_s\n";
    os.precision(10);
    for (const auto& p : ensemble)
        os << p.x << ',' << p.y << ',' << p.g0 << ',' << p.transition_id << ','
           << p.detuning << ',' << p.weight << ',' << p.T1 << ',' << p.T2 << '\n';
}

void export_histogram_csv(const Histogram& h, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "bin_lo_rad_s,bin_hi_rad_s,count\n";
    os.precision(10);
    for (size_t k = 0; k < h.counts.size(); ++k)
        os << h.bin_edges[k] << ',' << h.bin_edges[k + 1] << ',' << h.counts[k]
           << '\n';
}

}  // namespace esrsim::sample
