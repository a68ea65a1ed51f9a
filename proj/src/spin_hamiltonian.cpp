#include "esrsim/spin_hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace esrsim::spin {

namespace {

bool all_finite(const Matrix& m) {
    return m.allFinite();
}

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void SpinSystem::validate() const {
    require(std::isfinite(hyperfine_A) && hyperfine_A > 0, "hyperfine_A must be > 0");
    require(std::isfinite(gamma_e) && gamma_e > 0, "gamma_e must be > 0");
    require(electron_spin > 0 && nuclear_spin >= 0, "spin quantum numbers invalid");
}

Matrix spin_sz(double j) {
    const int d = static_cast<int>(2 * j + 1.5);
    Matrix m = Matrix::Zero(d, d);
    for (int k = 0; k < d; ++k) m(k, k) = -j + k;  // ascending m
    return m;
}

Matrix spin_sx(double j) {
    const int d = static_cast<int>(2 * j + 1.5);
    Matrix m = Matrix::Zero(d, d);
    for (int k = 0; k + 1 < d; ++k) {
        const double mlow = -j + k;
        const double c = 0.5 * std::sqrt(j * (j + 1) - mlow * (mlow + 1));
        m(k, k + 1) = c;
        m(k + 1, k) = c;
    }
    return m;
}

Matrix spin_sy(double j) {
    const int d = static_cast<int>(2 * j + 1.5);
    Matrix m = Matrix::Zero(d, d);
    const std::complex<double> i(0, 1);
    for (int k = 0; k + 1 < d; ++k) {
        const double mlow = -j + k;
        const double c = 0.5 * std::sqrt(j * (j + 1) - mlow * (mlow + 1));
        m(k, k + 1) = i * c;
        m(k + 1, k) = -i * c;
    }
    return m;
}

namespace {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

}  // namespace

Matrix electron_sx(const SpinSystem& sys) {
    const Matrix id_n = Matrix::Identity(sys.nuclear_dim(), sys.nuclear_dim());
    return kron(spin_sx(sys.electron_spin), id_n);
}

Matrix build_hamiltonian(const SpinSystem& sys, double B0, double delta_A) {
    sys.validate();
    require(std::isfinite(B0) && B0 >= 0, "B0 must be finite and >= 0");
    require(std::isfinite(delta_A), "delta_A must be finite");
    const double A = sys.hyperfine_A + delta_A;
    require(A > 0, "A + delta_A must be > 0");

    const double S = sys.electron_spin;
    const double I = sys.nuclear_spin;
    const Matrix id_e = Matrix::Identity(sys.electron_dim(), sys.electron_dim());
    const Matrix id_n = Matrix::Identity(sys.nuclear_dim(), sys.nuclear_dim());

    Matrix H = sys.gamma_e * B0 * kron(spin_sz(S), id_n);
    H += A * (kron(spin_sx(S), spin_sx(I)) + kron(spin_sy(S), spin_sy(I)) +
              kron(spin_sz(S), spin_sz(I)));
    if (sys.include_nuclear_zeeman)
        H -= sys.gamma_n * B0 * kron(id_e, spin_sz(I));
    return H;
}

EnergyLevels eigensystem(const Matrix& H) {
    require(all_finite(H), "Hamiltonian has non-finite entries");
    const double scale = std::max(H.norm(), 1e-300);
    if ((H - H.adjoint()).norm() > 1e-10 * scale)
        throw std::invalid_argument("matrix is not Hermitian");

    Eigen::SelfAdjointEigenSolver<Matrix> solver(H);
    EnergyLevels out;
    out.energies = solver.eigenvalues();
    out.eigenvectors = solver.eigenvectors();

    // Deterministic ordering inside degenerate clusters: ascending expectation
    // of the product-basis index operator (equivalent to mF ascending for the
    // zero-field multiplets), then a fixed phase convention.
    const int n = static_cast<int>(out.energies.size());
    const double tol = 1e-9 * std::max(scale, 1.0);
    int start = 0;
    while (start < n) {
        int end = start + 1;
        while (end < n && out.energies(end) - out.energies(start) < tol) ++end;
        if (end - start > 1) {
            std::vector<int> idx(end - start);
            std::vector<double> key(end - start);
            for (int k = 0; k < end - start; ++k) {
                idx[k] = k;
                double e = 0;
                for (int r = 0; r < n; ++r)
                    e += r * std::norm(out.eigenvectors(r, start + k));
                key[k] = e;
            }
            std::stable_sort(idx.begin(), idx.end(),
                             [&](int a, int b) { return key[a] < key[b]; });
            Matrix block = out.eigenvectors.middleCols(start, end - start);
            for (int k = 0; k < end - start; ++k)
                out.eigenvectors.col(start + k) = block.col(idx[k]);
        }
        start = end;
    }
    for (int c = 0; c < n; ++c) {
        int imax = 0;
        double amax = 0;
        for (int r = 0; r < n; ++r) {
            const double a = std::abs(out.eigenvectors(r, c));
            if (a > amax) { amax = a; imax = r; }
        }
        const std::complex<double> ph = out.eigenvectors(imax, c) / amax;
        out.eigenvectors.col(c) /= ph;
    }
    return out;
}

Vector breit_rabi(const SpinSystem& sys, double B0) {
    sys.validate();
    require(std::abs(sys.electron_spin - 0.5) < 1e-12, "Breit-Rabi requires S = 1/2");
    const double I = sys.nuclear_spin;
    const double A = sys.hyperfine_A;
    const double dW = A * (I + 0.5);
    double x = sys.gamma_e * B0 / dW;
    if (sys.include_nuclear_zeeman) x = (sys.gamma_e + sys.gamma_n) * B0 / dW;
    const double nz = sys.include_nuclear_zeeman ? sys.gamma_n * B0 : 0.0;

    std::vector<double> e;
    e.reserve(sys.dim());
    // F = I + 1/2 manifold, mF = -(I+1/2) .. (I+1/2)
    for (double mF = -(I + 0.5); mF <= I + 0.5 + 1e-9; mF += 1.0) {
        double v;
        if (std::abs(mF - (I + 0.5)) < 1e-9)
            v = -A / 4 + dW / 2 * (1 + x);  // stretched states: exact linear
        else if (std::abs(mF + (I + 0.5)) < 1e-9)
            v = -A / 4 + dW / 2 * (1 - x);
        else
            v = -A / 4 + dW / 2 * std::sqrt(1 + 2 * mF * x / (I + 0.5) + x * x);
        e.push_back(v - nz * mF);
    }
    // F = I - 1/2 manifold
    for (double mF = -(I - 0.5); mF <= I - 0.5 + 1e-9; mF += 1.0)
        e.push_back(-A / 4 - dW / 2 * std::sqrt(1 + 2 * mF * x / (I + 0.5) + x * x) -
                    nz * mF);

    std::sort(e.begin(), e.end());
    Vector out(static_cast<int>(e.size()));
    for (int k = 0; k < out.size(); ++k) out(k) = e[k];
    return out;
}

namespace {

struct RawTransition {
    int lo, hi;
    double freq, sx;
};

std::vector<RawTransition> raw_transitions(const SpinSystem& sys, double B0,
                                           double threshold, double delta_A) {
    const EnergyLevels lv = eigensystem(build_hamiltonian(sys, B0, delta_A));
    const Matrix sx_eig =
        lv.eigenvectors.adjoint() * electron_sx(sys) * lv.eigenvectors;
    // drop intra-multiplet (nuclear-like) pairs: ESR transitions sit near the
    // zero-field splitting, far above A/2 at the fields considered here
    const double freq_floor = 0.5 * sys.hyperfine_A;
    std::vector<RawTransition> all;
    for (int i = 0; i < lv.energies.size(); ++i) {
        for (int j = i + 1; j < lv.energies.size(); ++j) {
            const double f = lv.energies(j) - lv.energies(i);
            const double el = std::abs(sx_eig(i, j));
            if (f > freq_floor && el > 1e-9)
                all.push_back({i, j, f, el});
        }
    }
    std::sort(all.begin(), all.end(),
              [](const RawTransition& a, const RawTransition& b) { return a.freq < b.freq; });

    // Merge frequency-degenerate lines (near zero field, allowed pairs come in
    // degenerate strong/weak branches that a spectrometer sees as one line):
    // combine strengths in quadrature, keep the stronger pair as representative.
    const double merge_tol = 1e-5 * sys.hyperfine_A;
    std::vector<RawTransition> out;
    for (const auto& t : all) {
        if (!out.empty() && t.freq - out.back().freq <= merge_tol) {
            RawTransition& m = out.back();
            const double combined = std::hypot(m.sx, t.sx);
            if (t.sx > m.sx) { m.lo = t.lo; m.hi = t.hi; m.freq = t.freq; }
            m.sx = combined;
        } else {
            out.push_back(t);
        }
    }
    out.erase(std::remove_if(out.begin(), out.end(),
                             [&](const RawTransition& t) { return t.sx < threshold; }),
              out.end());
    return out;
}

}  // namespace

TransitionTable transitions(const SpinSystem& sys, double B0, double threshold,
                            double delta_A) {
    require(threshold > 0 && threshold < 0.5, "threshold must lie in (0, 0.5)");
    const auto base = raw_transitions(sys, B0, threshold, delta_A);

    // dfreq_dA by central finite difference on delta_A; matched by level pair.
    const double h = 1e-6 * sys.hyperfine_A;
    const EnergyLevels up = eigensystem(build_hamiltonian(sys, B0, delta_A + h));
    const EnergyLevels dn = eigensystem(build_hamiltonian(sys, B0, delta_A - h));

    TransitionTable table;
    table.field_B0 = B0;
    for (const auto& t : base) {
        const double fp = up.energies(t.hi) - up.energies(t.lo);
        const double fm = dn.energies(t.hi) - dn.energies(t.lo);
        table.entries.push_back({t.lo, t.hi, t.freq, t.sx, (fp - fm) / (2 * h)});
    }
    return table;
}

double transition_field(const SpinSystem& sys, int transition_index, double f_target,
                        double threshold, double B_max) {
    require(f_target > 0 && std::isfinite(f_target), "f_target must be > 0");

    auto freq_at = [&](double B0) -> double {
        const auto t = raw_transitions(sys, B0, threshold, 0.0);
        if (transition_index < 0 || transition_index >= static_cast<int>(t.size()))
            throw std::out_of_range("transition index out of range at this field");
        return t[static_cast<size_t>(transition_index)].freq;
    };

    const int n_scan = 400;
    double prev_B = 0.0, prev_f = freq_at(0.0) - f_target;
    if (std::abs(prev_f) < constants::two_pi) return 0.0;
    for (int k = 1; k <= n_scan; ++k) {
        const double B = B_max * k / n_scan;
        const double f = freq_at(B) - f_target;
        if (prev_f * f <= 0.0) {
            double lo = prev_B, hi = B, flo = prev_f;
            // bisection to 1 Hz on the transition frequency
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = freq_at(mid) - f_target;
                if (std::abs(fm) < constants::two_pi * 0.5) return mid;
                if (flo * fm <= 0.0) hi = mid;
                else { lo = mid; flo = fm; }
            }
            return 0.5 * (lo + hi);
        }
        prev_B = B;
        prev_f = f;
    }
    throw std::runtime_error("transition_field: target frequency not reached in range");
}

void export_transitions_csv(const TransitionTable& table, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "transition_id,B0_T,freq_Hz,sx_elem,dfreq_dA\n";
    os.precision(12);
    for (size_t k = 0; k < table.entries.size(); ++k) {
        const auto& t = table.entries[k];
        os << k << ',' << table.field_B0 << ',' << t.frequency / constants::two_pi
           << ',' << t.sx_matrix_element << ',' << t.dfreq_dA << '\n';
    }
}

}  // namespace esrsim::spin
