#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "esrsim/constants.hpp"

namespace esrsim::spin {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;

/// Parameters of the donor spin Hamiltonian
///   H/hbar = gamma_e B0 Sz + (A + dA) S.I  [- gamma_n B0 Iz, optional]
struct SpinSystem {
    double electron_spin = 0.5;
    double nuclear_spin = 4.5;
    double hyperfine_A = constants::bi_hyperfine_A;  // rad/s
    double gamma_e = constants::gamma_e;             // rad/s per T
    bool include_nuclear_zeeman = false;
    double gamma_n = constants::gamma_n_si29;        // rad/s per T

    int electron_dim() const { return static_cast<int>(2 * electron_spin + 1.5); }
    int nuclear_dim() const { return static_cast<int>(2 * nuclear_spin + 1.5); }
    int dim() const { return electron_dim() * nuclear_dim(); }
    void validate() const;
};

struct EnergyLevels {
    double field_B0 = 0.0;   // T
    Vector energies;         // rad/s, ascending
    Matrix eigenvectors;     // columns = eigenstates, product basis |mS>|mI>
};

struct Transition {
    int level_low = 0;
    int level_high = 0;
    double frequency = 0.0;          // rad/s, E_high - E_low
    double sx_matrix_element = 0.0;  // |<low|Sx|high>|
    double dfreq_dA = 0.0;           // d(frequency)/d(A), dimensionless
};

struct TransitionTable {
    double field_B0 = 0.0;
    std::vector<Transition> entries;
};

/// Spin matrices (2j+1 dimensional) in the |m = j..-j> ladder basis,
/// reordered so that basis index runs over ascending m.
Matrix spin_sx(double j);
Matrix spin_sy(double j);
Matrix spin_sz(double j);

/// Sx of the electron, embedded in the full product space.
Matrix electron_sx(const SpinSystem& sys);

Matrix build_hamiltonian(const SpinSystem& sys, double B0, double delta_A = 0.0);

EnergyLevels eigensystem(const Matrix& H);

/// Breit-Rabi closed form for S=1/2; test oracle only.
Vector breit_rabi(const SpinSystem& sys, double B0);

/// All level pairs with |<i|Sx|j>| >= threshold and positive frequency.
TransitionTable transitions(const SpinSystem& sys, double B0, double threshold,
                            double delta_A = 0.0);

/// Smallest B0 in [0, B_max] where the given transition reaches f_target,
/// to within 1 Hz. Throws if no crossing exists in range.
double transition_field(const SpinSystem& sys, int transition_index, double f_target,
                        double threshold = 0.05, double B_max = 50e-3);

void export_transitions_csv(const TransitionTable& table, const std::string& path);

}  // namespace esrsim::spin
