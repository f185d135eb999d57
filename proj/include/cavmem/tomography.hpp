#pragma once
#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <string>

#include "cavmem/counting.hpp"
#include "cavmem/polarization.hpp"
#include "cavmem/rng.hpp"

// Polarization-qubit state and process tomography. States are 2x2 density
// matrices in the {R, L} basis; processes are 4x4 chi matrices in the Pauli
// basis {I, X, Y, Z} over that same computational basis. Reconstruction is
// maximum-likelihood with physicality built into the parameterization
// (factorized forms), so every intermediate and final result satisfies the
// positivity and normalization invariants.

namespace cavmem {

// ---------------------------------------------------------------------------
// Domain types

struct DensityMatrix {
    Eigen::Matrix2cd rho = Eigen::Matrix2cd::Identity() / 2.0;

    // Hermitian, unit trace within 1e-9, smallest eigenvalue >= -1e-9;
    // throws std::invalid_argument otherwise.
    void validate() const;
    static DensityMatrix pure(const PolarizationState& s);
};

struct ProcessMatrix {
    Eigen::Matrix4cd chi = Eigen::Matrix4cd::Zero();

    // Hermitian, positive semidefinite, trace preservation within 1e-6;
    // throws std::invalid_argument otherwise.
    void validate() const;
    static ProcessMatrix identity();
    static ProcessMatrix depolarizing(double strength);  // chi = diag(1-3p/4, p/4 ...)
};

// The Pauli matrices in the {R, L} computational basis (index 0..3 = I,X,Y,Z).
const Eigen::Matrix2cd& pauli(std::size_t index);

// rho_out = sum_mn chi_mn sigma_m rho sigma_n
DensityMatrix apply_channel(const ProcessMatrix& p, const DensityMatrix& rho);

// ---------------------------------------------------------------------------
// Maximum-likelihood reconstruction

// Click counts for one input state measured in the three mutually unbiased
// bases, ordered like CountTable columns: (R, L, H, V, D, A). This is one
// CountTable row.
using StateCounts = std::array<std::int64_t, 6>;

// Multinomial MLE over a factorized (T^dagger T) parameterization. Quasi-
// Newton ascent from the maximally mixed state; converged when the gradient
// of the per-count log-likelihood drops below 1e-8 (iteration cap 1e4).
// Deterministic given counts. Throws std::invalid_argument on all-zero
// counts, std::runtime_error when the cap is hit without convergence.
DensityMatrix state_mle(const StateCounts& counts);

// CPTP-constrained MLE over the full 6-input x 3-basis grid: a Choi factor
// A^dagger A normalized to trace preservation, same optimizer and stopping
// rule as state_mle. Throws std::invalid_argument when a row of the grid is
// empty, std::runtime_error on non-convergence.
ProcessMatrix process_mle(const CountTable& counts);

// ---------------------------------------------------------------------------
// Fidelities

double state_fidelity(const DensityMatrix& rho, const PolarizationState& target);

struct FidelityReport {
    std::array<double, 6> state_fidelities{};  // canonical input order
    double average_state_fidelity = 0.0;       // mean of the six
    double process_fidelity = 0.0;             // chi_II
    // average_state_fidelity - (2 F_p + 1)/3; ~0 for any CPTP map
    double identity_residual = 0.0;
};
FidelityReport fidelity_report(const ProcessMatrix& p);

// F_s averaged over the six axial states, from F_p via the 2-design identity.
double average_fidelity_from_process(double process_fidelity);

// Uhlmann fidelity between the normalized Choi states of two channels
// (1 for identical channels).
double process_fidelity_between(const ProcessMatrix& a, const ProcessMatrix& b);

// ---------------------------------------------------------------------------
// Uncertainty and synthetic data

struct McUncertainty {
    double mean = 0.0;
    double sigma = 0.0;
    int n_failed = 0;  // resamples whose estimator threw
};

// Resample each count from N(N_ij, sqrt(N_ij)) (clipped at zero), re-run the
// estimator, and report the spread. Seeded and reproducible; resamples use
// independent per-sample streams. Requires k_samples >= 100; throws
// std::invalid_argument otherwise or std::runtime_error if every resample
// fails.
McUncertainty mc_uncertainty(const CountTable& counts, int k_samples,
                             std::uint64_t seed,
                             const std::function<double(const CountTable&)>& estimator);

// Outcome probability of measuring `outcome` in basis `b` after sending the
// canonical input `input_index` through the channel.
double outcome_probability(const ProcessMatrix& p, std::size_t input_index,
                           Basis b, int outcome);

// Expected counts (rounded) for shots per (input, basis) cell.
CountTable expected_counts(const ProcessMatrix& p, std::int64_t shots_per_cell);

// Binomially sampled counts for shots per (input, basis) cell.
CountTable sampled_counts(const ProcessMatrix& p, std::int64_t shots_per_cell,
                          Rng& rng);

// Random CPTP channel (Choi factor with complex Gaussian entries, then
// trace-preservation normalization).
ProcessMatrix random_cptp(Rng& rng);

// ---------------------------------------------------------------------------
// Exports

// {"re": [[...]], "im": [[...]]} component arrays.
std::string to_json(const DensityMatrix& m);
std::string to_json(const ProcessMatrix& m);

// Poincare-sphere coordinates (S1, S2, S3) = (p_H - p_V, p_D - p_A, p_R - p_L)
// per state, as CSV with a header row.
std::string poincare_csv(const std::vector<DensityMatrix>& states);

}  // namespace cavmem
