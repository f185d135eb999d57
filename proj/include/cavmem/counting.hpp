#pragma once
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cavmem/dynamics.hpp"
#include "cavmem/polarization.hpp"
#include "cavmem/rng.hpp"
#include "cavmem/scan.hpp"

// Estimators over click datasets: time histograms, intensity correlations,
// herald conditioning, reference-normalized probability estimation,
// truncation sweeps, Bernoulli confidence intervals, and per-atom weighted
// aggregation. All estimators are pure functions of immutable datasets and
// are invariant under permutation of the trial order.

namespace cavmem {

// Which click stream of a dataset an estimator looks at.
enum class ClickStream { herald, readout };

// ---------------------------------------------------------------------------
// Count tables (tomography input)

// 6x6 grid of click counts: rows are the canonical input polarizations
// (R, L, H, V, D, A), columns are the measurement results labelled by the
// same six states (both outcomes of the three bases). Row i, column j holds
// the number of read-out clicks with outcome state j for input state i.
struct CountTable {
    static constexpr std::array<const char*, 6> kLabels = {"R", "L", "H",
                                                           "V", "D", "A"};
    std::array<std::array<std::int64_t, 6>, 6> counts{};

    std::int64_t row_total(std::size_t input_index) const;
    // counts along (input, input) and (input, orthogonal-of-input)
    std::int64_t parallel(std::size_t input_index) const;
    std::int64_t perpendicular(std::size_t input_index) const;

    void validate() const;  // throws std::invalid_argument on negative counts
    std::string to_csv() const;
    static CountTable from_csv(const std::string& text);
};

// Index of a canonical polarization state (order R, L, H, V, D, A); throws
// std::invalid_argument if the state is not one of the six (up to phase).
std::size_t canonical_state_index(const PolarizationState& s);

// Column index of (basis, outcome) in the canonical label order.
std::size_t outcome_state_index(Basis b, int outcome);

// Accumulate every read-out click of `ds` into row `input_index`, using the
// dataset's measurement basis for the column.
void accumulate_counts(CountTable& table, std::size_t input_index,
                       const ClickDataset& ds);

// ---------------------------------------------------------------------------
// Stream statistics

// Per-trial-normalized arrival-time histogram of the selected click stream.
// x = bin centres (s), estimate = clicks per trial per bin, sigma = Poisson.
// Throws std::invalid_argument on empty dataset or non-positive bin width.
ScanResult histogram(const ClickDataset& ds, ClickStream stream, double bin_width);

// Normalized second-order correlation versus absolute lag. Same-trial
// (unordered) click pairs are normalized by coincidences between adjacent
// trials, which are independent realizations; the adjacent-pair count is
// halved because both directions are counted, and scaled by (N-1)/N to
// equalise the number of pair opportunities:
//   g2(bin) = [same-trial pairs / N] / [adjacent-trial pairs / (2 (N-1))].
// A homogeneous Poisson stream gives 1 in every bin by construction.
// Bins with no adjacent-trial coincidences report estimate 0, sigma 0.
// Throws std::invalid_argument if the stream holds fewer than two clicks.
ScanResult g2(const ClickDataset& ds, ClickStream stream, double max_lag,
              double bin_width);

// Same estimator over explicit per-trial click-time lists (synthetic or
// multi-click streams); trials are taken in the given order.
ScanResult g2(const std::vector<std::vector<double>>& trial_clicks, double max_lag,
              double bin_width);

// ---------------------------------------------------------------------------
// Conditioning and probability estimation

struct Conditioned {
    ClickDataset data;
    double retained_fraction = 0.0;
};

// Keep only trials whose write phase produced a herald click.
Conditioned condition_on_herald(const ClickDataset& ds);

// p = n_parallel/(n_parallel+n_perpendicular) with the normal-approximation
// standard error sqrt(p(1-p)/n). Degenerate (p = 0 or 1) results carry
// sigma = 0 and are flagged. Throws std::invalid_argument on zero total.
struct BernoulliEstimate {
    double p = 0.0;
    double sigma = 0.0;
    bool degenerate = false;
};
BernoulliEstimate bernoulli_ci(std::int64_t n_parallel, std::int64_t n_perpendicular);

// Expected ("parallel") outcome when measuring `input` in basis `b`; throws
// std::invalid_argument if the input is unbiased in that basis.
int expected_outcome(const PolarizationState& input, Basis b);

// Fraction of read-out clicks whose outcome matches the dataset's input
// polarization (restricted to clicks at time < cut if given).
BernoulliEstimate readout_fidelity(const ClickDataset& ds,
                                   std::optional<double> cut = std::nullopt);

// Reference-normalized transfer/herald probability estimation. The rate of
// `stream` clicks per trial is proportional to the F=2 transfer probability,
// so the ratio of dataset to reference rates estimates p_t(nbar_w) up to the
// reference's own transfer probability, which is solved self-consistently:
//   p_t = ratio * (1 - exp(-nbar_ref * p_s)),   p_s = -ln(1 - p_t)/nbar_w.
// The reference is flagged saturated when its inferred transfer exceeds 97 %.
// Throws std::invalid_argument on zero reference counts.
struct ProbabilityEstimate {
    double p_t_nbar = 0.0, p_t_sigma = 0.0;  // pulse-level transfer
    double p_h_nbar = 0.0, p_h_sigma = 0.0;  // pulse-level herald detection
    double p_s = 0.0, p_s_sigma = 0.0;       // single-photon storage
    double p_h1 = 0.0, p_h1_sigma = 0.0;     // single-photon herald detection
    double reference_transfer = 0.0;         // inferred reference p_t
    bool reference_saturated = false;
};
ProbabilityEstimate estimate_probabilities(const ClickDataset& ds,
                                           const ClickDataset& reference,
                                           ClickStream stream = ClickStream::herald);

// Read-out fidelity and retained-click fraction when only clicks earlier
// than each cut are kept. Returns (fidelity vs cut, relative efficiency vs
// cut); efficiency is normalized to the full window. Cuts must lie in
// (0, read window]; throws std::invalid_argument otherwise or when the
// dataset has no read-out clicks.
std::pair<ScanResult, ScanResult> truncation_sweep(const ClickDataset& ds,
                                                   std::span<const double> cuts);

// ---------------------------------------------------------------------------
// Per-atom aggregation

struct AtomSummary {
    double mean = 0.0;
    double sigma = 0.0;
    double weight = 0.0;  // trial count behind this atom's estimate
};

enum class AggregateMode { closed_form, monte_carlo };

// Weighted pooling of per-atom estimates. closed_form: weighted mean with
// total spread (within- plus between-atom variance). monte_carlo: draw
// weight-many N(mean, sigma^2) samples per atom and fit a normal to the
// pool (requires rng). Throws std::invalid_argument on zero total weight,
// negative sigma, or a missing rng in monte_carlo mode.
struct AggregateResult {
    double mean = 0.0;
    double sigma = 0.0;
};
AggregateResult aggregate_atoms(std::span<const AtomSummary> atoms,
                                AggregateMode mode, Rng* rng = nullptr);

}  // namespace cavmem
