#pragma once
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cavmem/config.hpp"
#include "cavmem/polarization.hpp"
#include "cavmem/rng.hpp"

// Stochastic trajectory engine for the full protocol. The write phase solves
// the driven single-excitation amplitude chains (qubit-cavity photon ->
// excited state -> herald-cavity photon) once per configuration and samples
// jump channels from the accumulated fluxes; the read-out phase drives the
// stored Zeeman states with a classical pi field and resolves re-excitation
// after free-space jumps by per-trial integration. All rates are angular
// (rad/s), times in seconds.

namespace cavmem {

// Fate of a trial, in protocol order. A write-and-read trial that stored and
// then emitted ends at readout_emitted; heralding is recorded separately.
enum class TerminalChannel : int {
    reflected_or_lost = 0,  // write photon never scattered off the atom
    free_space_to_f1 = 1,   // scattered, atom fell back to F=1
    free_space_to_f2 = 2,   // scattered into F=2 without a herald photon
    heralded = 3,           // herald photon left the herald cavity
    readout_emitted = 4,    // read-out photon left through the qubit outcoupler
    readout_lost = 5,       // drive ended without a detectable read-out photon
};

const char* terminal_name(TerminalChannel c);

// Coherent Zeeman qubit stored on |2,+1> / |2,-1> (normalized amplitudes).
struct StoredQubit {
    cplx plus{0.0, 0.0};
    cplx minus{0.0, 0.0};
    double norm2() const { return std::norm(plus) + std::norm(minus); }
};

// Snapshot of the single-excitation write amplitudes for the protocol input
// |1,0>: index 0 is the sigma+ chain (|2',+1>, |2,+1>), 1 the sigma- chain.
struct WriteAmplitudes {
    cplx c_cavity[2]{};   // photon in the qubit cavity, atom still in |1,0>
    cplx c_excited[2]{};  // atom in |2', m = +-1>
    cplx c_herald[2]{};   // atom in |2, m = +-1>, photon in the herald cavity
    double channel_integrals = 0.0;  // losses + transfers accumulated so far

    double norm2() const;
    // norm2 + channel_integrals; <= injected drive norm (<= 1) + tolerance
    double budget() const { return norm2() + channel_integrals; }
};

struct ClickEvent {
    double time = 0.0;
    int detector = 0;
};

struct ReadoutClick {
    double time = 0.0;
    Basis basis = Basis::rl;
    int outcome = 0;  // 0 = {R,H,D}, 1 = {L,V,A}
};

struct TrialRecord {
    std::uint64_t trial_id = 0;
    PolarizationState input;  // write photon polarization
    int init_f = 1, init_m = 0;  // prepared level (after optional pump error)
    TerminalChannel terminal = TerminalChannel::reflected_or_lost;

    std::optional<double> herald_emission;  // herald left the cavity at t
    int herald_absorber = -1;               // chain element that ate it, -1 none
    std::optional<ClickEvent> herald_click;

    std::optional<StoredQubit> stored_state;  // coherent pair
    std::optional<int> stored_m;              // incoherent |2,m> population

    std::optional<double> readout_emission;
    int readout_absorber = -1;
    std::optional<ReadoutClick> readout_click;
};

// What run_trials should do with each trial beyond the write phase.
struct TrialPlan {
    bool do_readout = false;
    double storage_time = 0.0;  // s, Larmor + noise evolution before read-out
    Basis readout_basis = Basis::rl;
    bool inject_preparation_error = false;
    std::optional<PolarizationState> input_override;  // default: write pulse pol
    std::uint64_t first_trial_index = 0;  // global index of trials[0]
};

struct ClickDataset {
    std::string config_snapshot;  // canonical emitted config
    std::uint64_t seed = 0;
    TrialPlan plan;
    std::vector<TrialRecord> trials;

    std::string serialize() const;
    static ClickDataset deserialize(const std::string& text);
    void save(const std::string& path) const;
    static ClickDataset load(const std::string& path);
    // Concatenates runs made with the same (config, seed); trial ids must not
    // overlap. Order-independent: trials are sorted by id.
    static ClickDataset merge(const std::vector<ClickDataset>& parts);
};

// ---------------------------------------------------------------------------
// Write phase

// One driven Lambda chain: drive -> cavity amplitude c -> excited e -> herald
// h, with dipole factors (d_write, d_herald) from the level scheme. Tables
// hold the unit-input no-jump solution on the kernel grid plus cumulative
// channel integrals (RK4-integrated alongside the amplitudes).
struct WriteChainTable {
    double d_write = 0.0, d_herald = 0.0;
    std::vector<cplx> c, e, h;
    std::vector<double> phi_herald;   // int 2 kappa_H |h|^2
    std::vector<double> phi_fs;       // int 2 gamma |e|^2
    std::vector<double> phi_cavloss;  // int 2 (kappa_Q - kappa_1Q) |c|^2
    std::vector<double> phi_refl;     // int |  -mu_FC xi + sqrt(2 kappa_1Q) c |^2
    std::vector<double> drive_in;     // int I (injected norm so far)
    double budget_residual = 0.0;     // matched input - (all channels + final norm)
};

// Initial atomic level for a write trial.
struct InitialLevel {
    int f = 1, m = 0;
};

// Outcome of the write phase of a single trial.
struct WriteOutcome {
    TerminalChannel channel = TerminalChannel::reflected_or_lost;
    std::optional<double> time;  // transfer (= herald emission) time
    std::optional<StoredQubit> qubit;
    std::optional<int> zeeman_m;  // incoherent |2,m> (transfer or F=2 carry-over)
};

class WriteKernel {
public:
    WriteKernel(const SystemConfig& cfg, const PulseEnvelope& pulse);

    WriteOutcome sample(const InitialLevel& init, const PolarizationState& input,
                        double n_mean, Rng& rng) const;

    // Deterministic amplitude-equation probabilities (trajectory-mean oracles).
    // The input polarization only matters for |1,+-1> (it splits the drive
    // between the sigma+ and sigma- chains).
    double transfer_probability(const InitialLevel& init,
                                const PolarizationState& input,
                                double n_mean) const;
    double herald_probability(const InitialLevel& init,
                              const PolarizationState& input,
                              double n_mean) const;
    double stored_f2_probability(const InitialLevel& init,
                                 const PolarizationState& input,
                                 double n_mean) const;

    WriteAmplitudes amplitudes_at(double time, const PolarizationState& input,
                                  double n_mean) const;

    double dt() const { return dt_; }
    double grid_end() const { return dt_ * static_cast<double>(steps_); }
    double max_budget_residual() const;
    const WriteChainTable& protocol_chain() const { return chain_a_; }

private:
    WriteChainTable integrate_chain(double d_write, double d_herald) const;

    SystemConfig cfg_;
    PulseEnvelope pulse_;
    double dt_ = 0.0;
    std::size_t steps_ = 0;
    // distinct chains: a: |1,0> -> |2',+-1> -> |2,+-1> (both signs share |d|);
    // b: |1,+-1> -> |2',+-2> -> |2,+-2>; c: |1,+-1> -> |2',0> (pi-dark, no h).
    WriteChainTable chain_a_, chain_b_, chain_c_;
};

// Single write trial from |1,0> (no preparation error); builds a kernel
// internally -- use run_trials/WriteKernel for bulk work.
TrialRecord simulate_write(const SystemConfig& cfg, const PulseEnvelope& pulse,
                           const PolarizationState& input, Rng& rng);

// ---------------------------------------------------------------------------
// Storage

// Relative phase exp(-i 2pi (2 nu_L) t) between m = +1 and m = -1 with
// nu_L = g_F (mu_B/h) (B + dB), dB drawn once per call from N(0, b_noise_sigma).
StoredQubit evolve_storage(const StoredQubit& stored, const SystemConfig& cfg,
                           double storage_time, Rng& rng);

// ---------------------------------------------------------------------------
// Read-out

// Ground-manifold content fed to the read-out: a coherent pair or one |2,m>.
struct AtomState {
    std::optional<StoredQubit> qubit;
    std::optional<int> single_m;
    bool empty() const { return !qubit && !single_m; }
};

// Polarization content of an emitted read-out photon: a coherent (R, L)
// amplitude pair from the |1,0> final-state group plus incoherent R / L
// weights from the |1,+-1> groups (m = +-2 chains). Unnormalized.
struct ReadoutEmission {
    double time = 0.0;
    cplx coherent_r{0.0, 0.0}, coherent_l{0.0, 0.0};
    double incoherent_r = 0.0, incoherent_l = 0.0;

    double total_weight() const;
    double outcome_probability(Basis b, int outcome) const;
};

struct ReadoutResult {
    TerminalChannel terminal = TerminalChannel::readout_lost;
    std::optional<ReadoutEmission> emission;
    bool atom_in_f1 = false;  // drive returned the atom to F=1
    int resets = 0;           // free-space / herald-Purcell re-excitation jumps
    double accounting_residual = 0.0;  // |1 - channels - survival| in the trial
};

class ReadKernel {
public:
    ReadKernel(const SystemConfig& cfg, const PulseEnvelope& pulse);
    ~ReadKernel();  // out of line: member tables are private nested types

    ReadoutResult sample(const AtomState& atom, Rng& rng) const;

    double dt() const { return dt_; }
    double grid_end() const { return dt_ * static_cast<double>(steps_); }

private:
    struct Chain;       // couplings of one |2,m> ladder
    struct ChainTable;  // first-segment unit-amplitude solution
    struct LiveState;   // per-trial integration state after a reset

    static void raxpy(LiveState& y, double a, const LiveState& x);
    static double live_norm2(const LiveState& s);
    static void live_lerp(const LiveState& a, const LiveState& b, double f,
                          LiveState& out);
    static void live_scale(LiveState& s, double k);

    void derivatives(const LiveState& s, double t, LiveState& out) const;
    void rk4_step(LiveState& s, double t, double h) const;
    // Draw the jump channel from the instantaneous rates at t_jump; terminal
    // channels return, re-excitations recurse into integrate_live.
    ReadoutResult resolve_jump(const LiveState& at_jump, double t_jump,
                               int resets, double worst, Rng& rng) const;
    ReadoutResult integrate_live(LiveState s, double t0, int resets,
                                 double worst, Rng& rng) const;

    SystemConfig cfg_;
    PulseEnvelope pulse_;
    double dt_ = 0.0;
    std::size_t steps_ = 0;
    std::vector<Chain> chains_;       // m = -2..+2
    std::vector<ChainTable> tables_;  // first segment, unit ground amplitude
};

// Single read-out trial; builds a kernel internally.
ReadoutResult simulate_readout(const AtomState& atom, const SystemConfig& cfg,
                               const PulseEnvelope& pulse, Rng& rng);

// Born-rule polarization measurement of an emitted photon.
int measure_in_basis(const ReadoutEmission& e, Basis b, Rng& rng);

// ---------------------------------------------------------------------------
// Detection chain and trial batches

struct ChainOutcome {
    std::optional<ClickEvent> click;
    int absorber = -1;  // element index that absorbed the photon, -1 if passed
};

// Thins an emission at `time` by independent Bernoulli trials per element.
ChainOutcome apply_detection_chain(double time, std::span<const ChainElement> chain,
                                   Rng& rng);

// Deterministic batch: per-trial substreams from (seed, global trial index),
// so disjoint index ranges merge into the same dataset as one big run.
ClickDataset run_trials(const SystemConfig& cfg, const TrialPlan& plan,
                        std::uint64_t n_trials, std::uint64_t seed);

}  // namespace cavmem
