#pragma once
#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "cavmem/config.hpp"
#include "cavmem/scan.hpp"

// Deterministic nonlinear least squares plus the model-specific fit drivers
// used by the analysis scenarios: Lorentzian and normal-mode transmission
// spectra, the detuning-dependent storage/heralding efficiency model, and
// coherence decay (with or without a Larmor oscillation).

namespace cavmem {

// A named derived quantity propagated from a fit (delta method).
struct DerivedQuantity {
    std::string name;
    double value = 0.0;
    double sigma = 0.0;
};

struct FitResult {
    std::vector<std::string> names;     // one per fitted parameter
    Eigen::VectorXd parameters;
    Eigen::MatrixXd covariance;         // symmetric PSD when converged
    double residual_norm = 0.0;         // sqrt(sum of weighted squared residuals)
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> flags;     // diagnostics, e.g. non-identifiability
    std::vector<DerivedQuantity> derived;

    double parameter(const std::string& name) const;  // throws on unknown name
    double sigma(const std::string& name) const;      // sqrt of covariance diagonal
    bool has_flag(const std::string& flag) const;
    std::string to_json() const;
};

// A scalar model y(x; p) with an analytic Jacobian dy/dp. The engine
// cross-checks the Jacobian against central finite differences at the
// solution (1e-4 relative) and throws std::logic_error on disagreement.
struct FitModel {
    std::vector<std::string> names;
    std::function<double(double x, const Eigen::VectorXd& p)> value;
    std::function<Eigen::VectorXd(double x, const Eigen::VectorXd& p)> jacobian;
};

struct FitOptions {
    // Empty bounds vectors mean unbounded; otherwise iterates are clamped
    // componentwise and never leave [lower, upper].
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    // Weighted fits use 1/sigma^2. Rule for the sigma column: all positive ->
    // weighted; all zero -> unit weights (noise-free model curves); mixed ->
    // std::invalid_argument.
    bool weighted = true;
    int max_iterations = 500;
    double step_tolerance = 1e-10;  // on the damped Gauss-Newton step norm
};

// Damped (Levenberg-Marquardt) Gauss-Newton weighted least squares.
// Deterministic. Throws std::invalid_argument on malformed input (fewer
// points than parameters, initial guess outside bounds, mixed sigma signs),
// std::runtime_error on a singular Jacobian or when the iteration cap is hit,
// std::logic_error when the model Jacobian fails the finite-difference check.
FitResult nls_fit(const FitModel& model, const ScanResult& data,
                  const Eigen::VectorXd& initial, const FitOptions& opts = {});

// Largest relative deviation between the model's analytic Jacobian and a
// central finite difference, over all data points and parameters.
double jacobian_deviation(const FitModel& model, const ScanResult& data,
                          const Eigen::VectorXd& p);

// ---------------------------------------------------------------------------
// Spectrum fits (x column in MHz)

// T(x) = offset + amplitude * (fwhm/2)^2 / ((x-center)^2 + (fwhm/2)^2).
// Parameters: center, fwhm [MHz], amplitude, offset. Initial guess taken
// from the data. Derived: "kappa" = pi * fwhm * 1e6, the field decay rate
// in rad/s implied by the MHz-axis linewidth, with its propagated sigma.
FitResult fit_lorentzian(const ScanResult& data);

// Two-peak normal-mode transmission at fixed kappa and gamma (rad/s):
// T(x) = amplitude * |kappa(gamma + i d)|^2 / |(kappa + i d)(gamma + i d) + g^2|^2
// with d = 2 pi (x - center) * 1e6 rad/s the angular detuning from the common
// atom-cavity resonance. Parameters: g [rad/s], center [MHz], amplitude.
FitResult fit_normal_mode(const ScanResult& data, double kappa, double gamma);

// ---------------------------------------------------------------------------
// Detuning-dependent efficiency fit (x column in MHz)

// Two stages, as the storage and heralding curves constrain different
// parameters: the storage curve p_s(detuning) fits (mu_fc_sq, mu_rc_sq,
// coupling_reduction); the heralding curve p_h1(detuning) then fits
// eta_herald alone with the first three frozen. All other rates are taken
// from `fixed`, and the initial guess is read from the corresponding fields
// of `fixed`. Both scans must cover detuning zero and at least three
// distinct detunings; throws std::invalid_argument otherwise.
// Result parameters: mu_fc_sq, mu_rc_sq, coupling_reduction, eta_herald
// (covariance block-diagonal across the two stages).
FitResult fit_detuning_model(const ScanResult& storage, const ScanResult& heralding,
                             const SystemConfig& fixed);

// ---------------------------------------------------------------------------
// Coherence fits (x column in us)

enum class CoherenceKind {
    oscillating,  // F(t) = (1 + V(t) cos(2 pi f (t - t0)))/2
    decaying,     // F(t) = (1 + V(t))/2
};

// Gaussian envelope V(t) = visibility * exp(-t^2 / (2 t2^2)) in both kinds.
// Parameters: visibility, t2 [us] (+ frequency [Hz], t0 [us] when
// oscillating; the frequency initial guess is a deterministic grid search).
// Derived: "t_threshold" [us], the time where the envelope fidelity
// (1 + V(t))/2 falls to classical_bound, with a delta-method sigma; 0 and
// the flag "threshold not crossed" when the fitted visibility never exceeds
// it. Data consistent with constant fidelity gets the flag
// "frequency non-identifiable" (oscillating kind). The oscillating kind
// requires at least 6 points; throws std::invalid_argument otherwise.
FitResult fit_coherence(const ScanResult& data, CoherenceKind kind,
                        double classical_bound = 0.69);

// Quasi-static field noise of spread sigma_b (gauss) dephases the stored
// superposition at twice the Larmor rate: T2 = 1/(2 pi * 2 gF (muB/h) sigma_b)
// seconds.
double coherence_time_from_field_noise(double sigma_b_gauss,
                                       const PhysicalConstants& k);

// Envelope crossing time t* = T2 sqrt(2 ln(v0 / (2 bound - 1))) in the units
// of t2; 0 when the envelope starts at or below the bound.
double envelope_threshold_time(double visibility, double t2, double bound);

// Inverse calibration: the field-noise spread whose envelope (visibility v0)
// crosses `bound` at t_star seconds.
double field_noise_for_threshold(double t_star_s, double visibility, double bound,
                                 const PhysicalConstants& k);

}  // namespace cavmem
