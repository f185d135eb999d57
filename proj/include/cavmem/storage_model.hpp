#pragma once
#include <span>
#include <utility>

#include "cavmem/config.hpp"
#include "cavmem/scan.hpp"

// Closed-form model of the vacuum-induced storage process: a weakly driven
// single-sided qubit cavity whose atom suffers additional Purcell-enhanced
// decay into the (possibly detuned) herald cavity. Steady-state input-output
// bookkeeping splits an impinging photon into reflected / cavity-lost /
// atom-scattered fractions; the scattered fraction stores with the hyperfine
// branching probability.

namespace cavmem {

// gamma_p(Delta) = g_h^2 kappa_h / (kappa_h^2 + (2 pi Delta)^2), rad/s
double purcell_rate(double g_h, double kappa_h, double detuning_hz);

// p_F2 = (gamma/2 + gamma_p) / (gamma + gamma_p): fraction of scattering
// events that leave the atom in F=2 (1/2 free-space manifold branching plus
// the fully transferring Purcell channel).
double branching_to_f2(double gamma, double gamma_p);

struct LossFractions {
    double p_reflected;       // P_R
    double p_cavity_loss;     // P_C
    double p_atom_scattered;  // P_A = 1 - P_R - P_C
};

LossFractions loss_fractions(const SystemConfig& cfg, double gamma_p);

struct EfficiencyPoint {
    double p_s;   // single-photon storage efficiency
    double p_h1;  // single-photon heralding probability (lumped eta applied)
};

EfficiencyPoint storage_efficiency(const SystemConfig& cfg, double detuning_hz);

// (p_s(Delta), p_H1(Delta)) over a detuning grid; sigma columns are zero
// (model curves carry no statistical error).
std::pair<ScanResult, ScanResult> efficiency_curves(const SystemConfig& cfg,
                                                    std::span<const double> detunings_hz);

// Coherent-pulse (Poissonian n_mean) <-> single-photon conversions.
// p_t = 1 - exp(-n_mean p_s) and its inverse; the heralding conversion
// p_h1 = -(p_h_nbar/n_mean) ln(1 - p_t_nbar)/p_t_nbar.
double p_t_from_p_s(double p_s, double n_mean);
double p_s_from_p_t(double p_t_nbar, double n_mean);
double p_h1_from_pulse(double p_h_nbar, double p_t_nbar, double n_mean);
double p_h_nbar_from_p_h1(double p_h1, double p_t_nbar, double n_mean);

}  // namespace cavmem
