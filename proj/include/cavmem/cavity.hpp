#pragma once
#include <span>
#include <utility>
#include <vector>

#include "cavmem/units.hpp"

// Pure functions from fibre-cavity geometry to spectral properties.
// Lengths in m, rates angular (rad/s), plain frequencies in Hz.

namespace cavmem {

struct DecayRates {
    double kappa;      // total field decay, rad/s
    double kappa_out;  // decay through the outcoupling mirror, rad/s
    double fsr;        // free spectral range, Hz
};

// t_out is the outcoupler power transmission (fraction, e.g. 340e-6).
// kappa = pi*c/(2*L*F); kappa_out = kappa * t_out/(2*pi/F), i.e. the
// outcoupler's share of the total round-trip loss 2*pi/F.
DecayRates decay_rates(double length, double finesse, double t_out);

struct GaussianMode {
    double waist;             // 1/e^2 field radius at the waist, m
    double waist_position;    // distance of the waist from mirror 1, m
    double radius_at_centre;  // mode radius at z = L/2, m
    double rayleigh_range;    // m
};

// Standard two-mirror resonator relations (g1 = 1 - L/R1, g2 = 1 - L/R2).
GaussianMode resonator_mode(double roc1, double roc2, double length, double wavelength);
double mode_radius_at_centre(double roc1, double roc2, double length, double wavelength);

struct Birefringence {
    double phase;      // differential round-trip phase, rad
    double splitting;  // polarization eigenmode splitting, Hz
};

// phase = (lambda/2pi) * sum over mirrors of (1/R_x - 1/R_y);
// splitting = phase * fsr / (2pi)  (linear small-phase relation).
Birefringence birefringence(std::span<const std::pair<double, double>> mirror_rocs,
                            double wavelength, double fsr);

enum class SpectrumModel { lorentzian, normal_mode };

struct SpectrumParams {
    double kappa = 0.0;           // rad/s
    double g = 0.0;               // rad/s
    double gamma = 0.0;           // rad/s
    double atom_detuning = 0.0;   // Hz
    double cavity_detuning = 0.0; // Hz
};

struct TransmissionSpectrum {
    std::vector<double> detunings;     // Hz, strictly increasing
    std::vector<double> transmission;  // peak-normalized
    SpectrumModel model_tag = SpectrumModel::lorentzian;
};

// lorentzian: T ~ kappa^2/(kappa^2 + (2pi(D - Dc))^2)
// normal_mode: T ~ |kappa(gamma + i da)/((kappa + i dc)(gamma + i da) + g^2)|^2
// with da, dc the angular detunings from atom and cavity. Peak-normalized.
TransmissionSpectrum transmission_spectrum(SpectrumModel model, const SpectrumParams& p,
                                           std::span<const double> grid);

// Geometric single-atom coupling estimate for a transition of given relative
// dipole strength: g = d_rel * sqrt(3 c lambda^2 gamma / (2 pi^2 w^2 L)).
double expected_coupling(double mode_radius, double length, double wavelength,
                         double gamma, double relative_dipole);

// One fibre cavity: geometry plus derived spectral numbers.
struct CavityParams {
    double length = 0.0;    // m
    double finesse = 0.0;
    double roc_out_x = 0.0, roc_out_y = 0.0;    // outcoupler radii, m
    double roc_back_x = 0.0, roc_back_y = 0.0;  // back mirror radii, m
    double t_out = 0.0;     // outcoupler transmission (fraction)
    double t_back = 0.0;    // back mirror transmission (fraction)

    // derived (populated by derive())
    double kappa = 0.0;      // rad/s
    double kappa_out = 0.0;  // rad/s
    double fsr = 0.0;        // Hz

    void derive();  // fills the derived fields; throws on invalid geometry
    std::vector<std::pair<double, double>> mirror_rocs() const {
        return {{roc_out_x, roc_out_y}, {roc_back_x, roc_back_y}};
    }
};

}  // namespace cavmem
