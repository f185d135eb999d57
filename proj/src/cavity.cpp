#include "cavmem/cavity.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

namespace cavmem {

DecayRates decay_rates(double length, double finesse, double t_out) {
    if (length <= 0 || finesse <= 0 || t_out <= 0)
        throw std::invalid_argument("decay_rates: non-positive input");
    const double c = PhysicalConstants::rb87().c;
    DecayRates r;
    r.fsr = c / (2.0 * length);
    r.kappa = pi * c / (2.0 * length * finesse);
    r.kappa_out = r.kappa * t_out / (two_pi / finesse);
    return r;
}

GaussianMode resonator_mode(double roc1, double roc2, double length, double wavelength) {
    if (roc1 <= 0 || roc2 <= 0 || length <= 0 || wavelength <= 0)
        throw std::invalid_argument("resonator_mode: non-positive input");
    const double g1 = 1.0 - length / roc1;
    const double g2 = 1.0 - length / roc2;
    const double stab = g1 * g2;
    if (stab <= 0.0 || stab >= 1.0)
        throw std::domain_error("resonator_mode: unstable resonator");
    const double denom = g1 + g2 - 2.0 * g1 * g2;
    GaussianMode m;
    m.waist_position = length * g2 * (1.0 - g1) / denom;  // from mirror 1
    const double zr2 = length * length * stab * (1.0 - stab) / (denom * denom);
    m.rayleigh_range = std::sqrt(zr2);
    m.waist = std::sqrt(wavelength * m.rayleigh_range / pi);
    const double z = length / 2.0 - m.waist_position;
    m.radius_at_centre = m.waist * std::sqrt(1.0 + (z * z) / zr2);
    return m;
}

double mode_radius_at_centre(double roc1, double roc2, double length, double wavelength) {
    return resonator_mode(roc1, roc2, length, wavelength).radius_at_centre;
}

Birefringence birefringence(std::span<const std::pair<double, double>> mirror_rocs,
                            double wavelength, double fsr) {
    double curv = 0.0;
    for (const auto& [rx, ry] : mirror_rocs) {
        if (rx <= 0 || ry <= 0) throw std::invalid_argument("birefringence: non-positive radius");
        curv += 1.0 / rx - 1.0 / ry;
    }
    Birefringence b;
    b.phase = wavelength / two_pi * std::abs(curv);
    b.splitting = b.phase * fsr / two_pi;
    return b;
}

TransmissionSpectrum transmission_spectrum(SpectrumModel model, const SpectrumParams& p,
                                           std::span<const double> grid) {
    if (grid.empty()) throw std::invalid_argument("transmission_spectrum: empty grid");
    if (p.kappa <= 0) throw std::invalid_argument("transmission_spectrum: kappa must be > 0");
    if (p.g < 0) throw std::invalid_argument("transmission_spectrum: negative g");
    TransmissionSpectrum s;
    s.model_tag = model;
    s.detunings.assign(grid.begin(), grid.end());
    s.transmission.reserve(grid.size());
    double peak = 0.0;
    for (double d : grid) {
        double t;
        if (model == SpectrumModel::lorentzian) {
            const double dc = two_pi * (d - p.cavity_detuning);
            t = p.kappa * p.kappa / (p.kappa * p.kappa + dc * dc);
        } else {
            const std::complex<double> i(0.0, 1.0);
            const double da = two_pi * (d - p.atom_detuning);
            const double dc = two_pi * (d - p.cavity_detuning);
            const std::complex<double> num = p.kappa * (p.gamma + i * da);
            const std::complex<double> den =
                (p.kappa + i * dc) * (p.gamma + i * da) + p.g * p.g;
            t = std::norm(num / den);
        }
        s.transmission.push_back(t);
        peak = std::max(peak, t);
    }
    if (peak > 0.0)
        for (double& t : s.transmission) t /= peak;
    return s;
}

double expected_coupling(double mode_radius, double length, double wavelength,
                         double gamma, double relative_dipole) {
    if (mode_radius <= 0 || length <= 0 || wavelength <= 0 || gamma <= 0)
        throw std::invalid_argument("expected_coupling: non-positive input");
    const double c = PhysicalConstants::rb87().c;
    return relative_dipole *
           std::sqrt(3.0 * c * wavelength * wavelength * gamma /
                     (2.0 * pi * pi * mode_radius * mode_radius * length));
}

void CavityParams::derive() {
    const DecayRates r = decay_rates(length, finesse, t_out);
    kappa = r.kappa;
    kappa_out = r.kappa_out;
    fsr = r.fsr;
    if (kappa_out > kappa)
        throw std::domain_error("CavityParams: outcoupler transmission exceeds round-trip loss");
}

}  // namespace cavmem
