#pragma once
#include <numbers>

// Unit conventions used throughout the library:
//   lengths in m, times in s, magnetic fields in gauss (G).
//   Plain (ordinary) frequencies -- detunings, free spectral ranges, Larmor
//   frequencies -- are in Hz.
//   Decay and coupling rates (kappa, gamma, g, Purcell rates) are angular,
//   rad/s; field amplitudes decay as exp(-rate*t).
// Config files use scaled keys (_um, _mhz, _ns, _mg, ...); parsing converts.

namespace cavmem {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline constexpr double um = 1e-6;  // m
inline constexpr double nm = 1e-9;  // m
inline constexpr double ns = 1e-9;  // s
inline constexpr double us = 1e-6;  // s
inline constexpr double mhz = 1e6;  // Hz
inline constexpr double ghz = 1e9;  // Hz

// rad/s for a rate quoted as nu in MHz (rate = 2*pi*nu)
constexpr double rate_from_mhz(double nu_mhz) { return two_pi * nu_mhz * mhz; }
constexpr double rate_to_mhz(double rate) { return rate / (two_pi * mhz); }

struct PhysicalConstants {
    double c = 299792458.0;          // m/s
    double lambda = 780.24e-9;       // D2 wavelength, m
    double gamma = two_pi * 3.03e6;  // excited-state amplitude decay, rad/s
                                     // (half the 6.06 MHz population linewidth)
    double mu_b_over_h = 1.3996e6;   // Bohr magneton, Hz/G
    double g_f2 = 0.5;               // Lande factor of the F=2 ground manifold

    static const PhysicalConstants& rb87();
};

inline const PhysicalConstants& PhysicalConstants::rb87() {
    static const PhysicalConstants k{};
    return k;
}

}  // namespace cavmem
