#pragma once
#include <array>
#include <complex>
#include <span>
#include <string>

// Polarization qubit in the circular {R, L} basis. Conventions:
//   H = (R + L)/sqrt2, V = (R - L)/sqrt2, D = (R + iL)/sqrt2, A = (R - iL)/sqrt2.
// The memory maps R -> |2,+1>, L -> |2,-1> on storage and back on read-out.

namespace cavmem {

using cplx = std::complex<double>;

struct PolarizationState {
    cplx r{0.0, 0.0};
    cplx l{0.0, 0.0};

    double norm2() const { return std::norm(r) + std::norm(l); }
    PolarizationState normalized() const;
    cplx overlap(const PolarizationState& o) const;  // <this|o>

    static PolarizationState R() { return {1.0, 0.0}; }
    static PolarizationState L() { return {0.0, 1.0}; }
    static PolarizationState H();
    static PolarizationState V();
    static PolarizationState D();
    static PolarizationState A();
};

enum class Basis : int { rl = 0, hv = 1, da = 2 };

// Projector state for (basis, outcome); outcome 0 = {R, H, D}, 1 = {L, V, A}.
PolarizationState basis_state(Basis b, int outcome);

// Born probability of an outcome for a pure state (normalizes internally).
double outcome_probability(const PolarizationState& psi, Basis b, int outcome);

// The six axial input states in canonical order R, L, H, V, D, A.
std::span<const PolarizationState> axial_states();
const char* axial_name(std::size_t index);

// Poincare-sphere coordinates (S1, S2, S3) = (p_H - p_V, p_D - p_A, p_R - p_L).
std::array<double, 3> stokes(const PolarizationState& psi);

}  // namespace cavmem
