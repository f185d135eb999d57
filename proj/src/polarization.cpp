#include "cavmem/polarization.hpp"

#include <cmath>
#include <stdexcept>

namespace cavmem {

namespace {
const double isq2 = 1.0 / std::sqrt(2.0);
}

PolarizationState PolarizationState::normalized() const {
    const double n = std::sqrt(norm2());
    if (n <= 0.0) throw std::domain_error("PolarizationState: zero norm");
    return {r / n, l / n};
}

cplx PolarizationState::overlap(const PolarizationState& o) const {
    return std::conj(r) * o.r + std::conj(l) * o.l;
}

PolarizationState PolarizationState::H() { return {isq2, isq2}; }
PolarizationState PolarizationState::V() { return {isq2, -isq2}; }
PolarizationState PolarizationState::D() { return {isq2, cplx(0.0, isq2)}; }
PolarizationState PolarizationState::A() { return {isq2, cplx(0.0, -isq2)}; }

PolarizationState basis_state(Basis b, int outcome) {
    if (outcome != 0 && outcome != 1) throw std::invalid_argument("basis_state: outcome must be 0/1");
    switch (b) {
        case Basis::rl: return outcome == 0 ? PolarizationState::R() : PolarizationState::L();
        case Basis::hv: return outcome == 0 ? PolarizationState::H() : PolarizationState::V();
        case Basis::da: return outcome == 0 ? PolarizationState::D() : PolarizationState::A();
    }
    throw std::invalid_argument("basis_state: unknown basis");
}

double outcome_probability(const PolarizationState& psi, Basis b, int outcome) {
    const PolarizationState n = psi.normalized();
    const PolarizationState proj = basis_state(b, outcome);
    return std::norm(proj.overlap(n));
}

std::span<const PolarizationState> axial_states() {
    static const std::array<PolarizationState, 6> s = {
        PolarizationState::R(), PolarizationState::L(), PolarizationState::H(),
        PolarizationState::V(), PolarizationState::D(), PolarizationState::A()};
    return s;
}

const char* axial_name(std::size_t index) {
    static const char* names[6] = {"R", "L", "H", "V", "D", "A"};
    if (index >= 6) throw std::out_of_range("axial_name");
    return names[index];
}

std::array<double, 3> stokes(const PolarizationState& psi) {
    return {outcome_probability(psi, Basis::hv, 0) - outcome_probability(psi, Basis::hv, 1),
            outcome_probability(psi, Basis::da, 0) - outcome_probability(psi, Basis::da, 1),
            outcome_probability(psi, Basis::rl, 0) - outcome_probability(psi, Basis::rl, 1)};
}

}  // namespace cavmem
