#pragma once
#include <span>
#include <vector>

// Zeeman-resolved dipole amplitudes of the 87Rb D2 line (5S1/2 F=1,2 ->
// 5P3/2 F'=1,2,3), normalized so the cycling transition |2,+2> -> |3',+3>
// (sigma+) has amplitude 1. With this normalization the summed squared
// amplitude out of every excited sublevel is exactly 1, i.e. all excited
// states decay at the same total rate gamma and amp^2 is directly the
// branching probability of each decay channel.

namespace cavmem {

enum class Pol : int { sigma_minus = -1, pi = 0, sigma_plus = +1 };

struct Transition {
    int fg, mg;   // ground |F, m>
    int fe, me;   // excited |F', m'>
    int q;        // photon spherical component, me - mg
    double amp;   // signed amplitude, cycling-normalized
};

class LevelScheme {
public:
    static const LevelScheme& rb87_d2();

    // Signed amplitude <F',m'| d_q |F,m>; 0 if the transition is forbidden.
    double amplitude(int fg, int mg, int fe, int me) const;

    std::span<const Transition> transitions() const { return table_; }

    struct Branch {
        int fg, mg, q;
        double p;  // decay probability, = amp^2
    };
    // All decay channels out of |F',m'>; probabilities sum to 1.
    std::vector<Branch> branching(int fe, int me) const;

    // Probability that |F',m'> decays into the F=fg ground manifold.
    double manifold_branching(int fe, int me, int fg) const;

    // Sum of amp^2 out of |F',m'> (unit for every state; kept as a check).
    double total_strength(int fe, int me) const;

private:
    LevelScheme();
    std::vector<Transition> table_;
};

}  // namespace cavmem
