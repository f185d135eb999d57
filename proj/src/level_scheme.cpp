#include "cavmem/level_scheme.hpp"

#include <cmath>

namespace cavmem {

namespace {
const double S2 = std::sqrt(2.0);
const double S3 = std::sqrt(3.0);
const double S5 = std::sqrt(5.0);
const double S6 = std::sqrt(6.0);
const double S10 = std::sqrt(10.0);
const double S15 = std::sqrt(15.0);
const double S30 = std::sqrt(30.0);
}  // namespace

// Closed-form values (Clebsch-Gordan x reduced 6j factor for J=1/2 -> J'=3/2,
// I=3/2), cycling-normalized. Signs follow the Condon-Shortley convention.
LevelScheme::LevelScheme() {
    table_ = {
        // F=1 -> F'=1
        {1, -1, 1, -1, 0, -S15 / 6}, {1, -1, 1, 0, +1, -S15 / 6},
        {1, 0, 1, -1, -1, S15 / 6},  {1, 0, 1, +1, +1, -S15 / 6},
        {1, +1, 1, 0, -1, S15 / 6},  {1, +1, 1, +1, 0, S15 / 6},
        // F=1 -> F'=2
        {1, -1, 2, -2, -1, S2 / 2},  {1, -1, 2, -1, 0, 0.5},
        {1, -1, 2, 0, +1, S3 / 6},   {1, 0, 2, -1, -1, 0.5},
        {1, 0, 2, 0, 0, S3 / 3},     {1, 0, 2, +1, +1, 0.5},
        {1, +1, 2, 0, -1, S3 / 6},   {1, +1, 2, +1, 0, 0.5},
        {1, +1, 2, +2, +1, S2 / 2},
        // F=2 -> F'=1
        {2, -2, 1, -1, +1, S10 / 10}, {2, -1, 1, -1, 0, -S5 / 10},
        {2, -1, 1, 0, +1, S5 / 10},   {2, 0, 1, -1, -1, S15 / 30},
        {2, 0, 1, 0, 0, -S15 / 15},   {2, 0, 1, +1, +1, S15 / 30},
        {2, +1, 1, 0, -1, S5 / 10},   {2, +1, 1, +1, 0, -S5 / 10},
        {2, +2, 1, +1, -1, S10 / 10},
        // F=2 -> F'=2 (note |2,0> -> |2',0> vanishes: pi-dark state)
        {2, -2, 2, -2, 0, -S3 / 3},  {2, -2, 2, -1, +1, -S6 / 6},
        {2, -1, 2, -2, -1, S6 / 6},  {2, -1, 2, -1, 0, -S3 / 6},
        {2, -1, 2, 0, +1, -0.5},     {2, 0, 2, -1, -1, 0.5},
        {2, 0, 2, +1, +1, -0.5},     {2, +1, 2, 0, -1, 0.5},
        {2, +1, 2, +1, 0, S3 / 6},   {2, +1, 2, +2, +1, -S6 / 6},
        {2, +2, 2, +1, -1, S6 / 6},  {2, +2, 2, +2, 0, S3 / 3},
        // F=2 -> F'=3
        {2, -2, 3, -3, -1, 1.0},      {2, -2, 3, -2, 0, S3 / 3},
        {2, -2, 3, -1, +1, S15 / 15}, {2, -1, 3, -2, -1, S6 / 3},
        {2, -1, 3, -1, 0, 2 * S30 / 15}, {2, -1, 3, 0, +1, S5 / 5},
        {2, 0, 3, -1, -1, S10 / 5},   {2, 0, 3, 0, 0, S15 / 5},
        {2, 0, 3, +1, +1, S10 / 5},   {2, +1, 3, 0, -1, S5 / 5},
        {2, +1, 3, +1, 0, 2 * S30 / 15}, {2, +1, 3, +2, +1, S6 / 3},
        {2, +2, 3, +1, -1, S15 / 15}, {2, +2, 3, +2, 0, S3 / 3},
        {2, +2, 3, +3, +1, 1.0},
    };
}

const LevelScheme& LevelScheme::rb87_d2() {
    static const LevelScheme s;
    return s;
}

double LevelScheme::amplitude(int fg, int mg, int fe, int me) const {
    for (const auto& t : table_)
        if (t.fg == fg && t.mg == mg && t.fe == fe && t.me == me) return t.amp;
    return 0.0;
}

std::vector<LevelScheme::Branch> LevelScheme::branching(int fe, int me) const {
    std::vector<Branch> out;
    for (const auto& t : table_)
        if (t.fe == fe && t.me == me) out.push_back({t.fg, t.mg, t.q, t.amp * t.amp});
    return out;
}

double LevelScheme::manifold_branching(int fe, int me, int fg) const {
    double p = 0.0;
    for (const auto& t : table_)
        if (t.fe == fe && t.me == me && t.fg == fg) p += t.amp * t.amp;
    return p;
}

double LevelScheme::total_strength(int fe, int me) const {
    double p = 0.0;
    for (const auto& t : table_)
        if (t.fe == fe && t.me == me) p += t.amp * t.amp;
    return p;
}

}  // namespace cavmem
