#include "doctest.h"

#include <cmath>
#include <map>

#include "cavmem/level_scheme.hpp"

using namespace cavmem;

// ---------------------------------------------------------------------------
// Independent oracle: Clebsch-Gordan and 6j symbols from Racah's closed-form
// sums, written against doubled (integer) angular momentum arguments. This is
// a from-scratch implementation kept deliberately separate from the library.
// ---------------------------------------------------------------------------
namespace oracle {

static double fact(int n) {
    static double tbl[71];
    static bool init = false;
    if (!init) {
        tbl[0] = 1.0;
        for (int i = 1; i <= 70; ++i) tbl[i] = tbl[i - 1] * i;
        init = true;
    }
    REQUIRE(n >= 0);
    REQUIRE(n <= 70);
    return tbl[n];
}

// factorial of a doubled argument (must be an even non-negative integer)
static double dfact(int tw) {
    REQUIRE(tw >= 0);
    REQUIRE(tw % 2 == 0);
    return fact(tw / 2);
}

static double triangle(int ta, int tb, int tc) {
    return dfact(ta + tb - tc) * dfact(ta - tb + tc) * dfact(-ta + tb + tc) /
           dfact(ta + tb + tc + 2);
}

// <j1 m1 j2 m2 | J M>, all arguments doubled
static double cg(int tj1, int tm1, int tj2, int tm2, int tJ, int tM) {
    if (tm1 + tm2 != tM) return 0.0;
    if (tJ < std::abs(tj1 - tj2) || tJ > tj1 + tj2) return 0.0;
    if (std::abs(tm1) > tj1 || std::abs(tm2) > tj2 || std::abs(tM) > tJ) return 0.0;
    const double pre =
        std::sqrt((tJ + 1.0) * triangle(tj1, tj2, tJ) * dfact(tJ + tM) * dfact(tJ - tM) *
                  dfact(tj1 - tm1) * dfact(tj1 + tm1) * dfact(tj2 - tm2) * dfact(tj2 + tm2));
    double sum = 0.0;
    for (int tk = 0; tk <= tj1 + tj2 - tJ; tk += 2) {
        int a = tj1 + tj2 - tJ - tk;
        int b = tj1 - tm1 - tk;
        int c = tj2 + tm2 - tk;
        int d = tJ - tj2 + tm1 + tk;
        int e = tJ - tj1 - tm2 + tk;
        if (a < 0 || b < 0 || c < 0 || d < 0 || e < 0) continue;
        double term = 1.0 / (dfact(tk) * dfact(a) * dfact(b) * dfact(c) * dfact(d) * dfact(e));
        sum += ((tk / 2) % 2 == 0 ? term : -term);
    }
    return pre * sum;
}

// {a b c; d e f}, all arguments doubled
static double sixj(int ta, int tb, int tc, int td, int te, int tf) {
    auto tri_ok = [](int x, int y, int z) {
        return z >= std::abs(x - y) && z <= x + y && (x + y + z) % 2 == 0;
    };
    if (!tri_ok(ta, tb, tc) || !tri_ok(ta, te, tf) || !tri_ok(td, tb, tf) ||
        !tri_ok(td, te, tc))
        return 0.0;
    const double pre = std::sqrt(triangle(ta, tb, tc) * triangle(ta, te, tf) *
                                 triangle(td, tb, tf) * triangle(td, te, tc));
    const int k_min = std::max(std::max(ta + tb + tc, ta + te + tf),
                               std::max(td + tb + tf, td + te + tc));
    const int k_max = std::min(std::min(ta + tb + td + te, tb + tc + te + tf),
                               ta + tc + td + tf);
    double sum = 0.0;
    for (int tk = k_min; tk <= k_max; tk += 2) {
        double term = dfact(tk + 2) /
                      (dfact(tk - ta - tb - tc) * dfact(tk - ta - te - tf) *
                       dfact(tk - td - tb - tf) * dfact(tk - td - te - tc) *
                       dfact(ta + tb + td + te - tk) * dfact(tb + tc + te + tf - tk) *
                       dfact(ta + tc + td + tf - tk));
        sum += ((tk / 2) % 2 == 0 ? term : -term);
    }
    return pre * sum;
}

// dipole amplitude for 5S1/2 (J=1/2) -> 5P3/2 (J'=3/2), I=3/2, cycling-normalized
static double amp(int fg, int mg, int fe, int me) {
    const int q = me - mg;
    if (std::abs(q) > 1) return 0.0;
    const int tI = 3, tJ = 1, tJp = 3;
    auto raw = [&](int F, int m, int Fp, int mp) {
        double c = cg(2 * F, 2 * m, 2, 2 * (mp - m), 2 * Fp, 2 * mp);
        // (-1)^(F'+J+1+I) with J+1+I = 3
        double phase = ((Fp + 3) % 2 == 0) ? 1.0 : -1.0;
        double red = phase * std::sqrt((2.0 * F + 1.0) * (tJp + 1.0)) *
                     sixj(tJ, tJp, 2, 2 * Fp, 2 * F, tI);
        return c * red;
    };
    return raw(fg, mg, fe, me) / raw(2, 2, 3, 3);
}

}  // namespace oracle

TEST_CASE("oracle sanity: known closed-form symbols") {
    // <1 1 1 -1 | 0 0> = 1/sqrt(3)
    CHECK(oracle::cg(2, 2, 2, -2, 0, 0) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
    // <1/2 1/2 1/2 -1/2 | 1 0> = 1/sqrt(2)
    CHECK(oracle::cg(1, 1, 1, -1, 2, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    // {1/2 1/2 1; 1/2 1/2 1} = 1/6
    CHECK(oracle::sixj(1, 1, 2, 1, 1, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    // {1 1 1; 1 1 1} = 1/6
    CHECK(oracle::sixj(2, 2, 2, 2, 2, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("every tabulated amplitude matches the Racah oracle") {
    const auto& ls = LevelScheme::rb87_d2();
    CHECK(ls.transitions().size() == 51);
    for (const auto& t : ls.transitions()) {
        CHECK(t.q == t.me - t.mg);
        double want = oracle::amp(t.fg, t.mg, t.fe, t.me);
        INFO("F=", t.fg, " m=", t.mg, " -> F'=", t.fe, " m'=", t.me);
        CHECK(t.amp == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("no allowed transition is missing from the table") {
    const auto& ls = LevelScheme::rb87_d2();
    for (int fg : {1, 2})
        for (int mg = -fg; mg <= fg; ++mg)
            for (int fe : {1, 2, 3})
                for (int me = -fe; me <= fe; ++me) {
                    if (std::abs(me - mg) > 1) continue;
                    double want = oracle::amp(fg, mg, fe, me);
                    double got = ls.amplitude(fg, mg, fe, me);
                    CHECK(got == doctest::Approx(want).epsilon(1e-12));
                }
}

TEST_CASE("uniform total decay strength out of every excited sublevel") {
    const auto& ls = LevelScheme::rb87_d2();
    for (int fe : {1, 2, 3})
        for (int me = -fe; me <= fe; ++me)
            CHECK(ls.total_strength(fe, me) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("manifold branching fractions") {
    const auto& ls = LevelScheme::rb87_d2();
    // F'=2 decays to F=2 with probability exactly 1/2 for every m'
    for (int me = -2; me <= 2; ++me) {
        CHECK(ls.manifold_branching(2, me, 2) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(ls.manifold_branching(2, me, 1) == doctest::Approx(0.5).epsilon(1e-12));
    }
    // F'=1 -> F=2 is 1/6; F'=3 -> F=2 is 1 (closed cycling manifold)
    for (int me = -1; me <= 1; ++me)
        CHECK(ls.manifold_branching(1, me, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    for (int me = -3; me <= 3; ++me)
        CHECK(ls.manifold_branching(3, me, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("protocol transition amplitudes (frozen)") {
    const auto& ls = LevelScheme::rb87_d2();
    // write arm: |1,0> -> |2',+-1> via sigma+- , both +1/2
    CHECK(ls.amplitude(1, 0, 2, +1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ls.amplitude(1, 0, 2, -1) == doctest::Approx(0.5).epsilon(1e-12));
    // herald arm: |2,+-1> -> |2',+-1> pi, antisymmetric +-1/sqrt(12)
    CHECK(ls.amplitude(2, +1, 2, +1) == doctest::Approx(std::sqrt(1.0 / 12.0)).epsilon(1e-12));
    CHECK(ls.amplitude(2, -1, 2, -1) == doctest::Approx(-std::sqrt(1.0 / 12.0)).epsilon(1e-12));
    // pi couplings at the edge, |2,+-2> -> |2',+-2>: +-1/sqrt(3)
    CHECK(ls.amplitude(2, +2, 2, +2) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-12));
    CHECK(ls.amplitude(2, -2, 2, -2) == doctest::Approx(-std::sqrt(1.0 / 3.0)).epsilon(1e-12));
    // pi-dark clock state
    CHECK(ls.amplitude(2, 0, 2, 0) == 0.0);
    // cycling normalization anchor
    CHECK(ls.amplitude(2, +2, 3, +3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("decay table of |2',+1> (frozen)") {
    const auto& ls = LevelScheme::rb87_d2();
    std::map<std::pair<int, int>, double> p;
    for (const auto& b : ls.branching(2, +1)) p[{b.fg, b.mg}] += b.p;
    CHECK(p[{1, 0}] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p[{1, 1}] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p[{2, 0}] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p[{2, 1}] == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
    CHECK(p[{2, 2}] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}
