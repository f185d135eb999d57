#include "doctest.h"

#include <cmath>

#include "cavmem/config.hpp"
#include "cavmem/units.hpp"

using namespace cavmem;

TEST_CASE("default config reproduces the published cavity rates") {
    SystemConfig cfg = default_config();
    CHECK(rate_to_mhz(cfg.qubit_cavity.kappa) == doctest::Approx(31.7).epsilon(0.005));
    CHECK(rate_to_mhz(cfg.herald_cavity.kappa) == doctest::Approx(59.8).epsilon(0.005));
    CHECK(cfg.qubit_cavity.kappa_out / cfg.qubit_cavity.kappa ==
          doctest::Approx(0.790045).epsilon(1e-6));
    CHECK(cfg.herald_cavity.kappa_out / cfg.herald_cavity.kappa ==
          doctest::Approx(0.848487).epsilon(1e-6));
}

TEST_CASE("protocol couplings carry reduction and dipole weights (frozen)") {
    SystemConfig cfg = default_config();
    // 0.6 * 63.141743 * 1/2 and 0.6 * 84.945701 * 1/sqrt(12), in 2pi MHz
    CHECK(rate_to_mhz(cfg.g_qubit_protocol()) == doctest::Approx(18.942523).epsilon(1e-6));
    CHECK(rate_to_mhz(cfg.g_herald_protocol()) == doctest::Approx(14.713027).epsilon(1e-6));
}

TEST_CASE("larmor frequency of the guided configuration") {
    SystemConfig cfg = default_config();
    cfg.b_field = 44e-3;  // 44 mG
    CHECK(cfg.larmor_frequency() == doctest::Approx(30791.2).epsilon(1e-6));
    CHECK(2.0 * cfg.larmor_frequency() == doctest::Approx(62e3).epsilon(0.05));
}

TEST_CASE("config round trip is lossless and byte-stable") {
    SystemConfig cfg = default_config();
    std::string doc = emit_config(cfg);
    SystemConfig back = parse_config(doc);
    CHECK(emit_config(back) == doc);
    // spot-check a few reparsed values
    CHECK(back.mu_fc_sq == cfg.mu_fc_sq);
    CHECK(back.g_qubit == cfg.g_qubit);
    CHECK(back.write_pulse.duration == cfg.write_pulse.duration);
    CHECK(back.herald_chain.size() == cfg.herald_chain.size());
    CHECK(back.herald_chain[0].name == "mirror_escape");
}

TEST_CASE("invalid documents are rejected with named errors") {
    SystemConfig cfg = default_config();
    std::string doc = emit_config(cfg);

    // out-of-range overlap
    std::string bad1 = doc;
    bad1.replace(bad1.find("mu_fc_sq = 0.8"), 14, "mu_fc_sq = 1.2");
    CHECK_THROWS_AS(parse_config(bad1), ConfigError);

    // missing required key
    std::string bad2 = doc;
    auto pos = bad2.find("mu_fc_sq = 0.8");
    bad2.erase(pos, bad2.find('\n', pos) - pos + 1);
    CHECK_THROWS_WITH_AS(parse_config(bad2),
                         doctest::Contains("missing required key overlaps.mu_fc_sq"),
                         ConfigError);

    // unknown key
    CHECK_THROWS_WITH_AS(parse_config(doc + "\n[overlaps]\nbogus_key = 1\n"),
                         doctest::Contains("unknown key"), ConfigError);
    // duplicate key
    CHECK_THROWS_WITH_AS(parse_config(doc + "\n[overlaps]\nmu_fc_sq = 0.8\n"),
                         doctest::Contains("duplicate"), ConfigError);
    std::string bad3 = doc;
    bad3.replace(bad3.find("mu_rc_sq"), 8, "mu_rq_sq");
    CHECK_THROWS_AS(parse_config(bad3), ConfigError);

    // eta inconsistent with the chain product beyond declared tolerance
    std::string bad4 = doc;
    bad4.replace(bad4.find("eta = 0.3"), 9, "eta = 0.6");
    CHECK_THROWS_WITH_AS(parse_config(bad4), doctest::Contains("eta inconsistent"), ConfigError);

    // malformed number
    std::string bad5 = doc;
    bad5.replace(bad5.find("reduction = 0.6"), 15, "reduction = x.6");
    CHECK_THROWS_AS(parse_config(bad5), ConfigError);
}

TEST_CASE("pulse envelopes integrate to one") {
    SystemConfig cfg = default_config();
    for (const PulseEnvelope* p : {&cfg.write_pulse, &cfg.read_pulse}) {
        const int n = 20000;
        double integral = 0.0;
        for (int i = 0; i < n; ++i) {
            double t = (i + 0.5) * p->duration / n;
            integral += p->intensity(t) * p->duration / n;
        }
        CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(p->intensity(-1e-9) == 0.0);
        CHECK(p->intensity(p->duration + 1e-9) == 0.0);
    }
    // quasi-rectangular plateau sits at 1/(T - rise)
    const PulseEnvelope& w = cfg.write_pulse;
    CHECK(w.intensity(w.duration / 2) ==
          doctest::Approx(1.0 / (w.duration - w.rise_time)).epsilon(1e-12));

    // smooth default shape: one sine-squared arch
    PulseEnvelope s;
    s.shape = PulseEnvelope::Shape::smooth;
    s.duration = 700 * ns;
    s.n_mean = 1.0;
    for (int i = 0; i <= 100; ++i) {
        double v = std::sin(pi * i / 100.0);
        s.samples.push_back(v * v);
    }
    double integral = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i)
        integral += s.intensity((i + 0.5) * s.duration / n) * s.duration / n;
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s.intensity(s.duration / 2) > s.intensity(s.duration / 10));
}

TEST_CASE("pulse validation catches malformed envelopes") {
    PulseEnvelope p;
    p.duration = 0.0;
    CHECK_THROWS_AS(p.validate("x"), ConfigError);
    p.duration = 100 * ns;
    p.rise_time = 80 * ns;  // > duration/2
    CHECK_THROWS_AS(p.validate("x"), ConfigError);
    p.rise_time = 10 * ns;
    p.n_mean = -1.0;
    CHECK_THROWS_AS(p.validate("x"), ConfigError);
    p.n_mean = 0.5;
    CHECK_NOTHROW(p.validate("x"));
}
