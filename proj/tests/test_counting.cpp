#include "doctest.h"

#include <cmath>
#include <vector>

#include "cavmem/config.hpp"
#include "cavmem/counting.hpp"
#include "cavmem/dynamics.hpp"
#include "cavmem/rng.hpp"
#include "cavmem/storage_model.hpp"

using namespace cavmem;

namespace {

// Forge a dataset with the given per-trial herald/readout click lists; the
// config snapshot carries the write n_mean the estimators will parse back.
ClickDataset forge(double n_mean, std::size_t n_trials,
                   const std::vector<std::size_t>& herald_ids,
                   const std::vector<std::size_t>& readout_ids, Basis basis,
                   int outcome) {
    SystemConfig cfg = default_config();
    cfg.write_pulse.n_mean = n_mean;
    ClickDataset ds;
    ds.config_snapshot = emit_config(cfg);
    ds.seed = 1;
    ds.plan.do_readout = !readout_ids.empty();
    ds.plan.readout_basis = basis;
    ds.plan.input_override = PolarizationState::H();
    std::vector<bool> h(n_trials, false), r(n_trials, false);
    for (std::size_t i : herald_ids) h[i] = true;
    for (std::size_t i : readout_ids) r[i] = true;
    for (std::size_t i = 0; i < n_trials; ++i) {
        TrialRecord t;
        t.trial_id = i;
        t.input = PolarizationState::H();
        t.terminal = TerminalChannel::reflected_or_lost;
        if (h[i]) {
            t.herald_click = ClickEvent{100e-9, 0};
            t.terminal = TerminalChannel::heralded;
        }
        if (r[i]) {
            t.readout_click = ReadoutClick{150e-9, basis, outcome};
            t.terminal = TerminalChannel::readout_emitted;
        }
        ds.trials.push_back(t);
    }
    return ds;
}

}  // namespace

TEST_CASE("bernoulli_ci: closed-form values and degenerate flagging") {
    const BernoulliEstimate a = bernoulli_ci(94, 6);
    CHECK(a.p == doctest::Approx(0.94).epsilon(1e-12));
    CHECK(a.sigma == doctest::Approx(0.023748684).epsilon(1e-6));
    CHECK(!a.degenerate);

    const BernoulliEstimate b = bernoulli_ci(50, 50);
    CHECK(b.p == 0.5);
    CHECK(b.sigma == doctest::Approx(0.05).epsilon(1e-12));

    const BernoulliEstimate c = bernoulli_ci(17, 0);
    CHECK(c.p == 1.0);
    CHECK(c.sigma == 0.0);
    CHECK(c.degenerate);

    CHECK_THROWS_AS(bernoulli_ci(0, 0), std::invalid_argument);
    CHECK_THROWS_AS(bernoulli_ci(-1, 2), std::invalid_argument);

    // sigma is maximal at p = 1/2 for fixed total
    const double mid = bernoulli_ci(50, 50).sigma;
    for (int k : {10, 30, 70, 90})
        CHECK(bernoulli_ci(k, 100 - k).sigma < mid);
}

TEST_CASE("aggregate_atoms: closed form") {
    const AtomSummary one{0.93, 0.012, 37.0};
    const auto r1 = aggregate_atoms(std::vector<AtomSummary>{one},
                                    AggregateMode::closed_form);
    CHECK(r1.mean == doctest::Approx(0.93).epsilon(1e-15));
    CHECK(r1.sigma == doctest::Approx(0.012).epsilon(1e-12));

    const std::vector<AtomSummary> two = {{0.90, 0.01, 50.0}, {0.96, 0.01, 50.0}};
    const auto r2 = aggregate_atoms(two, AggregateMode::closed_form);
    CHECK(r2.mean == doctest::Approx(0.93).epsilon(1e-15));
    // total spread: within (0.01) plus between (0.03) in quadrature
    CHECK(r2.sigma == doctest::Approx(std::sqrt(0.01 * 0.01 + 0.03 * 0.03)).epsilon(1e-12));

    // weighting moves the mean toward the heavy atom
    const std::vector<AtomSummary> skew = {{0.90, 0.01, 90.0}, {0.96, 0.01, 10.0}};
    CHECK(aggregate_atoms(skew, AggregateMode::closed_form).mean ==
          doctest::Approx(0.906).epsilon(1e-12));

    CHECK_THROWS_AS(aggregate_atoms(std::vector<AtomSummary>{},
                                    AggregateMode::closed_form),
                    std::invalid_argument);
    CHECK_THROWS_AS(aggregate_atoms(std::vector<AtomSummary>{{0.9, 0.01, 0.0}},
                                    AggregateMode::closed_form),
                    std::invalid_argument);
    CHECK_THROWS_AS(aggregate_atoms(std::vector<AtomSummary>{{0.9, -0.01, 5.0}},
                                    AggregateMode::closed_form),
                    std::invalid_argument);
}

TEST_CASE("aggregate_atoms: monte carlo agrees with the closed form") {
    std::vector<AtomSummary> atoms = {
        {0.947, 0.008, 400.0}, {0.921, 0.015, 150.0}, {0.956, 0.005, 800.0},
        {0.902, 0.020, 60.0},  {0.938, 0.011, 250.0},
    };
    const auto cf = aggregate_atoms(atoms, AggregateMode::closed_form);
    Rng rng(2024);
    CHECK_THROWS_AS(aggregate_atoms(atoms, AggregateMode::monte_carlo),
                    std::invalid_argument);
    const auto mc = aggregate_atoms(atoms, AggregateMode::monte_carlo, &rng);
    double w = 0.0;
    for (const auto& a : atoms) w += a.weight;
    // sampling error of the pooled mean ~ sigma/sqrt(W)
    const double se = cf.sigma / std::sqrt(w);
    CHECK(std::abs(mc.mean - cf.mean) < 3.5 * se);
    // sample std of a normal has relative error ~ 1/sqrt(2W)
    CHECK(std::abs(mc.sigma - cf.sigma) < 3.5 * cf.sigma / std::sqrt(2.0 * w));
}

TEST_CASE("g2: deterministic two-click trials put mass only at the separation") {
    const double s = 200e-9, w = 50e-9;
    std::vector<std::vector<double>> trials(4000, std::vector<double>{100e-9, 100e-9 + s});
    const ScanResult r = g2(trials, 400e-9, w);
    REQUIRE(r.size() == 8);
    // lag 0 bin: no same-trial pairs, plenty of adjacent coincidences
    CHECK(r.estimate[0] == 0.0);
    // the separation bin: one same-trial pair per trial against two directed
    // adjacent-trial coincidences; identical trials are as correlated with
    // their neighbours as with themselves -> exactly 1
    const std::size_t b = static_cast<std::size_t>(s / w);
    CHECK(r.estimate[b] == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t i = 0; i < r.size(); ++i)
        if (i != b) CHECK(r.estimate[i] == 0.0);
}

TEST_CASE("g2: homogeneous Poisson stream is flat at unity") {
    Rng rng(11);
    const double T = 1e-6, rate = 3e6;
    std::vector<std::vector<double>> trials(20000);
    for (auto& t : trials) {
        const int k = static_cast<int>(rng.poisson(rate * T));
        for (int i = 0; i < k; ++i) t.push_back(rng.uniform() * T);
    }
    const ScanResult r = g2(trials, 500e-9, 100e-9);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CAPTURE(i);
        REQUIRE(r.sigma[i] > 0.0);
        CHECK(std::abs(r.estimate[i] - 1.0) < 4.0 * r.sigma[i]);
    }
}

TEST_CASE("g2: invariant under random thinning") {
    Rng rng(13);
    // bunched stream: pairs at a common random centre
    std::vector<std::vector<double>> full(30000);
    for (auto& t : full) {
        const double c = 0.2e-6 + 0.5e-6 * rng.uniform();
        t = {c, c + 150e-9};
    }
    std::vector<std::vector<double>> thinned = full;
    for (auto& t : thinned) {
        std::vector<double> kept;
        for (double x : t)
            if (rng.bernoulli(0.4)) kept.push_back(x);
        t = kept;
    }
    const ScanResult a = g2(full, 400e-9, 100e-9);
    const ScanResult b = g2(thinned, 400e-9, 100e-9);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CAPTURE(i);
        const double tol = 4.0 * std::sqrt(a.sigma[i] * a.sigma[i] +
                                           b.sigma[i] * b.sigma[i]) +
                           1e-12;
        CHECK(std::abs(a.estimate[i] - b.estimate[i]) < tol);
    }
}

TEST_CASE("g2: dataset herald stream of a single-emitter run is antibunched") {
    SystemConfig cfg = default_config();
    TrialPlan plan;  // write-only
    const ClickDataset ds = run_trials(cfg, plan, 100000, 301);
    std::size_t clicks = 0;
    for (const auto& t : ds.trials)
        if (t.herald_click) ++clicks;
    REQUIRE(clicks > 2000);
    const ScanResult r = g2(ds, ClickStream::herald, 400e-9, 100e-9);
    // at most one herald per trial: zero same-trial coincidences at any lag
    CHECK(r.estimate[0] < 0.2);
    CHECK(r.estimate[0] == 0.0);
    CHECK_THROWS_AS(g2(ds, ClickStream::readout, 400e-9, 100e-9),
                    std::invalid_argument);
}

TEST_CASE("histogram: envelope decays and mass is conserved") {
    SystemConfig cfg = default_config();
    TrialPlan plan;
    const ClickDataset ds = run_trials(cfg, plan, 100000, 77);
    const double w = 100e-9;
    const ScanResult h = histogram(ds, ClickStream::herald, w);
    std::size_t clicks = 0;
    for (const auto& t : ds.trials)
        if (t.herald_click) ++clicks;
    double mass = 0.0;
    for (double v : h.estimate) mass += v;
    CHECK(mass == doctest::Approx(double(clicks) / ds.trials.size()).epsilon(1e-12));

    // after the turn-on ramp, the no-jump decay makes successive bins smaller
    REQUIRE(h.size() >= 7);
    for (std::size_t b = 1; b + 1 < 7; ++b) {
        const double tol = 3.5 * std::hypot(h.sigma[b], h.sigma[b + 1]);
        CHECK(h.estimate[b + 1] < h.estimate[b] + tol);
    }
    CHECK(h.estimate[1] > h.estimate[6]);

    // stream with no clicks: all-zero histogram
    const ScanResult empty = histogram(ds, ClickStream::readout, w);
    REQUIRE(empty.size() == 1);
    CHECK(empty.estimate[0] == 0.0);

    CHECK_THROWS_AS(histogram(ds, ClickStream::herald, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(histogram(ClickDataset{}, ClickStream::herald, w),
                    std::invalid_argument);
}

TEST_CASE("condition_on_herald: filtering and boundary cases") {
    const ClickDataset ds = forge(0.5, 10, {1, 4, 7}, {}, Basis::hv, 0);
    const Conditioned c = condition_on_herald(ds);
    CHECK(c.data.trials.size() == 3);
    CHECK(c.retained_fraction == doctest::Approx(0.3).epsilon(1e-12));
    for (const auto& t : c.data.trials) CHECK(t.herald_click.has_value());

    const Conditioned none = condition_on_herald(forge(0.5, 5, {}, {}, Basis::hv, 0));
    CHECK(none.data.trials.empty());
    CHECK(none.retained_fraction == 0.0);

    const ClickDataset all = forge(0.5, 5, {0, 1, 2, 3, 4}, {}, Basis::hv, 0);
    const Conditioned ident = condition_on_herald(all);
    CHECK(ident.retained_fraction == 1.0);
    CHECK(ident.data.trials.size() == all.trials.size());
}

TEST_CASE("estimate_probabilities: recovers the generator truth") {
    // truth: p_s = 0.52, write n = 0.5 -> p_t known; herald p_h1 = 0.11
    const double p_s_true = 0.52, n_w = 0.5, n_ref = 10.0, p_h1_true = 0.11;
    const double p_t_true = p_t_from_p_s(p_s_true, n_w);
    CHECK(p_t_true == doctest::Approx(0.228948414).epsilon(1e-8));
    const double p_t_ref = p_t_from_p_s(p_s_true, n_ref);
    const double ph_w = p_h1_true * p_t_true / p_s_true;
    const double ph_ref = p_h1_true * p_t_ref / p_s_true;

    const std::size_t N = 200000;
    Rng rng(5150);
    std::vector<std::size_t> hw, hr, rw_ids, rr_ids;
    for (std::size_t i = 0; i < N; ++i) {
        if (rng.bernoulli(ph_w)) hw.push_back(i);
        if (rng.bernoulli(ph_ref)) hr.push_back(i);
        // an independent read-out channel proportional to the transfer
        if (rng.bernoulli(0.3 * p_t_true)) rw_ids.push_back(i);
        if (rng.bernoulli(0.3 * p_t_ref)) rr_ids.push_back(i);
    }
    const ClickDataset ds = forge(n_w, N, hw, rw_ids, Basis::hv, 0);
    const ClickDataset ref = forge(n_ref, N, hr, rr_ids, Basis::hv, 0);

    const ProbabilityEstimate e = estimate_probabilities(ds, ref);
    CHECK(e.reference_saturated);
    CHECK(e.reference_transfer == doctest::Approx(p_t_ref).epsilon(5e-3));
    CHECK(std::abs(e.p_t_nbar - p_t_true) < 3.0 * e.p_t_sigma);
    CHECK(std::abs(e.p_s - p_s_true) < 3.0 * e.p_s_sigma);
    CHECK(std::abs(e.p_h1 - p_h1_true) < 3.0 * e.p_h1_sigma);
    CHECK(e.p_t_sigma > 0.0);
    CHECK(e.p_t_sigma < 0.02);

    // consistency: the read-out stream estimates the same transfer
    const ProbabilityEstimate er = estimate_probabilities(ds, ref, ClickStream::readout);
    CHECK(std::abs(er.p_t_nbar - e.p_t_nbar) <
          3.0 * std::hypot(er.p_t_sigma, e.p_t_sigma));

    // zero write counts: probabilities 0 with a one-sided error scale
    const ClickDataset zero = forge(n_w, 1000, {}, {}, Basis::hv, 0);
    const ProbabilityEstimate ez = estimate_probabilities(zero, ref);
    CHECK(ez.p_t_nbar == 0.0);
    CHECK(ez.p_s == 0.0);
    CHECK(ez.p_h1 == 0.0);
    CHECK(ez.p_t_sigma > 0.0);
    CHECK(ez.p_h1_sigma > 0.0);

    CHECK_THROWS_AS(estimate_probabilities(ds, zero), std::invalid_argument);
}

TEST_CASE("count table: indexing, totals, and CSV round trip") {
    CHECK(canonical_state_index(PolarizationState::R()) == 0);
    CHECK(canonical_state_index(PolarizationState::L()) == 1);
    CHECK(canonical_state_index(PolarizationState::H()) == 2);
    CHECK(canonical_state_index(PolarizationState::V()) == 3);
    CHECK(canonical_state_index(PolarizationState::D()) == 4);
    CHECK(canonical_state_index(PolarizationState::A()) == 5);
    // a global phase does not change the identification
    PolarizationState d = PolarizationState::D();
    d.r *= cplx(0.0, 1.0);
    d.l *= cplx(0.0, 1.0);
    CHECK(canonical_state_index(d) == 4);
    PolarizationState odd;
    odd.r = 0.9;
    odd.l = cplx(0.0, std::sqrt(1.0 - 0.81));
    CHECK_THROWS_AS(canonical_state_index(odd), std::invalid_argument);

    CHECK(outcome_state_index(Basis::rl, 0) == 0);
    CHECK(outcome_state_index(Basis::rl, 1) == 1);
    CHECK(outcome_state_index(Basis::hv, 0) == 2);
    CHECK(outcome_state_index(Basis::hv, 1) == 3);
    CHECK(outcome_state_index(Basis::da, 0) == 4);
    CHECK(outcome_state_index(Basis::da, 1) == 5);
    CHECK_THROWS_AS(outcome_state_index(Basis::rl, 2), std::invalid_argument);

    CountTable t;
    const ClickDataset ds = forge(0.5, 20, {}, {0, 3, 5, 9}, Basis::hv, 0);
    accumulate_counts(t, 2, ds);  // H row
    const ClickDataset ds2 = forge(0.5, 20, {}, {1, 2}, Basis::hv, 1);
    accumulate_counts(t, 2, ds2);
    CHECK(t.counts[2][2] == 4);
    CHECK(t.counts[2][3] == 2);
    CHECK(t.row_total(2) == 6);
    CHECK(t.parallel(2) == 4);
    CHECK(t.perpendicular(2) == 2);

    const std::string csv = t.to_csv();
    const CountTable back = CountTable::from_csv(csv);
    CHECK(back.counts == t.counts);
    CHECK(back.to_csv() == csv);

    CountTable bad;
    bad.counts[0][0] = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(CountTable::from_csv("nonsense"), std::invalid_argument);
}

TEST_CASE("expected_outcome: eigenstates map to their own port") {
    CHECK(expected_outcome(PolarizationState::R(), Basis::rl) == 0);
    CHECK(expected_outcome(PolarizationState::L(), Basis::rl) == 1);
    CHECK(expected_outcome(PolarizationState::H(), Basis::hv) == 0);
    CHECK(expected_outcome(PolarizationState::V(), Basis::hv) == 1);
    CHECK(expected_outcome(PolarizationState::D(), Basis::da) == 0);
    CHECK(expected_outcome(PolarizationState::A(), Basis::da) == 1);
    CHECK_THROWS_AS(expected_outcome(PolarizationState::H(), Basis::da),
                    std::invalid_argument);
    CHECK_THROWS_AS(expected_outcome(PolarizationState::R(), Basis::hv),
                    std::invalid_argument);
}

TEST_CASE("conditioning on the herald improves the read-out fidelity") {
    SystemConfig cfg = default_config();
    TrialPlan plan;
    plan.do_readout = true;
    plan.storage_time = 1.1e-6;
    plan.readout_basis = Basis::hv;
    plan.inject_preparation_error = true;
    plan.input_override = PolarizationState::H();
    const ClickDataset ds = run_trials(cfg, plan, 12000, 9001);

    const BernoulliEstimate uncond = readout_fidelity(ds);
    const Conditioned cond = condition_on_herald(ds);
    const BernoulliEstimate con = readout_fidelity(cond.data);
    CHECK(cond.retained_fraction > 0.02);
    CHECK(cond.retained_fraction < 0.5);
    CHECK(con.p > uncond.p);
    CHECK(con.p > 0.9);
}

TEST_CASE("truncation_sweep: identity cut and monotone efficiency") {
    SystemConfig cfg = default_config();
    TrialPlan plan;
    plan.do_readout = true;
    plan.storage_time = 0.0;
    plan.readout_basis = Basis::hv;
    plan.input_override = PolarizationState::H();
    const ClickDataset ds = run_trials(cfg, plan, 9000, 501);

    const double window = cfg.read_pulse.duration + 1e-6;
    const std::vector<double> cuts = {80e-9, 160e-9, 320e-9, 640e-9, window};
    const auto [fid, eff] = truncation_sweep(ds, cuts);
    REQUIRE(fid.size() == cuts.size());

    const BernoulliEstimate full = readout_fidelity(ds);
    CHECK(fid.estimate.back() == doctest::Approx(full.p).epsilon(1e-12));
    CHECK(eff.estimate.back() == 1.0);

    // kept-click sets are nested, so efficiency is monotone by construction
    for (std::size_t i = 1; i < eff.size(); ++i)
        CHECK(eff.estimate[i] >= eff.estimate[i - 1]);
    // early cuts do not do worse than the full window (within errors)
    CHECK(fid.estimate[0] > full.p - 2.0 * std::hypot(fid.sigma[0], full.sigma));

    CHECK_THROWS_AS(truncation_sweep(ds, std::vector<double>{-1e-9}),
                    std::invalid_argument);
    CHECK_THROWS_AS(truncation_sweep(ds, std::vector<double>{window + 1e-6}),
                    std::invalid_argument);
    const ClickDataset none = forge(0.5, 10, {}, {}, Basis::hv, 0);
    CHECK_THROWS_AS(truncation_sweep(none, cuts), std::invalid_argument);
}
