#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "cavmem/counting.hpp"
#include "cavmem/polarization.hpp"
#include "cavmem/rng.hpp"
#include "cavmem/tomography.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cavmem;
using Eigen::Matrix2cd;

namespace {

Matrix2cd bloch(double x, double y, double z) {
    Matrix2cd m = Matrix2cd::Identity();
    return (m + x * pauli(1) + y * pauli(2) + z * pauli(3)) / 2.0;
}

// Ideal (rounded) single-input counts for the three-basis measurement of rho.
StateCounts ideal_state_counts(const Matrix2cd& rho, std::int64_t shots) {
    StateCounts c{};
    const std::array<Basis, 3> bases = {Basis::rl, Basis::hv, Basis::da};
    for (std::size_t b = 0; b < 3; ++b) {
        for (int outcome = 0; outcome < 2; ++outcome) {
            const PolarizationState s = basis_state(bases[b], outcome);
            Eigen::Vector2cd k;
            k << s.r, s.l;
            const double p = k.dot(rho * k).real();
            c[2 * b + outcome] =
                std::llround(p * static_cast<double>(shots));
        }
    }
    return c;
}

double trace_distance(const Matrix2cd& a, const Matrix2cd& b) {
    Eigen::SelfAdjointEigenSolver<Matrix2cd> es(a - b);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace

TEST_CASE("pauli matrices obey the algebra and match the Stokes axes") {
    const Matrix2cd eye = Matrix2cd::Identity();
    CHECK((pauli(0) - eye).norm() == doctest::Approx(0.0));
    for (std::size_t k = 1; k < 4; ++k) {
        CHECK((pauli(k) * pauli(k) - eye).norm() < 1e-14);
        CHECK(std::abs(pauli(k).trace()) < 1e-14);
        CHECK((pauli(k) - pauli(k).adjoint()).norm() < 1e-14);
    }
    const std::complex<double> i(0.0, 1.0);
    CHECK((pauli(1) * pauli(2) - i * pauli(3)).norm() < 1e-14);
    CHECK((pauli(2) * pauli(3) - i * pauli(1)).norm() < 1e-14);
    CHECK((pauli(3) * pauli(1) - i * pauli(2)).norm() < 1e-14);

    // tr(rho sigma_k) for a pure state reproduces its Stokes vector.
    for (const auto& s : axial_states()) {
        const DensityMatrix d = DensityMatrix::pure(s);
        const auto st = stokes(s);
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK((d.rho * pauli(k + 1)).trace().real() ==
                  doctest::Approx(st[k]).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS((void)pauli(4), std::out_of_range);
}

TEST_CASE("density matrix construction and validation") {
    DensityMatrix mixed;  // default: maximally mixed
    CHECK_NOTHROW(mixed.validate());
    CHECK(mixed.rho(0, 0).real() == doctest::Approx(0.5));

    const DensityMatrix r = DensityMatrix::pure(PolarizationState::R());
    CHECK(r.rho(0, 0).real() == doctest::Approx(1.0));
    CHECK(std::abs(r.rho(1, 1)) < 1e-15);
    for (const auto& s : axial_states()) {
        const DensityMatrix d = DensityMatrix::pure(s);
        CHECK_NOTHROW(d.validate());
        CHECK((d.rho * d.rho - d.rho).norm() < 1e-14);  // projector
        CHECK(d.rho.trace().real() == doctest::Approx(1.0));
    }

    DensityMatrix bad;
    bad.rho << 0.5, std::complex<double>(0.1, 0.0),
        std::complex<double>(0.3, 0.0), 0.5;  // not Hermitian
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad.rho = Matrix2cd::Identity() * 0.6;  // trace 1.2
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad.rho << 1.2, 0.0, 0.0, -0.2;  // unit trace, negative eigenvalue
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("process matrix construction and validation") {
    const ProcessMatrix id = ProcessMatrix::identity();
    CHECK_NOTHROW(id.validate());
    CHECK(id.chi(0, 0).real() == doctest::Approx(1.0));
    CHECK(id.chi.cwiseAbs().sum() == doctest::Approx(1.0));

    const ProcessMatrix dep = ProcessMatrix::depolarizing(0.3);
    CHECK_NOTHROW(dep.validate());
    CHECK(dep.chi(0, 0).real() == doctest::Approx(1.0 - 0.75 * 0.3));
    for (int k = 1; k < 4; ++k) {
        CHECK(dep.chi(k, k).real() == doctest::Approx(0.075));
    }
    CHECK((ProcessMatrix::depolarizing(0.0).chi - id.chi).norm() < 1e-15);

    ProcessMatrix bad;
    bad.chi = Eigen::Matrix4cd::Zero();
    bad.chi(0, 0) = 0.9;  // trace-decreasing
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad.chi = Eigen::Matrix4cd::Zero();
    bad.chi(0, 0) = 1.1;
    bad.chi(1, 1) = -0.1;  // unit "trace" but not positive
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    Rng rng(5);
    for (int k = 0; k < 5; ++k) {
        CHECK_NOTHROW(random_cptp(rng).validate());
    }
}

TEST_CASE("channel application: identity and depolarizing") {
    const ProcessMatrix id = ProcessMatrix::identity();
    DensityMatrix in;
    in.rho = bloch(0.3, -0.4, 0.5);
    CHECK((apply_channel(id, in).rho - in.rho).norm() < 1e-14);

    const ProcessMatrix full = ProcessMatrix::depolarizing(1.0);
    for (const auto& s : axial_states()) {
        const DensityMatrix out = apply_channel(full, DensityMatrix::pure(s));
        CHECK((out.rho - Matrix2cd::Identity() / 2.0).norm() < 1e-12);
    }

    // Partial depolarizing leaves fidelity 1 - p/2 to the input.
    const double p = 0.3;
    const ProcessMatrix dep = ProcessMatrix::depolarizing(p);
    for (const auto& s : axial_states()) {
        const DensityMatrix out = apply_channel(dep, DensityMatrix::pure(s));
        CHECK(state_fidelity(out, s) ==
              doctest::Approx(1.0 - p / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("state fidelity against pure targets") {
    const DensityMatrix r = DensityMatrix::pure(PolarizationState::R());
    CHECK(state_fidelity(r, PolarizationState::R()) == doctest::Approx(1.0));
    CHECK(state_fidelity(r, PolarizationState::L()) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(state_fidelity(r, PolarizationState::H()) == doctest::Approx(0.5));
    DensityMatrix mixed;
    CHECK(state_fidelity(mixed, PolarizationState::D()) ==
          doctest::Approx(0.5));
}

TEST_CASE("state reconstruction from ideal counts") {
    // Pure R: all clicks in the R column, balanced elsewhere.
    const StateCounts pure_r = {10000, 0, 5000, 5000, 5000, 5000};
    const DensityMatrix rec = state_mle(pure_r);
    CHECK_NOTHROW(rec.validate());
    const Matrix2cd target = DensityMatrix::pure(PolarizationState::R()).rho;
    CHECK((rec.rho - target).cwiseAbs().maxCoeff() < 1e-6);

    // Balanced counts in every basis: maximally mixed.
    StateCounts flat{};
    flat.fill(5000);
    const DensityMatrix mixed = state_mle(flat);
    CHECK((mixed.rho - Matrix2cd::Identity() / 2.0).cwiseAbs().maxCoeff() <
          1e-6);

    StateCounts zero{};
    CHECK_THROWS_AS((void)state_mle(zero), std::invalid_argument);
    StateCounts neg{};
    neg.fill(100);
    neg[2] = -1;
    CHECK_THROWS_AS((void)state_mle(neg), std::invalid_argument);
}

TEST_CASE("state reconstruction from sampled counts recovers a mixed state") {
    const Matrix2cd truth = bloch(0.9 * 0.36, -0.9 * 0.48, 0.9 * 0.60);
    Rng rng(314);
    const std::int64_t shots = 100000;
    StateCounts counts{};
    const std::array<Basis, 3> bases = {Basis::rl, Basis::hv, Basis::da};
    for (std::size_t b = 0; b < 3; ++b) {
        const PolarizationState s = basis_state(bases[b], 0);
        Eigen::Vector2cd k;
        k << s.r, s.l;
        const double p0 = k.dot(truth * k).real();
        std::int64_t n0 = 0;
        for (std::int64_t t = 0; t < shots; ++t) n0 += rng.bernoulli(p0);
        counts[2 * b] = n0;
        counts[2 * b + 1] = shots - n0;
    }
    const DensityMatrix rec = state_mle(counts);
    CHECK_NOTHROW(rec.validate());
    CHECK(trace_distance(rec.rho, truth) < 0.01);
}

TEST_CASE("state reconstruction is covariant under relabeling R with L") {
    // Swapping the two circular outcomes (and the diagonal pair they map to)
    // must conjugate the reconstruction by sigma_x.
    const Matrix2cd truth = bloch(0.3, -0.4, 0.5);
    const StateCounts counts = ideal_state_counts(truth, 10000);
    StateCounts swapped = counts;
    std::swap(swapped[0], swapped[1]);  // R <-> L
    std::swap(swapped[4], swapped[5]);  // D <-> A
    const Matrix2cd direct = state_mle(counts).rho;
    const Matrix2cd relabeled = state_mle(swapped).rho;
    const Matrix2cd expected = pauli(1) * direct * pauli(1);
    CHECK((relabeled - expected).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("process reconstruction oracles") {
    const ProcessMatrix id = ProcessMatrix::identity();
    const CountTable ideal = expected_counts(id, 10000);
    const ProcessMatrix rec = process_mle(ideal);
    CHECK_NOTHROW(rec.validate());
    CHECK(rec.chi(0, 0).real() > 1.0 - 1e-6);
    for (int m = 0; m < 4; ++m) {
        for (int n = 0; n < 4; ++n) {
            if (m == 0 && n == 0) continue;
            CHECK(std::abs(rec.chi(m, n)) < 1e-6);
        }
    }

    const ProcessMatrix dep = ProcessMatrix::depolarizing(0.3);
    const ProcessMatrix rec_dep = process_mle(expected_counts(dep, 20000));
    CHECK((rec_dep.chi - dep.chi).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(rec_dep.chi(0, 0).real() == doctest::Approx(0.775).epsilon(2e-3));

    CountTable incomplete = expected_counts(id, 1000);
    incomplete.counts[3][0] = 0;
    incomplete.counts[3][1] = 0;  // empty (V, rl) cell
    CHECK_THROWS_AS((void)process_mle(incomplete), std::invalid_argument);
}

TEST_CASE("process reconstruction recovers a random channel") {
    Rng gen(42);
    const ProcessMatrix truth = random_cptp(gen);
    Rng sampler(7);
    const CountTable counts = sampled_counts(truth, 100000, sampler);
    const ProcessMatrix rec = process_mle(counts);
    CHECK_NOTHROW(rec.validate());
    CHECK(process_fidelity_between(rec, truth) > 0.99);
    CHECK((rec.chi - truth.chi).norm() < 0.05);

    // Relabeling covariance at the process level: swapping R and L on both
    // the input rows and the outcome columns flips the sign of the X<->Y,Z
    // coherences (conjugation by sigma_x maps I,X,Y,Z -> I,X,-Y,-Z).
    const CountTable ideal = expected_counts(truth, 1000000);
    CountTable perm = ideal;
    for (std::size_t c = 0; c < 6; ++c) {
        std::swap(perm.counts[0][c], perm.counts[1][c]);
        std::swap(perm.counts[4][c], perm.counts[5][c]);
    }
    for (std::size_t r = 0; r < 6; ++r) {
        std::swap(perm.counts[r][0], perm.counts[r][1]);
        std::swap(perm.counts[r][4], perm.counts[r][5]);
    }
    const ProcessMatrix direct = process_mle(ideal);
    const ProcessMatrix relabeled = process_mle(perm);
    const std::array<double, 4> sign = {1.0, 1.0, -1.0, -1.0};
    for (int m = 0; m < 4; ++m) {
        for (int n = 0; n < 4; ++n) {
            const std::complex<double> want =
                sign[m] * sign[n] * direct.chi(m, n);
            CHECK(std::abs(relabeled.chi(m, n) - want) < 1e-4);
        }
    }
}

TEST_CASE("fidelity report: identity, depolarizing, and the 2-design identity") {
    const FidelityReport id = fidelity_report(ProcessMatrix::identity());
    CHECK(id.process_fidelity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(id.average_state_fidelity == doctest::Approx(1.0).epsilon(1e-12));
    for (double f : id.state_fidelities) {
        CHECK(f == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(std::abs(id.identity_residual) < 1e-12);

    // Completely depolarizing: process fidelity 1/4, average fidelity 1/2.
    const FidelityReport dep = fidelity_report(ProcessMatrix::depolarizing(1.0));
    CHECK(dep.process_fidelity == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(dep.average_state_fidelity == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(dep.identity_residual) < 1e-12);

    CHECK(average_fidelity_from_process(0.922) ==
          doctest::Approx(0.948).epsilon(1e-12));

    // Average state fidelity equals (2 F_p + 1)/3 for arbitrary channels.
    Rng rng(99);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const FidelityReport r = fidelity_report(random_cptp(rng));
        worst = std::max(worst, std::abs(r.identity_residual));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("channel fidelity measure") {
    const ProcessMatrix id = ProcessMatrix::identity();
    CHECK(process_fidelity_between(id, id) == doctest::Approx(1.0));
    const ProcessMatrix dep = ProcessMatrix::depolarizing(0.2);
    CHECK(process_fidelity_between(dep, dep) == doctest::Approx(1.0));
    const double f = process_fidelity_between(id, dep);
    CHECK(f < 1.0);
    CHECK(f > 0.5);
    CHECK(process_fidelity_between(id, dep) ==
          doctest::Approx(process_fidelity_between(dep, id)));
}

TEST_CASE("uncertainty resampling: scaling, reproducibility, failure counts") {
    // A channel with process fidelity 0.92, typical of the memory.
    const ProcessMatrix truth = ProcessMatrix::depolarizing(0.32 / 3.0);
    REQUIRE(fidelity_report(truth).process_fidelity ==
            doctest::Approx(0.92).epsilon(1e-12));
    const auto estimator = [](const CountTable& t) {
        return fidelity_report(process_mle(t)).process_fidelity;
    };

    const CountTable small = expected_counts(truth, 1000);
    const CountTable large = expected_counts(truth, 100000);
    const McUncertainty u_small = mc_uncertainty(small, 150, 11, estimator);
    const McUncertainty u_large = mc_uncertainty(large, 150, 11, estimator);
    CHECK(u_small.n_failed == 0);
    CHECK(u_large.n_failed == 0);

    // Paper-scale counts give a few-per-mille uncertainty on F_p.
    CHECK(u_small.sigma > 0.001);
    CHECK(u_small.sigma < 0.01);
    CHECK(std::abs(u_small.mean - 0.92) < 5.0 * u_small.sigma);

    // 100x the counts shrinks sigma by about 10x.
    const double ratio = u_small.sigma / u_large.sigma;
    CHECK(ratio > 6.0);
    CHECK(ratio < 15.0);

    // Two seeds agree within their own sampling error.
    const McUncertainty u_rep = mc_uncertainty(small, 150, 12, estimator);
    CHECK(std::abs(u_rep.mean - u_small.mean) < 0.5 * u_small.sigma);
    CHECK(std::abs(u_rep.sigma - u_small.sigma) <
          0.25 * std::max(u_small.sigma, u_rep.sigma));

    // Same seed: bitwise identical.
    const McUncertainty u_same = mc_uncertainty(small, 150, 11, estimator);
    CHECK(u_same.mean == u_small.mean);
    CHECK(u_same.sigma == u_small.sigma);

    CHECK_THROWS_AS(
        (void)mc_uncertainty(small, 99, 1, estimator), std::invalid_argument);

    // Estimators that fail on some resamples are counted, not fatal.
    const auto flaky = [](const CountTable& t) -> double {
        if (t.counts[0][0] % 2 == 0) throw std::runtime_error("flaky");
        return 1.0;
    };
    const McUncertainty u_flaky = mc_uncertainty(small, 200, 3, flaky);
    CHECK(u_flaky.n_failed > 0);
    CHECK(u_flaky.n_failed < 200);
    CHECK(u_flaky.mean == doctest::Approx(1.0));
    CHECK(u_flaky.sigma == doctest::Approx(0.0));

    const auto broken = [](const CountTable&) -> double {
        throw std::runtime_error("always");
    };
    CHECK_THROWS_AS((void)mc_uncertainty(small, 100, 3, broken),
                    std::runtime_error);
}

TEST_CASE("synthetic count tables from a channel") {
    const ProcessMatrix id = ProcessMatrix::identity();
    CHECK(outcome_probability(id, 0, Basis::rl, 0) == doctest::Approx(1.0));
    CHECK(outcome_probability(id, 0, Basis::rl, 1) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(outcome_probability(id, 2, Basis::rl, 0) == doctest::Approx(0.5));

    const CountTable t = expected_counts(id, 1000);
    CHECK_NOTHROW(t.validate());
    CHECK(t.counts[0][0] == 1000);  // R in, R out
    CHECK(t.counts[0][1] == 0);
    CHECK(t.counts[0][2] == 500);  // R in, H/V split
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(t.row_total(r) == 3000);
        CHECK(t.parallel(r) == 1000);
        CHECK(t.perpendicular(r) == 0);
    }

    Rng rng(77);
    const ProcessMatrix dep = ProcessMatrix::depolarizing(0.4);
    const CountTable sampled = sampled_counts(dep, 10000, rng);
    const CountTable expect = expected_counts(dep, 10000);
    CHECK_NOTHROW(sampled.validate());
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(sampled.row_total(r) == 30000);  // binomial pairs sum to shots
        for (std::size_t c = 0; c < 6; ++c) {
            const double n = static_cast<double>(expect.counts[r][c]);
            const double p = n / 10000.0;
            const double sig = std::sqrt(10000.0 * p * (1.0 - p));
            CHECK(std::abs(sampled.counts[r][c] - n) < 4.0 * sig + 1.0);
        }
    }
}

TEST_CASE("serialization: JSON matrices and Poincare coordinates") {
    DensityMatrix mixed;
    const nlohmann::json jd = nlohmann::json::parse(to_json(mixed));
    CHECK(jd["basis"] == "RL");
    CHECK(jd["re"].size() == 2);
    CHECK(jd["re"][0][0].get<double>() == doctest::Approx(0.5));
    CHECK(jd["im"][0][1].get<double>() == doctest::Approx(0.0));

    const nlohmann::json jp =
        nlohmann::json::parse(to_json(ProcessMatrix::identity()));
    CHECK(jp["basis"] == "IXYZ");
    CHECK(jp["re"].size() == 4);
    CHECK(jp["re"][0][0].get<double>() == doctest::Approx(1.0));

    const std::vector<DensityMatrix> pts = {
        DensityMatrix::pure(PolarizationState::R()),
        DensityMatrix::pure(PolarizationState::H()),
        DensityMatrix::pure(PolarizationState::D()),
    };
    const std::string csv = poincare_csv(pts);
    CHECK(csv == "s1,s2,s3\n0,0,1\n1,0,0\n0,1,0\n");
}
