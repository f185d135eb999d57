#include "cavmem/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "cavmem/scan.hpp"

namespace cavmem {

namespace {

using Eigen::Matrix2cd;
using Eigen::Matrix4cd;
using Eigen::Vector2cd;
using Eigen::VectorXd;

constexpr double kGradTol = 1e-8;
constexpr int kIterationCap = 10000;

Vector2cd ket(const PolarizationState& s) {
    const PolarizationState n = s.normalized();
    return Vector2cd(n.r, n.l);
}

// ---------------------------------------------------------------------------
// Quasi-Newton maximizer (minimizes the negative objective with BFGS on a
// central-difference gradient). The objectives are per-count mean
// log-likelihoods, so the 1e-8 gradient threshold is scale-free.

VectorXd numeric_gradient(const std::function<double(const VectorXd&)>& f,
                          const VectorXd& x) {
    VectorXd g(x.size());
    VectorXd p = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(x[i]));
        const double xi = x[i];
        p[i] = xi + h;
        const double fp = f(p);
        p[i] = xi - h;
        const double fm = f(p);
        p[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

VectorXd maximize(const std::function<double(const VectorXd&)>& f, VectorXd x,
                  const char* what) {
    const auto n = x.size();
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
    double fx = f(x);
    VectorXd g = numeric_gradient(f, x);
    for (int iter = 0; iter < kIterationCap; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() < kGradTol) return x;
        VectorXd d = hinv * g;
        if (d.dot(g) <= 0.0) {  // not an ascent direction: reset curvature
            hinv.setIdentity();
            d = g;
        }
        double step = 1.0;
        const double slope = d.dot(g);
        double fn = -std::numeric_limits<double>::infinity();
        VectorXd xn;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            xn = x + step * d;
            fn = f(xn);
            if (std::isfinite(fn) && fn >= fx + 1e-4 * step * slope) {
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) {
            // flat to machine precision in every tried direction
            if (g.lpNorm<Eigen::Infinity>() < 100 * kGradTol) return x;
            throw std::runtime_error(std::string(what) +
                                     ": line search stalled before convergence");
        }
        const VectorXd gn = numeric_gradient(f, xn);
        const VectorXd s = xn - x;
        const VectorXd y = g - gn;  // gradient change of the negated objective
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const VectorXd hy = hinv * y;
            const double yhy = y.dot(hy);
            hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                    (hy * s.transpose() + s * hy.transpose()) / sy;
        }
        x = xn;
        fx = fn;
        g = gn;
    }
    throw std::runtime_error(std::string(what) + ": no convergence within iteration cap");
}

double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

// ---------------------------------------------------------------------------
// State reconstruction pieces

Matrix2cd rho_from_t(const VectorXd& t) {
    Matrix2cd T;
    T << t[0], 0.0, cplx(t[2], t[3]), t[1];
    Matrix2cd r = T.adjoint() * T;
    const double tr = r.trace().real();
    if (tr <= 0.0) return Matrix2cd::Identity() / 2.0;
    return r / tr;
}

// ---------------------------------------------------------------------------
// Process reconstruction pieces. The Choi operator lives on input x output
// with composite index (i, k) -> 2 i + k, built as J = sum_ij |i><j| (x)
// channel(|i><j|); trace preservation is the partial trace over the output.

Matrix4cd choi_from_factor(const Matrix4cd& a) {
    Matrix4cd jt = a.adjoint() * a;
    Matrix2cd s = Matrix2cd::Zero();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) s(i, j) += jt(2 * i + k, 2 * j + k);
    Eigen::SelfAdjointEigenSolver<Matrix2cd> es(s);
    Vector2cd inv_sqrt;
    for (int i = 0; i < 2; ++i) {
        const double ev = std::max(es.eigenvalues()[i], 1e-14);
        inv_sqrt[i] = 1.0 / std::sqrt(ev);
    }
    const Matrix2cd si = es.eigenvectors() * inv_sqrt.asDiagonal() *
                         es.eigenvectors().adjoint();
    Matrix4cd sandwich = Matrix4cd::Zero();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) sandwich(2 * i + k, 2 * j + k) = si(i, j);
    return sandwich * jt * sandwich;
}

// vectorized Pauli operators: v_m[(i,k)] = (sigma_m)_{k i}
Eigen::Vector4cd pauli_vec(std::size_t m) {
    Eigen::Vector4cd v;
    const Matrix2cd& s = pauli(m);
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k) v[2 * i + k] = s(k, i);
    return v;
}

Matrix4cd chi_from_choi(const Matrix4cd& j) {
    Matrix4cd chi;
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t n = 0; n < 4; ++n)
            chi(static_cast<int>(m), static_cast<int>(n)) =
                pauli_vec(m).dot(j * pauli_vec(n)) / 4.0;
    return chi;
}

Matrix4cd choi_from_chi(const Matrix4cd& chi) {
    Matrix4cd j = Matrix4cd::Zero();
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t n = 0; n < 4; ++n)
            j += chi(static_cast<int>(m), static_cast<int>(n)) * pauli_vec(m) *
                 pauli_vec(n).adjoint();
    return j;
}

double cell_probability(const Matrix4cd& j, const Vector2cd& input,
                        const Vector2cd& outcome) {
    Eigen::Vector4cd w;
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k) w[2 * i + k] = std::conj(input[i]) * outcome[k];
    return std::max(0.0, w.dot(j * w).real());
}

Matrix4cd factor_params_to_matrix(const VectorXd& a) {
    Matrix4cd m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const int k = 2 * (4 * r + c);
            m(r, c) = cplx(a[k], a[k + 1]);
        }
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Domain types

void DensityMatrix::validate() const {
    if ((rho - rho.adjoint()).norm() > 1e-9)
        throw std::invalid_argument("DensityMatrix: not Hermitian");
    if (std::abs(rho.trace().real() - 1.0) > 1e-9 || std::abs(rho.trace().imag()) > 1e-9)
        throw std::invalid_argument("DensityMatrix: trace != 1");
    Eigen::SelfAdjointEigenSolver<Matrix2cd> es(rho);
    if (es.eigenvalues().minCoeff() < -1e-9)
        throw std::invalid_argument("DensityMatrix: negative eigenvalue");
}

DensityMatrix DensityMatrix::pure(const PolarizationState& s) {
    const Vector2cd k = ket(s);
    DensityMatrix d;
    d.rho = k * k.adjoint();
    return d;
}

void ProcessMatrix::validate() const {
    if ((chi - chi.adjoint()).norm() > 1e-9)
        throw std::invalid_argument("ProcessMatrix: not Hermitian");
    Eigen::SelfAdjointEigenSolver<Matrix4cd> es(chi);
    if (es.eigenvalues().minCoeff() < -1e-9)
        throw std::invalid_argument("ProcessMatrix: negative eigenvalue");
    // trace preservation: sum_mn chi_mn sigma_n sigma_m = I
    Matrix2cd tp = Matrix2cd::Zero();
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t n = 0; n < 4; ++n)
            tp += chi(static_cast<int>(m), static_cast<int>(n)) * pauli(n) * pauli(m);
    if ((tp - Matrix2cd::Identity()).norm() > 1e-6)
        throw std::invalid_argument("ProcessMatrix: not trace preserving");
}

ProcessMatrix ProcessMatrix::identity() {
    ProcessMatrix p;
    p.chi(0, 0) = 1.0;
    return p;
}

ProcessMatrix ProcessMatrix::depolarizing(double strength) {
    if (strength < 0.0 || strength > 1.0)
        throw std::invalid_argument("depolarizing: strength outside [0, 1]");
    ProcessMatrix p;
    p.chi(0, 0) = 1.0 - 0.75 * strength;
    for (int i = 1; i < 4; ++i) p.chi(i, i) = 0.25 * strength;
    return p;
}

const Matrix2cd& pauli(std::size_t index) {
    static const std::array<Matrix2cd, 4> s = [] {
        std::array<Matrix2cd, 4> m;
        m[0] = Matrix2cd::Identity();
        m[1] << 0, 1, 1, 0;
        m[2] << 0, cplx(0, -1), cplx(0, 1), 0;
        m[3] << 1, 0, 0, -1;
        return m;
    }();
    return s.at(index);
}

DensityMatrix apply_channel(const ProcessMatrix& p, const DensityMatrix& rho) {
    Matrix2cd out = Matrix2cd::Zero();
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t n = 0; n < 4; ++n)
            out += p.chi(static_cast<int>(m), static_cast<int>(n)) * pauli(m) *
                   rho.rho * pauli(n);
    DensityMatrix d;
    d.rho = out;
    return d;
}

// ---------------------------------------------------------------------------
// Maximum likelihood

DensityMatrix state_mle(const StateCounts& counts) {
    std::int64_t total = 0;
    for (std::int64_t c : counts) {
        if (c < 0) throw std::invalid_argument("state_mle: negative count");
        total += c;
    }
    if (total == 0) throw std::invalid_argument("state_mle: all-zero counts");

    std::array<Vector2cd, 6> kets;
    for (std::size_t i = 0; i < 6; ++i) kets[i] = ket(axial_states()[i]);
    const double norm = static_cast<double>(total);
    auto loglike = [&](const VectorXd& t) {
        const Matrix2cd rho = rho_from_t(t);
        double ll = 0.0;
        for (std::size_t i = 0; i < 6; ++i) {
            if (!counts[i]) continue;
            const double p = std::max(0.0, kets[i].dot(rho * kets[i]).real());
            ll += static_cast<double>(counts[i]) * safe_log(p);
        }
        return ll / norm;
    };
    VectorXd t0(4);
    t0 << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0, 0.0;
    const VectorXd t = maximize(loglike, t0, "state_mle");
    DensityMatrix d;
    d.rho = rho_from_t(t);
    return d;
}

ProcessMatrix process_mle(const CountTable& counts) {
    counts.validate();
    for (std::size_t u = 0; u < 6; ++u)
        for (std::size_t b = 0; b < 3; ++b)
            if (counts.counts[u][2 * b] + counts.counts[u][2 * b + 1] == 0)
                throw std::invalid_argument(
                    "process_mle: incomplete grid (empty input/basis cell)");

    std::array<Vector2cd, 6> kets;
    for (std::size_t i = 0; i < 6; ++i) kets[i] = ket(axial_states()[i]);
    double norm = 0.0;
    for (std::size_t u = 0; u < 6; ++u) norm += static_cast<double>(counts.row_total(u));

    auto loglike = [&](const VectorXd& a) {
        const Matrix4cd j =
            choi_from_factor(factor_params_to_matrix(a));
        double ll = 0.0;
        for (std::size_t u = 0; u < 6; ++u)
            for (std::size_t col = 0; col < 6; ++col) {
                const std::int64_t n = counts.counts[u][col];
                if (!n) continue;
                const double p = cell_probability(j, kets[u], kets[col]);
                ll += static_cast<double>(n) * safe_log(p);
            }
        return ll / norm;
    };
    VectorXd a0 = VectorXd::Zero(32);
    for (int r = 0; r < 4; ++r) a0[2 * (4 * r + r)] = 1.0;  // neutral: A = I
    const VectorXd a = maximize(loglike, a0, "process_mle");
    ProcessMatrix p;
    p.chi = chi_from_choi(
        choi_from_factor(factor_params_to_matrix(a)));
    // clean numerical asymmetry so validate() sees an exactly Hermitian matrix
    p.chi = ((p.chi + p.chi.adjoint()) / 2.0).eval();
    return p;
}

// ---------------------------------------------------------------------------
// Fidelities

double state_fidelity(const DensityMatrix& rho, const PolarizationState& target) {
    const Vector2cd k = ket(target);
    return std::max(0.0, k.dot(rho.rho * k).real());
}

FidelityReport fidelity_report(const ProcessMatrix& p) {
    FidelityReport r;
    double sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        const DensityMatrix out =
            apply_channel(p, DensityMatrix::pure(axial_states()[i]));
        r.state_fidelities[i] = state_fidelity(out, axial_states()[i]);
        sum += r.state_fidelities[i];
    }
    r.average_state_fidelity = sum / 6.0;
    r.process_fidelity = p.chi(0, 0).real();
    r.identity_residual =
        r.average_state_fidelity - average_fidelity_from_process(r.process_fidelity);
    return r;
}

double average_fidelity_from_process(double process_fidelity) {
    return (2.0 * process_fidelity + 1.0) / 3.0;
}

namespace {

// Principal square root of a positive semidefinite Hermitian matrix.
Matrix4cd psd_sqrt(const Matrix4cd& m) {
    Eigen::SelfAdjointEigenSolver<Matrix4cd> es(m);
    Eigen::Vector4d vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * vals.asDiagonal() *
           es.eigenvectors().adjoint();
}

}  // namespace

double process_fidelity_between(const ProcessMatrix& a,
                                const ProcessMatrix& b) {
    // Uhlmann fidelity F = (tr sqrt(sqrt(A) B sqrt(A)))^2 of the Choi states
    // J/2 of the two channels.
    const Matrix4cd ja = choi_from_chi(a.chi) / 2.0;
    const Matrix4cd jb = choi_from_chi(b.chi) / 2.0;
    const Matrix4cd root = psd_sqrt(ja);
    const Matrix4cd inner = psd_sqrt(root * jb * root);
    const double tr = inner.trace().real();
    return tr * tr;
}

// ---------------------------------------------------------------------------
// Uncertainty and synthetic data

McUncertainty mc_uncertainty(const CountTable& counts, int k_samples,
                             std::uint64_t seed,
                             const std::function<double(const CountTable&)>& estimator) {
    if (k_samples < 100)
        throw std::invalid_argument("mc_uncertainty: need at least 100 resamples");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(k_samples));
    int failed = 0;
    for (int s = 0; s < k_samples; ++s) {
        Rng rng = Rng::for_trial(seed, static_cast<std::uint64_t>(s));
        CountTable resampled = counts;
        for (auto& row : resampled.counts)
            for (auto& c : row) {
                if (c <= 0) continue;
                const double n = static_cast<double>(c);
                const double draw = n + std::sqrt(n) * rng.normal();
                c = draw > 0.0 ? std::llround(draw) : 0;
            }
        try {
            values.push_back(estimator(resampled));
        } catch (const std::exception&) {
            ++failed;
        }
    }
    if (values.empty())
        throw std::runtime_error("mc_uncertainty: estimator failed on every resample (" +
                                 std::to_string(failed) + " failures)");
    McUncertainty r;
    r.n_failed = failed;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - r.mean) * (v - r.mean);
    if (values.size() > 1) var /= static_cast<double>(values.size() - 1);
    r.sigma = std::sqrt(var);
    return r;
}

double outcome_probability(const ProcessMatrix& p, std::size_t input_index,
                           Basis b, int outcome) {
    if (input_index >= axial_states().size())
        throw std::out_of_range("outcome_probability: input index");
    const Matrix4cd j = choi_from_chi(p.chi);
    return cell_probability(j, ket(axial_states()[input_index]),
                            ket(basis_state(b, outcome)));
}

CountTable expected_counts(const ProcessMatrix& p, std::int64_t shots_per_cell) {
    if (shots_per_cell <= 0) throw std::invalid_argument("expected_counts: shots <= 0");
    const Matrix4cd j = choi_from_chi(p.chi);
    CountTable t;
    for (std::size_t u = 0; u < 6; ++u)
        for (std::size_t b = 0; b < 3; ++b) {
            const double p0 = cell_probability(
                j, ket(axial_states()[u]), ket(basis_state(static_cast<Basis>(b), 0)));
            const auto n0 =
                std::llround(p0 * static_cast<double>(shots_per_cell));
            t.counts[u][2 * b] = n0;
            t.counts[u][2 * b + 1] = shots_per_cell - n0;
        }
    return t;
}

CountTable sampled_counts(const ProcessMatrix& p, std::int64_t shots_per_cell,
                          Rng& rng) {
    if (shots_per_cell <= 0) throw std::invalid_argument("sampled_counts: shots <= 0");
    const Matrix4cd j = choi_from_chi(p.chi);
    CountTable t;
    for (std::size_t u = 0; u < 6; ++u)
        for (std::size_t b = 0; b < 3; ++b) {
            const double p0 = cell_probability(
                j, ket(axial_states()[u]), ket(basis_state(static_cast<Basis>(b), 0)));
            std::int64_t n0 = 0;
            for (std::int64_t s = 0; s < shots_per_cell; ++s)
                if (rng.bernoulli(p0)) ++n0;
            t.counts[u][2 * b] = n0;
            t.counts[u][2 * b + 1] = shots_per_cell - n0;
        }
    return t;
}

ProcessMatrix random_cptp(Rng& rng) {
    Matrix4cd a;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) a(r, c) = cplx(rng.normal(), rng.normal());
    ProcessMatrix p;
    p.chi = chi_from_choi(choi_from_factor(a));
    p.chi = ((p.chi + p.chi.adjoint()) / 2.0).eval();
    return p;
}

// ---------------------------------------------------------------------------
// Exports

namespace {

template <typename M>
nlohmann::json matrix_json(const M& m) {
    nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json rr = nlohmann::json::array(), ri = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            rr.push_back(m(r, c).real());
            ri.push_back(m(r, c).imag());
        }
        re.push_back(rr);
        im.push_back(ri);
    }
    return nlohmann::json{{"re", re}, {"im", im}};
}

}  // namespace

std::string to_json(const DensityMatrix& m) {
    nlohmann::json j = matrix_json(m.rho);
    j["basis"] = "RL";
    return j.dump(2);
}

std::string to_json(const ProcessMatrix& m) {
    nlohmann::json j = matrix_json(m.chi);
    j["basis"] = "IXYZ";
    return j.dump(2);
}

std::string poincare_csv(const std::vector<DensityMatrix>& states) {
    std::ostringstream os;
    os << "s1,s2,s3\n";
    for (const auto& d : states) {
        std::array<double, 3> s{};
        const std::array<std::pair<Basis, int>, 3> axes = {
            std::pair{Basis::hv, 0}, {Basis::da, 0}, {Basis::rl, 0}};
        for (std::size_t k = 0; k < 3; ++k) {
            const Vector2cd plus = ket(basis_state(axes[k].first, 0));
            const Vector2cd minus = ket(basis_state(axes[k].first, 1));
            s[k] = std::clamp(
                (plus.dot(d.rho * plus) - minus.dot(d.rho * minus)).real(),
                -1.0, 1.0);
        }
        os << fmt_num(s[0]) << "," << fmt_num(s[1]) << "," << fmt_num(s[2]) << "\n";
    }
    return os.str();
}

}  // namespace cavmem
