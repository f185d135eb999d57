#include "cavmem/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace cavmem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd weights_for(const ScanResult& data, bool weighted) {
    const std::size_t n = data.size();
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    if (!weighted) return w;
    std::size_t positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (data.sigma[i] < 0.0)
            throw std::invalid_argument("nls_fit: negative sigma");
        if (data.sigma[i] > 0.0) ++positive;
    }
    if (positive == 0) return w;  // noise-free model curve: unit weights
    if (positive != n)
        throw std::invalid_argument(
            "nls_fit: sigma column mixes zero and positive entries");
    for (std::size_t i = 0; i < n; ++i) {
        w[static_cast<Eigen::Index>(i)] = 1.0 / (data.sigma[i] * data.sigma[i]);
    }
    return w;
}

double weighted_cost(const FitModel& model, const ScanResult& data,
                     const Eigen::VectorXd& w, const Eigen::VectorXd& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double r = data.estimate[i] - model.value(data.x[i], p);
        c += w[static_cast<Eigen::Index>(i)] * r * r;
    }
    return c;
}

Eigen::VectorXd clamp_to(const Eigen::VectorXd& p, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi) {
    if (lo.size() == 0) return p;
    return p.cwiseMax(lo).cwiseMin(hi);
}

// Moore-Penrose inverse of a symmetric PSD matrix; reports whether any
// direction was dropped as numerically flat. The matrix is first
// equilibrated to unit diagonal so that parameters measured in wildly
// different units (rad/s next to dimensionless fractions) do not make a
// well-determined direction look flat to the relative eigenvalue cutoff:
// only genuine rank deficiency of the correlation structure is truncated.
Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& h, bool* degenerate) {
    const Eigen::Index k = h.rows();
    Eigen::VectorXd s(k);
    *degenerate = false;
    for (Eigen::Index i = 0; i < k; ++i) {
        const double d = h(i, i);
        if (std::isfinite(d) && d > 0.0) {
            s[i] = 1.0 / std::sqrt(d);
        } else {
            s[i] = 0.0;  // exactly flat parameter: zero row/column in result
            *degenerate = true;
        }
    }
    const Eigen::MatrixXd hs = s.asDiagonal() * h * s.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hs);
    const Eigen::VectorXd vals = es.eigenvalues();
    const double cutoff = 1e-12 * std::max(vals.cwiseAbs().maxCoeff(), 1e-300);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(vals.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] > cutoff) {
            inv[i] = 1.0 / vals[i];
        } else {
            *degenerate = true;
        }
    }
    Eigen::MatrixXd c = s.asDiagonal() *
                        (es.eigenvectors() * inv.asDiagonal() *
                         es.eigenvectors().transpose()) *
                        s.asDiagonal();
    return ((c + c.transpose()) / 2.0).eval();
}

}  // namespace

// ---------------------------------------------------------------------------
// FitResult

double FitResult::parameter(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name)
            return parameters[static_cast<Eigen::Index>(i)];
    }
    throw std::out_of_range("FitResult: unknown parameter " + name);
}

double FitResult::sigma(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            const auto k = static_cast<Eigen::Index>(i);
            return std::sqrt(std::max(0.0, covariance(k, k)));
        }
    }
    throw std::out_of_range("FitResult: unknown parameter " + name);
}

bool FitResult::has_flag(const std::string& flag) const {
    return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

std::string FitResult::to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json pars, sigs;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        pars[names[i]] = parameters[k];
        sigs[names[i]] = std::sqrt(std::max(0.0, covariance(k, k)));
    }
    j["parameters"] = pars;
    j["sigma"] = sigs;
    nlohmann::ordered_json cov = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < covariance.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < covariance.cols(); ++c) {
            row.push_back(covariance(r, c));
        }
        cov.push_back(row);
    }
    j["covariance"] = cov;
    j["residual_norm"] = residual_norm;
    j["converged"] = converged;
    j["iterations"] = iterations;
    j["flags"] = flags;
    nlohmann::ordered_json der = nlohmann::ordered_json::array();
    for (const auto& d : derived) {
        der.push_back({{"name", d.name}, {"value", d.value}, {"sigma", d.sigma}});
    }
    j["derived"] = der;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Engine

double jacobian_deviation(const FitModel& model, const ScanResult& data,
                          const Eigen::VectorXd& p) {
    const auto k = p.size();
    const auto n = static_cast<Eigen::Index>(data.size());
    double funcscale = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        funcscale = std::max(
            funcscale, std::abs(model.value(data.x[static_cast<std::size_t>(i)], p)));
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double h = 1e-6 * (1.0 + std::abs(p[j]));
        Eigen::VectorXd pp = p, pm = p;
        pp[j] += h;
        pm[j] -= h;
        double colscale = 0.0;
        Eigen::VectorXd analytic(n), fd(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double x = data.x[static_cast<std::size_t>(i)];
            analytic[i] = model.jacobian(x, p)[j];
            fd[i] = (model.value(x, pp) - model.value(x, pm)) / (2.0 * h);
            colscale = std::max({colscale, std::abs(analytic[i]), std::abs(fd[i])});
        }
        // Derivatives below the resolution of the central difference (value
        // rounding noise over 2h, with margin) cannot be certified -- and at
        // that scale they contribute nothing to the fit either.
        const double fd_noise =
            std::numeric_limits<double>::epsilon() * funcscale / (2.0 * h);
        if (colscale <= 1e4 * fd_noise) continue;
        for (Eigen::Index i = 0; i < n; ++i) {
            worst = std::max(worst, std::abs(analytic[i] - fd[i]) / colscale);
        }
    }
    return worst;
}

FitResult nls_fit(const FitModel& model, const ScanResult& data,
                  const Eigen::VectorXd& initial, const FitOptions& opts) {
    const auto k = static_cast<Eigen::Index>(model.names.size());
    const auto n = static_cast<Eigen::Index>(data.size());
    if (k == 0 || initial.size() != k)
        throw std::invalid_argument("nls_fit: initial guess size mismatch");
    if (n < k)
        throw std::invalid_argument("nls_fit: fewer data points than parameters");
    if ((opts.lower.size() != 0 || opts.upper.size() != 0) &&
        (opts.lower.size() != k || opts.upper.size() != k))
        throw std::invalid_argument("nls_fit: bounds size mismatch");
    if (opts.lower.size() == k) {
        for (Eigen::Index j = 0; j < k; ++j) {
            if (initial[j] < opts.lower[j] || initial[j] > opts.upper[j])
                throw std::invalid_argument("nls_fit: initial guess outside bounds");
        }
    }
    const Eigen::VectorXd w = weights_for(data, opts.weighted);

    Eigen::VectorXd p = initial;
    double cost = weighted_cost(model, data, w, p);
    double lambda = 1e-3;
    bool converged = false;
    int iterations = 0;

    for (int it = 0; it < opts.max_iterations && !converged; ++it) {
        iterations = it + 1;
        // Weighted Jacobian and residual at the current point.
        Eigen::MatrixXd jac(n, k);
        Eigen::VectorXd res(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double x = data.x[static_cast<std::size_t>(i)];
            jac.row(i) = model.jacobian(x, p).transpose();
            res[i] = data.estimate[static_cast<std::size_t>(i)] - model.value(x, p);
        }
        const Eigen::MatrixXd h = jac.transpose() * w.asDiagonal() * jac;
        const Eigen::VectorXd grad = jac.transpose() * (w.asDiagonal() * res);

        // A parameter pinned at a bound with its gradient pointing outward
        // cannot move, and keeping it in the normal equations distorts the
        // step for the others (the solve assumes a move that clamping then
        // denies). Freeze such parameters and solve on the free subspace.
        std::vector<Eigen::Index> free_ix;
        free_ix.reserve(static_cast<std::size_t>(k));
        for (Eigen::Index j = 0; j < k; ++j) {
            const bool pinned_low =
                opts.lower.size() == k && p[j] <= opts.lower[j] && grad[j] < 0.0;
            const bool pinned_high =
                opts.upper.size() == k && p[j] >= opts.upper[j] && grad[j] > 0.0;
            if (!pinned_low && !pinned_high) free_ix.push_back(j);
        }
        if (free_ix.empty()) {
            converged = true;  // optimum is a corner of the bound box
            break;
        }
        const auto kf = static_cast<Eigen::Index>(free_ix.size());
        Eigen::MatrixXd hf(kf, kf);
        Eigen::VectorXd gradf(kf);
        for (Eigen::Index a = 0; a < kf; ++a) {
            gradf[a] = grad[free_ix[static_cast<std::size_t>(a)]];
            for (Eigen::Index b = 0; b < kf; ++b)
                hf(a, b) = h(free_ix[static_cast<std::size_t>(a)],
                             free_ix[static_cast<std::size_t>(b)]);
        }
        const double maxdiag = hf.diagonal().maxCoeff();
        if (!std::isfinite(maxdiag) || maxdiag <= 0.0)
            throw std::runtime_error("nls_fit: singular Jacobian");
        const Eigen::VectorXd damp = hf.diagonal().cwiseMax(1e-12 * maxdiag);

        // Damped step, escalating lambda until the cost decreases.
        bool accepted = false;
        while (lambda < 1e15) {
            Eigen::MatrixXd a = hf;
            a.diagonal() += lambda * damp;
            const Eigen::VectorXd df = a.ldlt().solve(gradf);
            if (!df.allFinite()) {
                lambda *= 4.0;
                continue;
            }
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(k);
            for (Eigen::Index j = 0; j < kf; ++j)
                delta[free_ix[static_cast<std::size_t>(j)]] = df[j];
            const Eigen::VectorXd cand =
                clamp_to(p + delta, opts.lower, opts.upper);
            const double ccost = weighted_cost(model, data, w, cand);
            if (std::isfinite(ccost) && ccost < cost) {
                const double step = (cand - p).norm();
                const double improvement = cost - ccost;
                p = cand;
                cost = ccost;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                // Done when the accepted step is negligible, or when bound
                // clamping leaves only cost-neutral zigzag steps.
                if (step <= opts.step_tolerance * (1.0 + p.norm()) ||
                    improvement <= 1e-12 * std::max(cost, 1e-300))
                    converged = true;
                break;
            }
            lambda *= 4.0;
        }
        // No cost-decreasing damped step exists: the gradient is zero to
        // numerical precision, i.e. a (possibly bound-pinned) local optimum.
        if (!accepted) converged = true;
    }
    if (!converged)
        throw std::runtime_error("nls_fit: iteration cap reached");

    const double dev = jacobian_deviation(model, data, p);
    if (dev > 1e-4)
        throw std::logic_error(
            "nls_fit: analytic Jacobian disagrees with finite differences");

    // Covariance at the solution: (J^T W J)^-1, scaled by the residual
    // variance when the data carry no sigma information.
    Eigen::MatrixXd jac(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        jac.row(i) =
            model.jacobian(data.x[static_cast<std::size_t>(i)], p).transpose();
    }
    const Eigen::MatrixXd h = jac.transpose() * w.asDiagonal() * jac;
    bool degenerate = false;
    Eigen::MatrixXd cov = psd_pinv(h, &degenerate);
    const bool have_sigmas =
        opts.weighted && data.size() > 0 && data.sigma[0] > 0.0;
    if (!have_sigmas && n > k) {
        cov *= cost / static_cast<double>(n - k);
    }

    FitResult out;
    out.names = model.names;
    out.parameters = p;
    out.covariance = cov;
    out.residual_norm = std::sqrt(std::max(0.0, cost));
    out.converged = true;
    out.iterations = iterations;
    if (degenerate) out.flags.push_back("degenerate-covariance");
    return out;
}

// ---------------------------------------------------------------------------
// Spectrum fits

namespace {

FitModel lorentzian_model() {
    FitModel m;
    m.names = {"center", "fwhm", "amplitude", "offset"};
    m.value = [](double x, const Eigen::VectorXd& p) {
        const double hw = p[1] / 2.0;
        const double d = x - p[0];
        return p[3] + p[2] * hw * hw / (d * d + hw * hw);
    };
    m.jacobian = [](double x, const Eigen::VectorXd& p) {
        const double hw = p[1] / 2.0;
        const double d = x - p[0];
        const double u = hw * hw;
        const double den = d * d + u;
        Eigen::VectorXd j(4);
        j[0] = p[2] * u * 2.0 * d / (den * den);
        j[1] = p[2] * hw * d * d / (den * den);
        j[2] = u / den;
        j[3] = 1.0;
        return j;
    };
    return m;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

FitResult fit_lorentzian(const ScanResult& data) {
    if (data.size() < 4)
        throw std::invalid_argument("fit_lorentzian: need at least 4 points");
    const auto [xmin_it, xmax_it] = std::minmax_element(data.x.begin(), data.x.end());
    const double range = std::max(*xmax_it - *xmin_it, 1e-300);
    const double offset0 = median_of(data.estimate);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < data.size(); ++i) {
        if (std::abs(data.estimate[i] - offset0) >
            std::abs(data.estimate[peak] - offset0))
            peak = i;
    }
    const double amp0 = data.estimate[peak] - offset0;
    std::size_t above_half = 0;
    for (double y : data.estimate) {
        if (std::abs(y - offset0) > std::abs(amp0) / 2.0) ++above_half;
    }
    const double spacing = range / static_cast<double>(data.size() - 1);
    const double fwhm0 =
        std::max<double>(above_half, 2) * spacing;

    Eigen::VectorXd init(4);
    init << data.x[peak], fwhm0, amp0, offset0;
    FitOptions opts;
    opts.lower = Eigen::VectorXd(4);
    opts.upper = Eigen::VectorXd(4);
    opts.lower << -kInf, 1e-9 * range, -kInf, -kInf;
    opts.upper << kInf, kInf, kInf, kInf;

    FitResult r = nls_fit(lorentzian_model(), data, init, opts);
    // T ~ kappa^2/(kappa^2 + (2 pi D)^2) has FWHM = kappa/pi, so the field
    // decay rate is pi * fwhm (rad/s for the MHz x axis).
    r.derived.push_back(
        {"kappa", pi * r.parameter("fwhm") * mhz, pi * r.sigma("fwhm") * mhz});
    return r;
}

FitResult fit_normal_mode(const ScanResult& data, double kappa, double gamma) {
    if (kappa <= 0.0 || gamma <= 0.0)
        throw std::invalid_argument("fit_normal_mode: rates must be positive");
    if (data.size() < 3)
        throw std::invalid_argument("fit_normal_mode: need at least 3 points");

    FitModel m;
    m.names = {"g", "center", "amplitude"};
    const double kg = kappa * gamma;
    const double ks = kappa + gamma;
    m.value = [kappa, gamma, kg, ks](double x, const Eigen::VectorXd& p) {
        const double d = two_pi * (x - p[1]) * mhz;
        const double nsq = kappa * kappa * (gamma * gamma + d * d);
        const double re = kg - d * d + p[0] * p[0];
        const double im = d * ks;
        return p[2] * nsq / (re * re + im * im);
    };
    m.jacobian = [kappa, gamma, kg, ks](double x, const Eigen::VectorXd& p) {
        const double d = two_pi * (x - p[1]) * mhz;
        const double nsq = kappa * kappa * (gamma * gamma + d * d);
        const double re = kg - d * d + p[0] * p[0];
        const double im = d * ks;
        const double den = re * re + im * im;
        const double dnsq_dd = 2.0 * kappa * kappa * d;
        const double dden_dd = 2.0 * re * (-2.0 * d) + 2.0 * im * ks;
        Eigen::VectorXd j(3);
        j[0] = -p[2] * nsq * 4.0 * re * p[0] / (den * den);
        j[1] = -two_pi * mhz * p[2] * (dnsq_dd * den - nsq * dden_dd) / (den * den);
        j[2] = nsq / den;
        return j;
    };

    // Initial guess: amplitude and centroid from the data, g from the
    // separation of the two strongest local maxima (peaks sit near +-g).
    const double amp0 = *std::max_element(data.estimate.begin(), data.estimate.end());
    double wsum = 0.0, xsum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        wsum += data.estimate[i];
        xsum += data.estimate[i] * data.x[i];
    }
    const double center0 = wsum > 0.0 ? xsum / wsum : data.x[data.size() / 2];
    std::vector<std::pair<double, double>> peaks;  // (height, x)
    for (std::size_t i = 1; i + 1 < data.size(); ++i) {
        if (data.estimate[i] > data.estimate[i - 1] &&
            data.estimate[i] >= data.estimate[i + 1])
            peaks.emplace_back(data.estimate[i], data.x[i]);
    }
    std::sort(peaks.rbegin(), peaks.rend());
    const auto [xmin_it, xmax_it] = std::minmax_element(data.x.begin(), data.x.end());
    double g0 = pi * mhz * (*xmax_it - *xmin_it) / 4.0;
    if (peaks.size() >= 2) {
        const double sep = std::abs(peaks[0].second - peaks[1].second);
        if (sep > 0.0) g0 = pi * mhz * sep;
    }

    Eigen::VectorXd init(3);
    init << g0, center0, amp0;
    FitOptions opts;
    opts.lower = Eigen::VectorXd(3);
    opts.upper = Eigen::VectorXd(3);
    opts.lower << 0.0, -kInf, 1e-12;
    opts.upper << kInf, kInf, kInf;
    return nls_fit(m, data, init, opts);
}

// ---------------------------------------------------------------------------
// Detuning-dependent efficiency fit

namespace {

// Scalar pieces of the closed-form efficiency model that the two fit stages
// share. Parameters: m = mu_fc_sq, r = mu_rc_sq, c = coupling_reduction.
struct EfficiencyModel {
    double kq, k1q, gamma, kappa_h;
    double gq1, gh1;  // protocol couplings at coupling_reduction = 1

    explicit EfficiencyModel(const SystemConfig& cfg)
        : kq(cfg.qubit_cavity.kappa),
          k1q(cfg.qubit_cavity.kappa_out),
          gamma(cfg.constants.gamma),
          kappa_h(cfg.herald_cavity.kappa) {
        SystemConfig unit = cfg;
        unit.coupling_reduction = 1.0;
        gq1 = unit.g_qubit_protocol();
        gh1 = unit.g_herald_protocol();
    }

    double gamma_p0(double x_mhz) const {  // Purcell rate at c = 1
        const double d = two_pi * x_mhz * mhz;
        return gh1 * gh1 * kappa_h / (kappa_h * kappa_h + d * d);
    }

    struct Point {
        double p_a, b, gp, gt;             // scattered fraction, branching, rates
        double dpa_dm, dpa_dr, dpa_dc;     // partials of p_a
        double db_dc;                      // branching depends on c only
    };

    Point eval(double x_mhz, double m, double r, double c) const {
        Point o;
        const double g0 = gamma_p0(x_mhz);
        o.gp = c * c * g0;
        o.gt = gamma + o.gp;
        const double dgp_dc = 2.0 * c * g0;
        const double gq2 = c * c * gq1 * gq1;
        const double s = std::sqrt(kq * k1q);
        const double den = gq2 + kq * o.gt;
        const double eps = 2.0 * s * o.gt / den;
        const double dden_dc = 2.0 * c * gq1 * gq1 + kq * dgp_dc;
        const double deps_dc = 2.0 * s * (dgp_dc * den - o.gt * dden_dc) / (den * den);

        const double u = std::sqrt(m);
        const double v = std::sqrt(r);
        const double a = std::sqrt(k1q / kq);
        const double xfrac = (kq - k1q) / kq;
        const double refl = v - u * a * eps;

        const double pc = xfrac * m * eps * eps;
        const double pr = (1.0 - r) + refl * refl;
        o.p_a = 1.0 - pr - pc;

        const double dpc_dm = xfrac * eps * eps;
        const double dpc_dc = 2.0 * xfrac * m * eps * deps_dc;
        const double drefl_dm = -a * eps / (2.0 * u);
        const double drefl_dr = 1.0 / (2.0 * v);
        const double drefl_dc = -u * a * deps_dc;
        const double dpr_dm = 2.0 * refl * drefl_dm;
        const double dpr_dr = -1.0 + 2.0 * refl * drefl_dr;
        const double dpr_dc = 2.0 * refl * drefl_dc;
        o.dpa_dm = -dpr_dm - dpc_dm;
        o.dpa_dr = -dpr_dr;
        o.dpa_dc = -dpr_dc - dpc_dc;

        o.b = (gamma / 2.0 + o.gp) / o.gt;
        o.db_dc = (gamma / 2.0) / (o.gt * o.gt) * dgp_dc;
        return o;
    }
};

void require_detuning_coverage(const ScanResult& s, const char* which) {
    std::vector<double> xs = s.x;
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    bool has_zero = false;
    for (double x : xs) has_zero = has_zero || std::abs(x) < 1e-9;
    if (xs.size() < 3 || !has_zero)
        throw std::invalid_argument(
            std::string("fit_detuning_model: degenerate ") + which +
            " scan (need detuning zero and at least 3 distinct detunings)");
}

}  // namespace

FitResult fit_detuning_model(const ScanResult& storage, const ScanResult& heralding,
                             const SystemConfig& fixed) {
    require_detuning_coverage(storage, "storage");
    require_detuning_coverage(heralding, "heralding");
    const EfficiencyModel em(fixed);

    // Stage 1: the storage curve constrains the overlaps and the coupling
    // reduction; eta never enters p_s.
    FitModel stage1;
    stage1.names = {"mu_fc_sq", "mu_rc_sq", "coupling_reduction"};
    stage1.value = [em](double x, const Eigen::VectorXd& p) {
        const auto o = em.eval(x, p[0], p[1], p[2]);
        return o.p_a * o.b;
    };
    stage1.jacobian = [em](double x, const Eigen::VectorXd& p) {
        const auto o = em.eval(x, p[0], p[1], p[2]);
        Eigen::VectorXd j(3);
        j[0] = o.dpa_dm * o.b;
        j[1] = o.dpa_dr * o.b;
        j[2] = o.dpa_dc * o.b + o.p_a * o.db_dc;
        return j;
    };
    FitOptions o1;
    o1.lower = Eigen::VectorXd(3);
    o1.upper = Eigen::VectorXd(3);
    o1.lower << 1e-6, 1e-6, 1e-3;
    o1.upper << 1.0, 1.0, 1.0;
    Eigen::VectorXd i1(3);
    i1 << fixed.mu_fc_sq, fixed.mu_rc_sq, fixed.coupling_reduction;
    i1 = i1.cwiseMax(o1.lower).cwiseMin(o1.upper);
    const FitResult s1 = nls_fit(stage1, storage, i1, o1);

    // Stage 2: the heralding curve fits the detection efficiency alone,
    // every storage-stage parameter frozen at its fitted value.
    const double m_hat = s1.parameters[0];
    const double r_hat = s1.parameters[1];
    const double c_hat = s1.parameters[2];
    FitModel stage2;
    stage2.names = {"eta_herald"};
    stage2.value = [em, m_hat, r_hat, c_hat](double x, const Eigen::VectorXd& p) {
        const auto o = em.eval(x, m_hat, r_hat, c_hat);
        return p[0] * o.p_a * o.gp / o.gt;
    };
    stage2.jacobian = [em, m_hat, r_hat, c_hat](double x, const Eigen::VectorXd&) {
        const auto o = em.eval(x, m_hat, r_hat, c_hat);
        Eigen::VectorXd j(1);
        j[0] = o.p_a * o.gp / o.gt;
        return j;
    };
    FitOptions o2;
    o2.lower = Eigen::VectorXd(1);
    o2.upper = Eigen::VectorXd(1);
    o2.lower << 1e-9;
    o2.upper << 1.0;
    Eigen::VectorXd i2(1);
    i2 << std::clamp(fixed.eta_herald, o2.lower[0], o2.upper[0]);
    const FitResult s2 = nls_fit(stage2, heralding, i2, o2);

    FitResult out;
    out.names = {"mu_fc_sq", "mu_rc_sq", "coupling_reduction", "eta_herald"};
    out.parameters = Eigen::VectorXd(4);
    out.parameters << s1.parameters, s2.parameters;
    out.covariance = Eigen::MatrixXd::Zero(4, 4);
    out.covariance.topLeftCorner<3, 3>() = s1.covariance;
    out.covariance(3, 3) = s2.covariance(0, 0);
    out.residual_norm = std::hypot(s1.residual_norm, s2.residual_norm);
    out.converged = s1.converged && s2.converged;
    out.iterations = s1.iterations + s2.iterations;
    out.flags = s1.flags;
    out.flags.insert(out.flags.end(), s2.flags.begin(), s2.flags.end());
    return out;
}

// ---------------------------------------------------------------------------
// Coherence fits

namespace {

// Deterministic weighted periodogram peak over a fixed frequency grid.
double frequency_guess(const ScanResult& data, const Eigen::VectorXd& w) {
    std::vector<double> xs = data.x;
    std::sort(xs.begin(), xs.end());
    const double span_s = std::max((xs.back() - xs.front()) * us, 1e-12);
    double min_dt = span_s;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        const double dt = (xs[i] - xs[i - 1]) * us;
        if (dt > 0.0) min_dt = std::min(min_dt, dt);
    }
    double wsum = 0.0, ysum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        wsum += w[static_cast<Eigen::Index>(i)];
        ysum += w[static_cast<Eigen::Index>(i)] * data.estimate[i];
    }
    const double ybar = ysum / wsum;
    const double fmin = 0.5 / span_s;
    const double fmax = 0.5 / min_dt;
    double best_f = fmin, best_score = -1.0;
    constexpr int kGrid = 512;
    for (int k = 0; k < kGrid; ++k) {
        const double f = fmin + (fmax - fmin) * k / (kGrid - 1);
        double cr = 0.0, ci = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double ph = two_pi * f * data.x[i] * us;
            const double dy =
                w[static_cast<Eigen::Index>(i)] * (data.estimate[i] - ybar);
            cr += dy * std::cos(ph);
            ci += dy * std::sin(ph);
        }
        const double score = cr * cr + ci * ci;
        if (score > best_score) {
            best_score = score;
            best_f = f;
        }
    }
    return best_f;
}

}  // namespace

double coherence_time_from_field_noise(double sigma_b_gauss,
                                       const PhysicalConstants& k) {
    if (sigma_b_gauss <= 0.0)
        throw std::invalid_argument("coherence_time_from_field_noise: sigma_b <= 0");
    return 1.0 / (two_pi * 2.0 * k.g_f2 * k.mu_b_over_h * sigma_b_gauss);
}

double envelope_threshold_time(double visibility, double t2, double bound) {
    if (bound <= 0.5 || bound >= 1.0)
        throw std::invalid_argument("envelope_threshold_time: bound outside (1/2, 1)");
    if (t2 <= 0.0)
        throw std::invalid_argument("envelope_threshold_time: t2 <= 0");
    const double thr = 2.0 * bound - 1.0;
    if (visibility <= thr) return 0.0;
    return t2 * std::sqrt(2.0 * std::log(visibility / thr));
}

double field_noise_for_threshold(double t_star_s, double visibility, double bound,
                                 const PhysicalConstants& k) {
    if (bound <= 0.5 || bound >= 1.0)
        throw std::invalid_argument("field_noise_for_threshold: bound outside (1/2, 1)");
    const double thr = 2.0 * bound - 1.0;
    if (visibility <= thr || t_star_s <= 0.0)
        throw std::invalid_argument(
            "field_noise_for_threshold: envelope never reaches the bound");
    const double t2 = t_star_s / std::sqrt(2.0 * std::log(visibility / thr));
    return 1.0 / (two_pi * 2.0 * k.g_f2 * k.mu_b_over_h * t2);
}

FitResult fit_coherence(const ScanResult& data, CoherenceKind kind,
                        double classical_bound) {
    const std::size_t min_points = kind == CoherenceKind::oscillating ? 6 : 2;
    if (data.size() < min_points)
        throw std::invalid_argument("fit_coherence: too few time points");

    std::vector<double> xs = data.x;
    std::sort(xs.begin(), xs.end());
    const double span = std::max(xs.back() - xs.front(), 1e-12);  // us
    const auto [ymin_it, ymax_it] =
        std::minmax_element(data.estimate.begin(), data.estimate.end());

    FitModel m;
    Eigen::VectorXd init;
    FitOptions opts;
    if (kind == CoherenceKind::decaying) {
        m.names = {"visibility", "t2"};
        m.value = [](double t, const Eigen::VectorXd& p) {
            const double e = std::exp(-t * t / (2.0 * p[1] * p[1]));
            return 0.5 * (1.0 + p[0] * e);
        };
        m.jacobian = [](double t, const Eigen::VectorXd& p) {
            const double e = std::exp(-t * t / (2.0 * p[1] * p[1]));
            Eigen::VectorXd j(2);
            j[0] = 0.5 * e;
            j[1] = 0.5 * p[0] * e * t * t / (p[1] * p[1] * p[1]);
            return j;
        };
        // Visibility from the earliest point; T2 from the first time the
        // normalized envelope falls below exp(-1/2).
        std::size_t first = 0;
        for (std::size_t i = 1; i < data.size(); ++i) {
            if (data.x[i] < data.x[first]) first = i;
        }
        const double v0 =
            std::clamp(2.0 * data.estimate[first] - 1.0, 0.01, 1.5);
        double t20 = span;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.estimate[i] < 0.5 + 0.5 * v0 * std::exp(-0.5)) {
                t20 = std::max(data.x[i], span / 100.0);
                break;
            }
        }
        init = Eigen::VectorXd(2);
        init << v0, t20;
        opts.lower = Eigen::VectorXd(2);
        opts.upper = Eigen::VectorXd(2);
        opts.lower << 0.0, span * 1e-6;
        opts.upper << 2.0, span * 1e6;
    } else {
        m.names = {"visibility", "t2", "frequency", "t0"};
        m.value = [](double t, const Eigen::VectorXd& p) {
            const double e = std::exp(-t * t / (2.0 * p[1] * p[1]));
            const double ph = two_pi * p[2] * (t - p[3]) * us;
            return 0.5 * (1.0 + p[0] * e * std::cos(ph));
        };
        m.jacobian = [](double t, const Eigen::VectorXd& p) {
            const double e = std::exp(-t * t / (2.0 * p[1] * p[1]));
            const double ph = two_pi * p[2] * (t - p[3]) * us;
            const double c = std::cos(ph), s = std::sin(ph);
            Eigen::VectorXd j(4);
            j[0] = 0.5 * e * c;
            j[1] = 0.5 * p[0] * e * c * t * t / (p[1] * p[1] * p[1]);
            j[2] = -0.5 * p[0] * e * s * two_pi * (t - p[3]) * us;
            j[3] = 0.5 * p[0] * e * s * two_pi * p[2] * us;
            return j;
        };
        const Eigen::VectorXd w = weights_for(data, true);
        const double f0 = frequency_guess(data, w);
        const double v0 = std::clamp(*ymax_it - *ymin_it, 0.05, 1.5);
        init = Eigen::VectorXd(4);
        init << v0, 2.0 * span, f0, 0.0;
        opts.lower = Eigen::VectorXd(4);
        opts.upper = Eigen::VectorXd(4);
        opts.lower << 0.0, span * 1e-6, 0.0, -span;
        opts.upper << 2.0, span * 1e6, 4.0 * f0 + 1.0 / (span * us), span;
    }

    FitResult r = nls_fit(m, data, init, opts);

    const double v_hat = r.parameter("visibility");
    const double t2_hat = r.parameter("t2");
    if (kind == CoherenceKind::oscillating &&
        v_hat < std::max(3.0 * r.sigma("visibility"), 1e-3)) {
        r.flags.push_back("frequency non-identifiable");
    }

    // Envelope crossing of the classical bound, delta-method uncertainty.
    const double thr = 2.0 * classical_bound - 1.0;
    if (v_hat <= thr) {
        r.flags.push_back("threshold not crossed");
        r.derived.push_back({"t_threshold", 0.0, 0.0});
    } else {
        const double tstar = envelope_threshold_time(v_hat, t2_hat, classical_bound);
        Eigen::Vector2d grad;
        grad << t2_hat * t2_hat / (v_hat * tstar), tstar / t2_hat;
        const Eigen::Matrix2d c2 = r.covariance.topLeftCorner<2, 2>();
        const double var = grad.dot(c2 * grad);
        r.derived.push_back({"t_threshold", tstar, std::sqrt(std::max(0.0, var))});
    }
    return r;
}

}  // namespace cavmem
