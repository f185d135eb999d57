#include "cavmem/storage_model.hpp"

#include <cmath>
#include <stdexcept>

namespace cavmem {

double purcell_rate(double g_h, double kappa_h, double detuning_hz) {
    if (kappa_h <= 0.0) throw std::invalid_argument("purcell_rate: kappa_h must be > 0");
    const double d = two_pi * detuning_hz;
    return g_h * g_h * kappa_h / (kappa_h * kappa_h + d * d);
}

double branching_to_f2(double gamma, double gamma_p) {
    if (gamma <= 0.0 || gamma_p < 0.0) throw std::invalid_argument("branching_to_f2: bad rates");
    return (gamma / 2.0 + gamma_p) / (gamma + gamma_p);
}

LossFractions loss_fractions(const SystemConfig& cfg, double gamma_p) {
    const double kq = cfg.qubit_cavity.kappa;
    const double k1q = cfg.qubit_cavity.kappa_out;
    if (k1q > kq) throw std::invalid_argument("loss_fractions: kappa_out exceeds kappa");
    const double gq = cfg.g_qubit_protocol();
    const double gt = cfg.constants.gamma + gamma_p;
    const double eps = 2.0 * gt * std::sqrt(kq * k1q) / (gq * gq + kq * gt);
    const double mu_fc = std::sqrt(cfg.mu_fc_sq);
    const double mu_rc = std::sqrt(cfg.mu_rc_sq);
    LossFractions f;
    f.p_cavity_loss = (kq - k1q) / kq * cfg.mu_fc_sq * eps * eps;
    const double refl_amp = mu_rc - mu_fc * std::sqrt(k1q / kq) * eps;
    f.p_reflected = (1.0 - cfg.mu_rc_sq) + refl_amp * refl_amp;
    f.p_atom_scattered = 1.0 - f.p_reflected - f.p_cavity_loss;
    return f;
}

EfficiencyPoint storage_efficiency(const SystemConfig& cfg, double detuning_hz) {
    const double gp = purcell_rate(cfg.g_herald_protocol(), cfg.herald_cavity.kappa, detuning_hz);
    const LossFractions f = loss_fractions(cfg, gp);
    EfficiencyPoint e;
    e.p_s = f.p_atom_scattered * branching_to_f2(cfg.constants.gamma, gp);
    // only Purcell-channel scattering produces a herald photon
    e.p_h1 = f.p_atom_scattered * gp / (cfg.constants.gamma + gp) * cfg.eta_herald;
    return e;
}

std::pair<ScanResult, ScanResult> efficiency_curves(const SystemConfig& cfg,
                                                    std::span<const double> detunings_hz) {
    if (detunings_hz.empty()) throw std::invalid_argument("efficiency_curves: empty grid");
    ScanResult ps, ph;
    ps.label = "storage efficiency p_s";
    ph.label = "heralding probability p_H1";
    ps.x_label = ph.x_label = "detuning_MHz";
    for (double d : detunings_hz) {
        const EfficiencyPoint e = storage_efficiency(cfg, d);
        ps.push(d / mhz, e.p_s, 0.0);
        ph.push(d / mhz, e.p_h1, 0.0);
    }
    return {ps, ph};
}

double p_t_from_p_s(double p_s, double n_mean) {
    if (n_mean <= 0.0) throw std::invalid_argument("p_t_from_p_s: n_mean must be > 0");
    if (p_s < 0.0) throw std::invalid_argument("p_t_from_p_s: negative p_s");
    return 1.0 - std::exp(-n_mean * p_s);
}

double p_s_from_p_t(double p_t_nbar, double n_mean) {
    if (n_mean <= 0.0) throw std::invalid_argument("p_s_from_p_t: n_mean must be > 0");
    if (p_t_nbar < 0.0 || p_t_nbar >= 1.0)
        throw std::invalid_argument("p_s_from_p_t: p_t outside [0,1) is unconvertible");
    return -std::log1p(-p_t_nbar) / n_mean;
}

double p_h1_from_pulse(double p_h_nbar, double p_t_nbar, double n_mean) {
    if (p_h_nbar < 0.0 || p_h_nbar > 1.0)
        throw std::invalid_argument("p_h1_from_pulse: p_h outside [0,1]");
    if (p_t_nbar <= 0.0) return p_h_nbar / n_mean;  // series limit of the correction factor
    if (p_t_nbar >= 1.0)
        throw std::invalid_argument("p_h1_from_pulse: p_t = 1 is unconvertible");
    return -(p_h_nbar / n_mean) * std::log1p(-p_t_nbar) / p_t_nbar;
}

double p_h_nbar_from_p_h1(double p_h1, double p_t_nbar, double n_mean) {
    if (p_t_nbar <= 0.0) return p_h1 * n_mean;
    if (p_t_nbar >= 1.0)
        throw std::invalid_argument("p_h_nbar_from_p_h1: p_t = 1 is unconvertible");
    return p_h1 * n_mean * p_t_nbar / (-std::log1p(-p_t_nbar));
}

}  // namespace cavmem
