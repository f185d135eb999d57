#pragma once
#include <stdexcept>
#include <string>
#include <vector>

#include "cavmem/cavity.hpp"
#include "cavmem/polarization.hpp"
#include "cavmem/units.hpp"

// Validated system configuration: one atom, two crossed fibre cavities, the
// drive pulses and the detection chains. Loaded from a flat INI-style text
// document with unit-suffixed keys (see configs/paper.cfg for the key list).

namespace cavmem {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChainElement {
    std::string name;
    double efficiency = 1.0;
};

struct PulseEnvelope {
    enum class Shape { quasi_rectangular, smooth };
    Shape shape = Shape::quasi_rectangular;
    double duration = 0.0;   // s
    double rise_time = 0.0;  // s, quasi_rectangular ramps (sin^2)
    double n_mean = 0.0;     // mean photon number per pulse
    std::vector<double> samples;  // smooth shape: relative intensity samples
    PolarizationState polarization = PolarizationState::H();

    // normalized intensity envelope, integral over [0, duration] = 1
    double intensity(double t) const;
    void validate(const std::string& label) const;
};

struct PreparationError {
    double p_f1 = 0.0;  // residual population split across |1,+-1>
    double p_f2 = 0.0;  // residual population spread over the F=2 manifold
};

struct SystemConfig {
    PhysicalConstants constants = PhysicalConstants::rb87();

    CavityParams qubit_cavity;
    CavityParams herald_cavity;

    double g_qubit = 0.0;   // cycling-normalized atom-cavity coupling, rad/s
    double g_herald = 0.0;  // rad/s
    double coupling_reduction = 1.0;  // applied to both g values

    double mu_fc_sq = 1.0;  // fibre-cavity intensity overlap
    double mu_rc_sq = 1.0;  // reflection-mode intensity overlap

    double herald_detuning = 0.0;  // Hz
    double eta_herald = 0.0;       // lumped herald detection efficiency
    double eta_tolerance = 0.2;    // declared |eta - chain product| tolerance (relative)
    std::vector<ChainElement> herald_chain;   // applied after the outcoupler split
    std::vector<ChainElement> readout_chain;

    double b_field = 0.0;        // G, guiding field along the quantization axis
    double b_noise_sigma = 0.0;  // G, quasi-static residual-field spread

    double classical_fidelity_bound = 0.69;

    PulseEnvelope write_pulse;
    PulseEnvelope read_pulse;
    double reference_n_mean = 10.0;

    PreparationError prep_error;

    // protocol-transition couplings: reduction x g x dipole amplitude
    double g_qubit_protocol() const;   // |1,0> <-> |2',+-1>, sigma
    double g_herald_protocol() const;  // |2,+-1> <-> |2',+-1>, pi

    double herald_chain_product() const;
    double readout_chain_product() const;
    double larmor_frequency() const;  // Hz, g_F * (mu_B/h) * B

    void validate() const;  // throws ConfigError
};

SystemConfig parse_config(const std::string& text);
SystemConfig load_config(const std::string& path);
std::string emit_config(const SystemConfig& cfg);
void save_config(const SystemConfig& cfg, const std::string& path);

// The published operating point, embedded so every tool runs without files.
SystemConfig default_config();

}  // namespace cavmem
