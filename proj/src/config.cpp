#include "cavmem/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cavmem/level_scheme.hpp"

namespace cavmem {

// ---------------------------------------------------------------------------
// PulseEnvelope
// ---------------------------------------------------------------------------

double PulseEnvelope::intensity(double t) const {
    if (t < 0.0 || t > duration) return 0.0;
    if (shape == Shape::quasi_rectangular) {
        const double tr = rise_time;
        double e = 1.0;
        if (tr > 0.0) {
            if (t < tr) {
                const double s = std::sin(pi * t / (2.0 * tr));
                e = s * s;
            } else if (t > duration - tr) {
                const double s = std::sin(pi * (duration - t) / (2.0 * tr));
                e = s * s;
            }
        }
        return e / (duration - tr);  // sin^2 ramps each integrate to tr/2
    }
    // smooth: linear interpolation of tabulated intensity samples
    const std::size_t n = samples.size();
    const double x = t / duration * double(n - 1);
    const std::size_t i = std::min<std::size_t>(std::size_t(x), n - 2);
    const double f = x - double(i);
    const double v = samples[i] * (1.0 - f) + samples[i + 1] * f;
    // trapezoid integral of the sample table
    double integral = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) integral += 0.5 * (samples[k] + samples[k + 1]);
    integral *= duration / double(n - 1);
    return v / integral;
}

void PulseEnvelope::validate(const std::string& label) const {
    if (duration <= 0.0) throw ConfigError(label + ": duration must be > 0");
    if (n_mean < 0.0) throw ConfigError(label + ": mean photon number must be >= 0");
    if (shape == Shape::quasi_rectangular) {
        if (rise_time < 0.0 || rise_time > duration / 2.0)
            throw ConfigError(label + ": rise time must lie in [0, duration/2]");
    } else {
        if (samples.size() < 2) throw ConfigError(label + ": smooth shape needs >= 2 samples");
        double peak = 0.0;
        for (double s : samples) {
            if (s < 0.0) throw ConfigError(label + ": negative intensity sample");
            peak = std::max(peak, s);
        }
        if (peak <= 0.0) throw ConfigError(label + ": all-zero sample table");
    }
    const double n2 = polarization.norm2();
    if (std::abs(n2 - 1.0) > 1e-9)
        throw ConfigError(label + ": polarization must be normalized");
}

// ---------------------------------------------------------------------------
// SystemConfig derived quantities
// ---------------------------------------------------------------------------

double SystemConfig::g_qubit_protocol() const {
    const double d = LevelScheme::rb87_d2().amplitude(1, 0, 2, +1);  // = 1/2
    return coupling_reduction * g_qubit * d;
}

double SystemConfig::g_herald_protocol() const {
    const double d = LevelScheme::rb87_d2().amplitude(2, +1, 2, +1);  // = 1/sqrt(12)
    return coupling_reduction * g_herald * std::abs(d);
}

static double chain_product(const std::vector<ChainElement>& chain) {
    double p = 1.0;
    for (const auto& e : chain) p *= e.efficiency;
    return p;
}

double SystemConfig::herald_chain_product() const { return chain_product(herald_chain); }
double SystemConfig::readout_chain_product() const { return chain_product(readout_chain); }

double SystemConfig::larmor_frequency() const {
    return constants.g_f2 * constants.mu_b_over_h * b_field;
}

void SystemConfig::validate() const {
    auto in01 = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError(std::string("config: ") + name + " outside [0,1]");
    };
    in01(mu_fc_sq, "mu_fc_sq");
    in01(mu_rc_sq, "mu_rc_sq");
    in01(eta_herald, "eta");
    in01(prep_error.p_f1, "preparation p_f1");
    in01(prep_error.p_f2, "preparation p_f2");
    if (prep_error.p_f1 + prep_error.p_f2 > 1.0)
        throw ConfigError("config: preparation error populations exceed 1");
    for (const auto& c : {herald_chain, readout_chain})
        for (const auto& e : c) in01(e.efficiency, ("chain element " + e.name).c_str());
    if (classical_fidelity_bound <= 0.0 || classical_fidelity_bound >= 1.0)
        throw ConfigError("config: classical fidelity bound outside (0,1)");
    if (g_qubit < 0.0 || g_herald < 0.0) throw ConfigError("config: negative coupling rate");
    if (coupling_reduction <= 0.0 || coupling_reduction > 2.0)
        throw ConfigError("config: coupling_reduction outside (0,2]");
    if (b_noise_sigma < 0.0) throw ConfigError("config: negative b_noise_sigma");
    if (reference_n_mean <= 0.0) throw ConfigError("config: reference n_mean must be > 0");
    if (qubit_cavity.kappa <= 0.0 || herald_cavity.kappa <= 0.0)
        throw ConfigError("config: cavity rates not derived");
    if (qubit_cavity.kappa_out > qubit_cavity.kappa ||
        herald_cavity.kappa_out > herald_cavity.kappa)
        throw ConfigError("config: kappa_out exceeds kappa");
    write_pulse.validate("write_pulse");
    read_pulse.validate("read_pulse");
    if (!herald_chain.empty() && eta_herald > 0.0) {
        const double prod = herald_chain_product();
        if (std::abs(eta_herald - prod) > eta_tolerance * eta_herald)
            throw ConfigError("config: eta inconsistent with herald chain product");
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

struct KvDoc {
    std::map<std::string, std::string> kv;       // "section.key" -> value
    mutable std::map<std::string, bool> touched;

    void insert(const std::string& full, const std::string& value) {
        if (kv.count(full)) throw ConfigError("config: duplicate key " + full);
        kv[full] = value;
        touched[full] = false;
    }
    const std::string* find(const std::string& full) const {
        auto it = kv.find(full);
        if (it == kv.end()) return nullptr;
        touched[full] = true;
        return &it->second;
    }
    std::string require(const std::string& full) const {
        const std::string* v = find(full);
        if (!v) throw ConfigError("config: missing required key " + full);
        return *v;
    }
};

KvDoc tokenize(const std::string& text) {
    KvDoc doc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto cut = line.find_first_of("#;");
        std::string body = trim(cut == std::string::npos ? line : line.substr(0, cut));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
            section = trim(body.substr(1, body.size() - 2));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
        doc.insert(section.empty() ? key : section + "." + key, value);
    }
    return doc;
}

double parse_double(const std::string& full, const std::string& v) {
    double out = 0.0;
    const char* b = v.data();
    const char* e = v.data() + v.size();
    auto [p, ec] = std::from_chars(b, e, out);
    if (ec != std::errc() || p != e)
        throw ConfigError("config: key " + full + " is not a number: '" + v + "'");
    return out;
}

double get_num(const KvDoc& doc, const std::string& full) {
    return parse_double(full, doc.require(full));
}

double get_num_or(const KvDoc& doc, const std::string& full, double fallback) {
    const std::string* v = doc.find(full);
    return v ? parse_double(full, *v) : fallback;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else
            cur.push_back(ch);
    }
    out.push_back(trim(cur));
    return out;
}

CavityParams parse_cavity(const KvDoc& doc, const std::string& sec) {
    CavityParams c;
    c.length = get_num(doc, sec + ".length_um") * um;
    c.finesse = get_num(doc, sec + ".finesse");
    c.roc_out_x = get_num(doc, sec + ".roc_out_x_um") * um;
    c.roc_out_y = get_num(doc, sec + ".roc_out_y_um") * um;
    c.roc_back_x = get_num(doc, sec + ".roc_back_x_um") * um;
    c.roc_back_y = get_num(doc, sec + ".roc_back_y_um") * um;
    c.t_out = get_num(doc, sec + ".t_out_ppm") * 1e-6;
    c.t_back = get_num(doc, sec + ".t_back_ppm") * 1e-6;
    c.derive();
    return c;
}

std::vector<ChainElement> parse_chain(const KvDoc& doc, const std::string& full) {
    std::vector<ChainElement> chain;
    const std::string* v = doc.find(full);
    if (!v || v->empty()) return chain;
    for (const std::string& item : split(*v, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("config: chain element '" + item + "' needs name:efficiency");
        ChainElement e;
        e.name = trim(item.substr(0, colon));
        e.efficiency = parse_double(full, trim(item.substr(colon + 1)));
        chain.push_back(e);
    }
    return chain;
}

PolarizationState parse_polarization(const std::string& full, const std::string& v) {
    if (v == "R") return PolarizationState::R();
    if (v == "L") return PolarizationState::L();
    if (v == "H") return PolarizationState::H();
    if (v == "V") return PolarizationState::V();
    if (v == "D") return PolarizationState::D();
    if (v == "A") return PolarizationState::A();
    const auto parts = split(v, ',');
    if (parts.size() != 4)
        throw ConfigError("config: " + full + " must be R/L/H/V/D/A or re_r,im_r,re_l,im_l");
    PolarizationState p;
    p.r = {parse_double(full, parts[0]), parse_double(full, parts[1])};
    p.l = {parse_double(full, parts[2]), parse_double(full, parts[3])};
    return p.normalized();
}

PulseEnvelope parse_pulse(const KvDoc& doc, const std::string& sec) {
    PulseEnvelope p;
    const std::string shape = doc.require(sec + ".shape");
    if (shape == "quasi_rectangular")
        p.shape = PulseEnvelope::Shape::quasi_rectangular;
    else if (shape == "smooth")
        p.shape = PulseEnvelope::Shape::smooth;
    else
        throw ConfigError("config: unknown pulse shape '" + shape + "'");
    p.duration = get_num(doc, sec + ".duration_ns") * ns;
    p.rise_time = get_num_or(doc, sec + ".rise_ns", 0.0) * ns;
    p.n_mean = get_num(doc, sec + ".n_mean");
    if (const std::string* v = doc.find(sec + ".samples")) {
        for (const std::string& s : split(*v, ','))
            p.samples.push_back(parse_double(sec + ".samples", s));
    } else if (p.shape == PulseEnvelope::Shape::smooth) {
        // default smooth shape: one sin^2 arch
        for (int i = 0; i <= 100; ++i) {
            const double s = std::sin(pi * i / 100.0);
            p.samples.push_back(s * s);
        }
    }
    if (const std::string* v = doc.find(sec + ".polarization"))
        p.polarization = parse_polarization(sec + ".polarization", *v);
    return p;
}

std::string fmt(double v) {
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

void emit_polarization(std::ostream& os, const PolarizationState& p) {
    const std::pair<const char*, PolarizationState> named[] = {
        {"R", PolarizationState::R()}, {"L", PolarizationState::L()},
        {"H", PolarizationState::H()}, {"V", PolarizationState::V()},
        {"D", PolarizationState::D()}, {"A", PolarizationState::A()}};
    for (const auto& [name, s] : named)
        if (p.r == s.r && p.l == s.l) {
            os << name;
            return;
        }
    os << fmt(p.r.real()) << "," << fmt(p.r.imag()) << "," << fmt(p.l.real()) << ","
       << fmt(p.l.imag());
}

void emit_cavity(std::ostream& os, const char* sec, const CavityParams& c) {
    os << "[" << sec << "]\n";
    os << "length_um = " << fmt(c.length / um) << "\n";
    os << "finesse = " << fmt(c.finesse) << "\n";
    os << "roc_out_x_um = " << fmt(c.roc_out_x / um) << "\n";
    os << "roc_out_y_um = " << fmt(c.roc_out_y / um) << "\n";
    os << "roc_back_x_um = " << fmt(c.roc_back_x / um) << "\n";
    os << "roc_back_y_um = " << fmt(c.roc_back_y / um) << "\n";
    os << "t_out_ppm = " << fmt(c.t_out * 1e6) << "\n";
    os << "t_back_ppm = " << fmt(c.t_back * 1e6) << "\n";
}

void emit_chain(std::ostream& os, const std::vector<ChainElement>& chain) {
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (i) os << ", ";
        os << chain[i].name << ":" << fmt(chain[i].efficiency);
    }
}

void emit_pulse(std::ostream& os, const char* sec, const PulseEnvelope& p) {
    os << "[" << sec << "]\n";
    os << "shape = "
       << (p.shape == PulseEnvelope::Shape::quasi_rectangular ? "quasi_rectangular" : "smooth")
       << "\n";
    os << "duration_ns = " << fmt(p.duration / ns) << "\n";
    os << "rise_ns = " << fmt(p.rise_time / ns) << "\n";
    os << "n_mean = " << fmt(p.n_mean) << "\n";
    if (!p.samples.empty()) {
        os << "samples = ";
        for (std::size_t i = 0; i < p.samples.size(); ++i) {
            if (i) os << ",";
            os << fmt(p.samples[i]);
        }
        os << "\n";
    }
    os << "polarization = ";
    emit_polarization(os, p.polarization);
    os << "\n";
}

}  // namespace

SystemConfig parse_config(const std::string& text) {
    const KvDoc doc = tokenize(text);
    SystemConfig cfg;

    cfg.constants.lambda = get_num_or(doc, "constants.wavelength_nm", 780.24) * nm;
    cfg.constants.gamma = rate_from_mhz(get_num_or(doc, "constants.gamma_mhz", 3.03));
    cfg.constants.mu_b_over_h =
        get_num_or(doc, "constants.mu_b_mhz_per_g", 1.3996) * mhz;
    cfg.constants.g_f2 = get_num_or(doc, "constants.g_factor_f2", 0.5);

    cfg.qubit_cavity = parse_cavity(doc, "qubit_cavity");
    cfg.herald_cavity = parse_cavity(doc, "herald_cavity");

    cfg.g_qubit = rate_from_mhz(get_num(doc, "coupling.g_qubit_mhz"));
    cfg.g_herald = rate_from_mhz(get_num(doc, "coupling.g_herald_mhz"));
    cfg.coupling_reduction = get_num(doc, "coupling.reduction");

    cfg.mu_fc_sq = get_num(doc, "overlaps.mu_fc_sq");
    cfg.mu_rc_sq = get_num(doc, "overlaps.mu_rc_sq");

    cfg.herald_detuning = get_num(doc, "herald.detuning_mhz") * mhz;
    cfg.eta_herald = get_num(doc, "herald.eta");
    cfg.eta_tolerance = get_num_or(doc, "herald.eta_tolerance", 0.2);
    cfg.herald_chain = parse_chain(doc, "herald.chain");
    cfg.readout_chain = parse_chain(doc, "readout.chain");

    cfg.b_field = get_num(doc, "field.b_mg") * 1e-3;
    cfg.b_noise_sigma = get_num(doc, "field.b_noise_sigma_mg") * 1e-3;

    cfg.classical_fidelity_bound = get_num_or(doc, "fidelity.classical_bound", 0.69);

    cfg.write_pulse = parse_pulse(doc, "write_pulse");
    cfg.read_pulse = parse_pulse(doc, "read_pulse");
    cfg.reference_n_mean = get_num_or(doc, "reference.n_mean", 10.0);

    cfg.prep_error.p_f1 = get_num_or(doc, "preparation.p_f1", 0.0);
    cfg.prep_error.p_f2 = get_num_or(doc, "preparation.p_f2", 0.0);

    for (const auto& [key, used] : doc.touched)
        if (!used) throw ConfigError("config: unknown key " + key);

    cfg.validate();
    return cfg;
}

SystemConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string emit_config(const SystemConfig& cfg) {
    std::ostringstream os;
    os << "[constants]\n";
    os << "wavelength_nm = " << fmt(cfg.constants.lambda / nm) << "\n";
    os << "gamma_mhz = " << fmt(rate_to_mhz(cfg.constants.gamma)) << "\n";
    os << "mu_b_mhz_per_g = " << fmt(cfg.constants.mu_b_over_h / mhz) << "\n";
    os << "g_factor_f2 = " << fmt(cfg.constants.g_f2) << "\n\n";
    emit_cavity(os, "qubit_cavity", cfg.qubit_cavity);
    os << "\n";
    emit_cavity(os, "herald_cavity", cfg.herald_cavity);
    os << "\n[coupling]\n";
    os << "g_qubit_mhz = " << fmt(rate_to_mhz(cfg.g_qubit)) << "\n";
    os << "g_herald_mhz = " << fmt(rate_to_mhz(cfg.g_herald)) << "\n";
    os << "reduction = " << fmt(cfg.coupling_reduction) << "\n";
    os << "\n[overlaps]\n";
    os << "mu_fc_sq = " << fmt(cfg.mu_fc_sq) << "\n";
    os << "mu_rc_sq = " << fmt(cfg.mu_rc_sq) << "\n";
    os << "\n[herald]\n";
    os << "detuning_mhz = " << fmt(cfg.herald_detuning / mhz) << "\n";
    os << "eta = " << fmt(cfg.eta_herald) << "\n";
    os << "eta_tolerance = " << fmt(cfg.eta_tolerance) << "\n";
    os << "chain = ";
    emit_chain(os, cfg.herald_chain);
    os << "\n";
    os << "\n[readout]\n";
    os << "chain = ";
    emit_chain(os, cfg.readout_chain);
    os << "\n";
    os << "\n[field]\n";
    os << "b_mg = " << fmt(cfg.b_field * 1e3) << "\n";
    os << "b_noise_sigma_mg = " << fmt(cfg.b_noise_sigma * 1e3) << "\n";
    os << "\n[fidelity]\n";
    os << "classical_bound = " << fmt(cfg.classical_fidelity_bound) << "\n\n";
    emit_pulse(os, "write_pulse", cfg.write_pulse);
    os << "\n";
    emit_pulse(os, "read_pulse", cfg.read_pulse);
    os << "\n[reference]\n";
    os << "n_mean = " << fmt(cfg.reference_n_mean) << "\n";
    os << "\n[preparation]\n";
    os << "p_f1 = " << fmt(cfg.prep_error.p_f1) << "\n";
    os << "p_f2 = " << fmt(cfg.prep_error.p_f2) << "\n";
    return os.str();
}

void save_config(const SystemConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("config: cannot write " + path);
    out << emit_config(cfg);
}

SystemConfig default_config() {
    static const char* text = R"cfg(
# Published operating point of the crossed-cavity single-atom memory.

[qubit_cavity]
length_um = 162
finesse = 14600
roc_out_x_um = 340
roc_out_y_um = 340
roc_back_x_um = 170
roc_back_y_um = 170
t_out_ppm = 340
t_back_ppm = 10

[herald_cavity]
length_um = 80
finesse = 15680
roc_out_x_um = 100
roc_out_y_um = 290
roc_back_x_um = 90
roc_back_y_um = 230
t_out_ppm = 340
t_back_ppm = 10

[coupling]
# cycling-normalized coupling rates (2*pi MHz); protocol transitions pick up
# their dipole amplitudes (write sigma: 1/2, herald pi: 1/sqrt(12)) on top of
# the shared localization reduction factor.
g_qubit_mhz = 63.141743
g_herald_mhz = 84.945701
reduction = 0.6

[overlaps]
mu_fc_sq = 0.8
mu_rc_sq = 0.95

[herald]
detuning_mhz = 0
eta = 0.3
eta_tolerance = 0.2
chain = mirror_escape:0.85, mode_match:0.8, path:0.75, detector:0.5

[readout]
chain = mode_match:0.8, path:0.75, detector:0.5

[field]
b_mg = 0
b_noise_sigma_mg = 6.3275

[fidelity]
classical_bound = 0.69

[write_pulse]
shape = quasi_rectangular
duration_ns = 740
rise_ns = 40
n_mean = 0.5
polarization = H

[read_pulse]
shape = quasi_rectangular
duration_ns = 730
rise_ns = 40
n_mean = 6
polarization = H

[reference]
n_mean = 10

[preparation]
p_f1 = 0.01
p_f2 = 0.06
)cfg";
    return parse_config(text);
}

}  // namespace cavmem
