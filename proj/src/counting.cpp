#include "cavmem/counting.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cavmem/config.hpp"
#include "cavmem/storage_model.hpp"

namespace cavmem {

namespace {

// one-sided 68 % upper-limit scale for a zero-count binomial rate
double zero_count_sigma(std::size_t n_trials) {
    return n_trials ? 1.14 / static_cast<double>(n_trials) : 0.0;
}

std::vector<double> click_times(const TrialRecord& t, ClickStream s) {
    std::vector<double> out;
    if (s == ClickStream::herald) {
        if (t.herald_click) out.push_back(t.herald_click->time);
    } else {
        if (t.readout_click) out.push_back(t.readout_click->time);
    }
    return out;
}

// per-trial click-time lists in canonical (trial-id) order
std::vector<std::vector<double>> stream_times(const ClickDataset& ds, ClickStream s) {
    std::vector<std::size_t> order(ds.trials.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ds.trials[a].trial_id < ds.trials[b].trial_id;
    });
    std::vector<std::vector<double>> out;
    out.reserve(order.size());
    for (std::size_t i : order) out.push_back(click_times(ds.trials[i], s));
    return out;
}

PolarizationState dataset_input(const ClickDataset& ds) {
    if (ds.plan.input_override) return ds.plan.input_override->normalized();
    return parse_config(ds.config_snapshot).write_pulse.polarization.normalized();
}

struct RateEstimate {
    double rate = 0.0;
    double sigma = 0.0;
    std::size_t clicks = 0;
    std::size_t trials = 0;
};

RateEstimate click_rate(const ClickDataset& ds, ClickStream s) {
    RateEstimate r;
    r.trials = ds.trials.size();
    for (const auto& t : ds.trials)
        if (!click_times(t, s).empty()) ++r.clicks;
    if (r.trials == 0) return r;
    const double n = static_cast<double>(r.trials);
    r.rate = static_cast<double>(r.clicks) / n;
    r.sigma = r.clicks ? std::sqrt(r.rate * (1.0 - r.rate) / n) : zero_count_sigma(r.trials);
    return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// CountTable

std::int64_t CountTable::row_total(std::size_t input_index) const {
    std::int64_t s = 0;
    for (std::int64_t c : counts.at(input_index)) s += c;
    return s;
}

std::int64_t CountTable::parallel(std::size_t input_index) const {
    return counts.at(input_index)[input_index];
}

std::int64_t CountTable::perpendicular(std::size_t input_index) const {
    return counts.at(input_index)[input_index ^ 1u];
}

void CountTable::validate() const {
    for (const auto& row : counts)
        for (std::int64_t c : row)
            if (c < 0) throw std::invalid_argument("CountTable: negative count");
}

std::string CountTable::to_csv() const {
    std::ostringstream os;
    os << "input";
    for (const char* l : kLabels) os << "," << l;
    os << "\n";
    for (std::size_t i = 0; i < 6; ++i) {
        os << kLabels[i];
        for (std::size_t j = 0; j < 6; ++j) os << "," << counts[i][j];
        os << "\n";
    }
    return os.str();
}

CountTable CountTable::from_csv(const std::string& text) {
    CountTable t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("input", 0) != 0)
        throw std::invalid_argument("CountTable::from_csv: missing header");
    for (std::size_t i = 0; i < 6; ++i) {
        if (!std::getline(in, line))
            throw std::invalid_argument("CountTable::from_csv: truncated table");
        std::istringstream row(line);
        std::string cell;
        if (!std::getline(row, cell, ',') || cell != kLabels[i])
            throw std::invalid_argument("CountTable::from_csv: bad row label: " + line);
        for (std::size_t j = 0; j < 6; ++j) {
            if (!std::getline(row, cell, ','))
                throw std::invalid_argument("CountTable::from_csv: short row: " + line);
            t.counts[i][j] = std::stoll(cell);
        }
    }
    t.validate();
    return t;
}

std::size_t canonical_state_index(const PolarizationState& s) {
    const PolarizationState n = s.normalized();
    const PolarizationState canon[6] = {PolarizationState::R(), PolarizationState::L(),
                                        PolarizationState::H(), PolarizationState::V(),
                                        PolarizationState::D(), PolarizationState::A()};
    for (std::size_t i = 0; i < 6; ++i)
        if (std::norm(canon[i].overlap(n)) > 1.0 - 1e-9) return i;
    throw std::invalid_argument("canonical_state_index: not a canonical input state");
}

std::size_t outcome_state_index(Basis b, int outcome) {
    if (outcome != 0 && outcome != 1)
        throw std::invalid_argument("outcome_state_index: outcome must be 0 or 1");
    return 2u * static_cast<std::size_t>(b) + static_cast<std::size_t>(outcome);
}

void accumulate_counts(CountTable& table, std::size_t input_index,
                       const ClickDataset& ds) {
    if (input_index >= 6) throw std::invalid_argument("accumulate_counts: bad row");
    for (const auto& t : ds.trials) {
        if (!t.readout_click) continue;
        const std::size_t col =
            outcome_state_index(t.readout_click->basis, t.readout_click->outcome);
        ++table.counts[input_index][col];
    }
}

// ---------------------------------------------------------------------------
// Stream statistics

ScanResult histogram(const ClickDataset& ds, ClickStream stream, double bin_width) {
    if (ds.trials.empty()) throw std::invalid_argument("histogram: empty dataset");
    if (!(bin_width > 0.0)) throw std::invalid_argument("histogram: bin width must be > 0");
    double t_max = 0.0;
    std::vector<double> times;
    for (const auto& t : ds.trials)
        for (double x : click_times(t, stream)) {
            times.push_back(x);
            t_max = std::max(t_max, x);
        }
    const std::size_t bins =
        times.empty() ? 1 : static_cast<std::size_t>(std::floor(t_max / bin_width)) + 1;
    std::vector<double> count(bins, 0.0);
    for (double x : times) {
        std::size_t b = static_cast<std::size_t>(std::floor(x / bin_width));
        if (b >= bins) b = bins - 1;
        count[b] += 1.0;
    }
    ScanResult r;
    r.label = stream == ClickStream::herald ? "herald_clicks_per_trial"
                                            : "readout_clicks_per_trial";
    r.x_label = "time_s";
    const double n = static_cast<double>(ds.trials.size());
    for (std::size_t b = 0; b < bins; ++b)
        r.push((static_cast<double>(b) + 0.5) * bin_width, count[b] / n,
               std::sqrt(count[b]) / n);
    return r;
}

ScanResult g2(const ClickDataset& ds, ClickStream stream, double max_lag,
              double bin_width) {
    return g2(stream_times(ds, stream), max_lag, bin_width);
}

ScanResult g2(const std::vector<std::vector<double>>& trials, double max_lag,
              double bin_width) {
    if (!(bin_width > 0.0) || !(max_lag > 0.0))
        throw std::invalid_argument("g2: lag window and bin width must be > 0");
    std::size_t total = 0;
    for (const auto& t : trials) total += t.size();
    if (total < 2) throw std::invalid_argument("g2: fewer than two clicks in stream");

    const std::size_t bins = static_cast<std::size_t>(std::ceil(max_lag / bin_width - 1e-12));
    std::vector<double> same(bins, 0.0), cross(bins, 0.0);
    auto bin_of = [&](double lag) -> std::size_t {
        return static_cast<std::size_t>(std::floor(std::abs(lag) / bin_width));
    };
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& a = trials[i];
        for (std::size_t j = 0; j < a.size(); ++j)
            for (std::size_t k = j + 1; k < a.size(); ++k) {
                const std::size_t b = bin_of(a[k] - a[j]);
                if (b < bins) same[b] += 1.0;
            }
        if (i + 1 < trials.size()) {
            for (double x : a)
                for (double y : trials[i + 1]) {
                    const std::size_t b = bin_of(x - y);
                    if (b < bins) cross[b] += 1.0;
                }
        }
    }
    const double n = static_cast<double>(trials.size());
    // same-trial pairs are unordered while adjacent-trial pairs count both
    // directions, and there are N-1 adjacent pairs for N trials
    const double opportunity = n > 1.5 ? 2.0 * (n - 1.0) / n : 2.0;
    ScanResult r;
    r.label = "g2";
    r.x_label = "lag_s";
    for (std::size_t b = 0; b < bins; ++b) {
        const double x = (static_cast<double>(b) + 0.5) * bin_width;
        if (cross[b] <= 0.0) {
            r.push(x, 0.0, 0.0);
            continue;
        }
        const double scale = opportunity / cross[b];
        const double est = same[b] * scale;
        const double sig = same[b] > 0.0
                               ? est * std::sqrt(1.0 / same[b] + 1.0 / cross[b])
                               : scale;  // one-count scale for empty numerator
        r.push(x, est, sig);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Conditioning and probability estimation

Conditioned condition_on_herald(const ClickDataset& ds) {
    Conditioned out;
    out.data.config_snapshot = ds.config_snapshot;
    out.data.seed = ds.seed;
    out.data.plan = ds.plan;
    for (const auto& t : ds.trials)
        if (t.herald_click) out.data.trials.push_back(t);
    out.retained_fraction =
        ds.trials.empty() ? 0.0
                          : static_cast<double>(out.data.trials.size()) /
                                static_cast<double>(ds.trials.size());
    return out;
}

BernoulliEstimate bernoulli_ci(std::int64_t n_parallel, std::int64_t n_perpendicular) {
    if (n_parallel < 0 || n_perpendicular < 0)
        throw std::invalid_argument("bernoulli_ci: negative counts");
    const std::int64_t total = n_parallel + n_perpendicular;
    if (total == 0) throw std::invalid_argument("bernoulli_ci: zero total counts");
    BernoulliEstimate e;
    e.p = static_cast<double>(n_parallel) / static_cast<double>(total);
    e.sigma = std::sqrt(e.p * (1.0 - e.p) / static_cast<double>(total));
    e.degenerate = (n_parallel == 0 || n_perpendicular == 0);
    return e;
}

int expected_outcome(const PolarizationState& input, Basis b) {
    const PolarizationState n = input.normalized();
    const double p0 = std::norm(basis_state(b, 0).overlap(n));
    if (std::abs(p0 - 0.5) < 1e-9)
        throw std::invalid_argument("expected_outcome: input is unbiased in this basis");
    return p0 > 0.5 ? 0 : 1;
}

BernoulliEstimate readout_fidelity(const ClickDataset& ds, std::optional<double> cut) {
    const int want = expected_outcome(dataset_input(ds), ds.plan.readout_basis);
    std::int64_t par = 0, perp = 0;
    for (const auto& t : ds.trials) {
        if (!t.readout_click) continue;
        if (cut && !(t.readout_click->time < *cut)) continue;
        (t.readout_click->outcome == want ? par : perp) += 1;
    }
    return bernoulli_ci(par, perp);
}

ProbabilityEstimate estimate_probabilities(const ClickDataset& ds,
                                           const ClickDataset& reference,
                                           ClickStream stream) {
    const RateEstimate rw = click_rate(ds, stream);
    const RateEstimate rr = click_rate(reference, stream);
    if (rr.clicks == 0)
        throw std::invalid_argument("estimate_probabilities: zero reference counts");
    const double n_w = parse_config(ds.config_snapshot).write_pulse.n_mean;
    const double n_ref = parse_config(reference.config_snapshot).write_pulse.n_mean;
    if (!(n_w > 0.0) || !(n_ref > 0.0))
        throw std::invalid_argument("estimate_probabilities: non-positive pulse n_mean");

    const double ratio = rw.rate / rr.rate;
    const double rel_err2 = (rw.rate > 0.0 ? std::pow(rw.sigma / rw.rate, 2) : 0.0) +
                            std::pow(rr.sigma / rr.rate, 2);

    // self-consistent reference transfer: the reference pulse is strong but
    // not exactly saturating, so divide out its own 1 - exp(-n_ref p_s).
    // With zero write counts nothing constrains it; assume saturation so the
    // one-sided error scale stays an upper bound.
    double p_t_ref = 1.0;
    double p_t = 0.0, p_s = 0.0;
    if (rw.clicks > 0) {
        for (int it = 0; it < 60; ++it) {
            p_t = std::min(ratio * p_t_ref, 1.0 - 1e-12);
            p_s = p_s_from_p_t(p_t, n_w);
            p_t_ref = p_t_from_p_s(p_s, n_ref);
        }
    }

    ProbabilityEstimate e;
    e.p_t_nbar = p_t;
    e.reference_transfer = p_t_ref;
    e.reference_saturated = p_t_ref >= 0.97;
    if (rw.clicks == 0) {
        // one-sided: propagate the zero-count upper-limit scale
        e.p_t_sigma = rw.sigma / rr.rate * p_t_ref;
        e.p_s_sigma = e.p_t_sigma / n_w;
    } else {
        e.p_t_sigma = p_t * std::sqrt(rel_err2);
        e.p_s = p_s;
        // dp_s/dp_t = 1/(n_w (1 - p_t))
        e.p_s_sigma = e.p_t_sigma / (n_w * (1.0 - p_t));
    }

    const RateEstimate rh = click_rate(ds, ClickStream::herald);
    e.p_h_nbar = rh.rate;
    e.p_h_sigma = rh.sigma;
    // p_h1 = p_h * p_s / p_t; as p_t -> 0 the factor tends to 1/n_w
    const double factor = rw.clicks > 0 && p_t > 0.0 ? p_s / p_t : 1.0 / n_w;
    e.p_h1 = e.p_h_nbar * factor;
    if (rh.clicks > 0 && rw.clicks > 0) {
        const double rel_h = rh.sigma / rh.rate;
        e.p_h1_sigma = e.p_h1 * std::sqrt(rel_h * rel_h + rel_err2);
    } else {
        e.p_h1_sigma = rh.sigma * factor;
    }
    return e;
}

std::pair<ScanResult, ScanResult> truncation_sweep(const ClickDataset& ds,
                                                   std::span<const double> cuts) {
    const double window =
        parse_config(ds.config_snapshot).read_pulse.duration + 1e-6;
    for (double c : cuts)
        if (!(c > 0.0) || c > window)
            throw std::invalid_argument("truncation_sweep: cut outside read window");
    std::int64_t n_full = 0;
    for (const auto& t : ds.trials)
        if (t.readout_click) ++n_full;
    if (n_full == 0)
        throw std::invalid_argument("truncation_sweep: no read-out clicks");

    const int want = expected_outcome(dataset_input(ds), ds.plan.readout_basis);
    ScanResult fid, eff;
    fid.label = "fidelity_vs_cut";
    eff.label = "relative_efficiency_vs_cut";
    fid.x_label = eff.x_label = "cut_time_s";
    for (double c : cuts) {
        std::int64_t par = 0, perp = 0;
        for (const auto& t : ds.trials) {
            if (!t.readout_click || !(t.readout_click->time < c)) continue;
            (t.readout_click->outcome == want ? par : perp) += 1;
        }
        const std::int64_t kept = par + perp;
        if (kept == 0) {
            fid.push(c, 0.0, 0.0);
            eff.push(c, 0.0, 0.0);
            continue;
        }
        const BernoulliEstimate b = bernoulli_ci(par, perp);
        fid.push(c, b.p, b.sigma);
        const double frac = static_cast<double>(kept) / static_cast<double>(n_full);
        eff.push(c, frac,
                 std::sqrt(frac * (1.0 - frac) / static_cast<double>(n_full)));
    }
    return {fid, eff};
}

// ---------------------------------------------------------------------------
// Per-atom aggregation

AggregateResult aggregate_atoms(std::span<const AtomSummary> atoms,
                                AggregateMode mode, Rng* rng) {
    if (atoms.empty()) throw std::invalid_argument("aggregate_atoms: no atoms");
    double total_w = 0.0;
    for (const auto& a : atoms) {
        if (a.sigma < 0.0) throw std::invalid_argument("aggregate_atoms: negative sigma");
        if (a.weight < 0.0) throw std::invalid_argument("aggregate_atoms: negative weight");
        total_w += a.weight;
    }
    if (!(total_w > 0.0)) throw std::invalid_argument("aggregate_atoms: zero total weight");

    AggregateResult r;
    if (mode == AggregateMode::closed_form) {
        double mean = 0.0;
        for (const auto& a : atoms) mean += a.weight * a.mean;
        mean /= total_w;
        double var = 0.0;
        for (const auto& a : atoms)
            var += a.weight * (a.sigma * a.sigma + (a.mean - mean) * (a.mean - mean));
        var /= total_w;
        r.mean = mean;
        r.sigma = std::sqrt(std::max(0.0, var));
        return r;
    }
    if (!rng) throw std::invalid_argument("aggregate_atoms: monte_carlo needs an rng");
    std::vector<double> pool;
    for (const auto& a : atoms) {
        const auto k = static_cast<std::int64_t>(std::llround(a.weight));
        for (std::int64_t i = 0; i < k; ++i)
            pool.push_back(a.mean + a.sigma * rng->normal());
    }
    if (pool.empty()) throw std::invalid_argument("aggregate_atoms: zero total weight");
    double mean = 0.0;
    for (double x : pool) mean += x;
    mean /= static_cast<double>(pool.size());
    double var = 0.0;
    for (double x : pool) var += (x - mean) * (x - mean);
    var /= static_cast<double>(pool.size());
    r.mean = mean;
    r.sigma = std::sqrt(var);
    return r;
}

}  // namespace cavmem
