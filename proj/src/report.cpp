#include "cavmem/report.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cavmem/scan.hpp"
#include "json.hpp"

namespace cavmem {

bool CheckLine::pass() const {
    switch (kind) {
        case CheckKind::within:
            return std::abs(computed - target) <= tolerance;
        case CheckKind::at_least:
            return computed >= target - tolerance;
        case CheckKind::at_most:
            return computed <= target + tolerance;
    }
    return false;
}

void ReportSection::value(std::string label, double v, double sigma,
                          std::string unit) {
    values.push_back({std::move(label), v, sigma, std::move(unit)});
}

void ReportSection::check(std::string label, double computed, double target,
                          double tolerance, CheckKind kind) {
    checks.push_back({std::move(label), computed, target, tolerance, kind});
}

void ReportSection::note(std::string text) { notes.push_back(std::move(text)); }

void Report::add(ReportSection section) {
    if (!section.empty()) sections.push_back(std::move(section));
}

int Report::checks_total() const {
    int n = 0;
    for (const auto& s : sections) n += static_cast<int>(s.checks.size());
    return n;
}

int Report::checks_failed() const {
    int n = 0;
    for (const auto& s : sections)
        for (const auto& c : s.checks) n += c.pass() ? 0 : 1;
    return n;
}

namespace {

const char* kind_symbol(CheckKind k) {
    switch (k) {
        case CheckKind::within:
            return "within";
        case CheckKind::at_least:
            return ">=";
        case CheckKind::at_most:
            return "<=";
    }
    return "?";
}

}  // namespace

std::string Report::to_text() const {
    std::ostringstream os;
    os << "=== " << scenario << " ===\n";
    os << "seed: " << seed << "  trials: " << n_trials << "\n";
    for (const auto& s : sections) {
        os << "\n[" << s.title << "]\n";
        for (const auto& v : s.values) {
            os << "  " << v.label << ": " << fmt_num(v.value);
            if (v.sigma != 0.0) os << " +- " << fmt_num(v.sigma);
            if (!v.unit.empty()) os << " " << v.unit;
            os << "\n";
        }
        for (const auto& c : s.checks) {
            os << "  check: " << c.label << ": computed " << fmt_num(c.computed)
               << " " << kind_symbol(c.kind) << " target " << fmt_num(c.target)
               << " (tol " << fmt_num(c.tolerance) << ") ... "
               << (c.pass() ? "PASS" : "FAIL") << "\n";
        }
        for (const auto& n : s.notes) os << "  note: " << n << "\n";
    }
    os << "\nchecks: " << (checks_total() - checks_failed()) << " passed, "
       << checks_failed() << " failed\n";
    return os.str();
}

std::string Report::to_json() const {
    nlohmann::ordered_json j;
    j["scenario"] = scenario;
    j["seed"] = seed;
    j["n_trials"] = n_trials;
    j["sections"] = nlohmann::ordered_json::array();
    for (const auto& s : sections) {
        nlohmann::ordered_json js;
        js["title"] = s.title;
        if (!s.values.empty()) {
            js["values"] = nlohmann::ordered_json::array();
            for (const auto& v : s.values) {
                nlohmann::ordered_json jv;
                jv["label"] = v.label;
                jv["value"] = v.value;
                if (v.sigma != 0.0) jv["sigma"] = v.sigma;
                if (!v.unit.empty()) jv["unit"] = v.unit;
                js["values"].push_back(std::move(jv));
            }
        }
        if (!s.checks.empty()) {
            js["checks"] = nlohmann::ordered_json::array();
            for (const auto& c : s.checks) {
                nlohmann::ordered_json jc;
                jc["label"] = c.label;
                jc["computed"] = c.computed;
                jc["target"] = c.target;
                jc["tolerance"] = c.tolerance;
                jc["kind"] = kind_symbol(c.kind);
                jc["pass"] = c.pass();
                js["checks"].push_back(std::move(jc));
            }
        }
        if (!s.notes.empty()) js["notes"] = s.notes;
        j["sections"].push_back(std::move(js));
    }
    j["checks_total"] = checks_total();
    j["checks_failed"] = checks_failed();
    return j.dump(2) + "\n";
}

void write_summary(const Report& report, const std::string& dir,
                   bool with_json) {
    for (const char* name : {"summary.txt", "summary.json"}) {
        if (!with_json && std::string(name) == "summary.json") continue;
        const std::string path = dir + "/" + name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("write_summary: cannot write " + path);
        out << (std::string(name) == "summary.txt" ? report.to_text()
                                                   : report.to_json());
        if (!out) throw std::runtime_error("write_summary: write failed " + path);
    }
}

}  // namespace cavmem
