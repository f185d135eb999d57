#pragma once
#include <cstdint>
#include <string>
#include <vector>

// Deterministic scenario summaries: named value lines, tolerance checks with
// pass/fail verdicts, and byte-stable text / JSON rendering. Identical
// inputs render to identical bytes; empty sections are dropped.

namespace cavmem {

// How a check compares its computed number to the target.
enum class CheckKind {
    within,    // |computed - target| <= tolerance
    at_least,  // computed >= target - tolerance
    at_most,   // computed <= target + tolerance
};

struct CheckLine {
    std::string label;
    double computed = 0.0;
    double target = 0.0;
    double tolerance = 0.0;
    CheckKind kind = CheckKind::within;

    bool pass() const;
};

struct ValueLine {
    std::string label;
    double value = 0.0;
    double sigma = 0.0;  // 0 = exact or not estimated
    std::string unit;    // may be empty
};

struct ReportSection {
    std::string title;
    std::vector<ValueLine> values;
    std::vector<CheckLine> checks;
    std::vector<std::string> notes;

    bool empty() const { return values.empty() && checks.empty() && notes.empty(); }

    void value(std::string label, double v, double sigma = 0.0,
               std::string unit = "");
    void check(std::string label, double computed, double target,
               double tolerance, CheckKind kind = CheckKind::within);
    void note(std::string text);
};

struct Report {
    std::string scenario;
    std::uint64_t seed = 0;
    std::uint64_t n_trials = 0;
    std::vector<ReportSection> sections;

    // Appends the section unless it is empty.
    void add(ReportSection section);

    int checks_total() const;
    int checks_failed() const;

    std::string to_text() const;
    std::string to_json() const;
};

// Renders and writes summary.txt (and summary.json when with_json) into dir
// (no trailing slash needed); throws std::runtime_error on I/O failure.
void write_summary(const Report& report, const std::string& dir,
                   bool with_json = true);

}  // namespace cavmem
