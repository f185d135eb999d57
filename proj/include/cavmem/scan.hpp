#pragma once
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Labelled (x, estimate, sigma) tables: the interchange type between
// scenarios, estimators, and fits. CSV format: '#'-prefixed metadata lines,
// one header row, then shortest-round-trip numeric rows (byte-stable).

namespace cavmem {

// shortest decimal representation that round-trips exactly
inline std::string fmt_num(double v) {
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

struct ScanResult {
    std::string label;    // what the estimate is
    std::string x_label;  // independent variable incl. unit, e.g. detuning_MHz
    std::vector<double> x;
    std::vector<double> estimate;
    std::vector<double> sigma;

    void push(double xi, double est, double sig) {
        x.push_back(xi);
        estimate.push_back(est);
        sigma.push_back(sig);
    }
    std::size_t size() const { return x.size(); }
};

inline std::string to_csv(const ScanResult& s) {
    std::ostringstream os;
    os << "# label: " << s.label << "\n";
    os << s.x_label << ",estimate,sigma\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
        os << fmt_num(s.x[i]) << "," << fmt_num(s.estimate[i]) << "," << fmt_num(s.sigma[i])
           << "\n";
    return os.str();
}

inline void save_csv(const ScanResult& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_csv: cannot write " + path);
    out << to_csv(s);
}

inline ScanResult scan_from_csv(const std::string& text) {
    ScanResult s;
    std::istringstream in(text);
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "# label: ";
            if (line.rfind(tag, 0) == 0) s.label = line.substr(tag.size());
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            s.x_label = line.substr(0, line.find(','));
            continue;
        }
        double v[3] = {0, 0, 0};
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int k = 0; k < 3; ++k) {
            auto [q, ec] = std::from_chars(p, end, v[k]);
            if (ec != std::errc()) throw std::runtime_error("scan_from_csv: bad row: " + line);
            p = q;
            if (k < 2) {
                if (p == end || *p != ',')
                    throw std::runtime_error("scan_from_csv: bad row: " + line);
                ++p;
            }
        }
        s.push(v[0], v[1], v[2]);
    }
    return s;
}

}  // namespace cavmem
