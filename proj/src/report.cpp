#include "hjblab/report.hpp"

#include <algorithm>
#include <iomanip>
#include <stdexcept>

namespace hjblab {

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::fail: return "fail";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

namespace {
Verdict verdict_from_string(const std::string& s) {
    if (s == "pass") return Verdict::pass;
    if (s == "fail") return Verdict::fail;
    if (s == "inconclusive") return Verdict::inconclusive;
    throw std::invalid_argument("unknown verdict '" + s + "'");
}
}  // namespace

double DiagnosticReport::estimate(const std::string& key) const {
    auto it = estimates.find(key);
    if (it == estimates.end()) throw std::out_of_range("report '" + name + "' has no estimate '" + key + "'");
    return it->second;
}

nlohmann::json to_json(const DiagnosticReport& report) {
    nlohmann::json estimates = nlohmann::json::object();
    for (const auto& [k, v] : report.estimates) estimates[k] = v;
    return {
        {"name", report.name},
        {"samples_used", report.samples_used},
        {"estimates", estimates},
        {"witness", report.witness},
        {"tolerance", report.tolerance},
        {"verdict", to_string(report.verdict)},
        {"notes", report.notes},
    };
}

DiagnosticReport report_from_json(const nlohmann::json& j) {
    DiagnosticReport r;
    r.name = j.at("name").get<std::string>();
    r.samples_used = j.at("samples_used").get<std::size_t>();
    for (const auto& [k, v] : j.at("estimates").items()) r.estimates[k] = v.get<double>();
    r.witness = j.at("witness");
    r.tolerance = j.at("tolerance").get<double>();
    r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    r.notes = j.at("notes").get<std::string>();
    return r;
}

void write_text(std::ostream& os, const DiagnosticReport& report) {
    std::size_t width = 10;
    for (const auto& [k, v] : report.estimates) width = std::max(width, k.size());
    os << "== " << report.name << "  [" << to_string(report.verdict) << "]\n";
    os << "  " << std::left << std::setw(static_cast<int>(width)) << "samples" << "  " << report.samples_used << '\n';
    os << "  " << std::left << std::setw(static_cast<int>(width)) << "tolerance" << "  " << report.tolerance << '\n';
    for (const auto& [k, v] : report.estimates) {
        os << "  " << std::left << std::setw(static_cast<int>(width)) << k << "  " << std::setprecision(10) << v << '\n';
    }
    if (!report.notes.empty()) os << "  notes: " << report.notes << '\n';
}

bool all_passed(const std::vector<DiagnosticReport>& reports) {
    return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed(); });
}

}  // namespace hjblab
