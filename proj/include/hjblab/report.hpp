#pragma once

#include <json.hpp>

#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace hjblab {

enum class Verdict { pass, fail, inconclusive };

std::string to_string(Verdict v);

/// Outcome of one numerical audit.
///
/// The verdict is derived mechanically from the estimates and tolerance by
/// the producing check; `witness` holds whatever is needed to replay the
/// extreme case (inputs and seeds).
struct DiagnosticReport {
    std::string name;
    std::size_t samples_used = 0;
    std::map<std::string, double> estimates;
    nlohmann::json witness = nlohmann::json::object();
    double tolerance = 0.0;
    Verdict verdict = Verdict::inconclusive;
    std::string notes;

    bool passed() const { return verdict == Verdict::pass; }
    double estimate(const std::string& key) const;
};

nlohmann::json to_json(const DiagnosticReport& report);
DiagnosticReport report_from_json(const nlohmann::json& j);

/// Aligned two-column text block for humans.
void write_text(std::ostream& os, const DiagnosticReport& report);

bool all_passed(const std::vector<DiagnosticReport>& reports);

}  // namespace hjblab
