#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sotmle/core.hpp"
#include "sotmle/estimators.hpp"

namespace sotmle {

std::string version();

/// Data file contents: covariates w1..wd, indicator a, outcome y (empty when a = 0),
/// and the treatment column t when present.
struct CsvData {
    Dataset data{1};
    std::vector<int> treatment;  // empty without a t column
    OutcomeScale scale;          // identity unless y was rescaled
    bool scaled = false;
};

/// Parses the data CSV. Non-binary outcomes are mapped to [0, 1] by min/max when auto_scale
/// is set. Schema problems raise TmleError naming the line.
CsvData read_data_csv(std::istream& in, bool auto_scale = true);
CsvData read_data_csv_file(const std::filesystem::path& path, bool auto_scale = true);

std::uint64_t fnv1a(std::string_view text);

/// Writes through a temporary file in the same directory followed by a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// "default", "cv" or "fixed:<h>" (per-dimension values separated by ';').
BandwidthChoice parse_bandwidth_choice(const std::string& text, int folds, std::uint64_t seed);

/// Entry point behind the sotmle executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sotmle
