#pragma once

#include "panelglmm/panel.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace panelglmm {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Parses a whole cell as a double; throws CsvError naming `where` otherwise.
double parse_double(const std::string& cell, const std::string& where);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column; throws CsvError if absent.
    std::size_t column(const std::string& name) const;
};

/// Plain comma-separated reader (no quoting). Every row must have as many
/// cells as the header.
CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

/// Loads `id,time,y,x1,...,xp`. Rows may come in any order; they are sorted
/// individual-major (ids numerically when all ids are numbers, otherwise
/// lexically; times numerically). Throws UnbalancedPanelError listing missing
/// (id,time) pairs, CsvError for malformed cells.
PanelDataset load_panel_csv(const std::filesystem::path& path, const Family& family = {});
PanelDataset load_panel_csv(std::istream& in, const Family& family = {});

/// Writes `id,time,y,x1..xp` with ids 1..N and times 1..T.
void write_panel_csv(std::ostream& out, const PanelDataset& data);

}  // namespace panelglmm
