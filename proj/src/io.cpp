#include "panelglmm/io.hpp"

#include "panelglmm/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace panelglmm {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream stream(line);
    while (std::getline(stream, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

bool try_parse(const std::string& cell, double& out) {
    if (cell.empty()) return false;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

double parse_double(const std::string& cell, const std::string& where) {
    double value = 0.0;
    if (!try_parse(cell, value)) {
        throw CsvError(where + ": '" + cell + "' is not a number");
    }
    return value;
}

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw CsvError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
    CsvTable table;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cells = split(line);
        if (!have_header) {
            table.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw CsvError("line " + std::to_string(line_no) + ": expected " +
                           std::to_string(table.header.size()) + " cells, found " +
                           std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (!have_header) throw CsvError("empty CSV input");
    return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CsvError("cannot open " + path.string());
    return read_csv(in);
}

PanelDataset load_panel_csv(const std::filesystem::path& path, const Family& family) {
    std::ifstream in(path);
    if (!in) throw CsvError("cannot open " + path.string());
    return load_panel_csv(in, family);
}

PanelDataset load_panel_csv(std::istream& in, const Family& family) {
    const CsvTable table = read_csv(in);
    const auto& h = table.header;
    if (h.size() < 3 || h[0] != "id" || h[1] != "time" || h[2] != "y") {
        throw CsvError("header must start with id,time,y");
    }
    const std::size_t p = h.size() - 3;
    if (p == 0) throw ValidationError("at least one covariate required");
    if (table.rows.empty()) throw CsvError("no data rows");

    // Individuals ordered numerically when every id is a number.
    bool numeric_ids = true;
    for (const auto& row : table.rows) {
        double dummy = 0.0;
        if (!try_parse(row[0], dummy)) {
            numeric_ids = false;
            break;
        }
    }
    auto id_less = [numeric_ids](const std::string& a, const std::string& b) {
        if (numeric_ids) {
            double x = 0.0;
            double y = 0.0;
            try_parse(a, x);
            try_parse(b, y);
            if (x != y) return x < y;
        }
        return a < b;
    };
    std::map<std::string, Eigen::Index, decltype(id_less)> ids(id_less);
    std::map<double, Eigen::Index> times;
    std::vector<double> row_times(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = "row " + std::to_string(r + 2);
        if (row[0].empty()) throw CsvError(where + ", column 'id': empty id");
        ids.emplace(row[0], 0);
        row_times[r] = parse_double(row[1], where + ", column 'time'");
        times.emplace(row_times[r], 0);
    }
    Eigen::Index k = 0;
    for (auto& [id, idx] : ids) idx = k++;
    k = 0;
    for (auto& [t, idx] : times) idx = k++;

    const PanelLayout layout(static_cast<Eigen::Index>(ids.size()),
                             static_cast<Eigen::Index>(times.size()));
    PanelDataset data;
    data.layout = layout;
    data.family = family;
    data.y.resize(layout.n_obs());
    data.X.resize(layout.n_obs(), static_cast<Eigen::Index>(p));
    std::vector<int> seen(static_cast<std::size_t>(layout.n_obs()), 0);

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const Eigen::Index i = layout.row(ids.at(row[0]), times.at(row_times[r]));
        const std::string where = "row " + std::to_string(r + 2);
        if (seen[static_cast<std::size_t>(i)]++) {
            throw UnbalancedPanelError("duplicate observation (id=" + row[0] +
                                       ",time=" + row[1] + ")");
        }
        data.y(i) = parse_double(row[2], where + ", column 'y'");
        for (std::size_t j = 0; j < p; ++j) {
            data.X(i, static_cast<Eigen::Index>(j)) =
                parse_double(row[3 + j], where + ", column '" + h[3 + j] + "'");
        }
    }

    std::string missing;
    std::size_t n_missing = 0;
    for (const auto& [id, ii] : ids) {
        for (const auto& [t, ti] : times) {
            if (!seen[static_cast<std::size_t>(layout.row(ii, ti))]) {
                if (n_missing < 20) {
                    missing += (missing.empty() ? "" : ", ");
                    missing += "(id=" + id + ",time=" + format_double(t) + ")";
                }
                ++n_missing;
            }
        }
    }
    if (n_missing > 0) {
        if (n_missing > 20) missing += ", ...";
        throw UnbalancedPanelError("unbalanced panel, " + std::to_string(n_missing) +
                                   " missing observation(s): " + missing);
    }
    data.validate();
    return data;
}

void write_panel_csv(std::ostream& out, const PanelDataset& data) {
    out << "id,time,y";
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) out << ",x" << (j + 1);
    out << '\n';
    for (Eigen::Index i = 0; i < data.layout.n_obs(); ++i) {
        out << (data.layout.individual_of(i) + 1) << ',' << (data.layout.time_of(i) + 1) << ','
            << format_double(data.y(i));
        for (Eigen::Index j = 0; j < data.X.cols(); ++j) out << ',' << format_double(data.X(i, j));
        out << '\n';
    }
}

}  // namespace panelglmm
