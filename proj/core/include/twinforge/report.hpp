#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace twinforge {

/// A CSV artifact: one `# config_digest: <hex>` line, a header row, data rows.
/// Cells are written verbatim; callers format numbers with format_double().
struct CsvTable {
    std::string digest;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string str() const;
};

/// Atomic write of table.str(). Throws IO_FAILURE.
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Parses a file written by write_csv. Throws IO_FAILURE / PARSE_FAILURE.
CsvTable read_csv(const std::filesystem::path& path);

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
    std::string label;
    std::string category; // selects the marker colour; empty for the default
};

/// Optional straight line with a lower/upper band, drawn behind the points.
struct ScatterFit {
    std::vector<double> xs;
    std::vector<double> center;
    std::vector<double> lower;
    std::vector<double> upper;
};

struct ScatterPlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<ScatterPoint> points;
    std::optional<ScatterFit> fit;
};

/// Self-contained SVG document. Output depends only on the plot contents.
std::string render_svg(const ScatterPlot& plot);

} // namespace twinforge
