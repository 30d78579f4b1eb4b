#include "twinforge/report.hpp"

#include "twinforge/dataset_store.hpp"
#include "twinforge/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace twinforge {

namespace {

constexpr std::string_view kDigestPrefix = "# config_digest: ";

void append_row(std::string& out, const std::vector<std::string>& cells)
{
    for (std::size_t c = 0; c < cells.size(); ++c) {
        require(cells[c].find_first_of(",\n\r") == std::string::npos, ErrorCode::InvalidConfig,
                "CSV cell contains a separator: '" + cells[c] + "'");
        if (c) out += ',';
        out += cells[c];
    }
    out += '\n';
}

std::vector<std::string> split_row(const std::string& line)
{
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return cells;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string fixed(double v, int digits = 2)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string tick(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

} // namespace

std::string CsvTable::str() const
{
    std::string out;
    out += kDigestPrefix;
    out += digest;
    out += '\n';
    append_row(out, header);
    for (const auto& r : rows) {
        require(r.size() == header.size(), ErrorCode::ShapeMismatch, "CSV row width differs from the header");
        append_row(out, r);
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table)
{
    write_file_atomic(path, table.str());
}

CsvTable read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
    CsvTable t;
    std::string line;
    std::size_t line_no = 0;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind(kDigestPrefix, 0) == 0) {
            t.digest = line.substr(kDigestPrefix.size());
            continue;
        }
        require(line_no > 1, ErrorCode::ParseFailure, where() + ": missing '# config_digest:' line");
        if (!line.empty() && line.front() == '#') continue;
        auto cells = split_row(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        require(cells.size() == t.header.size(), ErrorCode::ParseFailure, where() + ": expected " +
                std::to_string(t.header.size()) + " cells, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    require(!t.header.empty(), ErrorCode::ParseFailure, path.string() + ": missing header row");
    return t;
}

std::string render_svg(const ScatterPlot& plot)
{
    constexpr double W = 640, H = 480, left = 70, right = 150, top = 40, bottom = 60;
    const double pw = W - left - right;
    const double ph = H - top - bottom;

    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    auto extend = [&](double x, double y) {
        if (!std::isfinite(x) || !std::isfinite(y)) return;
        if (first) {
            x0 = x1 = x;
            y0 = y1 = y;
            first = false;
        }
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    };
    for (const auto& p : plot.points) extend(p.x, p.y);
    if (plot.fit) {
        for (std::size_t k = 0; k < plot.fit->xs.size(); ++k) {
            extend(plot.fit->xs[k], plot.fit->lower[k]);
            extend(plot.fit->xs[k], plot.fit->upper[k]);
        }
    }
    if (x1 - x0 <= 0) { x0 -= 0.5; x1 += 0.5; }
    if (y1 - y0 <= 0) { y0 -= 0.5; y1 += 0.5; }
    const double mx = 0.05 * (x1 - x0), my = 0.05 * (y1 - y0);
    x0 -= mx; x1 += mx; y0 -= my; y1 += my;

    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    static constexpr std::array<const char*, 6> palette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                                         "#8c564b"};
    std::map<std::string, std::string> colour; // assigned in order of first appearance
    std::vector<std::string> legend;
    for (const auto& p : plot.points) {
        if (!colour.count(p.category)) {
            colour[p.category] = palette[legend.size() % palette.size()];
            legend.push_back(p.category);
        }
    }

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(plot.title)
      << "</text>\n";
    s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";

    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0;
        const double yv = y0 + (y1 - y0) * t / 4.0;
        s << "<text x=\"" << fixed(sx(xv)) << "\" y=\"" << fixed(top + ph + 16)
          << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
        s << "<text x=\"" << fixed(left - 6) << "\" y=\"" << fixed(sy(yv) + 4) << "\" text-anchor=\"end\">"
          << tick(yv) << "</text>\n";
    }
    s << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(H - 15) << "\" text-anchor=\"middle\">"
      << xml_escape(plot.x_label) << "</text>\n";
    s << "<text transform=\"translate(18," << fixed(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(plot.y_label) << "</text>\n";

    if (plot.fit && !plot.fit->xs.empty()) {
        const auto& f = *plot.fit;
        std::vector<std::size_t> order(f.xs.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return f.xs[a] < f.xs[b]; });
        auto polyline = [&](const std::vector<double>& ys, const char* style) {
            s << "<polyline fill=\"none\" " << style << " points=\"";
            for (auto k : order) s << fixed(sx(f.xs[k])) << ',' << fixed(sy(ys[k])) << ' ';
            s << "\"/>\n";
        };
        polyline(f.lower, "stroke=\"gray\" stroke-dasharray=\"4 3\"");
        polyline(f.upper, "stroke=\"gray\" stroke-dasharray=\"4 3\"");
        polyline(f.center, "stroke=\"black\"");
    }

    for (const auto& p : plot.points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
        s << "<circle cx=\"" << fixed(sx(p.x)) << "\" cy=\"" << fixed(sy(p.y)) << "\" r=\"4\" fill=\""
          << colour[p.category] << "\"><title>" << xml_escape(p.label) << "</title></circle>\n";
        s << "<text x=\"" << fixed(sx(p.x) + 5) << "\" y=\"" << fixed(sy(p.y) - 5) << "\" font-size=\"9\">"
          << xml_escape(p.label) << "</text>\n";
    }

    double ly = top + 10;
    for (const auto& cat : legend) {
        if (cat.empty()) continue;
        s << "<circle cx=\"" << fixed(left + pw + 15) << "\" cy=\"" << fixed(ly) << "\" r=\"4\" fill=\"" << colour[cat]
          << "\"/>\n";
        s << "<text x=\"" << fixed(left + pw + 24) << "\" y=\"" << fixed(ly + 4) << "\" font-size=\"9\">"
          << xml_escape(cat) << "</text>\n";
        ly += 16;
    }
    s << "</svg>\n";
    return s.str();
}

} // namespace twinforge
