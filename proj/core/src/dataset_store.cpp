#include "twinforge/dataset_store.hpp"

#include "twinforge/digest.hpp"
#include "twinforge/error.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace twinforge {

namespace fs = std::filesystem;
using nlohmann::json;

void DataSet::validate() const
{
    const std::size_t n = excitation.grid.n_samples;
    require(excitation.values.size() == n, ErrorCode::ValidationFailure, "excitation length does not match its grid");
    require(outputs.rows() == kChannelNames.size(), ErrorCode::ValidationFailure, "data set must have 2 output channels");
    require(outputs.cols() == n, ErrorCode::ValidationFailure, "outputs do not share the excitation grid");
    auto finite = [](double v) { return std::isfinite(v); };
    require(std::all_of(excitation.values.begin(), excitation.values.end(), finite), ErrorCode::ValidationFailure,
            "excitation contains non-finite values");
    require(std::all_of(outputs.flat().begin(), outputs.flat().end(), finite), ErrorCode::ValidationFailure,
            "outputs contain non-finite values");
}

namespace {

constexpr std::string_view kManifestName = "manifest.json";
constexpr std::string_view kLockName = ".lock";

class WriterLock {
public:
    explicit WriterLock(fs::path path) : path_(std::move(path))
    {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            fail(ErrorCode::StoreLocked, "store is locked by another writer (" + path_.string() + ")");
        }
    }
    ~WriterLock()
    {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    WriterLock(const WriterLock&) = delete;
    WriterLock& operator=(const WriterLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parse_double(std::string_view text)
{
    const std::string t = trim(text);
    double v = 0.0;
    const auto* first = t.data();
    const auto* last = t.data() + t.size();
    if (!t.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
    return v;
}

double parse_double_or_fail(std::string_view text, const std::string& where)
{
    auto v = parse_double(text);
    if (!v) fail(ErrorCode::ParseFailure, where + ": cannot parse number '" + std::string(text) + "'");
    return *v;
}

std::vector<std::string> split(std::string_view line, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string data_digest(const DataSet& ds)
{
    Digest d;
    for (double v : ds.excitation.values) d.update(v);
    for (double v : ds.outputs.flat()) d.update(v);
    return d.hex();
}

json manifest_json(const StoreManifest& store)
{
    json entries = json::array();
    for (const auto& e : store.entries) {
        entries.push_back({{"id", e.id},
                           {"kind", std::string(to_string(e.kind))},
                           {"file", e.file},
                           {"feature_digest", e.feature_digest},
                           {"provenance_digest", e.provenance_digest}});
    }
    return {{"version", 1}, {"next_number", store.next_number}, {"entries", entries}};
}

struct ParsedTable {
    std::map<std::string, std::string> meta;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

ParsedTable parse_table(std::istream& is, const std::string& source)
{
    ParsedTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string where = source + ":" + std::to_string(line_no);
        if (!have_header) {
            if (line.empty()) continue;
            if (line.front() == '#') {
                const auto colon = line.find(':');
                if (colon != std::string::npos) {
                    table.meta[trim(std::string_view(line).substr(1, colon - 1))] =
                        trim(std::string_view(line).substr(colon + 1));
                }
                continue;
            }
            for (auto& c : split(line, ',')) table.columns.push_back(trim(c));
            have_header = true;
            continue;
        }
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != table.columns.size()) {
            fail(ErrorCode::ParseFailure, where + ": expected " + std::to_string(table.columns.size())
                                              + " fields, found " + std::to_string(fields.size()));
        }
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& f : fields) row.push_back(parse_double_or_fail(f, where));
        table.rows.push_back(std::move(row));
    }
    if (!have_header) fail(ErrorCode::ParseFailure, source + ": missing header row");
    return table;
}

ExcitationSignal signal_from_table(const ParsedTable& table, const std::string& source)
{
    if (table.columns.size() < 2 || table.columns[0] != "t" || table.columns[1] != "T_oven") {
        fail(ErrorCode::ParseFailure, source + ": header must start with t,T_oven");
    }
    const std::size_t n = table.rows.size();
    if (n < 2) fail(ErrorCode::ParseFailure, source + ": need at least 2 rows");

    ExcitationSignal sig;
    sig.values.reserve(n);
    for (const auto& r : table.rows) sig.values.push_back(r[1]);

    if (auto it = table.meta.find("grid"); it != table.meta.end()) {
        const auto parts = split(it->second, ' ');
        if (parts.size() != 3) fail(ErrorCode::ParseFailure, source + ": grid needs 't0 dt n'");
        sig.grid.t0 = parse_double_or_fail(parts[0], source + " grid");
        sig.grid.dt = parse_double_or_fail(parts[1], source + " grid");
        sig.grid.n_samples = static_cast<std::size_t>(parse_double_or_fail(parts[2], source + " grid"));
        if (sig.grid.n_samples != n) fail(ErrorCode::ParseFailure, source + ": row count does not match grid");
    } else {
        sig.grid.t0 = table.rows[0][0];
        sig.grid.dt = table.rows[1][0] - table.rows[0][0];
        sig.grid.n_samples = n;
    }
    if (!(sig.grid.dt > 0.0)) fail(ErrorCode::ParseFailure, source + ": time column must increase");
    for (std::size_t k = 0; k < n; ++k) {
        const double expect = sig.grid.time(k);
        if (std::abs(table.rows[k][0] - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
            fail(ErrorCode::ParseFailure, source + ": non-uniform time column at row " + std::to_string(k + 1));
        }
    }

    if (auto it = table.meta.find("kind"); it != table.meta.end()) sig.kind = signal_kind_from_string(it->second);
    if (auto it = table.meta.find("id"); it != table.meta.end()) sig.id = it->second;
    if (auto it = table.meta.find("seed"); it != table.meta.end()) {
        std::uint64_t seed = 0;
        const auto* end = it->second.data() + it->second.size();
        const auto [ptr, ec] = std::from_chars(it->second.data(), end, seed);
        if (ec != std::errc() || ptr != end) fail(ErrorCode::ParseFailure, source + ": malformed seed '" + it->second + "'");
        sig.seed = seed;
    }
    if (auto it = table.meta.find("jumps"); it != table.meta.end() && !it->second.empty()) {
        for (const auto& tok : split(it->second, ' ')) {
            if (tok.empty()) continue;
            const auto colon = tok.find(':');
            if (colon == std::string::npos) fail(ErrorCode::ParseFailure, source + ": malformed jump '" + tok + "'");
            sig.jumps.push_back({parse_double_or_fail(tok.substr(0, colon), source + " jumps"),
                                 parse_double_or_fail(tok.substr(colon + 1), source + " jumps")});
        }
    }
    return sig;
}

void write_signal_meta(std::ostream& os, const ExcitationSignal& s)
{
    os << "# id: " << s.id << '\n';
    os << "# kind: " << to_string(s.kind) << '\n';
    os << "# seed: " << s.seed << '\n';
    os << "# grid: " << format_double(s.grid.t0) << ' ' << format_double(s.grid.dt) << ' ' << s.grid.n_samples
       << '\n';
    os << "# jumps:";
    for (const auto& j : s.jumps) os << ' ' << format_double(j.time) << ':' << format_double(j.delta);
    os << '\n';
}

} // namespace

const ManifestEntry* StoreManifest::find(const std::string& id) const
{
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.id == id; });
    return it == entries.end() ? nullptr : &*it;
}

std::string id_prefix(SignalKind kind)
{
    switch (kind) {
    case SignalKind::Aprbs: return "AP";
    case SignalKind::Multisine: return "MS";
    case SignalKind::SinAprbs: return "SA";
    }
    return "DS";
}

void write_file_atomic(const fs::path& path, const std::string& contents)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::IoFailure, "cannot write " + tmp.string());
        out << contents;
        out.flush();
        if (!out) fail(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot rename " + tmp.string() + ": " + ec.message());
}

StoreManifest open_store(const fs::path& root)
{
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot create store root " + root.string() + ": " + ec.message());

    StoreManifest store;
    store.root = root;
    const fs::path manifest = root / kManifestName;
    if (!fs::exists(manifest)) return store;

    std::ifstream in(manifest);
    if (!in) fail(ErrorCode::IoFailure, "cannot read " + manifest.string());
    json doc;
    try {
        doc = json::parse(in);
        store.next_number = doc.at("next_number").get<std::uint64_t>();
        for (const auto& e : doc.at("entries")) {
            store.entries.push_back({e.at("id").get<std::string>(),
                                     signal_kind_from_string(e.at("kind").get<std::string>()),
                                     e.at("file").get<std::string>(),
                                     e.at("feature_digest").get<std::string>(),
                                     e.at("provenance_digest").get<std::string>()});
        }
    } catch (const json::exception& ex) {
        fail(ErrorCode::ParseFailure, manifest.string() + ": " + ex.what());
    }
    return store;
}

std::string save_dataset(DataSet ds, StoreManifest& store)
{
    try {
        ds.validate();
    } catch (const Error& e) {
        fail(ErrorCode::ValidationFailure, e.what());
    }
    WriterLock lock(store.root / kLockName);

    // Another writer may have committed since this manifest was opened.
    StoreManifest current = open_store(store.root);

    std::uint64_t number = current.next_number;
    if (ds.id.empty()) {
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "%04llu", static_cast<unsigned long long>(number));
        ds.id = id_prefix(ds.excitation.kind) + suffix;
    }
    if (current.find(ds.id)) fail(ErrorCode::DuplicateId, "data set id '" + ds.id + "' already stored");
    for (char c : ds.id) {
        require(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-', ErrorCode::ValidationFailure,
                "data set id must be alphanumeric: '" + ds.id + "'");
    }
    ds.excitation.id = ds.id;

    std::ostringstream csv;
    write_dataset_csv(csv, ds);
    const std::string file = ds.id + ".csv";
    write_file_atomic(store.root / file, csv.str());

    current.entries.push_back(
        {ds.id, ds.excitation.kind, file, data_digest(ds), digest_hex(ds.provenance)});
    current.next_number = number + 1;
    write_file_atomic(store.root / kManifestName, manifest_json(current).dump(2) + "\n");
    store = std::move(current);
    return ds.id;
}

DataSet load_dataset(const std::string& id, const StoreManifest& store)
{
    const auto* entry = store.find(id);
    if (!entry) fail(ErrorCode::NotFound, "data set '" + id + "' not in store " + store.root.string());
    return read_dataset_csv(store.root / entry->file);
}

void write_dataset_csv(std::ostream& os, const DataSet& ds)
{
    write_signal_meta(os, ds.excitation);
    os << "# provenance: " << ds.provenance << '\n';
    os << "t,T_oven,T_A,T_B\n";
    const auto& g = ds.excitation.grid;
    for (std::size_t k = 0; k < g.n_samples; ++k) {
        os << format_double(g.time(k)) << ',' << format_double(ds.excitation.values[k]) << ','
           << format_double(ds.outputs(0, k)) << ',' << format_double(ds.outputs(1, k)) << '\n';
    }
}

DataSet read_dataset_csv(std::istream& is, const std::string& source_name)
{
    const auto table = parse_table(is, source_name);
    if (table.columns != std::vector<std::string>{"t", "T_oven", "T_A", "T_B"}) {
        fail(ErrorCode::ParseFailure, source_name + ": header must be t,T_oven,T_A,T_B");
    }
    DataSet ds;
    ds.excitation = signal_from_table(table, source_name);
    ds.id = ds.excitation.id;
    if (auto it = table.meta.find("provenance"); it != table.meta.end()) ds.provenance = it->second;
    const std::size_t n = table.rows.size();
    ds.outputs = Matrix(2, n);
    for (std::size_t k = 0; k < n; ++k) {
        ds.outputs(0, k) = table.rows[k][2];
        ds.outputs(1, k) = table.rows[k][3];
    }
    try {
        ds.validate();
    } catch (const Error& e) {
        fail(ErrorCode::ValidationFailure, source_name + ": " + e.what());
    }
    return ds;
}

DataSet read_dataset_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::NotFound, "cannot open " + path.string());
    return read_dataset_csv(in, path.string());
}

ExcitationSignal read_signal_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::NotFound, "cannot open " + path.string());
    const auto table = parse_table(in, path.string());
    auto sig = signal_from_table(table, path.string());
    if (!std::all_of(sig.values.begin(), sig.values.end(), [](double v) { return std::isfinite(v); })) {
        fail(ErrorCode::ValidationFailure, path.string() + ": non-finite oven temperature");
    }
    return sig;
}

void write_signal_csv(std::ostream& os, const ExcitationSignal& signal)
{
    write_signal_meta(os, signal);
    os << "t,T_oven\n";
    for (std::size_t k = 0; k < signal.grid.n_samples; ++k) {
        os << format_double(signal.grid.time(k)) << ',' << format_double(signal.values[k]) << '\n';
    }
}

} // namespace twinforge
