#pragma once

#include "twinforge/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace twinforge {

struct ManifestEntry {
    std::string id;
    SignalKind kind = SignalKind::Aprbs;
    std::string file;              // relative to the store root
    std::string feature_digest;    // digest of excitation and output samples
    std::string provenance_digest; // digest of DataSet::provenance

    bool operator==(const ManifestEntry&) const = default;
};

/// On-disk layout: `<root>/manifest.json` plus one CSV per data set.
struct StoreManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    std::uint64_t next_number = 1;

    const ManifestEntry* find(const std::string& id) const;
};

/// Opens (creating if needed) the store rooted at `root`.
StoreManifest open_store(const std::filesystem::path& root);

/// Writes `ds` as CSV and appends a manifest entry. Assigns `<prefix><number>`
/// when `ds.id` is empty, with prefixes AP / MS / SA per signal kind.
/// Throws DUPLICATE_ID, VALIDATION_FAILURE, IO_FAILURE or STORE_LOCKED.
std::string save_dataset(DataSet ds, StoreManifest& store);

/// Throws NOT_FOUND, PARSE_FAILURE or VALIDATION_FAILURE.
DataSet load_dataset(const std::string& id, const StoreManifest& store);

std::string id_prefix(SignalKind kind);

// CSV codec: metadata as leading `# key: value` lines, then the header
// `t,T_oven,T_A,T_B` and one row per sample. Numbers use 17 significant digits.
void write_dataset_csv(std::ostream& os, const DataSet& ds);
DataSet read_dataset_csv(std::istream& is, const std::string& source_name = "<stream>");
DataSet read_dataset_csv(const std::filesystem::path& path);

/// Accepts either a data-set CSV or a signal-only CSV (`t,T_oven`).
ExcitationSignal read_signal_csv(const std::filesystem::path& path);
void write_signal_csv(std::ostream& os, const ExcitationSignal& signal);

/// Replaces `path` by writing a sibling temporary file and renaming it over.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace twinforge
