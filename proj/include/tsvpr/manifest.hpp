#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsvpr {

enum class Split { database, query, train, val };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
    std::uint64_t id = 0;
    std::string image_path;  // relative paths resolve against the manifest's directory
    double lat = 0.0;
    double lon = 0.0;
    std::optional<double> heading_deg;
    Split split = Split::database;
    // Synthetic-world bookkeeping; absent in real manifests.
    std::optional<std::uint64_t> place;
    std::optional<std::uint64_t> alias_of;

    bool operator==(const ManifestEntry&) const = default;
};

class ManifestError : public std::runtime_error {
public:
    ManifestError(std::size_t line, const std::string& what)
        : std::runtime_error("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// One JSON object per line; blank lines are skipped and unknown fields ignored.
std::vector<ManifestEntry> parse_manifest(const std::string& text);
std::vector<ManifestEntry> load_manifest(const std::string& path);

std::string manifest_line(const ManifestEntry& entry);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

/// image_path resolved against the manifest location.
std::string resolve_image_path(const std::string& manifest_path, const ManifestEntry& entry);

}  // namespace tsvpr
