#include "tsvpr/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tsvpr {

using nlohmann::json;

std::string to_string(Split split) {
    switch (split) {
        case Split::database: return "database";
        case Split::query: return "query";
        case Split::train: return "train";
        case Split::val: return "val";
    }
    return "?";
}

Split parse_split(const std::string& text) {
    if (text == "database") return Split::database;
    if (text == "query") return Split::query;
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    throw std::invalid_argument("unknown split '" + text + "'");
}

namespace {

const json& field(const json& obj, const char* name, std::size_t line) {
    auto it = obj.find(name);
    if (it == obj.end()) throw ManifestError(line, std::string("missing field '") + name + "'");
    return *it;
}

double number_field(const json& obj, const char* name, std::size_t line) {
    const json& v = field(obj, name, line);
    if (!v.is_number()) throw ManifestError(line, std::string("field '") + name + "' must be a number");
    return v.get<double>();
}

std::uint64_t id_field(const json& v, const char* name, std::size_t line) {
    if (!v.is_number_unsigned()) throw ManifestError(line, std::string("field '") + name + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

ManifestEntry parse_entry(const std::string& text, std::size_t line) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ManifestError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ManifestError(line, "expected a JSON object");

    ManifestEntry e;
    e.id = id_field(field(obj, "id", line), "id", line);
    const json& path = field(obj, "image_path", line);
    if (!path.is_string()) throw ManifestError(line, "field 'image_path' must be a string");
    e.image_path = path.get<std::string>();
    e.lat = number_field(obj, "lat", line);
    e.lon = number_field(obj, "lon", line);
    if (!(e.lat >= -90.0 && e.lat <= 90.0)) throw ManifestError(line, "field 'lat' out of range");
    if (!(e.lon >= -180.0 && e.lon <= 180.0)) throw ManifestError(line, "field 'lon' out of range");
    if (auto it = obj.find("heading_deg"); it != obj.end() && !it->is_null()) {
        if (!it->is_number()) throw ManifestError(line, "field 'heading_deg' must be a number");
        const double h = it->get<double>();
        if (!(h >= 0.0 && h < 360.0)) throw ManifestError(line, "field 'heading_deg' must be in [0, 360)");
        e.heading_deg = h;
    }
    const json& split = field(obj, "split", line);
    if (!split.is_string()) throw ManifestError(line, "field 'split' must be a string");
    try {
        e.split = parse_split(split.get<std::string>());
    } catch (const std::invalid_argument& err) {
        throw ManifestError(line, err.what());
    }
    if (auto it = obj.find("place"); it != obj.end() && !it->is_null()) e.place = id_field(*it, "place", line);
    if (auto it = obj.find("alias_of"); it != obj.end() && !it->is_null()) e.alias_of = id_field(*it, "alias_of", line);
    return e;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> out;
    std::set<std::uint64_t> ids;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ManifestEntry e = parse_entry(line, number);
        if (!ids.insert(e.id).second) throw ManifestError(number, "duplicate id " + std::to_string(e.id));
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

std::string manifest_line(const ManifestEntry& e) {
    json obj = json::object();
    obj["id"] = e.id;
    obj["image_path"] = e.image_path;
    obj["lat"] = e.lat;
    obj["lon"] = e.lon;
    if (e.heading_deg) obj["heading_deg"] = *e.heading_deg;
    obj["split"] = to_string(e.split);
    if (e.place) obj["place"] = *e.place;
    if (e.alias_of) obj["alias_of"] = *e.alias_of;
    return obj.dump();
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& e : entries) out << manifest_line(e) << '\n';
    if (!out) throw std::runtime_error("write failed on '" + path + "'");
}

std::string resolve_image_path(const std::string& manifest_path, const ManifestEntry& entry) {
    const std::filesystem::path p(entry.image_path);
    if (p.is_absolute()) return p.string();
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

}  // namespace tsvpr
