#pragma once
// Cohort manifest: CSV with header `subject_id,group,split,path`. Relative
// paths are resolved against the manifest's directory.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace cam {

enum class Group { Healthy, Anomalous };
enum class Split { Train, Val, Test };

inline std::string to_string(Group g) { return g == Group::Healthy ? "healthy" : "anomalous"; }

inline std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

inline Group parse_group(const std::string& s) {
    if (s == "healthy") return Group::Healthy;
    if (s == "anomalous") return Group::Anomalous;
    throw FormatError("unknown group \"" + s + "\"");
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split \"" + s + "\"");
}

struct ManifestEntry {
    std::string subject_id;
    Group group = Group::Healthy;
    Split split = Split::Train;
    std::filesystem::path path;
};

struct CohortManifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> select(Split s) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(e);
        return out;
    }
};

inline void validate_manifest(const CohortManifest& m) {
    std::set<std::string> ids;
    for (const auto& e : m.entries) {
        if (e.subject_id.empty() || e.subject_id.find(',') != std::string::npos)
            throw FormatError("manifest: invalid subject id \"" + e.subject_id + "\"");
        if (!ids.insert(e.subject_id).second) throw FormatError("manifest: duplicate subject id " + e.subject_id);
    }
}

inline void write_manifest(const CohortManifest& m, const std::filesystem::path& path) {
    validate_manifest(m);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "subject_id,group,split,path\n";
    for (const auto& e : m.entries)
        out << e.subject_id << ',' << to_string(e.group) << ',' << to_string(e.split) << ',' << e.path.generic_string()
            << '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

// check_files: verify every referenced file exists.
inline CohortManifest read_manifest(const std::filesystem::path& path, bool check_files = true) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "subject_id,group,split,path")
        throw FormatError(path.string() + ": expected header subject_id,group,split,path");
    CohortManifest m;
    const auto base = path.parent_path();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 4)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
        ManifestEntry e;
        e.subject_id = cells[0];
        e.group = parse_group(cells[1]);
        e.split = parse_split(cells[2]);
        e.path = std::filesystem::path(cells[3]);
        if (e.path.is_relative()) e.path = base / e.path;
        if (check_files && !std::filesystem::exists(e.path))
            throw IoError("manifest: file for subject " + e.subject_id + " not found: " + e.path.string());
        m.entries.push_back(std::move(e));
    }
    validate_manifest(m);
    return m;
}

}  // namespace cam
