#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace omniforge {

using json = nlohmann::json;

struct JsonlLine {
    size_t line_no = 0;  // 1-based
    json value;
};

struct JsonlParseError {
    size_t line_no = 0;
    std::string message;
};

struct JsonlFile {
    std::vector<JsonlLine> records;
    std::vector<JsonlParseError> errors;
};

// Reads a JSON-lines file. Blank lines are skipped; unparseable lines are
// collected as errors instead of aborting the read.
inline JsonlFile read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open file: " + path);
    }
    JsonlFile out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded()) {
            out.errors.push_back({line_no, "invalid JSON"});
        } else {
            out.records.push_back({line_no, std::move(j)});
        }
    }
    return out;
}

inline void write_jsonl(const std::string& path, const std::vector<json>& items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open file for writing: " + path);
    }
    for (const auto& j : items) {
        out << j.dump() << '\n';
    }
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open file: " + path);
    }
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace omniforge
