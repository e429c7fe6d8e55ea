#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace readmit {

// Minimal delimited-text table: comma-separated, header row, no quoting.
// Code lists are pipe-delimited inside a single field.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // index of a column, -1 when absent
    int find(const std::string &name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

CsvTable read_csv(const std::string &path);
void write_csv(const std::string &path, const CsvTable &table);

std::vector<std::string> split(const std::string &s, char delim);
std::string join(const std::vector<std::string> &parts, char delim);

} // namespace readmit
