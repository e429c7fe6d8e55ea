#include "readmit/csv.hpp"

#include <fstream>
#include <sstream>

#include "readmit/errors.hpp"

namespace readmit {

std::vector<std::string> split(const std::string &s, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string join(const std::vector<std::string> &parts, char delim) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(delim);
        out += parts[i];
    }
    return out;
}

CsvTable read_csv(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path);
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            table.header = split(line, ',');
            first = false;
        } else if (!line.empty()) {
            table.rows.push_back(split(line, ','));
        }
    }
    if (first) throw MissingArtifact(path + " (empty file, no header)");
    return table;
}

void write_csv(const std::string &path, const CsvTable &table) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact(path + " (cannot open for writing)");
    out << join(table.header, ',') << "\n";
    for (const auto &row : table.rows) out << join(row, ',') << "\n";
}

} // namespace readmit
