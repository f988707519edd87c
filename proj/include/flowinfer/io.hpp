#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "graph.hpp"

namespace flowinfer {

// ---------------------------------------------------------------------------
// Named-array snapshot container, shared by flow and surrogate save files.
// Layout (little-endian):
//   magic "FLOWSNP1" | u32 version | u32 count
//   per array: u32 name_len | name | u32 rows | u32 cols | f64 data[rows*cols]

namespace snapshot {

inline constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'S', 'N', 'P', '1'};
inline constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::ifstream& in, const std::string& field) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw std::runtime_error("snapshot: truncated file while reading " + field);
    return v;
}

inline void save(const std::string& path,
                 const std::vector<std::pair<std::string, const Matrix*>>& arrays) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("snapshot: cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, m] : arrays) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(m->rows));
        write_u32(out, static_cast<std::uint32_t>(m->cols));
        out.write(reinterpret_cast<const char*>(m->data.data()),
                  static_cast<std::streamsize>(m->data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("snapshot: write failure on '" + path + "'");
}

inline std::vector<std::pair<std::string, Matrix>> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("snapshot: cannot open '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("snapshot: bad magic in '" + path + "'");
    const std::uint32_t version = read_u32(in, "version");
    if (version != kVersion)
        throw std::runtime_error("snapshot: unsupported version " + std::to_string(version));
    const std::uint32_t count = read_u32(in, "count");
    std::vector<std::pair<std::string, Matrix>> arrays;
    arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in, "name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len))
            throw std::runtime_error("snapshot: truncated name at entry " + std::to_string(i));
        const std::uint32_t rows = read_u32(in, name + ".rows");
        const std::uint32_t cols = read_u32(in, name + ".cols");
        Matrix m(rows, cols);
        if (!in.read(reinterpret_cast<char*>(m.data.data()),
                     static_cast<std::streamsize>(m.data.size() * sizeof(double))))
            throw std::runtime_error("snapshot: truncated data for array '" + name + "'");
        arrays.emplace_back(std::move(name), std::move(m));
    }
    return arrays;
}

// map-like access with a hard error naming the missing field
inline const Matrix& find(const std::vector<std::pair<std::string, Matrix>>& arrays,
                          const std::string& name) {
    for (const auto& [n, m] : arrays)
        if (n == name) return m;
    throw std::runtime_error("snapshot: missing array '" + name + "'");
}

inline bool contains(const std::vector<std::pair<std::string, Matrix>>& arrays,
                     const std::string& name) {
    for (const auto& [n, m] : arrays)
        if (n == name) return true;
    return false;
}

}  // namespace snapshot

// ---------------------------------------------------------------------------
// CSV output. %.17g keeps doubles bit-exact through a parse round-trip, which
// the byte-identical determinism guarantee relies on.

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j) out << ',';
        out << header[j];
    }
    out << '\n';
    for (std::size_t i = 0; i < rows.rows; ++i) {
        for (std::size_t j = 0; j < rows.cols; ++j) {
            if (j) out << ',';
            out << format_double(rows(i, j));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

inline Matrix read_csv(const std::string& path, std::vector<std::string>* header = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("'" + path + "': empty file");
    if (header) {
        header->clear();
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                std::string f = line.substr(pos);
                if (!f.empty() && f.back() == '\r') f.pop_back();
                header->push_back(f);
                break;
            }
            header->push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t comma = line.find(',', pos);
            const std::string field =
                comma == std::string::npos ? line.substr(pos) : line.substr(pos, comma - pos);
            row.push_back(std::stod(field));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return Matrix(0, header ? header->size() : 0);
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols)
            throw std::runtime_error("'" + path + "': ragged row " + std::to_string(i + 2));
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

}  // namespace flowinfer
