#pragma once

// Small text helpers for the delimiter-separated formats the library reads
// and writes.

#include "stardr/core.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

namespace stardr::text {

inline std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Tab if the header line contains one, otherwise comma.
inline char detect_delimiter(std::string_view header) {
    return header.find('\t') != std::string_view::npos ? '\t' : ',';
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
    s = trim(s);
    Int v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw RuntimeFailure("format_double: conversion failed");
    return std::string(buf, ptr);
}

/// Fixed-precision rendering for human-facing tables.
inline std::string format_fixed(double v, int digits = 6) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
    if (ec != std::errc()) throw RuntimeFailure("format_fixed: conversion failed");
    return std::string(buf, ptr);
}

/// Read all lines, stripping a trailing '\r' and a UTF-8 BOM on the first line.
inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    if (!lines.empty() && lines.front().rfind("\xEF\xBB\xBF", 0) == 0) lines.front().erase(0, 3);
    return lines;
}

inline void write_file(const std::string& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + path + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw RuntimeFailure("write failed for '" + path + "'");
}

/// Builder for comma-separated tables.
class Table {
public:
    explicit Table(std::vector<std::string> header) : width_(header.size()) { add(header); }

    Table& row(const std::vector<std::string>& cells) {
        if (cells.size() != width_) throw ValidationError("Table::row: wrong number of cells");
        add(cells);
        return *this;
    }

    const std::string& str() const { return body_; }
    void save(const std::string& path) const { write_file(path, body_); }

private:
    void add(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) body_.push_back(',');
            body_ += cells[i];
        }
        body_.push_back('\n');
    }

    std::size_t width_;
    std::string body_;
};

} // namespace stardr::text
