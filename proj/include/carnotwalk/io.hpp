#pragma once

// Deterministic text output. All floating-point values are printed with
// std::to_chars shortest round-trip form, so identical doubles always yield
// identical bytes. CSV dialect: comma separator, '.' decimal point, LF line
// endings, one header row.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace carnot {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_int(long long v) { return std::to_string(v); }

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& begin_row() {
    rows_.emplace_back();
    return *this;
  }
  CsvTable& col(const std::string& s) {
    rows_.back().push_back(s);
    return *this;
  }
  CsvTable& col(double v) { return col(fmt_double(v)); }
  CsvTable& col(int v) { return col(fmt_int(v)); }
  CsvTable& col(long long v) { return col(fmt_int(v)); }
  CsvTable& col(std::uint64_t v) { return col(std::to_string(v)); }

  std::string to_string() const {
    std::ostringstream out;
    join(out, header_);
    for (const auto& r : rows_) {
      if (r.size() != header_.size()) throw std::logic_error("csv row width mismatch");
      join(out, r);
    }
    return out.str();
  }

  void save(const std::string& path) const { write_text_file(path, to_string()); }

  static void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
  }

 private:
  static void join(std::ostringstream& out, const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// FNV-1a over bytes; stable across platforms, used for config hashes.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace carnot
