#pragma once

#include <charconv>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvlab {

// Shortest round-trip decimal representation; keeps CSV output byte-stable.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  CsvWriter& comment(std::string_view text) {
    os_ << "# " << text << '\n';
    return *this;
  }
  CsvWriter& header(std::initializer_list<std::string_view> names) {
    bool first = true;
    for (auto n : names) {
      if (!first) os_ << ',';
      os_ << n;
      first = false;
    }
    os_ << '\n';
    return *this;
  }
  CsvWriter& header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) os_ << (i ? "," : "") << names[i];
    os_ << '\n';
    return *this;
  }
  CsvWriter& field(double v) {
    sep();
    os_ << format_double(v);
    return *this;
  }
  CsvWriter& field(long long v) {
    sep();
    os_ << v;
    return *this;
  }
  CsvWriter& field(std::size_t v) { return field(static_cast<long long>(v)); }
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  CsvWriter& field(std::string_view v) {
    sep();
    os_ << v;
    return *this;
  }
  CsvWriter& fields(std::span<const double> vs) {
    for (double v : vs) field(v);
    return *this;
  }
  CsvWriter& end() {
    os_ << '\n';
    fresh_ = true;
    return *this;
  }

 private:
  void sep() {
    if (!fresh_) os_ << ',';
    fresh_ = false;
  }
  std::ostream& os_;
  bool fresh_ = true;
};

}  // namespace mvlab
