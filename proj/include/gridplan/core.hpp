#pragma once

// Shared vocabulary for the gridplan headers: grid coordinates, the error
// hierarchy, a portable seeded RNG and a couple of small string helpers.

#include <algorithm>
#include <array>
#include <cctype>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace gridplan {

using json = nlohmann::json;

struct Pos {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const Pos&, const Pos&) = default;
  friend bool operator==(const Pos&, const Pos&) = default;
};

inline Pos operator+(Pos a, Pos b) { return {a.row + b.row, a.col + b.col}; }

inline json pos_to_json(Pos p) { return json::array({p.row, p.col}); }

inline Pos pos_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("position must be [row, col]");
  return {j.at(0).get<int>(), j.at(1).get<int>()};
}

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInstance : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(std::string what, int line_, int column_)
      : Error("line " + std::to_string(line_) + ", column " + std::to_string(column_) + ": " + what),
        line(line_), column(column_) {}
  int line;
  int column;
};

struct BudgetExhausted : Error {
  using Error::Error;
};

struct LatticeError : Error {
  using Error::Error;
};

struct GenError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// std::mt19937_64 is bit-specified by the standard, but the std distributions
// are not, so sampling goes through these helpers to keep corpora byte-stable
// across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return static_cast<std::size_t>(x % n);
  }

  // Uniform double in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  template <typename T>
  const T& pick(const std::vector<T>& items) {
    return items.at(below(items.size()));
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Strings

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.emplace_back(text.substr(start));
      break;
    }
    lines.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

// Shortest decimal text for values like costs: 0.3 -> "0.3", 0.6000000001 -> "0.6", 3 -> "3".
inline std::string format_decimal(double v, int max_decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", max_decimals, v);
  std::string s = buf;
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

}  // namespace gridplan
