#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace proptk {

inline constexpr std::string_view toolkit_version = "0.1.0";

// Bad user input: malformed files, impossible configs, diverged training.
// The CLI maps this to exit code 1; anything else escaping a command is 2.
class input_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class internal_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- strings

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      break;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

// ---------------------------------------------------------------- parsing

inline std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || s.empty()) return std::nullopt;
  return v;
}

// Round-trip exact text form of a double.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// ------------------------------------------------------------------- rng

// Deterministic across platforms; all toolkit randomness flows through this.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, n); modulo bias is irrelevant at toolkit scales and keeps draws portable.
  std::uint64_t next_below(std::uint64_t n) { return n ? next() % n : 0; }

  // [0, 1)
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

private:
  std::uint64_t state_;
};

template <typename T>
inline void shuffle(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.next_below(i)]);
}

// ------------------------------------------------------------------ hash

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ------------------------------------------------------------------ utf8

// Returns the byte position of the first ill-formed sequence, or nullopt if valid.
inline std::optional<std::size_t> find_invalid_utf8(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  auto cont = [&](std::size_t k) {
    return k < n && (static_cast<unsigned char>(s[k]) & 0xC0) == 0x80;
  };
  while (i < n) {
    unsigned char b = static_cast<unsigned char>(s[i]);
    if (b < 0x80) {
      ++i;
    } else if (b >= 0xC2 && b <= 0xDF) {
      if (!cont(i + 1)) return i;
      i += 2;
    } else if (b == 0xE0) {
      unsigned char b1 = i + 1 < n ? static_cast<unsigned char>(s[i + 1]) : 0;
      if (b1 < 0xA0 || b1 > 0xBF || !cont(i + 2)) return i;
      i += 3;
    } else if (b == 0xED) {
      unsigned char b1 = i + 1 < n ? static_cast<unsigned char>(s[i + 1]) : 0;
      if (b1 < 0x80 || b1 > 0x9F || !cont(i + 2)) return i;
      i += 3;
    } else if ((b & 0xF0) == 0xE0) {
      if (!cont(i + 1) || !cont(i + 2)) return i;
      i += 3;
    } else if (b == 0xF0) {
      unsigned char b1 = i + 1 < n ? static_cast<unsigned char>(s[i + 1]) : 0;
      if (b1 < 0x90 || b1 > 0xBF || !cont(i + 2) || !cont(i + 3)) return i;
      i += 4;
    } else if (b >= 0xF1 && b <= 0xF3) {
      if (!cont(i + 1) || !cont(i + 2) || !cont(i + 3)) return i;
      i += 4;
    } else if (b == 0xF4) {
      unsigned char b1 = i + 1 < n ? static_cast<unsigned char>(s[i + 1]) : 0;
      if (b1 < 0x80 || b1 > 0x8F || !cont(i + 2) || !cont(i + 3)) return i;
      i += 4;
    } else {
      return i;
    }
  }
  return std::nullopt;
}

inline bool is_char_boundary(std::string_view s, std::size_t i) {
  if (i >= s.size()) return i == s.size();
  return (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80;
}

// ------------------------------------------------------------------- io

inline std::string read_file(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path))
    throw input_error("expected a file, got a directory: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw input_error("read failed: " + path.string());
  return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write file: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw input_error("write failed: " + path.string());
}

}  // namespace proptk
