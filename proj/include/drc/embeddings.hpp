#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drc/errors.hpp"
#include "drc/tensor.hpp"

namespace drc {

// Fixed pretrained word vectors. Lookups are case-sensitive; out-of-vocabulary
// tokens resolve to the zero vector, which is transparent under summation
// pooling. The table never changes after loading.
class WordVectorTable {
 public:
  WordVectorTable() = default;
  explicit WordVectorTable(std::size_t dim) : dim_(dim), oov_({dim}) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  std::size_t duplicates_replaced() const { return duplicates_; }

  void insert(const std::string& token, std::vector<double> values) {
    if (values.size() != dim_) {
      throw DimensionError("embedding for '" + token + "' has " +
                           std::to_string(values.size()) + " values, expected " +
                           std::to_string(dim_));
    }
    Tensor t = Tensor::vec(std::move(values));
    auto it = vectors_.find(token);
    if (it == vectors_.end()) {
      vectors_.emplace(token, std::move(t));
    } else {
      it->second = std::move(t);  // last occurrence wins
      ++duplicates_;
    }
  }

  bool contains(const std::string& token) const { return vectors_.count(token) > 0; }

  // Stored vector, or the zero vector for unknown tokens. Never fails.
  const Tensor& lookup(const std::string& token) const {
    auto it = vectors_.find(token);
    return it == vectors_.end() ? oov_ : it->second;
  }

  const std::unordered_map<std::string, Tensor>& entries() const { return vectors_; }

  // Content hash over (token, values) in sorted token order; used to verify
  // the table is untouched by training.
  std::uint64_t checksum() const {
    std::vector<const std::string*> keys;
    keys.reserve(vectors_.size());
    for (const auto& [k, v] : vectors_) keys.push_back(&k);
    std::sort(keys.begin(), keys.end(),
              [](const std::string* a, const std::string* b) { return *a < *b; });
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&h](const void* p, std::size_t n) {
      const unsigned char* c = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= c[i];
        h *= 1099511628211ULL;
      }
    };
    mix(&dim_, sizeof(dim_));
    for (const std::string* k : keys) {
      mix(k->data(), k->size());
      const Tensor& t = vectors_.at(*k);
      mix(t.data().data(), t.size() * sizeof(double));
    }
    return h;
  }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Tensor> vectors_;
  Tensor oov_;
  std::size_t duplicates_ = 0;
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + s.size() && !s.empty();
}

inline bool parse_count(const std::string& s, std::size_t& out) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return false;
  out = static_cast<std::size_t>(std::stoull(s));
  return true;
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream ss(line);
  std::string f;
  while (ss >> f) fields.push_back(f);
  return fields;
}

}  // namespace detail

// Text format: optional header line "<vocab> <dim>", then one entry per
// line: token followed by <dim> whitespace-separated reals. Without a
// header the dimension is inferred from the first entry. Duplicate tokens:
// last occurrence wins, counted in duplicates_replaced().
inline WordVectorTable load_text_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file: " + path);

  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  bool have_dim = false;
  WordVectorTable table;
  bool table_ready = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::vector<std::string> fields = detail::split_fields(line);

    if (!have_dim && fields.size() == 2) {
      std::size_t vocab = 0, k = 0;
      if (detail::parse_count(fields[0], vocab) && detail::parse_count(fields[1], k)) {
        if (k == 0) throw DataError(path + ":" + std::to_string(lineno) +
                                    ": header declares dimension 0");
        dim = k;
        have_dim = true;
        continue;
      }
    }
    if (!have_dim) {
      if (fields.size() < 2) {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected a token followed by vector values");
      }
      dim = fields.size() - 1;
      have_dim = true;
    }
    if (!table_ready) {
      table = WordVectorTable(dim);
      table_ready = true;
    }
    if (fields.size() != dim + 1) {
      throw DimensionError(path + ":" + std::to_string(lineno) + ": entry has " +
                           std::to_string(fields.size() - 1) + " values, expected " +
                           std::to_string(dim));
    }
    std::vector<double> values(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!detail::parse_double(fields[i + 1], values[i])) {
        throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric value '" +
                        fields[i + 1] + "'");
      }
    }
    table.insert(fields[0], std::move(values));
  }
  if (!table_ready || table.size() == 0) {
    throw DataError("embedding file has no entries: " + path);
  }
  return table;
}

// Binary format (word2vec distribution layout): header "<vocab> <dim>\n",
// then per entry the token, one space, and <dim> little-endian 32-bit
// floats. A newline after the payload, as written by the original tool, is
// tolerated. Values are widened to double.
inline WordVectorTable load_binary_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file: " + path);

  std::string header;
  if (!std::getline(in, header)) throw DataError("empty embedding file: " + path);
  std::vector<std::string> fields = detail::split_fields(header);
  std::size_t vocab = 0, dim = 0;
  if (fields.size() != 2 || !detail::parse_count(fields[0], vocab) ||
      !detail::parse_count(fields[1], dim) || dim == 0) {
    throw DataError(path + ": malformed binary header '" + header + "'");
  }

  WordVectorTable table(dim);
  std::vector<char> payload(dim * 4);
  for (std::size_t e = 0; e < vocab; ++e) {
    int c = in.get();
    while (c == '\n' || c == '\r' || c == ' ') c = in.get();
    std::string token;
    while (c != EOF && c != ' ') {
      token.push_back(static_cast<char>(c));
      c = in.get();
    }
    if (c == EOF) {
      throw DataError(path + ": truncated file, header claims " + std::to_string(vocab) +
                      " entries but only " + std::to_string(e) + " are present");
    }
    if (!in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
      throw DataError(path + ": truncated vector payload for token '" + token + "'");
    }
    std::vector<double> values(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const unsigned char* b = reinterpret_cast<const unsigned char*>(payload.data()) + i * 4;
      std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                           (static_cast<std::uint32_t>(b[1]) << 8) |
                           (static_cast<std::uint32_t>(b[2]) << 16) |
                           (static_cast<std::uint32_t>(b[3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      values[i] = static_cast<double>(f);
    }
    table.insert(token, std::move(values));
  }
  return table;
}

inline void save_text_vectors(const WordVectorTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding file: " + path);
  out.precision(17);
  out << table.size() << ' ' << table.dim() << '\n';
  std::vector<std::string> keys;
  keys.reserve(table.size());
  for (const auto& [k, v] : table.entries()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const std::string& k : keys) {
    out << k;
    const Tensor& t = table.lookup(k);
    for (std::size_t i = 0; i < t.size(); ++i) out << ' ' << t[i];
    out << '\n';
  }
}

inline void save_binary_vectors(const WordVectorTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embedding file: " + path);
  out << table.size() << ' ' << table.dim() << '\n';
  std::vector<std::string> keys;
  keys.reserve(table.size());
  for (const auto& [k, v] : table.entries()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const std::string& k : keys) {
    out << k << ' ';
    const Tensor& t = table.lookup(k);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f = static_cast<float>(t[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                   static_cast<char>((bits >> 16) & 0xff),
                   static_cast<char>((bits >> 24) & 0xff)};
      out.write(b, 4);
    }
  }
}

// Dispatch on extension: ".bin" loads the binary layout, anything else text.
inline WordVectorTable load_vectors(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0) {
    return load_binary_vectors(path);
  }
  return load_text_vectors(path);
}

}  // namespace drc
