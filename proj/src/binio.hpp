// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "adanas/errors.hpp"
#include "adanas/tensor.hpp"

namespace adanas::binio {

// Little-endian host assumed for the raw double payloads.
static_assert(std::endian::native == std::endian::little);

class Writer {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void tensor(const Tensor& t) {
    u64(t.shape().size());
    for (auto d : t.shape()) u64(d);
    doubles(t.values());
  }
  void magic(std::string_view m) { raw(m.data(), m.size()); }

  void save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + tmp.string());
      out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw DataError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : where_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + where_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof(v));
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof(v));
    return v;
  }
  std::string str() {
    const auto n = length(1);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(length(sizeof(double)));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  Tensor tensor() {
    Shape shape(length(sizeof(std::uint64_t)));
    for (auto& d : shape) d = u64();
    auto data = doubles();
    try {
      return Tensor(std::move(shape), std::move(data));
    } catch (const Error& e) {
      throw DataError(where_ + ": corrupt tensor: " + e.what());
    }
  }
  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    raw(got.data(), got.size());
    if (got != m) throw DataError(where_ + ": not a " + std::string(m) + " file");
  }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& where() const { return where_; }

 private:
  std::size_t length(std::size_t unit) {
    const auto n = u64();
    if (n > (buf_.size() - pos_) / unit) throw DataError(where_ + ": truncated or corrupt file");
    return static_cast<std::size_t>(n);
  }
  void raw(void* p, std::size_t n) {
    if (buf_.size() - pos_ < n) throw DataError(where_ + ": truncated file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::string where_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace adanas::binio
