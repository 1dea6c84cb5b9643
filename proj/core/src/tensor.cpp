// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/tensor.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "nvqad/check.hpp"

namespace nvqad {

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<float> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
  NVQAD_CHECK(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
              "shape " << shape_str(shape) << " wants " << shape_numel(shape)
                       << " elements, got " << data.size());
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  std::int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, float v) {
  std::int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), v));
}

std::int64_t Tensor::numel() const { return shape_numel(shape); }

std::int64_t shape_numel(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    NVQAD_CHECK(d >= 0, "negative dimension " << d);
    n *= d;
  }
  return n;
}

std::string shape_str(std::span<const std::int64_t> shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

namespace {

constexpr std::uint16_t kNvckVersion = 1;

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  std::string buf;
  std::size_t pos = 0;
  std::uint8_t u8() {
    NVQAD_CHECK(pos < buf.size(), "truncated checkpoint");
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    NVQAD_CHECK(pos + n <= buf.size(), "truncated checkpoint");
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
};

}  // namespace

void write_nvck(const std::string& path, const NamedTensors& tensors) {
  std::string buf;
  buf += "NVCK";
  put_u16(buf, kNvckVersion);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    NVQAD_CHECK(!name.empty() && name.size() < 65536, "bad tensor name length " << name.size());
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) {
      NVQAD_CHECK(d > 0 && d <= 0xFFFFFFFFll, "dimension out of range: " << d);
      put_u32(buf, static_cast<std::uint32_t>(d));
    }
    buf.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  NVQAD_CHECK(f.good(), "cannot open " << path << " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  NVQAD_CHECK(f.good(), "write failed: " << path);
}

NamedTensors read_nvck(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  NVQAD_CHECK(f.good(), "cannot open " << path);
  Reader r;
  r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  NVQAD_CHECK(r.buf.size() >= 4 && r.buf.compare(0, 4, "NVCK") == 0, "bad magic in " << path);
  r.pos = 4;
  std::uint16_t version = r.u16();
  NVQAD_CHECK(version == kNvckVersion, "unsupported checkpoint version " << version);
  std::uint32_t count = r.u32();
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    NVQAD_CHECK(name_len > 0 && name_len < 65536, "bad name length " << name_len);
    NVQAD_CHECK(r.pos + name_len <= r.buf.size(), "truncated checkpoint");
    std::string name(r.buf, r.pos, name_len);
    r.pos += name_len;
    std::uint32_t rank = r.u32();
    NVQAD_CHECK(rank >= 1 && rank <= 8, "rank out of range: " << rank);
    std::vector<std::int64_t> shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      NVQAD_CHECK(d > 0, "zero dimension in " << path);
      n *= d;
    }
    std::vector<float> data(static_cast<std::size_t>(n));
    r.bytes(data.data(), data.size() * 4);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  NVQAD_CHECK(r.pos == r.buf.size(), "trailing bytes in " << path);
  return out;
}

std::uint64_t checksum(const NamedTensors& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : tensors) {
    mix(name.data(), name.size());
    mix(t.shape.data(), t.shape.size() * sizeof(std::int64_t));
    mix(t.data.data(), t.data.size() * 4);
  }
  return h;
}

}  // namespace nvqad
