// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/container.hpp"

#include <cstring>
#include <fstream>

namespace sprt {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'R', 'T'};

size_t dtype_size(TensorContainer::Dtype d) {
  switch (d) {
    case TensorContainer::Dtype::f32: return 4;
    case TensorContainer::Dtype::i64: return 8;
    case TensorContainer::Dtype::u8: return 1;
  }
  throw data_error("container: unknown dtype tag");
}

template <typename T>
void append_le(std::vector<uint8_t>& out, T v) {
  uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& b) : b_(b) {}

  template <typename T>
  T read() {
    if (pos_ + sizeof(T) > b_.size()) throw data_error("container: truncated file");
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::vector<uint8_t> read_bytes(size_t n) {
    if (pos_ + n > b_.size()) throw data_error("container: truncated payload");
    std::vector<uint8_t> out(b_.begin() + static_cast<long>(pos_),
                             b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<uint8_t>& b_;
  size_t pos_ = 0;
};

}  // namespace

const TensorContainer::Entry& TensorContainer::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw data_error("container: no entry named '" + name + "'");
  return it->second;
}

std::vector<std::string> TensorContainer::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void TensorContainer::insert(const std::string& name, Entry e) {
  if (name.empty() || name.size() > 0xffff) throw data_error("container: bad entry name");
  if (e.numel() * dtype_size(e.dtype) != e.bytes.size())
    throw data_error("container: dims/payload size mismatch for '" + name + "'");
  entries_[name] = std::move(e);
}

void TensorContainer::set_tensor(const std::string& name, const Tensor& t) {
  Entry e;
  e.dtype = Dtype::f32;
  for (int64_t d : t.shape) e.dims.push_back(static_cast<uint64_t>(d));
  e.bytes.resize(t.data.size() * 4);
  for (size_t i = 0; i < t.data.size(); ++i) {
    float f = static_cast<float>(t.data[i]);
    std::memcpy(e.bytes.data() + 4 * i, &f, 4);
  }
  insert(name, std::move(e));
}

void TensorContainer::set_i64(const std::string& name, const std::vector<int64_t>& v) {
  Entry e;
  e.dtype = Dtype::i64;
  e.dims = {v.size()};
  e.bytes.resize(v.size() * 8);
  std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
  insert(name, std::move(e));
}

void TensorContainer::set_u8(const std::string& name, const std::vector<uint8_t>& v) {
  Entry e;
  e.dtype = Dtype::u8;
  e.dims = {v.size()};
  e.bytes = v;
  insert(name, std::move(e));
}

void TensorContainer::set_string(const std::string& name, const std::string& s) {
  set_u8(name, std::vector<uint8_t>(s.begin(), s.end()));
}

Tensor TensorContainer::get_tensor(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != Dtype::f32) throw data_error("container: '" + name + "' is not f32");
  Tensor t;
  for (uint64_t d : e.dims) t.shape.push_back(static_cast<int64_t>(d));
  t.data.resize(e.numel());
  for (size_t i = 0; i < t.data.size(); ++i) {
    float f;
    std::memcpy(&f, e.bytes.data() + 4 * i, 4);
    t.data[i] = static_cast<real>(f);
  }
  return t;
}

std::vector<int64_t> TensorContainer::get_i64(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != Dtype::i64) throw data_error("container: '" + name + "' is not i64");
  std::vector<int64_t> v(e.numel());
  std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
  return v;
}

std::vector<uint8_t> TensorContainer::get_u8(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != Dtype::u8) throw data_error("container: '" + name + "' is not u8");
  return e.bytes;
}

std::string TensorContainer::get_string(const std::string& name) const {
  auto v = get_u8(name);
  return std::string(v.begin(), v.end());
}

std::vector<uint8_t> TensorContainer::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_le<uint32_t>(out, kFormatVersion);
  for (const auto& [name, e] : entries_) {
    append_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_le<uint8_t>(out, static_cast<uint8_t>(e.dtype));
    append_le<uint8_t>(out, static_cast<uint8_t>(e.dims.size()));
    for (uint64_t d : e.dims) append_le<uint64_t>(out, d);
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  return out;
}

TensorContainer TensorContainer::deserialize(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  auto magic = r.read_bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw data_error("container: bad magic");
  uint32_t version = r.read<uint32_t>();
  if (version != kFormatVersion)
    throw data_error("container: unsupported format version " + std::to_string(version));
  TensorContainer c;
  while (!r.done()) {
    uint16_t name_len = r.read<uint16_t>();
    auto name_bytes = r.read_bytes(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    Entry e;
    uint8_t dtype = r.read<uint8_t>();
    if (dtype > 2) throw data_error("container: unknown dtype tag");
    e.dtype = static_cast<Dtype>(dtype);
    uint8_t rank = r.read<uint8_t>();
    for (int i = 0; i < rank; ++i) e.dims.push_back(r.read<uint64_t>());
    e.bytes = r.read_bytes(e.numel() * dtype_size(e.dtype));
    if (c.entries_.count(name)) throw data_error("container: duplicate entry '" + name + "'");
    c.entries_[name] = std::move(e);
  }
  return c;
}

void TensorContainer::save(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("container: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (!f) throw data_error("container: write failed for '" + path + "'");
}

TensorContainer TensorContainer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw data_error("container: cannot open '" + path + "'");
  auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<uint8_t> bytes(size);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<long>(size));
  if (!f) throw data_error("container: read failed for '" + path + "'");
  return deserialize(bytes);
}

}  // namespace sprt
