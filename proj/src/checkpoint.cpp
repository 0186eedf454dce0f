#include "progsg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace progsg::ad {

namespace {

constexpr char kMagic[8] = {'P', 'G', 'S', 'G', 'W', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& is) {
  uint32_t n = take<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_weights(const ParamStore& ps, const std::string& path, Precision dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, kVersion);
  put<uint32_t>(os, static_cast<uint32_t>(ps.all().size()));
  for (const auto& p : ps.all()) {
    put_string(os, p->id);
    put<uint8_t>(os, dtype == Precision::f32 ? 0 : 1);
    put<uint32_t>(os, static_cast<uint32_t>(p->value.shape.size()));
    for (int64_t d : p->value.shape) put<int64_t>(os, d);
  }
  for (const auto& p : ps.all()) {
    if (dtype == Precision::f32) {
      for (double x : p->value.data) put<float>(os, static_cast<float>(x));
    } else {
      for (double x : p->value.data) put<double>(os, x);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

void load_weights(ParamStore& ps, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = take<uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  uint32_t count = take<uint32_t>(is);
  struct Entry {
    Param* param;
    Precision dtype;
  };
  std::vector<Entry> entries;
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    std::string id = take_string(is);
    uint8_t dt = take<uint8_t>(is);
    uint32_t ndim = take<uint32_t>(is);
    std::vector<int64_t> shape;
    for (uint32_t k = 0; k < ndim; ++k) shape.push_back(take<int64_t>(is));
    Param* p = ps.find(id);
    if (!p) throw std::runtime_error("checkpoint: unknown param " + id);
    if (p->value.shape != shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + id);
    if (!seen.insert(id).second)
      throw std::runtime_error("checkpoint: duplicate param " + id);
    entries.push_back({p, dt == 0 ? Precision::f32 : Precision::f64});
  }
  if (seen.size() != ps.all().size())
    throw std::runtime_error("checkpoint: missing parameters in " + path);
  for (auto& e : entries) {
    for (double& x : e.param->value.data) {
      x = e.dtype == Precision::f32 ? static_cast<double>(take<float>(is))
                                    : take<double>(is);
    }
  }
}

}  // namespace progsg::ad
