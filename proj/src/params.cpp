#include "stereopose/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "stereopose/errors.hpp"

namespace stereopose {

template <typename T>
int ParamStoreT<T>::add(const std::string& name, TensorT<T> value) {
  if (name.empty()) throw InvalidConfig("parameter name must not be empty");
  if (index_.count(name)) throw InvalidConfig("duplicate parameter name '" + name + "'");
  ParameterT<T> p;
  p.name = name;
  p.acc.assign(value.numel(), T(0));
  p.value = std::move(value);
  int id = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
  index_[name] = id;
  return id;
}

template <typename T>
int ParamStoreT<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

template <typename T>
size_t ParamStoreT<T>::value_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParamStoreT<T>::freeze_prefix(const std::string& prefix, bool frozen) {
  for (auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
}

template <typename T>
std::vector<int> ParamStoreT<T>::ids_with_prefix(const std::string& prefix) const {
  std::vector<int> ids;
  for (size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name.rfind(prefix, 0) == 0) ids.push_back(static_cast<int>(i));
  return ids;
}

template <typename T>
void rmsprop_step(ParamStoreT<T>& store, const std::vector<std::vector<T>>& grads, double lr,
                  double rho, double eps) {
  const T trho = static_cast<T>(rho);
  const T tone_m_rho = static_cast<T>(1.0 - rho);
  const T tlr = static_cast<T>(lr);
  const T teps = static_cast<T>(eps);
  for (size_t id = 0; id < store.size(); ++id) {
    ParameterT<T>& p = store.param(static_cast<int>(id));
    if (p.frozen) continue;
    if (id >= grads.size() || grads[id].empty()) continue;
    const std::vector<T>& g = grads[id];
    if (g.size() != p.value.numel())
      throw ShapeMismatch("gradient size for parameter '" + p.name + "'");
    for (size_t i = 0; i < g.size(); ++i) {
      p.acc[i] = trho * p.acc[i] + tone_m_rho * g[i] * g[i];
      p.value.v[i] -= tlr * g[i] / std::sqrt(p.acc[i] + teps);
    }
  }
}

template class ParamStoreT<float>;
template class ParamStoreT<double>;
template void rmsprop_step<float>(ParamStoreT<float>&, const std::vector<std::vector<float>>&,
                                  double, double, double);
template void rmsprop_step<double>(ParamStoreT<double>&,
                                   const std::vector<std::vector<double>>&, double, double,
                                   double);

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'P', 'N', 'C'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint64_t kMaxElems = 1ull << 28;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw CorruptCheckpoint("truncated file");
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const ParamStore& store) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (size_t id = 0; id < store.size(); ++id) {
    const ParameterT<float>& p = store.param(static_cast<int>(id));
    if (p.name.size() > 0xffff) throw InvalidConfig("parameter name too long to serialize");
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    out.push_back(static_cast<std::uint8_t>(p.value.rank()));
    for (int e : p.value.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : p.value.v) put_f32(out, v);
    for (float a : p.acc) put_f32(out, a);
    out.push_back(p.frozen ? 1 : 0);
  }
  return out;
}

ParamStore load_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptCheckpoint("bad magic");
  r.pos = 4;
  if (r.u16() != kVersion) throw CorruptCheckpoint("unsupported version");
  std::uint32_t count = r.u32();

  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = r.u16();
    if (name_len == 0) throw CorruptCheckpoint("empty parameter name");
    r.need(name_len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    std::uint8_t rank = r.u8();
    std::vector<int> shape(rank);
    std::uint64_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      std::uint32_t e = r.u32();
      if (e == 0) throw CorruptCheckpoint("zero extent");
      numel *= e;
      if (numel > kMaxElems) throw CorruptCheckpoint("shape overflow");
      shape[k] = static_cast<int>(e);
    }
    TensorT<float> value(shape);
    for (size_t k = 0; k < value.numel(); ++k) value.v[k] = r.f32();
    std::vector<float> acc(value.numel());
    for (size_t k = 0; k < acc.size(); ++k) acc[k] = r.f32();
    bool frozen = r.u8() != 0;
    int id;
    try {
      id = store.add(name, std::move(value));
    } catch (const InvalidConfig&) {
      throw CorruptCheckpoint("duplicate parameter name '" + name + "'");
    }
    store.param(id).acc = std::move(acc);
    store.param(id).frozen = frozen;
  }
  if (r.pos != bytes.size()) throw CorruptCheckpoint("trailing bytes");
  return store;
}

void save_checkpoint_file(const ParamStore& store, const std::string& path) {
  std::vector<std::uint8_t> bytes = save_checkpoint(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

ParamStore load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError("checkpoint: read failed for '" + path + "'");
  return load_checkpoint(bytes);
}

}  // namespace stereopose
