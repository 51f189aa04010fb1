#include "cogen/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "cogen/error.hpp"
#include "cogen/io.hpp"

namespace cogen {

namespace {

class Writer {
 public:
  void u8(std::uint8_t x) { out_.push_back(static_cast<char>(x)); }
  void u32(std::uint32_t x) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void f32(float x) { u32(std::bit_cast<std::uint32_t>(x)); }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void floats(const std::vector<float>& v) {
    for (float x : v) f32(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return x;
  }
  std::uint64_t u64() {
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return x;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    if (shape_numel(p.shape) != p.values.size()) throw DimensionError("checkpoint entry " + p.name + " is inconsistent");
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.u64(d);
    w.floats(p.values);
  }
  w.u8(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    if (a.slots.size() != ckpt.params.size()) throw DimensionError("checkpoint optimizer slots do not match parameters");
    w.f64(a.config.lr);
    w.f64(a.config.beta1);
    w.f64(a.config.beta2);
    w.f64(a.config.eps);
    w.u32(static_cast<std::uint32_t>(a.slots.size()));
    for (std::size_t i = 0; i < a.slots.size(); ++i) {
      const auto& s = a.slots[i];
      w.u64(s.t);
      const bool has = !s.m.empty();
      w.u8(has ? 1 : 0);
      if (has) {
        if (s.m.size() != ckpt.params[i].values.size() || s.v.size() != s.m.size()) {
          throw DimensionError("checkpoint optimizer slot for " + ckpt.params[i].name + " has the wrong size");
        }
        w.floats(s.m);
        w.floats(s.v);
      }
    }
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  std::string magic;
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) magic.push_back(static_cast<char>(r.u8()));
  if (magic != kCheckpointMagic) throw DataError("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    NamedArray p;
    p.name = r.str();
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) p.shape.push_back(static_cast<std::size_t>(r.u64()));
    p.values = r.floats(shape_numel(p.shape));
    ckpt.params.push_back(std::move(p));
  }
  if (r.u8()) {
    AdamSnapshot a;
    a.config.lr = r.f64();
    a.config.beta1 = r.f64();
    a.config.beta2 = r.f64();
    a.config.eps = r.f64();
    const std::uint32_t n = r.u32();
    if (n != ckpt.params.size()) throw DataError("checkpoint optimizer slot count mismatch");
    for (std::uint32_t i = 0; i < n; ++i) {
      AdamSnapshot::Slot s;
      s.t = r.u64();
      if (r.u8()) {
        s.m = r.floats(ckpt.params[i].values.size());
        s.v = r.floats(ckpt.params[i].values.size());
      }
      a.slots.push_back(std::move(s));
    }
    ckpt.adam = std::move(a);
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

template <typename Real>
Checkpoint capture_checkpoint(const ParameterSet<Real>& params, const AdamState<Real>* adam) {
  Checkpoint ckpt;
  for (const auto& e : params.entries()) {
    ckpt.params.push_back({e.name, e.tensor.shape(), std::vector<float>(e.tensor.data().begin(), e.tensor.data().end())});
  }
  if (adam) {
    AdamSnapshot snap;
    snap.config = adam->config;
    for (const auto& s : adam->slots) {
      snap.slots.push_back({s.t, std::vector<float>(s.m.begin(), s.m.end()), std::vector<float>(s.v.begin(), s.v.end())});
    }
    ckpt.adam = std::move(snap);
  }
  return ckpt;
}

template <typename Real>
void restore_checkpoint(const Checkpoint& ckpt, const ParameterSet<Real>& params, AdamState<Real>* adam) {
  if (ckpt.params.size() != params.size()) {
    throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ckpt.params[i];
    Tensor<Real> dst = params[i].tensor;
    if (src.name != params[i].name || src.shape != dst.shape()) {
      throw DataError("checkpoint parameter " + src.name + " " + shape_str(src.shape) + " does not match model parameter " +
                      params[i].name + " " + shape_str(dst.shape()));
    }
    std::copy(src.values.begin(), src.values.end(), dst.mutable_data().begin());
  }
  if (adam) {
    if (!ckpt.adam) throw DataError("checkpoint has no optimizer state");
    adam->config = ckpt.adam->config;
    adam->slots.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& s = ckpt.adam->slots[i];
      adam->slots[i].t = s.t;
      adam->slots[i].m.assign(s.m.begin(), s.m.end());
      adam->slots[i].v.assign(s.v.begin(), s.v.end());
    }
  }
}

template Checkpoint capture_checkpoint<float>(const ParameterSet<float>&, const AdamState<float>*);
template Checkpoint capture_checkpoint<double>(const ParameterSet<double>&, const AdamState<double>*);
template void restore_checkpoint<float>(const Checkpoint&, const ParameterSet<float>&, AdamState<float>*);
template void restore_checkpoint<double>(const Checkpoint&, const ParameterSet<double>&, AdamState<double>*);

}  // namespace cogen
