#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "racs/errors.hpp"
#include "racs/training.hpp"

namespace racs::training {

uint32_t crc32(const void* data, std::size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [key, tensor] : tensors)
    if (key == name) return &tensor;
  return nullptr;
}

namespace {

constexpr char kMagic[4] = {'R', 'A', 'C', 'S'};
constexpr std::size_t kMaxStringBytes = std::size_t(1) << 20;
constexpr std::size_t kMaxTensors = 4096;
constexpr std::size_t kMaxFloats = std::size_t(1) << 28;

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_i64(std::string& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const unsigned char* p = nullptr;
  std::size_t len = 0;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (len - pos < k) throw DataError("truncated checkpoint");
  }
  uint8_t u8() {
    need(1);
    return p[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos++]) << (8 * i);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t cap) {
    const uint32_t count = u32();
    if (count > cap) throw DataError("oversized string in checkpoint");
    need(count);
    std::string s(reinterpret_cast<const char*>(p + pos), count);
    pos += count;
    return s;
  }
};

int checked_dim(uint32_t v, const char* what) {
  if (v < 1 || v > (1u << 24))
    throw DataError(std::string("implausible ") + what + " in checkpoint");
  return static_cast<int>(v);
}

std::string encode(const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 4);
  put_u8(out, ckpt.version);
  put_u8(out, ckpt.stage);
  put_u8(out, static_cast<uint8_t>(ckpt.spec.head));
  put_u8(out, ckpt.phi_frozen);
  put_u32(out, static_cast<uint32_t>(ckpt.n));
  put_u32(out, static_cast<uint32_t>(ckpt.m_max));
  put_u32(out, static_cast<uint32_t>(ckpt.k_min));
  put_u32(out, static_cast<uint32_t>(ckpt.spec.b));
  put_u32(out, static_cast<uint32_t>(ckpt.spec.num_classes));
  put_i64(out, ckpt.cfg.max_iters_1);
  put_i64(out, ckpt.cfg.max_iters_2);
  put_i64(out, ckpt.cfg.iters_per_row);
  put_f64(out, ckpt.cfg.lr);
  put_u32(out, static_cast<uint32_t>(ckpt.cfg.batch_size));
  put_u64(out, ckpt.cfg.seed);
  put_u32(out, static_cast<uint32_t>(ckpt.cfg.k_min));
  put_u32(out, static_cast<uint32_t>(ckpt.cfg.m_max));
  put_str(out, ckpt.rng_state);
  put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_str(out, name);
    put_u32(out, static_cast<uint32_t>(tensor.ndim()));
    for (int d = 0; d < tensor.ndim(); ++d) put_u32(out, static_cast<uint32_t>(tensor.dim(d)));
  }
  for (const auto& [name, tensor] : ckpt.tensors)
    for (float v : tensor.data) put_f32(out, v);
  return out;
}

Checkpoint decode(const std::string& buf) {
  Reader rd{reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4, 4};
  Checkpoint ckpt;
  ckpt.version = rd.u8();
  if (ckpt.version != 1)
    throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.stage = rd.u8();
  if (ckpt.stage > 3) throw DataError("implausible stage in checkpoint");
  const uint8_t head = rd.u8();
  if (head > 2) throw DataError("unknown model head in checkpoint");
  ckpt.spec.head = static_cast<HeadKind>(head);
  ckpt.phi_frozen = rd.u8();
  if (ckpt.phi_frozen > 1) throw DataError("implausible freeze flag in checkpoint");
  ckpt.n = checked_dim(rd.u32(), "signal size");
  ckpt.m_max = checked_dim(rd.u32(), "row count");
  ckpt.k_min = checked_dim(rd.u32(), "minimum rate");
  ckpt.spec.b = checked_dim(rd.u32(), "block side");
  const uint32_t num_classes = rd.u32();
  if (num_classes > (1u << 20)) throw DataError("implausible class count in checkpoint");
  ckpt.spec.num_classes = static_cast<int>(num_classes);
  ckpt.cfg.max_iters_1 = rd.i64();
  ckpt.cfg.max_iters_2 = rd.i64();
  ckpt.cfg.iters_per_row = rd.i64();
  ckpt.cfg.lr = rd.f64();
  ckpt.cfg.batch_size = static_cast<int>(rd.u32());
  ckpt.cfg.seed = rd.u64();
  ckpt.cfg.k_min = static_cast<int>(rd.u32());
  ckpt.cfg.m_max = static_cast<int>(rd.u32());
  ckpt.rng_state = rd.str(kMaxStringBytes);

  const uint32_t count = rd.u32();
  if (count > kMaxTensors) throw DataError("implausible tensor count in checkpoint");
  std::size_t total = 0;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = rd.str(4096);
    for (const auto& [prior, tensor] : ckpt.tensors)
      if (prior == name) throw DataError("duplicate tensor name in checkpoint");
    const uint32_t nd = rd.u32();
    if (nd < 1 || nd > 8) throw DataError("implausible tensor rank in checkpoint");
    std::vector<int> dims(nd);
    std::size_t numel = 1;
    for (auto& d : dims) {
      d = checked_dim(rd.u32(), "tensor dimension");
      if (numel > kMaxFloats / static_cast<std::size_t>(d))
        throw DataError("implausible tensor payload in checkpoint");
      numel *= static_cast<std::size_t>(d);
    }
    total += numel;
    if (total > kMaxFloats) throw DataError("implausible tensor payload in checkpoint");
    ckpt.tensors.emplace_back(std::move(name), Tensor<float>::zeros(dims));
  }
  for (auto& [name, tensor] : ckpt.tensors)
    for (auto& v : tensor.data) v = rd.f32();
  if (rd.pos != rd.len) throw DataError("checkpoint has trailing bytes");
  return ckpt;
}

}  // namespace

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  std::string buf = encode(ckpt);
  put_u32(buf, crc32(buf.data(), buf.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out.good()) throw DataError("cannot write checkpoint '" + path + "'");
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw DataError("truncated checkpoint");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw DataError("not a checkpoint file");
  Reader tail{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(), buf.size() - 4};
  if (tail.u32() != crc32(buf.data(), buf.size() - 4))
    throw DataError("checkpoint checksum mismatch");
  return decode(buf);
}

Checkpoint make_checkpoint(const StagedState& state, const TrainConfig& cfg) {
  Checkpoint ckpt;
  ckpt.version = 1;
  ckpt.stage = static_cast<uint8_t>(state.stage);
  const auto& mask = state.mm.trainable_rows;
  ckpt.phi_frozen = !mask.empty() && std::all_of(mask.begin(), mask.end(),
                                                 [](uint8_t v) { return v == 0; });
  ckpt.spec = state.spec;
  ckpt.n = state.mm.n;
  ckpt.m_max = state.mm.m_max;
  ckpt.k_min = state.mm.k_min;
  ckpt.cfg = cfg;
  ckpt.rng_state = state.rng_state;
  ckpt.tensors.emplace_back("phi", state.mm.rows);
  if (state.stage == 2) ckpt.tensors.emplace_back("phi_full", state.phi_full);
  for (std::size_t i = 0; i < state.model.layers.size(); ++i) {
    const std::string& name = state.model.layers[i].name;
    if (!state.model.params.weights[i].data.empty())
      ckpt.tensors.emplace_back(name + "/weight", state.model.params.weights[i]);
    if (!state.model.params.biases[i].data.empty())
      ckpt.tensors.emplace_back(name + "/bias", state.model.params.biases[i]);
  }
  return ckpt;
}

StagedState restore_state(const Checkpoint& ckpt) {
  validate_config(ckpt.cfg);
  StagedState state;
  state.stage = ckpt.stage;
  state.spec = ckpt.spec;

  // The head's shapes depend on the build-time row budget, which for staged
  // states is cfg.m_max even while the stored operator is shorter.
  const int build_m = ckpt.stage >= 1 ? ckpt.cfg.m_max : ckpt.m_max;
  sensing::MeasurementMatrix<float> skeleton;
  skeleton.n = ckpt.n;
  skeleton.m_max = build_m;
  skeleton.k_min = 1;
  skeleton.rows = Tensor<float>::zeros({build_m, ckpt.n});
  skeleton.trainable_rows.assign(static_cast<std::size_t>(build_m), 1);
  Rng scratch(0);
  state.model = build_head(ckpt.spec, skeleton, scratch);

  std::size_t used = 0;
  const Tensor<float>* phi = ckpt.find("phi");
  if (!phi) throw DataError("checkpoint missing tensor 'phi'");
  if (phi->ndim() != 2 || phi->dim(0) != ckpt.m_max || phi->dim(1) != ckpt.n)
    throw DataError("checkpoint operator has wrong shape");
  ++used;
  state.mm.n = ckpt.n;
  state.mm.m_max = ckpt.m_max;
  state.mm.k_min = ckpt.k_min;
  state.mm.rows = *phi;
  state.mm.trainable_rows.assign(static_cast<std::size_t>(ckpt.m_max),
                                 ckpt.stage >= 1 ? 1 : (ckpt.phi_frozen ? 0 : 1));
  state.mm.bump();

  if (ckpt.stage == 1) {
    state.phi_full = state.mm.rows;
  } else if (ckpt.stage == 2) {
    const Tensor<float>* full = ckpt.find("phi_full");
    if (!full) throw DataError("checkpoint missing tensor 'phi_full'");
    if (full->ndim() != 2 || full->dim(0) != ckpt.cfg.m_max || full->dim(1) != ckpt.n)
      throw DataError("checkpoint full operator has wrong shape");
    state.phi_full = *full;
    ++used;
  }

  for (std::size_t i = 0; i < state.model.layers.size(); ++i) {
    auto fill = [&](Tensor<float>& dst, const char* kind) {
      if (dst.data.empty()) return;
      const std::string name = state.model.layers[i].name + kind;
      const Tensor<float>* src = ckpt.find(name);
      if (!src) throw DataError("checkpoint missing tensor '" + name + "'");
      if (src->shape != dst.shape)
        throw DataError("checkpoint tensor '" + name + "' has wrong shape");
      dst = *src;
      ++used;
    };
    fill(state.model.params.weights[i], "/weight");
    fill(state.model.params.biases[i], "/bias");
  }
  if (used != ckpt.tensors.size()) throw DataError("checkpoint holds unexpected tensors");

  if (ckpt.stage >= 2) {
    for (std::size_t i = 0; i < state.model.layers.size(); ++i) {
      if (!state.model.params.weights[i].data.empty()) state.model.params.weight_frozen[i] = 1;
      if (!state.model.params.biases[i].data.empty()) state.model.params.bias_frozen[i] = 1;
    }
  }
  state.model.params.bump();
  state.rng_state = ckpt.rng_state;
  return state;
}

}  // namespace racs::training
