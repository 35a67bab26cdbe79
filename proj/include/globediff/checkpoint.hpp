#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "netcore.hpp"
#include "rng.hpp"

namespace globediff {

// Checkpoint layout, version 1. All integers and floats little-endian.
//
//   offset  type        field
//   0       char[8]     magic "GLBDIFF1"
//   8       u32         format version (1)
//   12      u32         schedule kind (0 linear, 1 cosine)
//   16      u32         K
//   20      f64         beta_lo
//   28      f64         beta_hi
//   36      u32         d (state)
//   40      u32         d_x (condition)
//   44      u32         d_z (latent)
//   48      u32         timestep embedding width (8)
//   52      u32         final-step noise flag (0: no noise injected at k = 1)
//   56      f64         beta_kl
//   64      f64         delta_sq_hat
//   72      f64         eps_kl_hat
//   80      network block x 3, roles in order denoiser, prior, posterior
//   ...     u64         FNV-1a 64 of every preceding byte
//
// Network block:
//   u32 role (0 denoiser, 1 prior, 2 posterior, 3 regressor)
//   u32 activation (0 relu, 1 mish)
//   u32 residual flag
//   u32 L = number of layer dims, then u32 dims[L]
//   u64 P = parameter count, then f64 params[P] (layout of Network::params)

inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'L', 'B', 'D', 'I', 'F', 'F', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class NetworkRole : std::uint32_t { denoiser = 0, prior = 1, posterior = 2, regressor = 3 };

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
  const std::string& bytes() const { return bytes_; }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void write_network(ByteWriter& w, const Network& net, NetworkRole role) {
  w.u32(static_cast<std::uint32_t>(role));
  w.u32(net.activation == Activation::relu ? 0 : 1);
  w.u32(net.residual ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(net.layer_dims.size()));
  for (auto d : net.layer_dims) w.u32(static_cast<std::uint32_t>(d));
  w.u64(net.params.size());
  for (double p : net.params) w.f64(p);
}

inline Network read_network(ByteReader& r, NetworkRole expected_role) {
  const auto role = r.u32();
  if (role != static_cast<std::uint32_t>(expected_role)) {
    throw FormatError("checkpoint: expected network role " + std::to_string(static_cast<std::uint32_t>(expected_role)) +
                      ", found " + std::to_string(role));
  }
  Network net;
  const auto act = r.u32();
  if (act > 1) throw FormatError("checkpoint: unknown activation tag " + std::to_string(act));
  net.activation = act == 0 ? Activation::relu : Activation::mish;
  const auto residual = r.u32();
  if (residual > 1) throw FormatError("checkpoint: bad residual flag");
  net.residual = residual == 1;
  const auto L = r.u32();
  if (L < 2 || L > 64) throw FormatError("checkpoint: implausible layer count " + std::to_string(L));
  for (std::uint32_t i = 0; i < L; ++i) {
    const auto d = r.u32();
    if (d == 0) throw FormatError("checkpoint: zero layer width");
    net.layer_dims.push_back(d);
  }
  const auto P = r.u64();
  if (P != parameter_count(net.layer_dims)) throw FormatError("checkpoint: parameter count disagrees with layer dims");
  if (r.remaining() < P * 8) throw FormatError("checkpoint: truncated parameter block");
  net.params.resize(P);
  for (auto& p : net.params) p = r.f64();
  return net;
}

inline std::string serialize_model(const GlobeDiffModel& m) {
  ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  const auto& spec = m.sched.spec();
  w.u32(spec.kind == ScheduleKind::linear ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(spec.num_steps));
  w.f64(spec.beta_lo);
  w.f64(spec.beta_hi);
  w.u32(static_cast<std::uint32_t>(m.dims.state));
  w.u32(static_cast<std::uint32_t>(m.dims.cond));
  w.u32(static_cast<std::uint32_t>(m.dims.latent));
  w.u32(static_cast<std::uint32_t>(kTimeEmbedDim));
  w.u32(0);
  w.f64(m.beta_kl);
  w.f64(m.delta_sq_hat);
  w.f64(m.eps_kl_hat);
  write_network(w, m.denoiser, NetworkRole::denoiser);
  write_network(w, m.prior.net, NetworkRole::prior);
  write_network(w, m.posterior.net, NetworkRole::posterior);
  std::string out = w.bytes();
  ByteWriter tail;
  tail.u64(fnv1a64(out));
  out += tail.bytes();
  return out;
}

inline GlobeDiffModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8) throw FormatError("checkpoint: file too short");
  {
    ByteReader tail(bytes.substr(bytes.size() - 8));
    if (tail.u64() != fnv1a64(bytes.substr(0, bytes.size() - 8))) throw FormatError("checkpoint: checksum mismatch");
  }
  ByteReader r(bytes.substr(0, bytes.size() - 8));
  if (r.raw(8) != std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size())) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ScheduleSpec spec;
  const auto kind = r.u32();
  if (kind > 1) throw FormatError("checkpoint: unknown schedule kind " + std::to_string(kind));
  spec.kind = kind == 0 ? ScheduleKind::linear : ScheduleKind::cosine;
  spec.num_steps = static_cast<int>(r.u32());
  spec.beta_lo = r.f64();
  spec.beta_hi = r.f64();
  GlobeDiffModel m;
  try {
    m.sched = DiffusionSchedule(spec);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  m.dims.state = r.u32();
  m.dims.cond = r.u32();
  m.dims.latent = r.u32();
  if (r.u32() != kTimeEmbedDim) throw FormatError("checkpoint: unsupported timestep embedding width");
  if (r.u32() != 0) throw FormatError("checkpoint: unsupported final-step noise convention");
  m.beta_kl = r.f64();
  m.delta_sq_hat = r.f64();
  m.eps_kl_hat = r.f64();
  m.denoiser = read_network(r, NetworkRole::denoiser);
  m.prior = GaussianHead{read_network(r, NetworkRole::prior), m.dims.latent};
  m.posterior = GaussianHead{read_network(r, NetworkRole::posterior), m.dims.latent};
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file and renames, so a reader never sees a
// half-written file.
inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("error while writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const GlobeDiffModel& m, const std::string& path) { write_file_bytes(path, serialize_model(m)); }

inline GlobeDiffModel load_checkpoint(const std::string& path) { return deserialize_model(read_file_bytes(path)); }

}  // namespace globediff
