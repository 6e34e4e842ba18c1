#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mscn/models/network.hpp"
#include "mscn/train/config.hpp"

namespace mscn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[5] = {'M', 'S', 'C', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a run bit-exactly.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::string config_json;  // canonical_config() of the producing run
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::vector<std::pair<std::string, Rng::State>> rng_states;
  Network<float> online;
  std::string optimizer_kind;
  std::map<std::string, Tensor<float>> optimizer_buffers;
  std::optional<Network<float>> target;
  double ema_tau = 0.0;
  std::uint64_t ema_step = 0;

  RunConfig config() const { return parse_config(config_json, "checkpoint snapshot"); }
};

namespace detail {

class ByteWriter {
 public:
  template <typename V>
  void pod(const V& v) {
    static_assert(std::is_trivially_copyable_v<V>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(V));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void tensor(const Tensor<float>& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    raw(reinterpret_cast<const char*>(t.ptr()), t.numel() * sizeof(float));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& b, std::string source) : b_(b), src_(std::move(source)) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size())
      throw CorruptionError(detail::concat("checkpoint ", src_, " is truncated at byte ", pos_));
  }
  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, b_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor<float> tensor() {
    const auto rank = u32();
    if (rank > 8) throw CorruptionError("checkpoint " + src_ + ": implausible tensor rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u64();
      if (d > (std::size_t{1} << 32)) throw CorruptionError("checkpoint " + src_ + ": bad dim");
      n *= d;
    }
    need(n * sizeof(float));
    std::vector<float> data(n);
    std::memcpy(data.data(), b_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return Tensor<float>(std::move(shape), std::move(data));
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::string src_;
  std::size_t pos_ = 0;
};

inline void write_network(ByteWriter& w, const Network<float>& net) {
  w.u32(static_cast<std::uint32_t>(net.params.size()));
  for (const auto& p : net.params) {
    w.str(p.name);
    w.u8(p.decay_exempt ? 1 : 0);
    w.tensor(p.value);
  }
  w.u32(static_cast<std::uint32_t>(net.bn.size()));
  for (const auto& [name, s] : net.bn) {
    w.str(name);
    w.tensor(s.running_mean);
    w.tensor(s.running_var);
  }
}

inline Network<float> read_network(ByteReader& r, const ModelConfig& cfg) {
  Network<float> net;
  net.config = cfg;
  const auto np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    std::string name = r.str();
    const bool exempt = r.u8() != 0;
    net.params.add(std::move(name), r.tensor(), exempt);
  }
  const auto nb = r.u32();
  for (std::uint32_t i = 0; i < nb; ++i) {
    std::string name = r.str();
    BatchNormState<float> s;
    s.running_mean = r.tensor();
    s.running_var = r.tensor();
    net.bn.emplace(std::move(name), std::move(s));
  }
  return net;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(c.config_hash);
  w.str(c.config_json);
  w.u64(c.epoch);
  w.u64(c.step);
  w.u32(static_cast<std::uint32_t>(c.rng_states.size()));
  for (const auto& [name, st] : c.rng_states) {
    w.str(name);
    for (auto v : st) w.u64(v);
  }
  detail::write_network(w, c.online);
  w.str(c.optimizer_kind);
  w.u32(static_cast<std::uint32_t>(c.optimizer_buffers.size()));
  for (const auto& [name, t] : c.optimizer_buffers) {
    w.str(name);
    w.tensor(t);
  }
  w.u8(c.target ? 1 : 0);
  if (c.target) {
    detail::write_network(w, *c.target);
    w.f64(c.ema_tau);
    w.u64(c.ema_step);
  }
  w.u64(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes,
                                         const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  r.need(sizeof kCheckpointMagic);
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CorruptionError("checkpoint " + source + ": bad magic (not an MSCN1 file)");
  for (std::size_t i = 0; i < sizeof kCheckpointMagic; ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CorruptionError(detail::concat("checkpoint ", source, ": unsupported format version ",
                                         version, " (expected ", kCheckpointVersion, ")"));
  if (bytes.size() < sizeof kCheckpointMagic + 4 + 8)
    throw CorruptionError("checkpoint " + source + " is truncated");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(std::string_view(bytes.data(), body)))
    throw CorruptionError("checkpoint " + source + ": checksum mismatch (truncated or corrupted)");

  Checkpoint c;
  c.config_hash = r.u64();
  c.config_json = r.str();
  RunConfig cfg;
  try {
    cfg = c.config();
  } catch (const ConfigError& e) {
    throw CorruptionError("checkpoint " + source + ": unreadable config snapshot: " + e.what());
  }
  c.epoch = r.u64();
  c.step = r.u64();
  const auto nrng = r.u32();
  for (std::uint32_t i = 0; i < nrng; ++i) {
    std::string name = r.str();
    Rng::State st;
    for (auto& v : st) v = r.u64();
    c.rng_states.emplace_back(std::move(name), st);
  }
  c.online = detail::read_network(r, cfg.model);
  c.optimizer_kind = r.str();
  const auto nbuf = r.u32();
  for (std::uint32_t i = 0; i < nbuf; ++i) {
    std::string name = r.str();
    c.optimizer_buffers.emplace(std::move(name), r.tensor());
  }
  if (r.u8() != 0) {
    ModelConfig tcfg = cfg.model;
    tcfg.with_predictor = false;
    c.target = detail::read_network(r, tcfg);
    c.ema_tau = r.f64();
    c.ema_step = r.u64();
  }
  if (r.pos() != body)
    throw CorruptionError(detail::concat("checkpoint ", source, ": ", body - r.pos(),
                                         " unexpected trailing bytes"));
  return c;
}

/// Writes to `path.incomplete` then renames, so a crash never leaves a
/// half-written file under the final name.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  auto tmp = path;
  tmp += ".incomplete";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

/// Refuses a checkpoint produced under a different config, listing every
/// differing key.
inline void require_matching_config(const Checkpoint& c, const RunConfig& expected) {
  if (c.config_hash == config_hash(expected)) return;
  Json a = Json::parse(c.config_json), b = to_json(expected);
  a.erase("run");
  b.erase("run");
  std::ostringstream os;
  os << "checkpoint config hash " << hash_hex(c.config_hash) << " does not match run config "
     << hash_hex(config_hash(expected)) << "; differing keys:";
  for (const auto& line : config_diff(a, b)) os << "\n  " << line;
  throw ConfigError(os.str());
}

}  // namespace mscn
