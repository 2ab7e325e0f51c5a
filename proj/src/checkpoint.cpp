// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace duolab {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'O', 'L', 'A', 'B', 'C', 'K'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double d : v) f64(d);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::uint8_t u8() {
    need(1, "byte");
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(std::span<double> v) {
    need(v.size() * 8, "f64 array");
    for (double& d : v) d = f64();
  }
  void expect_magic() {
    need(sizeof kMagic, "magic");
    if (std::memcmp(in_.data(), kMagic, sizeof kMagic) != 0) throw FormatError("checkpoint: bad magic (not a duolab checkpoint)");
    pos_ += sizeof kMagic;
  }
  bool at_end() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint: truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Network& net) {
  net.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  w.u8(static_cast<std::uint8_t>(net.mode));
  for (const Layer& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.fan_in()));
    w.u32(static_cast<std::uint32_t>(l.sums()));
    w.u32(static_cast<std::uint32_t>(l.replicas));
    w.u32(l.act.levels ? static_cast<std::uint32_t>(*l.act.levels) : 0u);
    w.u8(static_cast<std::uint8_t>(l.act.ste.kind));
    w.f64(l.act.ste.param);
    w.u8(static_cast<std::uint8_t>((l.has_bias() ? 1 : 0) | (l.bn ? 2 : 0)));
    w.f64s(l.weights.values());
    if (l.has_bias()) w.f64s(l.bias);
    if (l.bn) {
      w.f64(l.bn->eps);
      w.f64(l.bn->momentum);
      w.f64s(l.bn->gamma);
      w.f64s(l.bn->beta);
      w.f64s(l.bn->running_mean);
      w.f64s(l.bn->running_var);
    }
  }
  return w.take();
}

Network decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version) + " (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError("checkpoint: invalid mode byte");
  Network net;
  net.mode = static_cast<Mode>(mode);
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer l;
    const std::uint32_t fan_in = r.u32(), sums = r.u32(), replicas = r.u32();
    const std::uint32_t levels = r.u32();
    const std::uint8_t kind = r.u8();
    const double param = r.f64();
    const std::uint8_t flags = r.u8();
    if (kind > static_cast<std::uint8_t>(SteKind::Identity) || flags > 3 || levels == 1 || replicas == 0) {
      throw FormatError("checkpoint: corrupt descriptor for layer " + std::to_string(i));
    }
    const std::size_t width = std::size_t{sums} * replicas;
    if (std::size_t{sums} * fan_in > r.remaining() / 8 || width > r.remaining() / 8) {
      throw FormatError("checkpoint: layer " + std::to_string(i) + " dimensions exceed file size");
    }
    l.replicas = replicas;
    l.act.levels = levels ? std::optional<int>(static_cast<int>(levels)) : std::nullopt;
    l.act.ste = Ste{static_cast<SteKind>(kind), param};
    l.weights = Matrix(sums, fan_in);
    r.f64s(l.weights.values());
    if (flags & 1) {
      l.bias.resize(sums);
      r.f64s(l.bias);
    }
    if (flags & 2) {
      BatchNorm bn;
      bn.eps = r.f64();
      bn.momentum = r.f64();
      for (Vector* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
        v->resize(width);
        r.f64s(*v);
      }
      l.bn = std::move(bn);
    }
    net.layers.push_back(std::move(l));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after last layer");
  try {
    net.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: inconsistent network: ") + e.what());
  }
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(net);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace duolab
