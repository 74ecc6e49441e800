#pragma once

// Checkpoint layout (all integers little-endian, reals IEEE-754 binary64):
//
//   char[8]  magic "DMFCKPT1"
//   u64      seed
//   u64      param_version
//   u64      data_dim
//   u64      n_hidden, then n_hidden x u64 hidden widths
//   u64      n_freq; f64 scale; f64 freq_min; f64 freq_max
//   u64      n_tensors, then per tensor: u64 rank, rank x u64 dims, numel x f64
//   u8       has_ema; if 1, the EMA shadow follows as n_tensors tensors
//
// A checkpoint is refused on write if any parameter is non-finite.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dmf/network.hpp"

namespace dmf {

inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'F', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  ModelParams params;
  std::optional<std::vector<Tensor>> ema;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw Error("checkpoint: truncated file");
  return v;
}
inline double read_f64(std::istream& is) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw Error("checkpoint: truncated file");
  return v;
}

inline void write_tensors(std::ostream& os, const std::vector<Tensor>& tensors) {
  write_u64(os, tensors.size());
  for (const auto& t : tensors) {
    write_u64(os, t.rank());
    for (std::size_t d : t.shape()) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8));
  }
}

inline std::vector<Tensor> read_tensors(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > 4096) throw Error("checkpoint: implausible tensor count");
  std::vector<Tensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t rank = read_u64(is);
    if (rank > 8) throw Error("checkpoint: implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = read_u64(is);
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8))) {
      throw Error("checkpoint: truncated tensor data");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                            const std::vector<Tensor>* ema = nullptr) {
  if (!params.all_finite()) throw NonFiniteError("checkpoint: refusing to write non-finite parameters");
  if (ema) {
    for (const auto& t : *ema) {
      if (!t.all_finite()) throw NonFiniteError("checkpoint: refusing to write non-finite EMA parameters");
    }
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("checkpoint: cannot open " + tmp.string());
    os.write(kCheckpointMagic, 8);
    detail::write_u64(os, params.seed);
    detail::write_u64(os, params.param_version);
    detail::write_u64(os, params.data_dim);
    detail::write_u64(os, params.hidden_dims.size());
    for (auto h : params.hidden_dims) detail::write_u64(os, h);
    detail::write_u64(os, params.embedding.n_freq);
    detail::write_f64(os, params.embedding.scale);
    detail::write_f64(os, params.embedding.freq_min);
    detail::write_f64(os, params.embedding.freq_max);
    detail::write_tensors(os, params.tensors);
    const char has_ema = ema ? 1 : 0;
    os.write(&has_ema, 1);
    if (ema) detail::write_tensors(os, *ema);
    if (!os) throw Error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error("checkpoint: bad magic in " + path.string());
  }
  Checkpoint ck;
  auto& p = ck.params;
  p.seed = detail::read_u64(is);
  p.param_version = detail::read_u64(is);
  p.data_dim = detail::read_u64(is);
  const auto n_hidden = detail::read_u64(is);
  if (n_hidden > 64) throw Error("checkpoint: implausible layer count");
  p.hidden_dims.resize(n_hidden);
  for (auto& h : p.hidden_dims) h = detail::read_u64(is);
  p.embedding.n_freq = detail::read_u64(is);
  p.embedding.scale = detail::read_f64(is);
  p.embedding.freq_min = detail::read_f64(is);
  p.embedding.freq_max = detail::read_f64(is);
  p.tensors = detail::read_tensors(is);

  const auto widths = p.layer_widths();
  if (p.tensors.size() != 2 * (widths.size() - 1)) throw Error("checkpoint: layer count does not match header");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    if (p.weight(l).shape() != Shape{widths[l], widths[l + 1]} || p.bias(l).shape() != Shape{widths[l + 1]}) {
      throw Error("checkpoint: tensor shapes do not match header at layer " + std::to_string(l));
    }
  }
  char has_ema = 0;
  if (!is.read(&has_ema, 1)) throw Error("checkpoint: truncated file");
  if (has_ema) {
    auto ema = detail::read_tensors(is);
    if (ema.size() != p.tensors.size()) throw Error("checkpoint: EMA tensor count mismatch");
    for (std::size_t i = 0; i < ema.size(); ++i) {
      if (ema[i].shape() != p.tensors[i].shape()) throw Error("checkpoint: EMA tensor shape mismatch");
    }
    ck.ema = std::move(ema);
  }
  return ck;
}

/// Parameters to evaluate with: the EMA shadow when present, else the raw weights.
inline ModelParams evaluation_params(const Checkpoint& ck) {
  ModelParams p = ck.params;
  if (ck.ema) p.tensors = *ck.ema;
  return p;
}

}  // namespace dmf
