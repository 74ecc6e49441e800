#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmf/dual.hpp"
#include "dmf/rng.hpp"
#include "dmf/tensor.hpp"

namespace dmf {

/// Sinusoidal features of a scalar time: [sin(w_k t)..., cos(w_k t)...] with
/// n_freq frequencies spaced geometrically in [freq_min, freq_max], times `scale`.
struct TimeEmbedding {
  std::size_t n_freq = 16;
  double scale = 1.0;
  double freq_min = 1.0;
  double freq_max = 1000.0;

  std::size_t width() const { return 2 * n_freq; }

  double frequency(std::size_t k) const {
    if (n_freq == 1) return scale * freq_min;
    const double a = static_cast<double>(k) / static_cast<double>(n_freq - 1);
    return scale * freq_min * std::pow(freq_max / freq_min, a);
  }

  /// [B] -> B x 2 n_freq.
  Tensor embed(const Tensor& t) const {
    Tensor out({t.size(), width()});
    for (std::size_t b = 0; b < t.size(); ++b) {
      for (std::size_t k = 0; k < n_freq; ++k) {
        const double arg = frequency(k) * t[b];
        out.at(b, k) = std::sin(arg);
        out.at(b, n_freq + k) = std::cos(arg);
      }
    }
    return out;
  }

  /// d embed / dt, same layout as embed.
  Tensor embed_derivative(const Tensor& t) const {
    Tensor out({t.size(), width()});
    for (std::size_t b = 0; b < t.size(); ++b) {
      for (std::size_t k = 0; k < n_freq; ++k) {
        const double w = frequency(k);
        out.at(b, k) = w * std::cos(w * t[b]);
        out.at(b, n_freq + k) = -w * std::sin(w * t[b]);
      }
    }
    return out;
  }
};

/// Weights of the average-velocity MLP u(z, r, t). Parameters are stored as
/// a flat list [W0, b0, W1, b1, ...] with W_l shaped (in x out).
struct ModelParams {
  std::size_t data_dim = 2;
  std::vector<std::size_t> hidden_dims{256, 256, 256};
  TimeEmbedding embedding;
  std::vector<Tensor> tensors;
  std::uint64_t param_version = 0;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return data_dim + 2 * embedding.width(); }
  std::size_t num_layers() const { return tensors.size() / 2; }
  const Tensor& weight(std::size_t l) const { return tensors[2 * l]; }
  const Tensor& bias(std::size_t l) const { return tensors[2 * l + 1]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

  /// Layer widths including input and output.
  std::vector<std::size_t> layer_widths() const {
    std::vector<std::size_t> widths{input_dim()};
    widths.insert(widths.end(), hidden_dims.begin(), hidden_dims.end());
    widths.push_back(data_dim);
    return widths;
  }
};

struct InitOptions {
  bool zero_output_layer = true;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; the output
/// layer starts at zero unless disabled, so u starts at 0.
inline ModelParams init_params(std::size_t data_dim, std::vector<std::size_t> hidden_dims, std::uint64_t seed,
                               InitOptions options = {}, TimeEmbedding embedding = {}) {
  if (data_dim == 0) throw DomainError("init_params: data_dim must be positive");
  ModelParams p;
  p.data_dim = data_dim;
  p.hidden_dims = std::move(hidden_dims);
  p.embedding = embedding;
  p.seed = seed;
  Rng rng(seed);
  const auto widths = p.layer_widths();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const bool last = l + 2 == widths.size();
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    if (last && options.zero_output_layer) {
      p.tensors.emplace_back(Shape{widths[l], widths[l + 1]});
      p.tensors.emplace_back(Shape{widths[l + 1]});
    } else {
      p.tensors.push_back(rng.uniform_tensor({widths[l], widths[l + 1]}, -bound, bound));
      p.tensors.push_back(rng.uniform_tensor({widths[l + 1]}, -bound, bound));
    }
  }
  return p;
}

namespace detail {

inline void check_model_inputs(const ModelParams& params, const Tensor& z, const Tensor& r, const Tensor& t) {
  if (z.rank() != 2 || z.dim(1) != params.data_dim) {
    throw ShapeError("network: expected z of shape [B x " + std::to_string(params.data_dim) + "], got " +
                     shape_str(z.shape()));
  }
  const std::size_t batch = z.dim(0);
  if (r.size() != batch || t.size() != batch) {
    throw ShapeError("network: r/t must have one entry per row of z");
  }
  if (!z.all_finite()) throw NonFiniteError("network: non-finite z");
  for (std::size_t b = 0; b < batch; ++b) {
    if (!std::isfinite(r[b]) || !std::isfinite(t[b])) throw NonFiniteError("network: non-finite time");
    if (r[b] > t[b]) {
      throw DomainError("network: r > t at row " + std::to_string(b) + " (r=" + std::to_string(r[b]) +
                        ", t=" + std::to_string(t[b]) + ")");
    }
    if (r[b] < 0.0 || t[b] > 1.0) throw DomainError("network: times must lie in [0, 1]");
  }
}

inline Tensor model_input(const ModelParams& params, const Tensor& z, const Tensor& r, const Tensor& t) {
  const Tensor er = params.embedding.embed(r);
  const Tensor et = params.embedding.embed(t);
  const Tensor* parts[] = {&z, &er, &et};
  return concat_cols(parts);
}

}  // namespace detail

/// u(z, r, t) for a batch: z (B x d), r and t of length B.
inline Tensor forward(const ModelParams& params, const Tensor& z, const Tensor& r, const Tensor& t) {
  detail::check_model_inputs(params, z, r, t);
  Tensor h = detail::model_input(params, z, r, t);
  const std::size_t layers = params.num_layers();
  for (std::size_t l = 0; l + 1 < layers; ++l) h = silu(affine(h, params.weight(l), params.bias(l)));
  return affine(h, params.weight(layers - 1), params.bias(layers - 1));
}

struct JvpResult {
  Tensor u;
  Tensor dudt;
};

/// u(z, r, t) and its total derivative along the tangent (v, 0, 1).
/// The primal path is the same sequence of ops as forward().
inline JvpResult forward_jvp(const ModelParams& params, const Tensor& z, const Tensor& r, const Tensor& t,
                             const Tensor& v, double t_tangent = 1.0) {
  detail::check_model_inputs(params, z, r, t);
  if (v.shape() != z.shape()) throw ShapeError("forward_jvp: tangent shape differs from z");
  if (!v.all_finite()) throw NonFiniteError("forward_jvp: non-finite tangent");
  const Tensor zero_r({r.size(), params.embedding.width()});
  const Tensor dt = scale(params.embedding.embed_derivative(t), t_tangent);
  const Tensor* tangent_parts[] = {&v, &zero_r, &dt};
  DualTensor h(detail::model_input(params, z, r, t), concat_cols(tangent_parts));
  const std::size_t layers = params.num_layers();
  for (std::size_t l = 0; l + 1 < layers; ++l) h = dual::silu(dual::affine(h, params.weight(l), params.bias(l)));
  DualTensor out = dual::affine(h, params.weight(layers - 1), params.bias(layers - 1));
  return {std::move(out.primal), std::move(out.tangent)};
}

/// Intermediate values kept for backpropagation.
struct ForwardTrace {
  std::vector<Tensor> inputs;  // input to each layer
  std::vector<Tensor> pre;     // pre-activation of each hidden layer
  Tensor output;
};

inline ForwardTrace forward_trace(const ModelParams& params, const Tensor& z, const Tensor& r, const Tensor& t) {
  detail::check_model_inputs(params, z, r, t);
  ForwardTrace trace;
  Tensor h = detail::model_input(params, z, r, t);
  const std::size_t layers = params.num_layers();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Tensor a = affine(h, params.weight(l), params.bias(l));
    trace.inputs.push_back(std::move(h));
    h = silu(a);
    trace.pre.push_back(std::move(a));
  }
  trace.output = affine(h, params.weight(layers - 1), params.bias(layers - 1));
  trace.inputs.push_back(std::move(h));
  return trace;
}

/// Gradients of a scalar loss w.r.t. every parameter tensor, given
/// d loss / d output. Same layout as ModelParams::tensors.
inline std::vector<Tensor> backward(const ModelParams& params, const ForwardTrace& trace, const Tensor& grad_out) {
  const std::size_t layers = params.num_layers();
  std::vector<Tensor> grads(params.tensors.size());
  Tensor g = grad_out;
  for (std::size_t l = layers; l-- > 0;) {
    grads[2 * l] = matmul_tn(trace.inputs[l], g);
    grads[2 * l + 1] = sum_rows(g);
    if (l == 0) break;
    Tensor gh = matmul_nt(g, params.weight(l));
    const Tensor& pre = trace.pre[l - 1];
    for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= silu_grad(pre[i]);
    g = std::move(gh);
  }
  return grads;
}

inline double global_norm(const std::vector<Tensor>& tensors) {
  double acc = 0.0;
  for (const auto& t : tensors) {
    for (double x : t.data()) acc += x * x;
  }
  return std::sqrt(acc);
}

}  // namespace dmf
