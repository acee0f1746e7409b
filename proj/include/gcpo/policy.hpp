#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gcpo/error.hpp"
#include "gcpo/grid.hpp"
#include "gcpo/rng.hpp"

namespace gcpo::policy {

// Desk-scale autoregressive grid policy. The next-token context is the sum of
// a position embedding, a prompt embedding, and the mean embedding of all
// previously generated tokens, pushed through a linear head. Small enough for
// closed-form gradients, causal enough for early tokens to shape everything
// downstream.

struct Dims {
  int vocab = 8;        // V
  int seq_len = 36;     // N
  int num_prompts = 2;  // P
  int embed_dim = 16;   // d

  bool operator==(const Dims&) const = default;
};

/// All learnable parameters, stored as one flat vector in block order:
/// token_embed (V×d), pos_embed (N×d), prompt_embed (P×d), out_proj (d×V),
/// out_bias (V). Rows are contiguous.
class Params {
 public:
  Params() = default;

  explicit Params(const Dims& dims) : dims_(dims), data_(flat_size(dims), 0.0) {
    if (dims.vocab < 2 || dims.embed_dim < 2 || dims.seq_len < 1 ||
        dims.num_prompts < 1) {
      throw ValidationError("Params: need vocab >= 2, embed_dim >= 2, "
                            "seq_len >= 1, num_prompts >= 1");
    }
  }

  /// Uniform starting policy: zero output head, embeddings 0.1 * N(0, 1).
  static Params init(const Dims& dims, std::uint64_t seed) {
    Params p(dims);
    const std::uint64_t s = rng::derive(seed, rng::kParamInit);
    const std::size_t embed_count =
        static_cast<std::size_t>(dims.vocab + dims.seq_len + dims.num_prompts) *
        dims.embed_dim;
    for (std::size_t i = 0; i < embed_count; ++i) {
      p.data_[i] = 0.1 * rng::normal(s, i);
    }
    return p;
  }

  static std::size_t flat_size(const Dims& d) {
    return static_cast<std::size_t>(d.vocab) * d.embed_dim +
           static_cast<std::size_t>(d.seq_len) * d.embed_dim +
           static_cast<std::size_t>(d.num_prompts) * d.embed_dim +
           static_cast<std::size_t>(d.embed_dim) * d.vocab +
           static_cast<std::size_t>(d.vocab);
  }

  const Dims& dims() const { return dims_; }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  // Block offsets into the flat vector; shared with gradient vectors.
  std::size_t token_embed_off() const { return 0; }
  std::size_t pos_embed_off() const {
    return static_cast<std::size_t>(dims_.vocab) * dims_.embed_dim;
  }
  std::size_t prompt_embed_off() const {
    return pos_embed_off() + static_cast<std::size_t>(dims_.seq_len) * dims_.embed_dim;
  }
  std::size_t out_proj_off() const {
    return prompt_embed_off() +
           static_cast<std::size_t>(dims_.num_prompts) * dims_.embed_dim;
  }
  std::size_t out_bias_off() const {
    return out_proj_off() + static_cast<std::size_t>(dims_.embed_dim) * dims_.vocab;
  }

  std::span<const double> token_embed(int id) const {
    return {data_.data() + token_embed_off() +
                static_cast<std::size_t>(id) * dims_.embed_dim,
            static_cast<std::size_t>(dims_.embed_dim)};
  }
  std::span<const double> pos_embed(int t) const {
    return {data_.data() + pos_embed_off() +
                static_cast<std::size_t>(t) * dims_.embed_dim,
            static_cast<std::size_t>(dims_.embed_dim)};
  }
  std::span<const double> prompt_embed(int q) const {
    return {data_.data() + prompt_embed_off() +
                static_cast<std::size_t>(q) * dims_.embed_dim,
            static_cast<std::size_t>(dims_.embed_dim)};
  }
  // out_proj is d×V row-major: weight(k, v) = out_proj[k*V + v].
  std::span<const double> out_proj() const {
    return {data_.data() + out_proj_off(),
            static_cast<std::size_t>(dims_.embed_dim) * dims_.vocab};
  }
  std::span<const double> out_bias() const {
    return {data_.data() + out_bias_off(), static_cast<std::size_t>(dims_.vocab)};
  }

  bool operator==(const Params& other) const {
    return dims_ == other.dims_ && data_ == other.data_;
  }

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// One sampled grid plus everything the optimizer needs about how it was
/// sampled: per-position distributions, log-probs of the realized tokens, and
/// the codebook embeddings of the sampled ids.
struct RolloutRecord {
  TokenGrid grid;
  std::vector<double> probs;        // N×V sampling distributions
  std::vector<double> logprob_old;  // N
  std::vector<double> embeddings;   // N×d
  int prompt_id = 0;
};

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

inline void check_position(const Dims& d, int t, int prompt_id,
                           std::span<const int> prefix) {
  if (t < 0 || t >= d.seq_len) {
    throw ValidationError("position " + std::to_string(t) +
                          " outside sequence of length " +
                          std::to_string(d.seq_len));
  }
  if (prompt_id < 0 || prompt_id >= d.num_prompts) {
    throw ValidationError("prompt id " + std::to_string(prompt_id) +
                          " outside [0, " + std::to_string(d.num_prompts) + ")");
  }
  if (static_cast<int>(prefix.size()) != t) {
    throw ValidationError("prefix length " + std::to_string(prefix.size()) +
                          " does not match position " + std::to_string(t));
  }
  for (int id : prefix) {
    if (id < 0 || id >= d.vocab) {
      throw ValidationError("prefix token id " + std::to_string(id) +
                            " outside vocab of size " + std::to_string(d.vocab));
    }
  }
}

}  // namespace detail

/// Context vector at position t: pos_embed[t] + prompt_embed[q] + mean of the
/// prefix token embeddings (omitted at t = 0).
inline std::vector<double> forward_context(const Params& params,
                                           std::span<const int> prefix, int t,
                                           int prompt_id) {
  const Dims& dm = params.dims();
  detail::check_position(dm, t, prompt_id, prefix);
  std::vector<double> c(dm.embed_dim, 0.0);
  const auto pos = params.pos_embed(t);
  const auto prm = params.prompt_embed(prompt_id);
  for (int k = 0; k < dm.embed_dim; ++k) c[k] = pos[k] + prm[k];
  if (t > 0) {
    std::vector<double> mean(dm.embed_dim, 0.0);
    for (int j = 0; j < t; ++j) {
      const auto e = params.token_embed(prefix[j]);
      for (int k = 0; k < dm.embed_dim; ++k) mean[k] += e[k];
    }
    for (int k = 0; k < dm.embed_dim; ++k) c[k] += mean[k] / t;
  }
  return c;
}

/// Raw (untempered) logits at position t.
inline std::vector<double> forward_logits(const Params& params,
                                          std::span<const int> prefix, int t,
                                          int prompt_id) {
  const Dims& dm = params.dims();
  const std::vector<double> c = forward_context(params, prefix, t, prompt_id);
  std::vector<double> z(dm.vocab);
  const auto w = params.out_proj();
  const auto b = params.out_bias();
  for (int v = 0; v < dm.vocab; ++v) z[v] = b[v];
  for (int k = 0; k < dm.embed_dim; ++k) {
    const double ck = c[k];
    const double* wrow = w.data() + static_cast<std::size_t>(k) * dm.vocab;
    for (int v = 0; v < dm.vocab; ++v) z[v] += ck * wrow[v];
  }
  return z;
}

/// Tempered softmax with enough retained state to read off exact log-probs.
struct Distribution {
  std::vector<double> tempered_logits;  // z / temperature
  std::vector<double> probs;
  double log_z = 0.0;  // logsumexp of the tempered logits

  double logprob(int token) const { return tempered_logits[token] - log_z; }
};

inline Distribution make_distribution(std::vector<double> logits,
                                      double temperature) {
  if (!(temperature > 0.0)) {
    throw ValidationError("temperature must be positive, got " +
                          std::to_string(temperature));
  }
  Distribution d;
  d.tempered_logits = std::move(logits);
  for (double& z : d.tempered_logits) z /= temperature;
  const double m =
      *std::max_element(d.tempered_logits.begin(), d.tempered_logits.end());
  double sum = 0.0;
  d.probs.resize(d.tempered_logits.size());
  for (std::size_t v = 0; v < d.probs.size(); ++v) {
    d.probs[v] = std::exp(d.tempered_logits[v] - m);
    sum += d.probs[v];
  }
  for (double& p : d.probs) p /= sum;
  d.log_z = m + std::log(sum);
  return d;
}

/// Next-token distribution P(z_t | prefix, prompt) at the given temperature.
inline std::vector<double> forward_distribution(const Params& params,
                                                std::span<const int> prefix,
                                                int t, int prompt_id,
                                                double temperature) {
  return make_distribution(forward_logits(params, prefix, t, prompt_id),
                           temperature)
      .probs;
}

namespace detail {

inline int pick_token(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    acc += probs[v];
    if (u < acc) return static_cast<int>(v);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Autoregressively sample a full grid. The draw at position t is keyed by
/// (seed, t), so regenerating any suffix under the same seed and prefix
/// reproduces it exactly.
inline RolloutRecord sample_rollout(const Params& params, int h, int w,
                                    int prompt_id, std::uint64_t seed,
                                    double temperature = 1.0) {
  const Dims& dm = params.dims();
  if (h * w != dm.seq_len) {
    throw ValidationError("sample_rollout: grid " + std::to_string(h) + "x" +
                          std::to_string(w) + " does not match seq_len " +
                          std::to_string(dm.seq_len));
  }
  RolloutRecord rec;
  rec.prompt_id = prompt_id;
  rec.grid.h = h;
  rec.grid.w = w;
  rec.grid.tokens.reserve(dm.seq_len);
  rec.probs.resize(static_cast<std::size_t>(dm.seq_len) * dm.vocab);
  rec.logprob_old.resize(dm.seq_len);
  rec.embeddings.resize(static_cast<std::size_t>(dm.seq_len) * dm.embed_dim);

  for (int t = 0; t < dm.seq_len; ++t) {
    const Distribution dist = make_distribution(
        forward_logits(params, rec.grid.tokens, t, prompt_id), temperature);
    const int token = detail::pick_token(dist.probs, rng::uniform01(seed, t, 0));
    rec.grid.tokens.push_back(token);
    std::copy(dist.probs.begin(), dist.probs.end(),
              rec.probs.begin() + static_cast<std::size_t>(t) * dm.vocab);
    rec.logprob_old[t] = dist.logprob(token);
    const auto e = params.token_embed(token);
    std::copy(e.begin(), e.end(),
              rec.embeddings.begin() + static_cast<std::size_t>(t) * dm.embed_dim);
  }
  return rec;
}

/// Teacher-forced pass over a fixed grid: log-probs of its tokens plus the
/// full tempered distributions (needed to chain gradients through softmax).
struct TeacherForward {
  std::vector<double> logprobs;  // N
  std::vector<double> probs;     // N×V
};

inline TeacherForward teacher_forward(const Params& params, const TokenGrid& grid,
                                      int prompt_id, double temperature = 1.0) {
  const Dims& dm = params.dims();
  validate_token_grid(grid, dm.vocab);
  if (grid.size() != dm.seq_len) {
    throw ValidationError("teacher_forward: grid size " +
                          std::to_string(grid.size()) +
                          " does not match seq_len " + std::to_string(dm.seq_len));
  }
  TeacherForward out;
  out.logprobs.resize(dm.seq_len);
  out.probs.resize(static_cast<std::size_t>(dm.seq_len) * dm.vocab);
  for (int t = 0; t < dm.seq_len; ++t) {
    const std::span<const int> prefix(grid.tokens.data(), t);
    const Distribution dist = make_distribution(
        forward_logits(params, prefix, t, prompt_id), temperature);
    out.logprobs[t] = dist.logprob(grid.tokens[t]);
    std::copy(dist.probs.begin(), dist.probs.end(),
              out.probs.begin() + static_cast<std::size_t>(t) * dm.vocab);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Chain per-position gradients w.r.t. the *tempered* logits into every
/// parameter block, accumulating into `grad` (same flat layout as Params).
/// grad_logits is N×V row-major.
inline void accumulate_param_grad(const Params& params, const TokenGrid& grid,
                                  int prompt_id,
                                  std::span<const double> grad_logits,
                                  double temperature,
                                  std::span<double> grad) {
  const Dims& dm = params.dims();
  if (grad.size() != Params::flat_size(dm)) {
    throw ValidationError("accumulate_param_grad: gradient buffer size mismatch");
  }
  if (grad_logits.size() != static_cast<std::size_t>(dm.seq_len) * dm.vocab) {
    throw ValidationError("accumulate_param_grad: grad_logits size mismatch");
  }
  validate_token_grid(grid, dm.vocab);
  if (!(temperature > 0.0)) {
    throw ValidationError("accumulate_param_grad: temperature must be positive");
  }

  const auto w = params.out_proj();
  double* g_token = grad.data() + params.token_embed_off();
  double* g_pos = grad.data() + params.pos_embed_off();
  double* g_prompt = grad.data() + params.prompt_embed_off() +
                     static_cast<std::size_t>(prompt_id) * dm.embed_dim;
  double* g_proj = grad.data() + params.out_proj_off();
  double* g_bias = grad.data() + params.out_bias_off();

  std::vector<double> gz(dm.vocab);
  std::vector<double> gc(dm.embed_dim);
  for (int t = 0; t < dm.seq_len; ++t) {
    const double* row = grad_logits.data() + static_cast<std::size_t>(t) * dm.vocab;
    bool any = false;
    for (int v = 0; v < dm.vocab; ++v) {
      gz[v] = row[v] / temperature;  // tempered logits are raw logits / tau
      any = any || gz[v] != 0.0;
    }
    if (!any) continue;

    const std::span<const int> prefix(grid.tokens.data(), t);
    const std::vector<double> c = forward_context(params, prefix, t, prompt_id);

    for (int v = 0; v < dm.vocab; ++v) g_bias[v] += gz[v];
    for (int k = 0; k < dm.embed_dim; ++k) {
      const double* wrow = w.data() + static_cast<std::size_t>(k) * dm.vocab;
      double* grow = g_proj + static_cast<std::size_t>(k) * dm.vocab;
      double acc = 0.0;
      for (int v = 0; v < dm.vocab; ++v) {
        grow[v] += c[k] * gz[v];
        acc += wrow[v] * gz[v];
      }
      gc[k] = acc;
    }

    double* pos_row = g_pos + static_cast<std::size_t>(t) * dm.embed_dim;
    for (int k = 0; k < dm.embed_dim; ++k) {
      pos_row[k] += gc[k];
      g_prompt[k] += gc[k];
    }
    if (t > 0) {
      const double inv_t = 1.0 / t;
      for (int j = 0; j < t; ++j) {
        double* tok_row =
            g_token + static_cast<std::size_t>(grid.tokens[j]) * dm.embed_dim;
        for (int k = 0; k < dm.embed_dim; ++k) tok_row[k] += gc[k] * inv_t;
      }
    }
  }
}

/// Teacher-forced log-probs plus a gradient accumulator: adds
/// Σ_t coeffs[t] · ∂logprob_t/∂params into `grad`. The per-token logits
/// gradient of a log-prob is coeff · (1[k = token] − p_k).
inline std::vector<double> accumulate_logprob_grad(
    const Params& params, const TokenGrid& grid, int prompt_id,
    double temperature, std::span<const double> coeffs, std::span<double> grad) {
  const Dims& dm = params.dims();
  if (coeffs.size() != static_cast<std::size_t>(dm.seq_len)) {
    throw ValidationError("accumulate_logprob_grad: coeffs length mismatch");
  }
  const TeacherForward fwd = teacher_forward(params, grid, prompt_id, temperature);
  std::vector<double> grad_logits(static_cast<std::size_t>(dm.seq_len) * dm.vocab,
                                  0.0);
  for (int t = 0; t < dm.seq_len; ++t) {
    if (coeffs[t] == 0.0) continue;
    const double* p = fwd.probs.data() + static_cast<std::size_t>(t) * dm.vocab;
    double* gt = grad_logits.data() + static_cast<std::size_t>(t) * dm.vocab;
    for (int v = 0; v < dm.vocab; ++v) gt[v] = -coeffs[t] * p[v];
    gt[grid.tokens[t]] += coeffs[t];
  }
  accumulate_param_grad(params, grid, prompt_id, grad_logits, temperature, grad);
  return fwd.logprobs;
}

// ---------------------------------------------------------------------------
// Perturbation
// ---------------------------------------------------------------------------

/// Re-generate positions [start, start+count) with uniform logit noise of the
/// given scale, then continue plain autoregressive sampling to the end.
/// Positions before `start` are copied from the record. With the rollout's own
/// seed and noise_scale 0 this reproduces the record exactly, because draws
/// are keyed by position.
inline TokenGrid perturb_and_resample(const Params& params,
                                      const RolloutRecord& record, int start,
                                      int count, double noise_scale,
                                      std::uint64_t seed,
                                      double temperature = 1.0) {
  const Dims& dm = params.dims();
  if (start < 0 || count < 0 || start + count > dm.seq_len) {
    throw ValidationError("perturb_and_resample: range [" +
                          std::to_string(start) + ", " +
                          std::to_string(start + count) +
                          ") outside sequence of length " +
                          std::to_string(dm.seq_len));
  }
  if (record.grid.size() != dm.seq_len) {
    throw ValidationError("perturb_and_resample: record grid size mismatch");
  }

  TokenGrid out;
  out.h = record.grid.h;
  out.w = record.grid.w;
  out.tokens.assign(record.grid.tokens.begin(),
                    record.grid.tokens.begin() + start);
  for (int t = start; t < dm.seq_len; ++t) {
    std::vector<double> logits =
        forward_logits(params, out.tokens, t, record.prompt_id);
    if (t < start + count && noise_scale != 0.0) {
      for (int v = 0; v < dm.vocab; ++v) {
        logits[v] += noise_scale * (2.0 * rng::uniform01(seed, t, 1 + v) - 1.0);
      }
    }
    const Distribution dist = make_distribution(std::move(logits), temperature);
    out.tokens.push_back(
        detail::pick_token(dist.probs, rng::uniform01(seed, t, 0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "GCPO" magic, u32 version, u32 dims (V, N, P, d), then
// little-endian f64 blocks in declared field order.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Params& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write("GCPO", 4);
  detail::put_u32(out, kCheckpointVersion);
  const Dims& d = params.dims();
  detail::put_u32(out, static_cast<std::uint32_t>(d.vocab));
  detail::put_u32(out, static_cast<std::uint32_t>(d.seq_len));
  detail::put_u32(out, static_cast<std::uint32_t>(d.num_prompts));
  detail::put_u32(out, static_cast<std::uint32_t>(d.embed_dim));
  for (double v : params.flat()) detail::put_f64(out, v);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

inline Params load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint for reading: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GCPO", 4) != 0) {
    throw IoError("bad checkpoint magic in " + path);
  }
  const std::uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path);
  }
  Dims d;
  d.vocab = static_cast<int>(detail::get_u32(in));
  d.seq_len = static_cast<int>(detail::get_u32(in));
  d.num_prompts = static_cast<int>(detail::get_u32(in));
  d.embed_dim = static_cast<int>(detail::get_u32(in));
  if (!in) throw IoError("truncated checkpoint header in " + path);
  Params p(d);
  for (double& v : p.flat()) v = detail::get_f64(in);
  if (!in) throw IoError("truncated checkpoint payload in " + path);
  return p;
}

}  // namespace gcpo::policy
