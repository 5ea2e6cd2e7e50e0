#pragma once

// The learnable modules, at desk scale:
//   SkeletonNet - two attention encoders (rest offsets, rotations) and a
//                 shared per-joint MLP decoder producing rotation residuals;
//   ShapeNets   - one MLP per limb producing residuals for that limb's joints;
//   GateNet     - an MLP producing one interpolation weight per joint.
//
// Every network is a template over the scalar type. Parameters are plain
// std::vector<T> buffers enumerated by visit_params() in a fixed order; that
// order defines checkpoint layout and flattening.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skinret/autodiff.hpp"
#include "skinret/errors.hpp"
#include "skinret/geometry.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/math.hpp"

namespace skinret {

enum class Activation : std::uint8_t { kNone, kTanh, kRelu, kSigmoid };

template <class T>
T activate(const T& x, Activation a) {
  switch (a) {
    case Activation::kNone: return x;
    case Activation::kTanh: return tanh(x);
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
  }
  return x;
}

using Shape = std::vector<std::size_t>;

// Deterministic uniform draws in [-1, 1) from a 64-bit engine; independent of
// the standard library's distribution implementations.
class ParamRng {
 public:
  explicit ParamRng(std::uint64_t seed) : engine_(seed) {}
  double symmetric() { return static_cast<double>(engine_() >> 11) * 0x1.0p-52 - 1.0; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <class T>
struct DenseLayer {
  std::size_t in = 0, out = 0;
  std::vector<T> weight;  // out × in, row-major
  std::vector<T> bias;    // out
  Activation activation = Activation::kNone;

  DenseLayer() = default;
  DenseLayer(std::size_t in_, std::size_t out_, Activation act)
      : in(in_), out(out_), weight(in_ * out_, T(0.0)), bias(out_, T(0.0)), activation(act) {}

  // Xavier-uniform weights, zero biases.
  void init(ParamRng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& w : weight) w = T(limit * rng.symmetric());
    for (auto& b : bias) b = T(0.0);
  }

  void zero() {
    for (auto& w : weight) w = T(0.0);
    for (auto& b : bias) b = T(0.0);
  }

  std::vector<T> forward(std::span<const T> x) const {
    if (x.size() != in) {
      throw DimensionError("dense layer expects " + std::to_string(in) + " inputs, got " +
                           std::to_string(x.size()));
    }
    std::vector<T> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      const std::span<const T> row(weight.data() + o * in, in);
      if constexpr (std::is_same_v<T, Var>) {
        y[o] = activate(dot(row, x, bias[o]), activation);
      } else {
        y[o] = activate(dot(row, x) + bias[o], activation);
      }
    }
    return y;
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& f) {
    f(prefix + ".weight", Shape{out, in}, weight);
    f(prefix + ".bias", Shape{out}, bias);
  }
};

template <class T>
struct Mlp {
  std::vector<DenseLayer<T>> layers;

  Mlp() = default;
  // Hidden layers use tanh; the last layer uses `output`.
  Mlp(const std::vector<std::size_t>& widths, Activation output) {
    if (widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const bool last = l + 2 == widths.size();
      layers.emplace_back(widths[l], widths[l + 1], last ? output : Activation::kTanh);
    }
  }

  std::size_t input_size() const { return layers.front().in; }
  std::size_t output_size() const { return layers.back().out; }

  void init(ParamRng& rng) {
    for (auto& l : layers) l.init(rng);
  }

  std::vector<T> forward(std::span<const T> x) const {
    std::vector<T> h(x.begin(), x.end());
    for (const auto& l : layers) h = l.forward(h);
    return h;
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].visit_params(prefix + ".layer" + std::to_string(l), f);
    }
  }
};

// Raw 4-vector residual decoded to a rotation: normalize(identity + raw).
template <class T>
Quat<T> decode_residual(const T* raw) {
  return normalize(Quat<T>(T(1.0) + raw[0], raw[1], raw[2], raw[3]));
}

// ---------------------------------------------------------------------------
// Attention encoder.

// Multi-head self-attention over N tokens with a residual connection and
// layer normalization: Y = LN(X + MHA(X)).
template <class T>
struct EncoderBlock {
  std::size_t channels = 0, heads = 1;
  DenseLayer<T> query, key, val, out;
  std::vector<T> ln_gain, ln_bias;

  EncoderBlock() = default;
  EncoderBlock(std::size_t c, std::size_t h)
      : channels(c),
        heads(h),
        query(c, c, Activation::kNone),
        key(c, c, Activation::kNone),
        val(c, c, Activation::kNone),
        out(c, c, Activation::kNone),
        ln_gain(c, T(1.0)),
        ln_bias(c, T(0.0)) {
    if (h == 0 || c % h != 0) throw ConfigError("token channels must be divisible by head count");
  }

  void init(ParamRng& rng) {
    query.init(rng);
    key.init(rng);
    val.init(rng);
    out.init(rng);
    for (auto& g : ln_gain) g = T(1.0);
    for (auto& b : ln_bias) b = T(0.0);
  }

  // Attention weights per head: heads × N × N, row-major; rows sum to one.
  std::vector<std::vector<T>> attention(const std::vector<std::vector<T>>& x,
                                        std::vector<std::vector<T>>* values = nullptr) const {
    const std::size_t n = x.size();
    const std::size_t dh = channels / heads;
    std::vector<std::vector<T>> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      q[i] = query.forward(x[i]);
      k[i] = key.forward(x[i]);
      v[i] = val.forward(x[i]);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<std::vector<T>> weights(heads, std::vector<T>(n * n));
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<T> logits(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::span<const T> qi(q[i].data() + h * dh, dh);
        for (std::size_t j = 0; j < n; ++j) {
          const std::span<const T> kj(k[j].data() + h * dh, dh);
          logits[j] = dot(qi, kj) * scale;
        }
        const auto a = softmax(std::span<const T>(logits));
        std::copy(a.begin(), a.end(), weights[h].begin() + static_cast<std::ptrdiff_t>(i * n));
      }
    }
    if (values) *values = std::move(v);
    return weights;
  }

  std::vector<std::vector<T>> forward(const std::vector<std::vector<T>>& x) const {
    const std::size_t n = x.size();
    const std::size_t dh = channels / heads;
    std::vector<std::vector<T>> v;
    const auto weights = attention(x, &v);
    // Value columns, contiguous per channel, for the weighted sums.
    std::vector<std::vector<T>> vcol(channels, std::vector<T>(n));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < channels; ++c) vcol[c][j] = v[j][c];
    std::vector<std::vector<T>> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<T> mixed(channels);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::span<const T> a(weights[h].data() + i * n, n);
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) mixed[c] = dot(a, std::span<const T>(vcol[c]));
      }
      auto o = out.forward(mixed);
      for (std::size_t c = 0; c < channels; ++c) o[c] = o[c] + x[i][c];
      y[i] = layer_norm(o);
    }
    return y;
  }

  std::vector<T> layer_norm(const std::vector<T>& x) const {
    const double inv_c = 1.0 / static_cast<double>(channels);
    const T mu = sum(std::span<const T>(x)) * inv_c;
    std::vector<T> centered(channels);
    for (std::size_t c = 0; c < channels; ++c) centered[c] = x[c] - mu;
    const T var = dot(std::span<const T>(centered), std::span<const T>(centered)) * inv_c;
    const T inv_std = T(1.0) / sqrt(var + T(1e-5));
    std::vector<T> y(channels);
    for (std::size_t c = 0; c < channels; ++c) y[c] = centered[c] * inv_std * ln_gain[c] + ln_bias[c];
    return y;
  }

  template <class F>
  void visit_params(const std::string& prefix, F&& f) {
    query.visit_params(prefix + ".query", f);
    key.visit_params(prefix + ".key", f);
    val.visit_params(prefix + ".value", f);
    out.visit_params(prefix + ".out", f);
    f(prefix + ".ln_gain", Shape{channels}, ln_gain);
    f(prefix + ".ln_bias", Shape{channels}, ln_bias);
  }
};

struct SkeletonNetConfig {
  std::size_t joints = 22;
  std::size_t token_channels = 32;      // C_tk
  std::size_t embedding_channels = 64;  // C_eb, must equal 2 * C_tk
  std::size_t heads = 4;
  std::size_t hidden = 64;
};

// Skeleton-aware residual network.
//
// Tokens: one per joint. The offset stream reads [offset_A / h_A,
// offset_B / h_B] (6 values), the rotation stream reads the copied rotation
// (4 values). Each stream is embedded to C_tk channels and passed through
// its own encoder block; the two encodings are concatenated per joint
// (C_eb = 2 C_tk), a learned per-joint position embedding is added, and a
// decoder MLP shared across joints maps each token to a raw 4-vector.
template <class T>
struct SkeletonNet {
  SkeletonNetConfig config;
  DenseLayer<T> embed_offsets, embed_rotations;
  EncoderBlock<T> offset_encoder, rotation_encoder;
  std::vector<T> position;  // joints × C_eb
  Mlp<T> decoder;

  SkeletonNet() = default;
  explicit SkeletonNet(const SkeletonNetConfig& c)
      : config(c),
        embed_offsets(6, c.token_channels, Activation::kNone),
        embed_rotations(4, c.token_channels, Activation::kNone),
        offset_encoder(c.token_channels, c.heads),
        rotation_encoder(c.token_channels, c.heads),
        position(c.joints * c.embedding_channels, T(0.0)),
        decoder({c.embedding_channels, c.hidden, 4}, Activation::kNone) {
    if (c.embedding_channels != 2 * c.token_channels) {
      throw ConfigError("embedding channels must be twice the token channels");
    }
  }

  // Random encoder/embedding weights, small random position table and a
  // zeroed final decoder layer, so the initial residual is the identity.
  void init(std::uint64_t seed) {
    ParamRng rng(seed);
    embed_offsets.init(rng);
    embed_rotations.init(rng);
    offset_encoder.init(rng);
    rotation_encoder.init(rng);
    for (auto& p : position) p = T(0.1 * rng.symmetric());
    decoder.init(rng);
    decoder.layers.back().zero();
  }

  template <class F>
  void visit_params(F&& f) {
    embed_offsets.visit_params("embed_offsets", f);
    embed_rotations.visit_params("embed_rotations", f);
    offset_encoder.visit_params("offset_encoder", f);
    rotation_encoder.visit_params("rotation_encoder", f);
    f("position", Shape{config.joints, config.embedding_channels}, position);
    decoder.visit_params("decoder", f);
  }

  // Per-joint embedding tokens (before decoding); exposed for inspection.
  std::vector<std::vector<T>> embed(const Skeleton& source, const Skeleton& target,
                                    std::span<const Quat<T>> copied) const {
    const std::size_t n = config.joints;
    if (source.size() != n || target.size() != n || copied.size() != n) {
      throw DimensionError("skeleton net expects " + std::to_string(n) + " joints");
    }
    std::vector<std::vector<T>> off_tokens(n), rot_tokens(n);
    for (std::size_t j = 0; j < n; ++j) {
      const Vec3d a = source.offsets()[j] / source.height();
      const Vec3d b = target.offsets()[j] / target.height();
      const std::vector<T> g{T(a.x), T(a.y), T(a.z), T(b.x), T(b.y), T(b.z)};
      off_tokens[j] = embed_offsets.forward(g);
      const std::vector<T> q{copied[j].w, copied[j].x, copied[j].y, copied[j].z};
      rot_tokens[j] = embed_rotations.forward(q);
    }
    const auto off_enc = offset_encoder.forward(off_tokens);
    const auto rot_enc = rotation_encoder.forward(rot_tokens);
    const std::size_t c = config.token_channels;
    std::vector<std::vector<T>> tokens(n, std::vector<T>(config.embedding_channels));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < c; ++k) {
        tokens[j][k] = off_enc[j][k] + position[j * config.embedding_channels + k];
        tokens[j][c + k] = rot_enc[j][k] + position[j * config.embedding_channels + c + k];
      }
    }
    return tokens;
  }

  std::vector<Quat<T>> forward(const Skeleton& source, const Skeleton& target,
                               std::span<const Quat<T>> copied) const {
    const auto tokens = embed(source, target, copied);
    std::vector<Quat<T>> out(tokens.size());
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      const auto raw = decoder.forward(tokens[j]);
      out[j] = decode_residual(raw.data());
    }
    return out;
  }
};

// ---------------------------------------------------------------------------

struct ShapeNetConfig {
  std::size_t joints = 22;
  std::size_t hidden = 64;
};

// Shape-aware residual networks: one MLP per limb. Each reads the whole
// height-normalized shape descriptor and the whole current pose, and writes
// residuals for its own limb chain only; other joints get the identity.
template <class T>
struct ShapeNets {
  ShapeNetConfig config;
  std::array<std::vector<int>, 4> chains;
  std::array<Mlp<T>, 4> limbs;

  ShapeNets() = default;
  ShapeNets(const ShapeNetConfig& c, const std::array<std::vector<int>, 4>& limb_chains)
      : config(c), chains(limb_chains) {
    for (std::size_t l = 0; l < 4; ++l) {
      if (chains[l].empty()) throw ConfigError("limb " + std::to_string(l) + " has no joints");
      limbs[l] = Mlp<T>({7 * c.joints, c.hidden, c.hidden, 4 * chains[l].size()}, Activation::kNone);
    }
  }

  void init(std::uint64_t seed) {
    ParamRng rng(seed);
    for (auto& m : limbs) {
      m.init(rng);
      m.layers.back().zero();
    }
  }

  template <class F>
  void visit_params(F&& f) {
    for (std::size_t l = 0; l < 4; ++l) limbs[l].visit_params("limb" + std::to_string(l), f);
  }

  std::vector<Quat<T>> forward(std::span<const Vec3d> shape, double height,
                               std::span<const Quat<T>> pose) const {
    const std::size_t n = config.joints;
    if (shape.size() != n || pose.size() != n) {
      throw DimensionError("shape nets expect " + std::to_string(n) + " joints");
    }
    std::vector<T> input;
    input.reserve(7 * n);
    for (const auto& s : shape) {
      input.push_back(T(s.x / height));
      input.push_back(T(s.y / height));
      input.push_back(T(s.z / height));
    }
    for (const auto& q : pose) {
      input.push_back(q.w);
      input.push_back(q.x);
      input.push_back(q.y);
      input.push_back(q.z);
    }
    std::vector<Quat<T>> out(n, Quat<T>::identity());
    for (std::size_t l = 0; l < 4; ++l) {
      if (limbs[l].output_size() != 4 * chains[l].size()) {
        throw ConfigError("limb " + std::to_string(l) + " network does not match its joint chain");
      }
      const auto raw = limbs[l].forward(input);
      for (std::size_t k = 0; k < chains[l].size(); ++k) {
        const auto j = static_cast<std::size_t>(chains[l][k]);
        if (j >= n) throw ConfigError("limb chain references joint out of range");
        out[j] = decode_residual(raw.data() + 4 * k);
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------

struct GateNetConfig {
  std::size_t joints = 22;
  std::size_t hidden = 64;
};

// Balancing gate: [offsets / h, shape / h, pose] -> N sigmoid weights.
template <class T>
struct GateNet {
  GateNetConfig config;
  Mlp<T> mlp;

  GateNet() = default;
  explicit GateNet(const GateNetConfig& c)
      : config(c), mlp({10 * c.joints, c.hidden, c.hidden, c.joints}, Activation::kSigmoid) {}

  void init(std::uint64_t seed) {
    ParamRng rng(seed);
    mlp.init(rng);
  }

  void zero() {
    for (auto& l : mlp.layers) l.zero();
  }

  template <class F>
  void visit_params(F&& f) {
    mlp.visit_params("gate", f);
  }

  std::vector<T> forward(const Skeleton& target, std::span<const Vec3d> shape,
                         std::span<const Quat<T>> pose) const {
    const std::size_t n = config.joints;
    if (target.size() != n || shape.size() != n || pose.size() != n) {
      throw DimensionError("gate expects " + std::to_string(n) + " joints");
    }
    const double h = target.height();
    std::vector<T> input;
    input.reserve(10 * n);
    for (const auto& o : target.offsets()) {
      input.push_back(T(o.x / h));
      input.push_back(T(o.y / h));
      input.push_back(T(o.z / h));
    }
    for (const auto& s : shape) {
      input.push_back(T(s.x / h));
      input.push_back(T(s.y / h));
      input.push_back(T(s.z / h));
    }
    for (const auto& q : pose) {
      input.push_back(q.w);
      input.push_back(q.x);
      input.push_back(q.y);
      input.push_back(q.z);
    }
    return mlp.forward(input);
  }
};

// ---------------------------------------------------------------------------
// Parameter plumbing shared by training, checkpoints and gradient checks.

template <class Net>
std::size_t parameter_count(Net& net) {
  std::size_t n = 0;
  net.visit_params([&](const std::string&, const Shape&, auto& data) { n += data.size(); });
  return n;
}

template <class Net>
std::vector<double> flatten(Net& net) {
  std::vector<double> out;
  net.visit_params([&](const std::string&, const Shape&, auto& data) {
    for (const auto& x : data) out.push_back(value(x));
  });
  return out;
}

// Copies `values` into the network's parameters (in visit order).
template <class Net, class T>
void unflatten(Net& net, std::span<const T> values) {
  std::size_t k = 0;
  net.visit_params([&](const std::string&, const Shape&, auto& data) {
    for (auto& x : data) {
      if (k >= values.size()) throw DimensionError("unflatten: too few values");
      x = values[k++];
    }
  });
  if (k != values.size()) throw DimensionError("unflatten: too many values");
}

// Same architecture on a different scalar type, parameters copied by value.
template <template <class> class Net, class To, class From>
Net<To> convert(const Net<From>& src) {
  Net<To> dst;
  Net<From> copy = src;
  // Rebuild the architecture from the config, then copy parameters.
  if constexpr (requires { Net<To>(src.config, src.chains); }) {
    dst = Net<To>(src.config, src.chains);
  } else {
    dst = Net<To>(src.config);
  }
  std::vector<To> flat;
  copy.visit_params([&](const std::string&, const Shape&, auto& data) {
    for (const auto& x : data) flat.push_back(To(value(x)));
  });
  unflatten(dst, std::span<const To>(flat));
  return dst;
}

// Network whose parameters are fresh leaves on `tape`.
template <template <class> class Net>
Net<Var> lift(const Net<double>& src, Tape& tape, std::vector<Var>* leaves = nullptr) {
  Net<Var> dst = convert<Net, Var>(src);
  dst.visit_params([&](const std::string&, const Shape&, auto& data) {
    for (auto& x : data) {
      x = tape.variable(x.val);
      if (leaves) leaves->push_back(x);
    }
  });
  return dst;
}

// FNV-1a over the parameter bytes; used to verify frozen networks.
template <class Net>
std::uint64_t checksum(Net& net) {
  std::uint64_t h = 1469598103934665603ULL;
  net.visit_params([&](const std::string&, const Shape&, auto& data) {
    for (const auto& x : data) {
      const double v = value(x);
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  });
  return h;
}

}  // namespace skinret
