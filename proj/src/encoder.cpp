#include "covergen/encoder.h"

#include <algorithm>
#include <cmath>
#include <memory>

#include "covergen/error.h"
#include "transformer_layer.h"

namespace covergen {

namespace {

struct FrameRange {
  int first = 0;
  int last = 0;  // exclusive
};

FrameRange frames_for(const FeatureMatrix& f, double t0, double t1) {
  int a = static_cast<int>(std::floor(t0 * f.frame_rate + 1e-9));
  int b = static_cast<int>(std::ceil(t1 * f.frame_rate - 1e-9));
  a = std::max(a, 0);
  b = std::max(b, a + 1);
  // Clamp past the end to the last frame.
  if (a >= f.frames) a = f.frames - 1;
  b = std::min(b, f.frames);
  if (b <= a) b = a + 1;
  return {a, b};
}

}  // namespace

ConditionBlock extract_condition_features(const FeatureMatrix& features, const BeatGrid& grid, int start_beat,
                                          int end_beat, int bar_index) {
  if (features.frames <= 0 || features.dims <= 0) throw Error(ErrorCode::kInvalidArgument, "empty feature matrix");
  if (features.data.size() != static_cast<std::size_t>(features.frames) * features.dims) {
    throw Error(ErrorCode::kShapeMismatch, "feature payload does not match frames x dims");
  }
  if (end_beat <= start_beat || start_beat < 0) {
    throw Error(ErrorCode::kInvalidArgument, "beat range must be non-empty");
  }
  if (grid.time_at(start_beat) >= features.duration()) {
    throw Error(ErrorCode::kOutOfRange, "bar " + std::to_string(bar_index) + " starts past the feature span");
  }
  const bool chroma = features.dims == 12;
  const bool has_energy = chroma && features.energy.size() == static_cast<std::size_t>(features.frames);
  ConditionBlock block;
  block.bar_index = bar_index;
  block.rows = end_beat - start_beat;
  block.dims = chroma ? kConditionFeatureDim : features.dims;
  block.values.assign(static_cast<std::size_t>(block.rows) * block.dims, 0.0f);

  for (int r = 0; r < block.rows; ++r) {
    const int beat = start_beat + r;
    const FrameRange fr = frames_for(features, grid.time_at(beat), grid.time_at(beat + 1));
    const int n = fr.last - fr.first;
    float* out = block.values.data() + static_cast<std::size_t>(r) * block.dims;
    for (int f = fr.first; f < fr.last; ++f) {
      for (int d = 0; d < features.dims; ++d) out[d] += features.at(f, d);
    }
    for (int d = 0; d < features.dims; ++d) out[d] /= static_cast<float>(n);
    if (!chroma) continue;

    double flux = 0.0, energy = 0.0;
    for (int f = fr.first; f < fr.last; ++f) {
      const double e = has_energy ? features.energy[static_cast<std::size_t>(f)] : 1.0;
      const double prev_e = (f > 0 && has_energy) ? features.energy[static_cast<std::size_t>(f - 1)] : (f > 0 ? 1.0 : 0.0);
      double s = 0.0;
      for (int d = 0; d < 12; ++d) {
        const double cur = features.at(f, d) * e;
        const double prev = f > 0 ? features.at(f - 1, d) * prev_e : 0.0;
        s += std::max(0.0, cur - prev);
      }
      flux += s;
      energy += has_energy ? e : 0.0;
    }
    out[12] = static_cast<float>(std::log1p(flux / n));
    out[13] = static_cast<float>(std::log1p(energy / n));
  }
  return block;
}

ConditionBlock extract_condition_features(const FeatureMatrix& features, const BeatGrid& grid, const Bar& bar) {
  return extract_condition_features(features, grid, bar.start_beat, bar.end_beat, bar.index);
}

void EncoderConfig::validate() const {
  if (input_dim <= 0 || d_model <= 0 || layers < 0 || heads <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "encoder dimensions must be positive");
  }
  if (d_model % heads != 0) throw Error(ErrorCode::kInvalidArgument, "d_model must be divisible by heads");
}

template <typename T>
void AdapterParams<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  auto add = [&](const char* n, Matrix<T>& m) {
    if (m.size() > 0) out.push_back({prefix + n, &m});
  };
  add("in_w", in_w);
  add("in_b", in_b);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "layer" + std::to_string(i) + ".", out);
  add("lnf_g", lnf_g);
  add("lnf_b", lnf_b);
  add("out_w", out_w);
  add("out_b", out_b);
}

template <typename T>
AdapterParams<T> init_adapter(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](int r, int c) {
    Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng) * 0.02);
    return m;
  };
  const int d = config.d_model;
  AdapterParams<T> p;
  p.in_w = randn(config.input_dim, d);
  for (int l = 0; l < config.layers; ++l) {
    p.layers.push_back(detail::make_layer<T>(d, 4 * d, config.bias, std::max(config.layers, 1), rng));
  }
  p.lnf_g = Matrix<T>::Ones(1, d);
  p.out_w = randn(d, d);
  if (config.bias) {
    p.in_b = Matrix<T>::Zero(1, d);
    p.lnf_b = Matrix<T>::Zero(1, d);
    p.out_b = Matrix<T>::Zero(1, d);
  }
  return p;
}

template <typename T>
AdapterParams<T> zero_adapter_like(const AdapterParams<T>& p) {
  auto zero = [](const Matrix<T>& m) { return Matrix<T>::Zero(m.rows(), m.cols()).eval(); };
  AdapterParams<T> z;
  z.in_w = zero(p.in_w);
  z.in_b = zero(p.in_b);
  for (const auto& l : p.layers) z.layers.push_back(detail::zeros_like(l));
  z.lnf_g = zero(p.lnf_g);
  z.lnf_b = zero(p.lnf_b);
  z.out_w = zero(p.out_w);
  z.out_b = zero(p.out_b);
  return z;
}

template <typename T>
struct AdapterCache {
  Matrix<T> x;
  std::vector<detail::LayerCache<T>> layers;
  detail::LnCache<T> lnf;
  Matrix<T> hf;
};

template <typename T>
AdapterTape<T>::AdapterTape() : cache_(std::make_unique<AdapterCache<T>>()) {}
template <typename T>
AdapterTape<T>::~AdapterTape() = default;
template <typename T>
AdapterTape<T>::AdapterTape(AdapterTape&&) noexcept = default;
template <typename T>
AdapterTape<T>& AdapterTape<T>::operator=(AdapterTape&&) noexcept = default;

template <typename T>
Matrix<T> AdapterTape<T>::forward(const AdapterParams<T>& p, const EncoderConfig& config, const ConditionBlock& block) {
  if (block.dims != config.input_dim || p.in_w.rows() != config.input_dim || p.in_w.cols() != config.d_model) {
    throw Error(ErrorCode::kShapeMismatch, "condition block has " + std::to_string(block.dims) +
                                               " dims, adapter expects " + std::to_string(config.input_dim));
  }
  if (block.rows <= 0 || block.values.size() != static_cast<std::size_t>(block.rows) * block.dims) {
    throw Error(ErrorCode::kShapeMismatch, "malformed condition block");
  }
  if (p.layers.size() != static_cast<std::size_t>(config.layers)) {
    throw Error(ErrorCode::kShapeMismatch, "adapter layer count differs from config");
  }
  auto& c = *cache_;
  c.x.resize(block.rows, block.dims);
  for (int i = 0; i < block.rows * block.dims; ++i) c.x.data()[i] = static_cast<T>(block.values[static_cast<std::size_t>(i)]);
  Matrix<T> h = detail::affine(c.x, p.in_w, p.in_b);
  c.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    h = detail::layer_forward(p.layers[l], config.heads, false, h, c.layers[l]);
  }
  c.hf = detail::layer_norm(h, p.lnf_g, p.lnf_b, c.lnf);
  return detail::affine(c.hf, p.out_w, p.out_b);
}

template <typename T>
void AdapterTape<T>::backward(const AdapterParams<T>& p, const EncoderConfig& config, const Matrix<T>& d_out,
                              AdapterParams<T>& g) const {
  const auto& c = *cache_;
  Matrix<T> dh = detail::affine_backward(d_out, c.hf, p.out_w, g.out_w, g.out_b);
  dh = detail::layer_norm_backward(dh, p.lnf_g, c.lnf, g.lnf_g, g.lnf_b);
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    dh = detail::layer_backward(p.layers[l], config.heads, dh, c.layers[l], g.layers[l]);
  }
  detail::affine_backward(dh, c.x, p.in_w, g.in_w, g.in_b);
}

template <typename T>
Matrix<T> adapter_forward(const AdapterParams<T>& params, const EncoderConfig& config, const ConditionBlock& block) {
  AdapterTape<T> tape;
  return tape.forward(params, config, block);
}

#define COVERGEN_INSTANTIATE(T)                                                                        \
  template struct AdapterParams<T>;                                                                    \
  template AdapterParams<T> init_adapter<T>(const EncoderConfig&, std::mt19937_64&);                   \
  template AdapterParams<T> zero_adapter_like<T>(const AdapterParams<T>&);                             \
  template class AdapterTape<T>;                                                                       \
  template Matrix<T> adapter_forward<T>(const AdapterParams<T>&, const EncoderConfig&, const ConditionBlock&);

COVERGEN_INSTANTIATE(float)
COVERGEN_INSTANTIATE(double)
#undef COVERGEN_INSTANTIATE

}  // namespace covergen
