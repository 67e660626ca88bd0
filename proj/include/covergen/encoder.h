// Frozen condition-feature extractor and the trainable adapter that maps
// per-bar feature blocks into the decoder's embedding space.

#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "covergen/core.h"
#include "covergen/features.h"
#include "covergen/tensor.h"

namespace covergen {

/// 12 pooled chroma bins, onset strength, log energy.
inline constexpr int kConditionFeatureDim = 14;

/// Raw (pre-adapter) condition block: one row per beat.
struct ConditionBlock {
  int bar_index = 0;
  int rows = 0;
  int dims = kConditionFeatureDim;
  std::vector<float> values;  // row-major rows x dims

  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * dims + c]; }
  bool operator==(const ConditionBlock&) const = default;
};

/// Pools features over beats [start_beat, end_beat) of grid. Chroma inputs
/// (dims == 12) yield kConditionFeatureDim columns; wider inputs are treated
/// as external embeddings and mean-pooled unchanged. Frames past the end of
/// the matrix are clamped to the last frame; a range starting past the end
/// throws Error(kOutOfRange).
ConditionBlock extract_condition_features(const FeatureMatrix& features, const BeatGrid& grid, int start_beat,
                                          int end_beat, int bar_index = 0);
ConditionBlock extract_condition_features(const FeatureMatrix& features, const BeatGrid& grid, const Bar& bar);

struct EncoderConfig {
  int input_dim = kConditionFeatureDim;
  int d_model = 128;
  int layers = 4;
  int heads = 8;
  bool bias = true;

  /// Throws Error(kInvalidArgument).
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct AdapterParams {
  Matrix<T> in_w, in_b;
  std::vector<LayerParams<T>> layers;
  Matrix<T> lnf_g, lnf_b;
  Matrix<T> out_w, out_b;

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out);
};

template <typename T>
AdapterParams<T> init_adapter(const EncoderConfig& config, std::mt19937_64& rng);

/// Same shapes as params, every entry zero.
template <typename T>
AdapterParams<T> zero_adapter_like(const AdapterParams<T>& params);

template <typename T>
struct AdapterCache;

/// Bidirectional self-attention over the block's rows followed by a linear
/// projection. Returns rows x d_model. Throws Error(kShapeMismatch).
template <typename T>
Matrix<T> adapter_forward(const AdapterParams<T>& params, const EncoderConfig& config, const ConditionBlock& block);

/// Forward pass retaining activations for adapter_backward.
template <typename T>
class AdapterTape {
 public:
  AdapterTape();
  ~AdapterTape();
  AdapterTape(AdapterTape&&) noexcept;
  AdapterTape& operator=(AdapterTape&&) noexcept;

  Matrix<T> forward(const AdapterParams<T>& params, const EncoderConfig& config, const ConditionBlock& block);
  /// Accumulates parameter gradients for d(out) into grads.
  void backward(const AdapterParams<T>& params, const EncoderConfig& config, const Matrix<T>& d_out,
                AdapterParams<T>& grads) const;

 private:
  std::unique_ptr<AdapterCache<T>> cache_;
};

}  // namespace covergen
