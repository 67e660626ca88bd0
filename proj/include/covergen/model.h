// Decoder-only transformer over interleaved condition/target streams:
// forward pass, masked loss, two-stage training, bar-wise generation and
// checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "covergen/dataset.h"
#include "covergen/encoder.h"
#include "covergen/remi.h"
#include "covergen/tensor.h"

namespace covergen {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_dim = 512;
  double dropout = 0.1;
  int vocab_size = 372;
  int max_positions = 1024;
  bool bias = true;
  /// d_model must equal adapter.d_model.
  EncoderConfig adapter{kConditionFeatureDim, 128, 4, 8, true};

  /// Throws Error(kInvalidArgument).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// FNV-1a 64 over the canonical JSON form of the config, as 16 hex digits.
std::string config_hash(const ModelConfig& config);

template <typename T>
struct ModelParams {
  Matrix<T> tok_emb;  // vocab x d
  Matrix<T> pos_emb;  // max_positions x d
  std::vector<LayerParams<T>> layers;
  Matrix<T> lnf_g, lnf_b;
  Matrix<T> head_w, head_b;  // d x vocab, 1 x vocab
  AdapterParams<T> adapter;

  /// Every non-empty tensor in a fixed order, adapter last.
  std::vector<NamedTensor<T>> tensors();
  std::size_t parameter_count();
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed);

template <typename T>
ModelParams<T> zero_like(const ModelParams<T>& params);

template <typename T>
ModelParams<T> cast_params(const ModelParams<float>& params);

/// Logits for every slot of the segment (slots x vocab). Row t scores the
/// token at slot t given slots [0, t); row 0 is zero. Throws
/// Error(kShapeMismatch) for inconsistent blocks or tokens and
/// Error(kOutOfRange) when the segment exceeds max_positions.
template <typename T>
Matrix<T> forward(const ModelParams<T>& params, const ModelConfig& config, const TrainingSegment& segment);

/// Mean negative log-likelihood over rows where mask is true. When d_logits
/// is given it receives dLoss/dLogits (zero on unmasked rows). Throws
/// Error(kInvalidArgument) for an all-false mask.
template <typename T>
double masked_cross_entropy(const Matrix<T>& logits, const std::vector<int>& targets, const std::vector<bool>& mask,
                            Matrix<T>* d_logits = nullptr);

/// Token ids of the segment's slots (-1 on condition slots).
std::vector<int> slot_targets(const TrainingSegment& segment);

/// Segment loss, accumulating weight * dLoss/dParams into grads. When rng is
/// given, dropout is applied with config.dropout.
template <typename T>
double loss_and_grad(const ModelParams<T>& params, const ModelConfig& config, const TrainingSegment& segment,
                     T weight, ModelParams<T>& grads, std::mt19937_64* rng = nullptr);

/// Literal weighted sum alpha*L1 + (1-alpha)*L2. Throws for alpha outside [0,1].
double finetune_loss(double l1, double l2, double alpha);

enum class Stage { kPretrain, kFinetune };
const char* stage_name(Stage stage);        // "pretrain" / "finetune"
const char* checkpoint_stage_name(Stage stage);  // "pretrained" / "finetuned"
Stage parse_stage(const std::string& name);  // accepts either form

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  double alpha = 0.25;
  int steps = 100;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_dir;
  /// Finetune without a pretrained init (trained from scratch on pairs).
  bool allow_scratch_finetune = false;

  void validate() const;
};

struct AdamState {
  std::vector<Matrix<float>> m, v;
  long long step = 0;
};

struct ModelCheckpoint {
  ModelConfig config;
  ModelParams<float> params;
  Stage stage = Stage::kPretrain;
  long long step = 0;
  std::uint64_t seed = 0;
  std::optional<AdamState> optimizer;
};

struct Corpus {
  std::vector<TrainingSegment> piano_only;  // S-bar
  std::vector<TrainingSegment> paired;      // S
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<double> losses;  // one per step
};

using ProgressFn = std::function<void(long long step, double loss)>;

/// Pretrain uses piano_only with L = L1. Finetune draws half of each batch
/// from each corpus and minimizes alpha*L1 + (1-alpha)*L2; with an empty
/// piano_only corpus L = L2. Throws Error(kState) for finetune without a
/// pretrained init unless allow_scratch_finetune, and for stage regressions.
TrainResult train(Stage stage, const Corpus& corpus, const ModelConfig& config, const TrainConfig& train_config,
                  const std::optional<ModelCheckpoint>& init = std::nullopt, const ProgressFn& progress = {});

struct EvalResult {
  double l1 = 0.0;  // mean over piano_only segments
  double l2 = 0.0;  // mean over paired segments
  double loss = 0.0;
  std::size_t n1 = 0, n2 = 0;
};

/// Dropout-free loss over a whole corpus, combined as train() does.
EvalResult evaluate(const ModelCheckpoint& checkpoint, const Corpus& corpus, Stage stage, double alpha);

struct SamplingConfig {
  double temperature = 1.0;  // 0 = greedy
  double top_p = 1.0;
  int max_tokens_per_bar = 256;
  std::uint64_t seed = 0;
};

/// Generates one bar per condition block. Every bar is well-formed:
/// Bar_start is forced, note triples are completed, and Bar_end is forced
/// when the bar budget runs out. Throws Error(kState) when the checkpoint
/// does not match the vocabulary.
TokenSequence generate(const ModelCheckpoint& checkpoint, const Vocabulary& vocab,
                       const std::vector<ConditionBlock>& blocks, const SamplingConfig& sampling = {});

/// Atomic write (temporary directory + rename) of manifest.json and
/// params.bin (plus optimizer.bin when present).
void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& dir);
/// Throws Error(kState) when expected is given and its hash differs.
ModelCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace covergen
