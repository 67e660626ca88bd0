#include "covergen/model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "covergen/error.h"
#include "covergen/json_io.h"
#include "transformer_layer.h"

namespace covergen {

namespace fs = std::filesystem;

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || ffn_dim <= 0 || vocab_size <= 0 || max_positions <= 1) {
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw Error(ErrorCode::kInvalidArgument, "d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout must lie in [0, 1)");
  adapter.validate();
  if (adapter.d_model != d_model) throw Error(ErrorCode::kInvalidArgument, "adapter d_model must equal d_model");
}

std::string config_hash(const ModelConfig& config) {
  const nlohmann::json j = config;
  return fnv1a_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::tensors() {
  std::vector<NamedTensor<T>> out;
  auto add = [&](const char* n, Matrix<T>& m) {
    if (m.size() > 0) out.push_back({n, &m});
  };
  add("tok_emb", tok_emb);
  add("pos_emb", pos_emb);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("layer" + std::to_string(i) + ".", out);
  add("lnf_g", lnf_g);
  add("lnf_b", lnf_b);
  add("head_w", head_w);
  add("head_b", head_b);
  adapter.collect("adapter.", out);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() {
  std::size_t n = 0;
  for (auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
  return n;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](int r, int c) {
    Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng) * 0.02);
    return m;
  };
  const int d = config.d_model;
  ModelParams<T> p;
  p.tok_emb = randn(config.vocab_size, d);
  p.pos_emb = randn(config.max_positions, d);
  for (int l = 0; l < config.n_layers; ++l) {
    p.layers.push_back(detail::make_layer<T>(d, config.ffn_dim, config.bias, std::max(config.n_layers, 1), rng));
  }
  p.lnf_g = Matrix<T>::Ones(1, d);
  p.head_w = randn(d, config.vocab_size);
  if (config.bias) {
    p.lnf_b = Matrix<T>::Zero(1, d);
    p.head_b = Matrix<T>::Zero(1, config.vocab_size);
  }
  p.adapter = init_adapter<T>(config.adapter, rng);
  return p;
}

template <typename T>
ModelParams<T> zero_like(const ModelParams<T>& p) {
  auto zero = [](const Matrix<T>& m) { return Matrix<T>::Zero(m.rows(), m.cols()).eval(); };
  ModelParams<T> z;
  z.tok_emb = zero(p.tok_emb);
  z.pos_emb = zero(p.pos_emb);
  for (const auto& l : p.layers) z.layers.push_back(detail::zeros_like(l));
  z.lnf_g = zero(p.lnf_g);
  z.lnf_b = zero(p.lnf_b);
  z.head_w = zero(p.head_w);
  z.head_b = zero(p.head_b);
  z.adapter = zero_adapter_like(p.adapter);
  return z;
}

template <typename T>
ModelParams<T> cast_params(const ModelParams<float>& src) {
  ModelParams<float> copy = src;
  ModelParams<T> out;
  out.tok_emb = copy.tok_emb.template cast<T>();
  out.pos_emb = copy.pos_emb.template cast<T>();
  // Build the same structure, then copy tensors pairwise in canonical order.
  out.layers.resize(copy.layers.size());
  out.adapter.layers.resize(copy.adapter.layers.size());
  auto cast_layer = [](const LayerParams<float>& l) {
    LayerParams<T> o;
    o.ln1_g = l.ln1_g.template cast<T>();
    o.ln1_b = l.ln1_b.template cast<T>();
    o.w_qkv = l.w_qkv.template cast<T>();
    o.b_qkv = l.b_qkv.template cast<T>();
    o.w_o = l.w_o.template cast<T>();
    o.b_o = l.b_o.template cast<T>();
    o.ln2_g = l.ln2_g.template cast<T>();
    o.ln2_b = l.ln2_b.template cast<T>();
    o.w_fc = l.w_fc.template cast<T>();
    o.b_fc = l.b_fc.template cast<T>();
    o.w_proj = l.w_proj.template cast<T>();
    o.b_proj = l.b_proj.template cast<T>();
    return o;
  };
  for (std::size_t i = 0; i < copy.layers.size(); ++i) out.layers[i] = cast_layer(copy.layers[i]);
  out.lnf_g = copy.lnf_g.template cast<T>();
  out.lnf_b = copy.lnf_b.template cast<T>();
  out.head_w = copy.head_w.template cast<T>();
  out.head_b = copy.head_b.template cast<T>();
  out.adapter.in_w = copy.adapter.in_w.template cast<T>();
  out.adapter.in_b = copy.adapter.in_b.template cast<T>();
  for (std::size_t i = 0; i < copy.adapter.layers.size(); ++i) out.adapter.layers[i] = cast_layer(copy.adapter.layers[i]);
  out.adapter.lnf_g = copy.adapter.lnf_g.template cast<T>();
  out.adapter.lnf_b = copy.adapter.lnf_b.template cast<T>();
  out.adapter.out_w = copy.adapter.out_w.template cast<T>();
  out.adapter.out_b = copy.adapter.out_b.template cast<T>();
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct DecoderTape {
  std::vector<AdapterTape<T>> adapters;
  std::vector<Matrix<T>> z;
  Matrix<T> emb_drop;
  std::vector<detail::LayerCache<T>> layers;
  detail::LnCache<T> lnf;
  Matrix<T> hf;
};

void check_segment(const ModelConfig& config, const TrainingSegment& seg) {
  const std::size_t n = seg.slots.size();
  if (n == 0) throw Error(ErrorCode::kShapeMismatch, "empty segment");
  if (seg.loss_mask.size() != n) throw Error(ErrorCode::kShapeMismatch, "loss mask length differs from slot count");
  if (n > static_cast<std::size_t>(config.max_positions)) {
    throw Error(ErrorCode::kOutOfRange, "segment of " + std::to_string(n) + " slots exceeds max_positions " +
                                            std::to_string(config.max_positions));
  }
  for (std::size_t t = 0; t < n; ++t) {
    const Slot& s = seg.slots[t];
    if (s.is_condition()) {
      if (static_cast<std::size_t>(s.block) >= seg.blocks.size() || s.row < 0 ||
          s.row >= seg.blocks[static_cast<std::size_t>(s.block)].rows) {
        throw Error(ErrorCode::kShapeMismatch, "condition slot " + std::to_string(t) + " references a missing row");
      }
      if (seg.loss_mask[t]) throw Error(ErrorCode::kShapeMismatch, "loss mask set on a condition slot");
    } else if (s.token < 0 || s.token >= config.vocab_size) {
      throw Error(ErrorCode::kShapeMismatch, "token id out of range at slot " + std::to_string(t));
    }
  }
}

/// Unshifted logits: row t scores slot t + 1.
template <typename T>
Matrix<T> run_forward(const ModelParams<T>& p, const ModelConfig& config, const TrainingSegment& seg,
                      DecoderTape<T>& tape, std::mt19937_64* rng) {
  check_segment(config, seg);
  const Eigen::Index n = static_cast<Eigen::Index>(seg.slots.size());
  tape.adapters.clear();
  tape.adapters.resize(seg.blocks.size());
  tape.z.resize(seg.blocks.size());
  for (std::size_t b = 0; b < seg.blocks.size(); ++b) {
    tape.z[b] = tape.adapters[b].forward(p.adapter, config.adapter, seg.blocks[b]);
  }
  Matrix<T> x(n, config.d_model);
  for (Eigen::Index t = 0; t < n; ++t) {
    const Slot& s = seg.slots[static_cast<std::size_t>(t)];
    if (s.is_condition()) {
      x.row(t) = tape.z[static_cast<std::size_t>(s.block)].row(s.row);
    } else {
      x.row(t) = p.tok_emb.row(s.token);
    }
  }
  x += p.pos_emb.topRows(n);
  detail::DropoutSpec drop{config.dropout, rng};
  if (drop.active()) {
    tape.emb_drop = detail::dropout_mask<T>(n, config.d_model, drop);
    x.array() *= tape.emb_drop.array();
  } else {
    tape.emb_drop.resize(0, 0);
  }
  tape.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    x = detail::layer_forward(p.layers[l], config.n_heads, true, x, tape.layers[l], drop);
  }
  tape.hf = detail::layer_norm(x, p.lnf_g, p.lnf_b, tape.lnf);
  return detail::affine(tape.hf, p.head_w, p.head_b);
}

template <typename T>
Matrix<T> shift_down(const Matrix<T>& raw) {
  Matrix<T> out = Matrix<T>::Zero(raw.rows(), raw.cols());
  if (raw.rows() > 1) out.bottomRows(raw.rows() - 1) = raw.topRows(raw.rows() - 1);
  return out;
}

template <typename T>
void run_backward(const ModelParams<T>& p, const ModelConfig& config, const TrainingSegment& seg,
                  const DecoderTape<T>& tape, const Matrix<T>& d_shifted, ModelParams<T>& g) {
  const Eigen::Index n = d_shifted.rows();
  Matrix<T> d_raw = Matrix<T>::Zero(n, d_shifted.cols());
  if (n > 1) d_raw.topRows(n - 1) = d_shifted.bottomRows(n - 1);
  Matrix<T> dx = detail::affine_backward(d_raw, tape.hf, p.head_w, g.head_w, g.head_b);
  dx = detail::layer_norm_backward(dx, p.lnf_g, tape.lnf, g.lnf_g, g.lnf_b);
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    dx = detail::layer_backward(p.layers[l], config.n_heads, dx, tape.layers[l], g.layers[l]);
  }
  if (tape.emb_drop.size() > 0) dx.array() *= tape.emb_drop.array();
  g.pos_emb.topRows(n) += dx;
  std::vector<Matrix<T>> dz(seg.blocks.size());
  for (std::size_t b = 0; b < seg.blocks.size(); ++b) dz[b] = Matrix<T>::Zero(tape.z[b].rows(), tape.z[b].cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const Slot& s = seg.slots[static_cast<std::size_t>(t)];
    if (s.is_condition()) {
      dz[static_cast<std::size_t>(s.block)].row(s.row) += dx.row(t);
    } else {
      g.tok_emb.row(s.token) += dx.row(t);
    }
  }
  for (std::size_t b = 0; b < seg.blocks.size(); ++b) {
    tape.adapters[b].backward(p.adapter, config.adapter, dz[b], g.adapter);
  }
}

}  // namespace

template <typename T>
Matrix<T> forward(const ModelParams<T>& params, const ModelConfig& config, const TrainingSegment& segment) {
  DecoderTape<T> tape;
  return shift_down(run_forward(params, config, segment, tape, nullptr));
}

std::vector<int> slot_targets(const TrainingSegment& segment) {
  std::vector<int> out;
  out.reserve(segment.slots.size());
  for (const Slot& s : segment.slots) out.push_back(s.is_condition() ? -1 : s.token);
  return out;
}

template <typename T>
double masked_cross_entropy(const Matrix<T>& logits, const std::vector<int>& targets, const std::vector<bool>& mask,
                            Matrix<T>* d_logits) {
  const Eigen::Index n = logits.rows();
  if (targets.size() != static_cast<std::size_t>(n) || mask.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::kShapeMismatch, "targets/mask length differs from logits rows");
  }
  const auto count = std::count(mask.begin(), mask.end(), true);
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "loss mask selects no positions");
  if (d_logits) d_logits->setZero(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= logits.cols()) throw Error(ErrorCode::kShapeMismatch, "target id out of range");
    const T mx = logits.row(t).maxCoeff();
    const T sum = (logits.row(t).array() - mx).exp().sum();
    const T lse = mx + std::log(sum);
    total += static_cast<double>(lse - logits(t, y));
    if (d_logits) {
      d_logits->row(t) = (logits.row(t).array() - lse).exp().matrix() / static_cast<T>(count);
      (*d_logits)(t, y) -= T(1) / static_cast<T>(count);
    }
  }
  return total / static_cast<double>(count);
}

template <typename T>
double loss_and_grad(const ModelParams<T>& params, const ModelConfig& config, const TrainingSegment& segment,
                     T weight, ModelParams<T>& grads, std::mt19937_64* rng) {
  DecoderTape<T> tape;
  const Matrix<T> logits = shift_down(run_forward(params, config, segment, tape, rng));
  if (weight == T(0)) return masked_cross_entropy<T>(logits, slot_targets(segment), segment.loss_mask);
  Matrix<T> d_logits;
  const double loss = masked_cross_entropy<T>(logits, slot_targets(segment), segment.loss_mask, &d_logits);
  d_logits *= weight;
  run_backward(params, config, segment, tape, d_logits, grads);
  return loss;
}

double finetune_loss(double l1, double l2, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  if (alpha == 1.0) return l1;
  if (alpha == 0.0) return l2;
  return alpha * l1 + (1.0 - alpha) * l2;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

const char* stage_name(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }
const char* checkpoint_stage_name(Stage stage) { return stage == Stage::kPretrain ? "pretrained" : "finetuned"; }

Stage parse_stage(const std::string& name) {
  if (name == "pretrain" || name == "pretrained") return Stage::kPretrain;
  if (name == "finetune" || name == "finetuned") return Stage::kFinetune;
  throw Error(ErrorCode::kParse, "unknown stage '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive");
  if (batch_size <= 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be positive");
  if (steps < 0) throw Error(ErrorCode::kInvalidArgument, "steps must be non-negative");
  if (checkpoint_every < 0) throw Error(ErrorCode::kInvalidArgument, "checkpoint_every must be non-negative");
}

namespace {

/// Cycles through a corpus in seeded shuffled epochs.
class Sampler {
 public:
  explicit Sampler(std::size_t n) : order_(n), next_(n) { std::iota(order_.begin(), order_.end(), 0); }
  std::size_t draw(std::mt19937_64& rng) {
    if (next_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng);
      next_ = 0;
    }
    return order_[next_++];
  }
  bool empty() const { return order_.empty(); }

 private:
  std::vector<std::size_t> order_;
  std::size_t next_;
};

void check_corpus(const Corpus& corpus, const ModelConfig& config) {
  for (const auto* group : {&corpus.piano_only, &corpus.paired}) {
    for (const auto& seg : *group) {
      check_segment(config, seg);
      if (seg.target_count() == 0) throw Error(ErrorCode::kInvalidArgument, "segment without target tokens");
    }
  }
}

}  // namespace

TrainResult train(Stage stage, const Corpus& corpus, const ModelConfig& config, const TrainConfig& tc,
                  const std::optional<ModelCheckpoint>& init, const ProgressFn& progress) {
  config.validate();
  tc.validate();
  check_corpus(corpus, config);
  if (stage == Stage::kPretrain && corpus.piano_only.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "pretraining needs a piano-only corpus");
  }
  if (stage == Stage::kFinetune && corpus.paired.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "finetuning needs a paired corpus");
  }
  const bool mixed = stage == Stage::kFinetune && !corpus.piano_only.empty();
  if (mixed && tc.batch_size < 2) throw Error(ErrorCode::kInvalidArgument, "mixed finetuning needs batch_size >= 2");

  TrainResult result;
  ModelCheckpoint& ck = result.checkpoint;
  if (init) {
    if (config_hash(init->config) != config_hash(config)) {
      throw Error(ErrorCode::kState, "initial checkpoint config hash " + config_hash(init->config) +
                                         " differs from " + config_hash(config));
    }
    if (stage == Stage::kPretrain && init->stage == Stage::kFinetune) {
      throw Error(ErrorCode::kState, "cannot pretrain from a finetuned checkpoint");
    }
    ck = *init;
    if (init->stage != stage) {
      ck.optimizer.reset();
      ck.step = 0;
    }
  } else {
    if (stage == Stage::kFinetune && !tc.allow_scratch_finetune) {
      throw Error(ErrorCode::kState, "finetuning requires a pretrained checkpoint (or the scratch override)");
    }
    ck.config = config;
    ck.params = init_model<float>(config, tc.seed);
  }
  ck.stage = stage;
  ck.seed = tc.seed;

  auto tensors = ck.params.tensors();
  if (!ck.optimizer || ck.optimizer->m.size() != tensors.size()) {
    AdamState st;
    for (auto& t : tensors) {
      st.m.push_back(Matrix<float>::Zero(t.value->rows(), t.value->cols()));
      st.v.push_back(Matrix<float>::Zero(t.value->rows(), t.value->cols()));
    }
    ck.optimizer = std::move(st);
  }
  AdamState& adam = *ck.optimizer;

  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(ck.step));
  Sampler s1(corpus.piano_only.size()), s2(corpus.paired.size());
  int n1 = 0, n2 = 0;
  if (stage == Stage::kPretrain) {
    n1 = tc.batch_size;
  } else if (mixed) {
    n1 = tc.batch_size / 2;
    n2 = tc.batch_size - n1;
  } else {
    n2 = tc.batch_size;
  }
  const double w1 = stage == Stage::kPretrain ? 1.0 : (mixed ? tc.alpha : 0.0);
  const double w2 = stage == Stage::kPretrain ? 0.0 : (mixed ? 1.0 - tc.alpha : 1.0);

  for (int it = 0; it < tc.steps; ++it) {
    ModelParams<float> grads = zero_like(ck.params);
    double l1 = 0.0, l2 = 0.0;
    for (int b = 0; b < n1; ++b) {
      const auto& seg = corpus.piano_only[s1.draw(rng)];
      l1 += loss_and_grad<float>(ck.params, config, seg, static_cast<float>(w1 / n1), grads, &rng);
    }
    for (int b = 0; b < n2; ++b) {
      const auto& seg = corpus.paired[s2.draw(rng)];
      l2 += loss_and_grad<float>(ck.params, config, seg, static_cast<float>(w2 / n2), grads, &rng);
    }
    if (n1) l1 /= n1;
    if (n2) l2 /= n2;
    const double loss = stage == Stage::kPretrain ? l1 : (mixed ? finetune_loss(l1, l2, tc.alpha) : l2);

    auto gt = grads.tensors();
    double sq = 0.0;
    for (auto& g : gt) sq += g.value->template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    const float clip = (tc.grad_clip > 0.0 && norm > tc.grad_clip) ? static_cast<float>(tc.grad_clip / norm) : 1.0f;

    ++adam.step;
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(adam.step));
    const float lr_t = static_cast<float>(tc.learning_rate * std::sqrt(bc2) / bc1);
    const float b1 = static_cast<float>(tc.beta1), b2 = static_cast<float>(tc.beta2);
    const float eps = static_cast<float>(tc.adam_eps * std::sqrt(bc2));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto g = (gt[k].value->array() * clip).eval();
      adam.m[k].array() = b1 * adam.m[k].array() + (1.0f - b1) * g;
      adam.v[k].array() = b2 * adam.v[k].array() + (1.0f - b2) * g.square();
      tensors[k].value->array() -= lr_t * adam.m[k].array() / (adam.v[k].array().sqrt() + eps);
    }
    ++ck.step;
    result.losses.push_back(loss);
    if (progress) progress(ck.step, loss);
    if (tc.checkpoint_every > 0 && ck.step % tc.checkpoint_every == 0 && !tc.checkpoint_dir.empty()) {
      save_checkpoint(ck, tc.checkpoint_dir / ("step-" + std::to_string(ck.step)));
    }
  }
  return result;
}

EvalResult evaluate(const ModelCheckpoint& checkpoint, const Corpus& corpus, Stage stage, double alpha) {
  const ModelConfig& config = checkpoint.config;
  ModelParams<float> unused;
  EvalResult r;
  auto mean_loss = [&](const std::vector<TrainingSegment>& segs) {
    double s = 0.0;
    for (const auto& seg : segs) {
      s += loss_and_grad<float>(checkpoint.params, config, seg, 0.0f, unused, nullptr);
    }
    return segs.empty() ? 0.0 : s / static_cast<double>(segs.size());
  };
  r.n1 = corpus.piano_only.size();
  r.n2 = corpus.paired.size();
  r.l1 = mean_loss(corpus.piano_only);
  r.l2 = mean_loss(corpus.paired);
  if (stage == Stage::kPretrain || r.n2 == 0) {
    r.loss = r.l1;
  } else if (r.n1 == 0) {
    r.loss = r.l2;
  } else {
    r.loss = finetune_loss(r.l1, r.l2, alpha);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

class Decoder {
 public:
  Decoder(const ModelParams<float>& p, const ModelConfig& c) : p_(p), c_(c), kv_(p.layers.size()) {}

  /// Appends rows (already embedded, without position) and returns the
  /// logits predicting the slot after the last row.
  Eigen::RowVectorXf append(const Matrix<float>& rows) {
    const Eigen::Index m = rows.rows();
    Matrix<float> x = rows + p_.pos_emb.middleRows(length_, m);
    for (std::size_t l = 0; l < p_.layers.size(); ++l) x = detail::layer_step(p_.layers[l], c_.n_heads, x, kv_[l]);
    length_ += m;
    detail::LnCache<float> ln;
    const Matrix<float> last = detail::layer_norm<float>(x.bottomRows(1), p_.lnf_g, p_.lnf_b, ln);
    return detail::affine<float>(last, p_.head_w, p_.head_b).row(0);
  }

  Eigen::RowVectorXf append_token(int id) { return append(p_.tok_emb.row(id)); }

  void reset() {
    for (auto& kv : kv_) kv.length = 0;
    length_ = 0;
  }
  Eigen::Index length() const { return length_; }

 private:
  const ModelParams<float>& p_;
  const ModelConfig& c_;
  std::vector<detail::KvCache<float>> kv_;
  Eigen::Index length_ = 0;
};

int pick(const Eigen::RowVectorXf& logits, const std::vector<bool>& allowed, const SamplingConfig& sc,
         std::mt19937_64& rng) {
  std::vector<int> ids;
  for (int i = 0; i < logits.size(); ++i) {
    if (allowed[static_cast<std::size_t>(i)]) ids.push_back(i);
  }
  if (ids.empty()) throw Error(ErrorCode::kState, "no admissible token");
  if (sc.temperature <= 0.0) {
    int best = ids.front();
    for (int i : ids) {
      if (logits(i) > logits(best)) best = i;
    }
    return best;
  }
  double mx = -INFINITY;
  for (int i : ids) mx = std::max(mx, static_cast<double>(logits(i)));
  std::vector<std::pair<double, int>> probs;
  double sum = 0.0;
  for (int i : ids) {
    const double e = std::exp((logits(i) - mx) / sc.temperature);
    probs.emplace_back(e, i);
    sum += e;
  }
  for (auto& pr : probs) pr.first /= sum;
  std::stable_sort(probs.begin(), probs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (sc.top_p < 1.0) {
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < probs.size()) {
      cum += probs[keep++].first;
      if (cum >= sc.top_p) break;
    }
    probs.resize(std::max<std::size_t>(keep, 1));
  }
  double total = 0.0;
  for (const auto& pr : probs) total += pr.first;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (const auto& pr : probs) {
    u -= pr.first;
    if (u <= 0.0) return pr.second;
  }
  return probs.back().second;
}

}  // namespace

TokenSequence generate(const ModelCheckpoint& ck, const Vocabulary& vocab, const std::vector<ConditionBlock>& blocks,
                       const SamplingConfig& sc) {
  const ModelConfig& config = ck.config;
  if (config.vocab_size != vocab.size()) {
    throw Error(ErrorCode::kState, "checkpoint vocabulary size " + std::to_string(config.vocab_size) +
                                       " differs from " + std::to_string(vocab.size()));
  }
  if (!(sc.top_p > 0.0 && sc.top_p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "top_p must lie in (0, 1]");
  if (sc.max_tokens_per_bar < 2) throw Error(ErrorCode::kInvalidArgument, "max_tokens_per_bar must be at least 2");
  TokenSequence out;
  if (blocks.empty()) return out;

  std::mt19937_64 rng(sc.seed);
  Decoder dec(ck.params, config);
  const int V = vocab.size();
  const Eigen::Index cap = config.max_positions;
  auto cls_of = [&](int id) { return vocab.token(id).cls; };
  dec.append_token(vocab.bos());

  for (const ConditionBlock& block : blocks) {
    const int budget_cap = config.max_positions - 1 - block.rows;
    if (budget_cap < 2) throw Error(ErrorCode::kOutOfRange, "condition block too long for max_positions");
    const int budget = std::min(sc.max_tokens_per_bar, budget_cap);
    const Matrix<float> z = adapter_forward<float>(ck.params.adapter, config.adapter, block);
    std::vector<int> bar{vocab.bar_start()};
    // On overflow the context restarts as [ss], Z^k and the bar so far.
    auto restart = [&] {
      dec.reset();
      dec.append_token(vocab.ss());
      dec.append(z);
      Eigen::RowVectorXf l;
      for (int t : bar) l = dec.append_token(t);
      return l;
    };
    Eigen::RowVectorXf logits;
    if (dec.length() + block.rows + 1 > cap) {
      logits = restart();
    } else {
      dec.append(z);
      logits = dec.append_token(vocab.bar_start());
    }
    TokenClass prev = TokenClass::kBar;
    while (true) {
      const int room = budget - static_cast<int>(bar.size());  // tokens left including Bar_end
      if (room <= 1) break;
      std::vector<bool> allowed(static_cast<std::size_t>(V), false);
      for (int id = 0; id < V; ++id) {
        const TokenClass c = cls_of(id);
        bool ok = false;
        if (prev == TokenClass::kPitch) {
          ok = c == TokenClass::kDuration;
        } else if (prev == TokenClass::kDuration) {
          ok = c == TokenClass::kVelocity;
        } else {
          switch (c) {
            case TokenClass::kPosition:
            case TokenClass::kTempo:
            case TokenClass::kChord:
              ok = true;
              break;
            case TokenClass::kPitch:
              ok = room >= 4;  // a whole note triple plus Bar_end
              break;
            case TokenClass::kBar:
              ok = id == vocab.bar_end();
              break;
            default:
              ok = false;
          }
        }
        allowed[static_cast<std::size_t>(id)] = ok;
      }
      const int id = pick(logits, allowed, sc, rng);
      bar.push_back(id);
      if (id == vocab.bar_end()) break;
      prev = cls_of(id);
      logits = dec.length() + 1 > cap ? restart() : dec.append_token(id);
    }
    if (bar.back() != vocab.bar_end()) bar.push_back(vocab.bar_end());
    if (dec.length() + 1 > cap) {
      dec.reset();
      dec.append_token(vocab.ss());
    } else {
      dec.append_token(vocab.bar_end());
    }
    const std::size_t start = out.ids.size();
    out.ids.insert(out.ids.end(), bar.begin(), bar.end());
    out.bar_spans.emplace_back(start, out.ids.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_floats(std::ofstream& f, const Matrix<float>& m) {
  f.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

void read_floats(std::ifstream& f, Matrix<float>& m, const fs::path& path) {
  f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!f) throw Error(ErrorCode::kIo, "truncated tensor payload in " + path.string());
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ck, const fs::path& dir) {
  ModelCheckpoint copy = ck;
  auto tensors = copy.params.tensors();
  nlohmann::json manifest;
  manifest["format"] = "covergen-checkpoint";
  manifest["version"] = COVERGEN_VERSION;
  manifest["dtype"] = "float32";
  manifest["stage"] = checkpoint_stage_name(ck.stage);
  manifest["step"] = ck.step;
  manifest["seed"] = ck.seed;
  manifest["config"] = ck.config;
  manifest["config_hash"] = config_hash(ck.config);
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (auto& t : tensors) {
    table.push_back({{"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(t.value->size()) * sizeof(float);
  }
  manifest["tensors"] = table;
  if (ck.optimizer) manifest["optimizer"] = {{"kind", "adam"}, {"step", ck.optimizer->step}, {"file", "optimizer.bin"}};

  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const fs::path tmp = parent / (dir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream f(tmp / "manifest.json");
    f << manifest.dump(2) << "\n";
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + (tmp / "manifest.json").string());
  }
  {
    std::ofstream f(tmp / "params.bin", std::ios::binary);
    for (auto& t : tensors) write_floats(f, *t.value);
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + (tmp / "params.bin").string());
  }
  if (ck.optimizer) {
    std::ofstream f(tmp / "optimizer.bin", std::ios::binary);
    for (std::size_t k = 0; k < ck.optimizer->m.size(); ++k) {
      write_floats(f, ck.optimizer->m[k]);
      write_floats(f, ck.optimizer->v[k]);
    }
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + (tmp / "optimizer.bin").string());
  }
  const fs::path old = parent / (dir.filename().string() + ".old");
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

ModelCheckpoint load_checkpoint(const fs::path& dir, const std::optional<ModelConfig>& expected) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw Error(ErrorCode::kIo, "cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, "malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("dtype", "") != "float32") throw Error(ErrorCode::kUnsupported, "checkpoint dtype must be float32");
  ModelCheckpoint ck;
  ck.config = manifest.at("config").get<ModelConfig>();
  ck.config.validate();
  const std::string stored_hash = manifest.value("config_hash", "");
  if (stored_hash != config_hash(ck.config)) {
    throw Error(ErrorCode::kState, "checkpoint config hash " + stored_hash + " does not match its config");
  }
  if (expected && config_hash(*expected) != stored_hash) {
    throw Error(ErrorCode::kState,
                "checkpoint config hash " + stored_hash + " differs from expected " + config_hash(*expected));
  }
  ck.stage = parse_stage(manifest.at("stage").get<std::string>());
  ck.step = manifest.at("step").get<long long>();
  ck.seed = manifest.at("seed").get<std::uint64_t>();
  ck.params = init_model<float>(ck.config, 0);
  auto tensors = ck.params.tensors();
  const auto& table = manifest.at("tensors");
  if (table.size() != tensors.size()) throw Error(ErrorCode::kShapeMismatch, "checkpoint tensor count mismatch");
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& e = table[k];
    if (e.at("name").get<std::string>() != tensors[k].name || e.at("rows").get<Eigen::Index>() != tensors[k].value->rows() ||
        e.at("cols").get<Eigen::Index>() != tensors[k].value->cols()) {
      throw Error(ErrorCode::kShapeMismatch, "checkpoint tensor " + e.at("name").get<std::string>() + " mismatch");
    }
  }
  {
    std::ifstream f(dir / "params.bin", std::ios::binary);
    if (!f) throw Error(ErrorCode::kIo, "cannot open " + (dir / "params.bin").string());
    for (auto& t : tensors) read_floats(f, *t.value, dir / "params.bin");
  }
  if (manifest.contains("optimizer")) {
    AdamState st;
    st.step = manifest["optimizer"].at("step").get<long long>();
    std::ifstream f(dir / "optimizer.bin", std::ios::binary);
    if (!f) throw Error(ErrorCode::kIo, "cannot open " + (dir / "optimizer.bin").string());
    for (auto& t : tensors) {
      Matrix<float> m(t.value->rows(), t.value->cols()), v(t.value->rows(), t.value->cols());
      read_floats(f, m, dir / "optimizer.bin");
      read_floats(f, v, dir / "optimizer.bin");
      st.m.push_back(std::move(m));
      st.v.push_back(std::move(v));
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

#define COVERGEN_INSTANTIATE(T)                                                                                \
  template struct ModelParams<T>;                                                                              \
  template ModelParams<T> init_model<T>(const ModelConfig&, std::uint64_t);                                    \
  template ModelParams<T> zero_like<T>(const ModelParams<T>&);                                                 \
  template ModelParams<T> cast_params<T>(const ModelParams<float>&);                                           \
  template Matrix<T> forward<T>(const ModelParams<T>&, const ModelConfig&, const TrainingSegment&);            \
  template double masked_cross_entropy<T>(const Matrix<T>&, const std::vector<int>&, const std::vector<bool>&, \
                                          Matrix<T>*);                                                         \
  template double loss_and_grad<T>(const ModelParams<T>&, const ModelConfig&, const TrainingSegment&, T,       \
                                   ModelParams<T>&, std::mt19937_64*);

COVERGEN_INSTANTIATE(float)
COVERGEN_INSTANTIATE(double)
#undef COVERGEN_INSTANTIATE

}  // namespace covergen
