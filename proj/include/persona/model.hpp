#pragma once

#include "persona/autodiff.hpp"
#include "persona/spectral.hpp"
#include "persona/types.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace persona::nn {

struct ModelConfig {
  int d_model = 32;
  int heads = 4;
  double dropout = 0.1;
  int output_dim = 5;  // 5 traits, 15 facets, or 60 nuances
  std::uint64_t seed = 0;

  static constexpr int kBins = spectral::kBins;
  static constexpr int kBlocksPerParticipant = kModalityCount;
  static constexpr int kFfnMultiplier = 4;

  void validate() const;
};

// Named parameter tensors; iteration order is the map's (lexicographic), which
// keeps initialization and optimizer traversal deterministic.
struct ParameterSet {
  std::map<std::string, Matrix> tensors;

  ParameterSet zeros_like() const;
  double squared_norm() const;
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
};

struct DyadInput {
  std::array<spectral::SpectralMap, kModalityCount> target;  // kAllModalities order
  std::array<spectral::SpectralMap, kModalityCount> partner;

  void validate() const;
};

// Plain (non-tape) scaled dot-product attention: softmax(Q K^T / sqrt(d)) V.
Matrix scaled_dot_attention(const Matrix& Q, const Matrix& K, const Matrix& V);
ad::Var scaled_dot_attention(ad::Var Q, ad::Var K, ad::Var V);

Matrix sinusoidal_positional_encoding(int rows, int d_model);

// Creates tape leaves for named parameters on demand and reads their
// gradients back after backward().
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ParameterSet& params) : tape_(&tape), params_(&params) {}

  ad::Var operator[](const std::string& name);
  void accumulate_gradients(ParameterSet& grads) const;
  ad::Tape& tape() { return *tape_; }

 private:
  ad::Tape* tape_;
  const ParameterSet* params_;
  std::map<std::string, ad::Var> bound_;
};

// Dropout context: no rng means evaluation mode (identity).
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

struct AttentionParams {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormParams {
  ad::Var gain, bias;
};

struct FfnParams {
  ad::Var w1, b1, w2, b2;
};

// One pre-layer-norm residual block; cross-attention blocks carry a second
// layer norm for the key/value stream.
struct BlockParams {
  LayerNormParams ln_q;
  LayerNormParams ln_kv;  // cross blocks only; unused for self blocks
  AttentionParams att;
  LayerNormParams ln_f;
  FfnParams ffn;
};

ad::Var multi_head_attention(ad::Var q_in, ad::Var kv_in, const AttentionParams& p, int heads);
ad::Var self_attention_block(ad::Var x, const BlockParams& p, int heads, const Dropout& drop = {});
ad::Var cross_modal_block(ad::Var target_mod, const std::vector<ad::Var>& others, const BlockParams& p,
                          int heads, const Dropout& drop = {});

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const ModelConfig& config, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Binds a block's parameters by prefix, e.g. "target.gaze.self".
  BlockParams bind_block(ParamBinder& bind, const std::string& prefix, bool with_kv_ln) const;

  // Projects maps to d_model, adds positional encoding, applies the
  // cross-modal and self-attention block per modality, and sums the streams.
  ad::Var encode_participant(ParamBinder& bind, const std::string& role,
                             const std::array<spectral::SpectralMap, kModalityCount>& maps,
                             const Dropout& drop = {}) const;

  // Full dyad forward: prediction is a 1 x output_dim row.
  ad::Var forward(ParamBinder& bind, const DyadInput& dyad, const Dropout& drop = {}) const;

  // Evaluation-mode prediction (dropout off), optionally clamped to the
  // Likert range.
  Vector predict(const DyadInput& dyad, bool clamp_to_likert = false) const;

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  static ParameterSet init_parameters(const ModelConfig& config);
  static std::vector<std::string> parameter_names(const ModelConfig& config);

 private:
  ModelConfig config_;
  ParameterSet params_;
};

}  // namespace persona::nn
