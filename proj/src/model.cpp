#include "persona/model.hpp"

#include "persona/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace persona::nn {

using ad::Var;
using nlohmann::json;

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
    raise(errc::shape_mismatch, "d_model must be a positive multiple of heads");
  if (output_dim != 5 && output_dim != 15 && output_dim != 60)
    raise(errc::shape_mismatch, "output_dim must be 5, 15 or 60");
  if (dropout < 0.0 || dropout >= 1.0) raise(errc::invalid_bounds, "dropout must be in [0,1)");
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, m] : tensors) out.tensors.emplace(name, Matrix::Zero(m.rows(), m.cols()));
  return out;
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& [name, m] : tensors) s += m.squaredNorm();
  return s;
}

Matrix& ParameterSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) raise(errc::shape_mismatch, "unknown parameter tensor: " + name);
  return it->second;
}

const Matrix& ParameterSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) raise(errc::shape_mismatch, "unknown parameter tensor: " + name);
  return it->second;
}

void DyadInput::validate() const {
  for (int i = 0; i < kModalityCount; ++i) {
    for (const auto* side : {&target, &partner}) {
      const auto& map = (*side)[static_cast<size_t>(i)];
      if (map.modality != kAllModalities[i]) raise(errc::shape_mismatch, "dyad maps out of modality order");
      if (map.data.cols() != spectral::kBins) raise(errc::shape_mismatch, "dyad map must have 80 bins");
      if (map.data.rows() != channel_count(map.modality))
        raise(errc::shape_mismatch, "dyad map has wrong channel count for " + persona::to_string(map.modality));
      if (!map.data.allFinite()) raise(errc::non_finite, "dyad map contains NaN/Inf");
    }
  }
}

Matrix scaled_dot_attention(const Matrix& Q, const Matrix& K, const Matrix& V) {
  if (Q.cols() != K.cols() || K.rows() != V.rows())
    raise(errc::shape_mismatch, "scaled_dot_attention: Q/K/V shapes do not conform");
  if (Q.cols() < 1) raise(errc::shape_mismatch, "scaled_dot_attention: d must be >= 1");
  const double scale = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  Matrix scores = Q * K.transpose() * scale;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    Eigen::RowVectorXd e = (scores.row(r).array() - m).exp();
    scores.row(r) = e / e.sum();
  }
  return scores * V;
}

Var scaled_dot_attention(Var Q, Var K, Var V) {
  if (Q.cols() != K.cols() || K.rows() != V.rows())
    raise(errc::shape_mismatch, "scaled_dot_attention: Q/K/V shapes do not conform");
  const double scale = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  Var scores = ad::matmul_nt_scaled(Q, K, scale);
  return ad::matmul(ad::softmax_rows(scores), V);
}

Matrix sinusoidal_positional_encoding(int rows, int d_model) {
  Matrix pe(rows, d_model);
  for (int pos = 0; pos < rows; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Var ParamBinder::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = ad::leaf(*tape_, params_->at(name));
  bound_.emplace(name, v);
  return v;
}

void ParamBinder::accumulate_gradients(ParameterSet& grads) const {
  for (const auto& [name, var] : bound_) grads.at(name) += var.grad();
}

namespace {

Var apply_dropout(Var x, const Dropout& drop) {
  if (!drop.active()) return x;
  std::bernoulli_distribution keep(1.0 - drop.rate);
  Matrix mask(x.rows(), x.cols());
  const double inv_keep = 1.0 / (1.0 - drop.rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = keep(*drop.rng) ? inv_keep : 0.0;
  return ad::mul_const(x, mask);
}

Var feed_forward(Var x, const FfnParams& p) {
  Var h = ad::gelu(ad::affine(x, p.w1, p.b1));
  return ad::affine(h, p.w2, p.b2);
}

void check_finite(Var x, const char* where) {
  if (!x.value().allFinite()) raise(errc::non_finite, std::string(where) + ": non-finite activations");
}

}  // namespace

Var multi_head_attention(Var q_in, Var kv_in, const AttentionParams& p, int heads) {
  const Eigen::Index d = q_in.cols();
  if (kv_in.cols() != d) raise(errc::shape_mismatch, "multi_head_attention: query/key width mismatch");
  if (heads <= 0 || d % heads != 0) raise(errc::shape_mismatch, "multi_head_attention: d_model % heads != 0");
  const Eigen::Index dh = d / heads;

  Var Q = ad::affine(q_in, p.wq, p.bq);
  Var K = ad::affine(kv_in, p.wk, p.bk);
  Var V = ad::affine(kv_in, p.wv, p.bv);

  std::vector<Var> per_head;
  per_head.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::cols(Q, h * dh, dh);
    Var kh = ad::cols(K, h * dh, dh);
    Var vh = ad::cols(V, h * dh, dh);
    per_head.push_back(scaled_dot_attention(qh, kh, vh));
  }
  Var merged = heads == 1 ? per_head[0] : ad::hcat(per_head);
  return ad::affine(merged, p.wo, p.bo);
}

Var self_attention_block(Var x, const BlockParams& p, int heads, const Dropout& drop) {
  check_finite(x, "self_attention_block");
  Var normed = ad::layer_norm_rows(x, p.ln_q.gain, p.ln_q.bias);
  Var att = apply_dropout(multi_head_attention(normed, normed, p.att, heads), drop);
  Var h = ad::add(x, att);
  Var ff = apply_dropout(feed_forward(ad::layer_norm_rows(h, p.ln_f.gain, p.ln_f.bias), p.ffn), drop);
  return ad::add(h, ff);
}

Var cross_modal_block(Var target_mod, const std::vector<Var>& others, const BlockParams& p, int heads,
                      const Dropout& drop) {
  check_finite(target_mod, "cross_modal_block");
  for (const Var& o : others) {
    if (o.cols() != target_mod.cols()) raise(errc::shape_mismatch, "cross_modal_block: width mismatch");
    check_finite(o, "cross_modal_block");
  }
  if (others.empty()) raise(errc::shape_mismatch, "cross_modal_block: needs at least one source stream");

  Var q = ad::layer_norm_rows(target_mod, p.ln_q.gain, p.ln_q.bias);
  Var kv_stack = others.size() == 1 ? others[0] : ad::vcat(others);
  Var kv = ad::layer_norm_rows(kv_stack, p.ln_kv.gain, p.ln_kv.bias);
  Var att = apply_dropout(multi_head_attention(q, kv, p.att, heads), drop);
  Var h = ad::add(target_mod, att);
  Var ff = apply_dropout(feed_forward(ad::layer_norm_rows(h, p.ln_f.gain, p.ln_f.bias), p.ffn), drop);
  return ad::add(h, ff);
}

namespace {

const char* modality_tag(int i) {
  switch (kAllModalities[i]) {
    case Modality::ActionUnits: return "au";
    case Modality::Gaze: return "gaze";
    case Modality::HeadPose: return "pose";
    case Modality::Audio: return "audio";
  }
  return "?";
}

struct TensorSpec {
  std::string name;
  Eigen::Index rows, cols;
  enum Kind { Weight, Bias, LnGain, LnBias, HeadBias } kind;
};

void block_specs(std::vector<TensorSpec>& out, const std::string& prefix, int d, bool with_kv_ln) {
  const Eigen::Index dd = d;
  const Eigen::Index ff = static_cast<Eigen::Index>(ModelConfig::kFfnMultiplier) * d;
  out.push_back({prefix + ".ln_q.gain", 1, dd, TensorSpec::LnGain});
  out.push_back({prefix + ".ln_q.bias", 1, dd, TensorSpec::LnBias});
  if (with_kv_ln) {
    out.push_back({prefix + ".ln_kv.gain", 1, dd, TensorSpec::LnGain});
    out.push_back({prefix + ".ln_kv.bias", 1, dd, TensorSpec::LnBias});
  }
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({prefix + ".att." + w, dd, dd, TensorSpec::Weight});
  for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({prefix + ".att." + b, 1, dd, TensorSpec::Bias});
  out.push_back({prefix + ".ln_f.gain", 1, dd, TensorSpec::LnGain});
  out.push_back({prefix + ".ln_f.bias", 1, dd, TensorSpec::LnBias});
  out.push_back({prefix + ".ffn.w1", dd, ff, TensorSpec::Weight});
  out.push_back({prefix + ".ffn.b1", 1, ff, TensorSpec::Bias});
  out.push_back({prefix + ".ffn.w2", ff, dd, TensorSpec::Weight});
  out.push_back({prefix + ".ffn.b2", 1, dd, TensorSpec::Bias});
}

std::vector<TensorSpec> parameter_specs(const ModelConfig& cfg) {
  std::vector<TensorSpec> specs;
  const int d = cfg.d_model;
  for (const char* role : {"target", "partner"}) {
    for (int m = 0; m < kModalityCount; ++m) {
      const std::string base = std::string(role) + "." + modality_tag(m);
      specs.push_back({base + ".in.w", channel_count(kAllModalities[m]), d, TensorSpec::Weight});
      specs.push_back({base + ".in.b", 1, d, TensorSpec::Bias});
      block_specs(specs, base + ".cross", d, true);
      block_specs(specs, base + ".self", d, false);
    }
  }
  block_specs(specs, "cross_subject", d, true);
  specs.push_back({"head.w", d, cfg.output_dim, TensorSpec::Weight});
  specs.push_back({"head.b", 1, cfg.output_dim, TensorSpec::HeadBias});
  return specs;
}

}  // namespace

std::vector<std::string> Model::parameter_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& s : parameter_specs(cfg)) names.push_back(s.name);
  return names;
}

ParameterSet Model::init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  ParameterSet ps;
  for (const auto& spec : parameter_specs(cfg)) {
    Matrix m(spec.rows, spec.cols);
    switch (spec.kind) {
      case TensorSpec::Weight: {
        // Per-tensor RNG keyed by name: initialization does not depend on
        // tensor creation order.
        std::mt19937_64 rng(derive_seed(cfg.seed, spec.name));
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
        break;
      }
      case TensorSpec::Bias:
      case TensorSpec::LnBias:
        m.setZero();
        break;
      case TensorSpec::LnGain:
        m.setOnes();
        break;
      case TensorSpec::HeadBias:
        // Regression origin at the Likert midpoint.
        m.setConstant(3.0);
        break;
    }
    ps.tensors.emplace(spec.name, std::move(m));
  }
  return ps;
}

Model::Model(const ModelConfig& config) : config_(config), params_(init_parameters(config)) {
  config_.validate();
}

Model::Model(const ModelConfig& config, ParameterSet params) : config_(config), params_(std::move(params)) {
  config_.validate();
}

BlockParams Model::bind_block(ParamBinder& bind, const std::string& prefix, bool with_kv_ln) const {
  BlockParams p;
  p.ln_q = {bind[prefix + ".ln_q.gain"], bind[prefix + ".ln_q.bias"]};
  if (with_kv_ln) p.ln_kv = {bind[prefix + ".ln_kv.gain"], bind[prefix + ".ln_kv.bias"]};
  p.att = {bind[prefix + ".att.wq"], bind[prefix + ".att.bq"], bind[prefix + ".att.wk"],
           bind[prefix + ".att.bk"], bind[prefix + ".att.wv"], bind[prefix + ".att.bv"],
           bind[prefix + ".att.wo"], bind[prefix + ".att.bo"]};
  p.ln_f = {bind[prefix + ".ln_f.gain"], bind[prefix + ".ln_f.bias"]};
  p.ffn = {bind[prefix + ".ffn.w1"], bind[prefix + ".ffn.b1"], bind[prefix + ".ffn.w2"],
           bind[prefix + ".ffn.b2"]};
  return p;
}

Var Model::encode_participant(ParamBinder& bind, const std::string& role,
                              const std::array<spectral::SpectralMap, kModalityCount>& maps,
                              const Dropout& drop) const {
  const Matrix pe = sinusoidal_positional_encoding(ModelConfig::kBins, config_.d_model);

  std::vector<Var> streams;
  streams.reserve(kModalityCount);
  for (int m = 0; m < kModalityCount; ++m) {
    const auto& map = maps[static_cast<size_t>(m)];
    if (map.modality != kAllModalities[m]) raise(errc::shape_mismatch, "maps out of modality order");
    if (map.data.cols() != ModelConfig::kBins || map.data.rows() != channel_count(map.modality))
      raise(errc::shape_mismatch, "map shape mismatch for " + persona::to_string(map.modality));
    const std::string base = role + "." + modality_tag(m);
    Var x = ad::leaf(bind.tape(), map.data.transpose());  // bins x channels
    Var proj = ad::affine(x, bind[base + ".in.w"], bind[base + ".in.b"]);
    streams.push_back(ad::add_const(proj, pe));
  }

  Var acc{};
  for (int m = 0; m < kModalityCount; ++m) {
    std::vector<Var> others;
    for (int o = 0; o < kModalityCount; ++o)
      if (o != m) others.push_back(streams[static_cast<size_t>(o)]);
    const std::string base = role + "." + modality_tag(m);
    Var crossed = cross_modal_block(streams[static_cast<size_t>(m)], others,
                                    bind_block(bind, base + ".cross", true), config_.heads, drop);
    Var fused = self_attention_block(crossed, bind_block(bind, base + ".self", false), config_.heads, drop);
    acc = (m == 0) ? fused : ad::add(acc, fused);
  }
  return acc;
}

Var Model::forward(ParamBinder& bind, const DyadInput& dyad, const Dropout& drop) const {
  dyad.validate();
  Var enc_target = encode_participant(bind, "target", dyad.target, drop);
  Var enc_partner = encode_participant(bind, "partner", dyad.partner, drop);

  // Cross-subject attention: the target queries the partner's encoding.
  Var mixed = cross_modal_block(enc_target, {enc_partner}, bind_block(bind, "cross_subject", true),
                                config_.heads, drop);
  Var pooled = ad::mean_rows(mixed);
  return ad::affine(pooled, bind["head.w"], bind["head.b"]);
}

Vector Model::predict(const DyadInput& dyad, bool clamp_to_likert) const {
  ad::Tape tape;
  ParamBinder bind(tape, params_);
  Var pred = forward(bind, dyad, {});
  Vector out = pred.value().row(0).transpose();
  if (clamp_to_likert) out = out.cwiseMax(1.0).cwiseMin(5.0);
  return out;
}

void Model::save_checkpoint(const std::string& path) const {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : params_.tensors) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  const json header = {
      {"format", 1},
      {"seed", config_.seed},
      {"config",
       {{"d_model", config_.d_model},
        {"heads", config_.heads},
        {"dropout", config_.dropout},
        {"output_dim", config_.output_dim},
        {"seed", config_.seed}}},
      {"tensors", tensors},
  };
  const std::string header_text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) raise(errc::io_error, "cannot write checkpoint: " + path);
  const auto header_len = static_cast<std::uint32_t>(header_text.size());
  unsigned char len_bytes[4] = {
      static_cast<unsigned char>(header_len & 0xff), static_cast<unsigned char>((header_len >> 8) & 0xff),
      static_cast<unsigned char>((header_len >> 16) & 0xff), static_cast<unsigned char>((header_len >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(len_bytes), 4);
  f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, m] : params_.tensors) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const auto v = static_cast<float>(m(r, c));
        f.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
    }
  }
  if (!f) raise(errc::io_error, "short checkpoint write: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(errc::io_error, "cannot open checkpoint: " + path);
  unsigned char len_bytes[4];
  f.read(reinterpret_cast<char*>(len_bytes), 4);
  if (!f) raise(errc::io_error, "truncated checkpoint header: " + path);
  const std::uint32_t header_len = static_cast<std::uint32_t>(len_bytes[0]) |
                                   (static_cast<std::uint32_t>(len_bytes[1]) << 8) |
                                   (static_cast<std::uint32_t>(len_bytes[2]) << 16) |
                                   (static_cast<std::uint32_t>(len_bytes[3]) << 24);
  std::string header_text(header_len, '\0');
  f.read(header_text.data(), header_len);
  if (!f) raise(errc::io_error, "truncated checkpoint header: " + path);

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("bad checkpoint header: ") + e.what());
  }

  ModelConfig cfg;
  ParameterSet ps;
  try {
    const auto& c = header.at("config");
    cfg.d_model = c.at("d_model").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.dropout = c.at("dropout").get<double>();
    cfg.output_dim = c.at("output_dim").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    for (const auto& tj : header.at("tensors")) {
      const auto name = tj.at("name").get<std::string>();
      const auto rows = tj.at("rows").get<Eigen::Index>();
      const auto cols = tj.at("cols").get<Eigen::Index>();
      ps.tensors.emplace(name, Matrix::Zero(rows, cols));
    }
    // Payload order matches the tensor index order in the header.
    for (const auto& tj : header.at("tensors")) {
      Matrix& m = ps.at(tj.at("name").get<std::string>());
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          float v;
          f.read(reinterpret_cast<char*>(&v), sizeof(float));
          if (!f) raise(errc::io_error, "truncated checkpoint payload: " + path);
          m(r, c) = static_cast<double>(v);
        }
      }
    }
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("bad checkpoint schema: ") + e.what());
  }

  // Shape check against the config's expected layout.
  for (const auto& spec : parameter_specs(cfg)) {
    const Matrix& m = ps.at(spec.name);
    if (m.rows() != spec.rows || m.cols() != spec.cols)
      raise(errc::shape_mismatch, "checkpoint tensor " + spec.name + " has unexpected shape");
  }
  return Model(cfg, std::move(ps));
}

}  // namespace persona::nn
