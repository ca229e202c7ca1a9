#pragma once

// The parameter-bearing graph: convolutional map encoder with in-encoder
// dropout, timewise-MLP trajectory encoder with mean pooling (optional
// single-head self-attention), linear projection heads with learned
// temperatures, and the downstream mixture prediction head.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "pretram/adam.hpp"
#include "pretram/checkpoint.hpp"
#include "pretram/ops.hpp"
#include "pretram/patch.hpp"
#include "pretram/rng.hpp"
#include "pretram/tensor.hpp"

namespace pretram {

struct ModelConfig {
  int context_px = 64;
  std::vector<int> conv_channels = {16, 32, 32, 64};
  int d_map = 128;
  int d_traj = 128;
  int d_embed = 64;
  int mlp_width = 64;
  int pred_width = 128;
  int k_modes = 10;
  double dropout_p = 0.1;
  bool use_attention = false;
  double init_tau = 0.07;
};

// history rows carry the 6 agent-frame features plus a mask-indicator column
// (zero outside masked-reconstruction pre-training)
inline constexpr int kTrajFeatures = NormalizedHistory::kFeatures + 1;
inline constexpr int kHistSteps = kHistLen + 1;

namespace init {

// Xavier-uniform draws from a stream derived of (seed, parameter index)
template <class Real>
Tensor<Real> xavier(const Shape& shape, int fan_in, int fan_out, uint64_t seed, uint64_t index) {
  Rng rng(hash_u64(seed, 0x77696e69, index));
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<Real>::uniform(shape, rng, -lim, lim, true);
}

}  // namespace init

template <class Real>
struct Linear {
  Parameter<Real> weight, bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, uint64_t seed, uint64_t index)
      : weight(name + ".weight", init::xavier<Real>({in, out}, in, out, seed, index)),
        bias(name + ".bias", Tensor<Real>::zeros({out}, true)) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const { return add_bias(matmul(x, weight.value), bias.value); }

  void collect(std::vector<Parameter<Real>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class Real>
struct ConvLayer {
  Parameter<Real> weight, bias;

  ConvLayer() = default;
  ConvLayer(const std::string& name, int ci, int co, uint64_t seed, uint64_t index)
      : weight(name + ".weight", init::xavier<Real>({co, ci, 3, 3}, ci * 9, co * 9, seed, index)),
        bias(name + ".bias", Tensor<Real>::zeros({co}, true)) {}

  void collect(std::vector<Parameter<Real>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// 4-stage strided convolution body, dropout after each post-activation,
// flatten, linear to d_map
template <class Real>
class MapEncoder {
 public:
  MapEncoder() = default;
  MapEncoder(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    int ci = 3;
    int spatial = cfg.context_px;
    for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      const int co = cfg.conv_channels[i];
      convs_.emplace_back("map_encoder.conv" + std::to_string(i + 1), ci, co, seed, 10 + i);
      ci = co;
      spatial = (spatial - 1) / 2 + 1;
    }
    flat_dim_ = ci * spatial * spatial;
    fc_ = Linear<Real>("map_encoder.fc", flat_dim_, cfg.d_map, seed, 20);
  }

  // x is [n, 3, C, C] scaled to [0,1]; distinct mask seeds realize the
  // distinct dropout masks of the two contrastive passes
  Tensor<Real> forward(const Tensor<Real>& x, uint64_t mask_seed, bool training) const {
    if (x.rank() != 4 || x.shape[1] != 3 || x.shape[2] != cfg_.context_px || x.shape[3] != cfg_.context_px)
      throw ShapeError("encode_map: expected [n,3," + std::to_string(cfg_.context_px) + "," +
                       std::to_string(cfg_.context_px) + "], got " + shape_str(x.shape));
    Tensor<Real> h = x;
    for (size_t i = 0; i < convs_.size(); ++i) {
      h = relu(conv2d(h, convs_[i].weight.value, convs_[i].bias.value, 2, 1));
      h = dropout(h, DropoutMask{hash_u64(mask_seed, i), 1.0 - cfg_.dropout_p}, training);
    }
    return fc_(reshape(h, {x.shape[0], flat_dim_}));
  }

  void collect(std::vector<Parameter<Real>*>& out) {
    for (auto& c : convs_) c.collect(out);
    fc_.collect(out);
  }

  int flat_dim() const { return flat_dim_; }

 private:
  ModelConfig cfg_;
  std::vector<ConvLayer<Real>> convs_;
  Linear<Real> fc_;
  int flat_dim_ = 0;
};

// shared per-timestep MLP, optional single-head self-attention, mean pooling
// over time, projection MLP to d_traj
template <class Real>
class TrajectoryEncoder {
 public:
  TrajectoryEncoder() = default;
  TrajectoryEncoder(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    const int w = cfg.mlp_width;
    step1_ = Linear<Real>("traj_encoder.step1", kTrajFeatures, w, seed, 30);
    step2_ = Linear<Real>("traj_encoder.step2", w, w, seed, 31);
    if (cfg.use_attention) {
      attn_q_ = Linear<Real>("traj_encoder.attn_q", w, w, seed, 32);
      attn_k_ = Linear<Real>("traj_encoder.attn_k", w, w, seed, 33);
      attn_v_ = Linear<Real>("traj_encoder.attn_v", w, w, seed, 34);
      attn_o_ = Linear<Real>("traj_encoder.attn_o", w, w, seed, 35);
    }
    head1_ = Linear<Real>("traj_encoder.head1", w, w, seed, 36);
    head2_ = Linear<Real>("traj_encoder.head2", w, cfg.d_traj, seed, 37);
  }

  // x is [n, kHistSteps, kTrajFeatures]
  Tensor<Real> forward(const Tensor<Real>& x) const {
    if (x.rank() != 3 || x.shape[1] != kHistSteps || x.shape[2] != kTrajFeatures)
      throw ShapeError("encode_trajectory: expected [n," + std::to_string(kHistSteps) + "," +
                       std::to_string(kTrajFeatures) + "], got " + shape_str(x.shape));
    const int n = x.shape[0];
    Tensor<Real> h = reshape(x, {n * kHistSteps, kTrajFeatures});
    h = relu(step1_(h));
    h = relu(step2_(h));
    if (cfg_.use_attention) {
      const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(cfg_.mlp_width));
      Tensor<Real> scores = scale(block_matmul_nt(attn_q_(h), attn_k_(h), n), inv_sqrt);
      Tensor<Real> ctx = block_matmul(softmax_rows(scores), attn_v_(h), n);
      h = add(h, attn_o_(ctx));
    }
    h = mean_over_axis(reshape(h, {n, kHistSteps, cfg_.mlp_width}), 1);
    h = relu(head1_(h));
    return head2_(h);
  }

  void collect(std::vector<Parameter<Real>*>& out) {
    step1_.collect(out);
    step2_.collect(out);
    if (cfg_.use_attention) {
      attn_q_.collect(out);
      attn_k_.collect(out);
      attn_v_.collect(out);
      attn_o_.collect(out);
    }
    head1_.collect(out);
    head2_.collect(out);
  }

 private:
  ModelConfig cfg_;
  Linear<Real> step1_, step2_, attn_q_, attn_k_, attn_v_, attn_o_, head1_, head2_;
};

enum class ProjectionHead { traj, map, mcl };

template <class Real>
class ProjectionHeads {
 public:
  ProjectionHeads() = default;
  ProjectionHeads(const ModelConfig& cfg, uint64_t seed)
      : w_traj_("proj.w_traj", init::xavier<Real>({cfg.d_traj, cfg.d_embed}, cfg.d_traj, cfg.d_embed, seed, 40)),
        w_map_("proj.w_map", init::xavier<Real>({cfg.d_map, cfg.d_embed}, cfg.d_map, cfg.d_embed, seed, 41)),
        w_mcl_("proj.w_mcl", init::xavier<Real>({cfg.d_map, cfg.d_embed}, cfg.d_map, cfg.d_embed, seed, 42)),
        log_inv_tau_traj_("proj.log_inv_tau_traj",
                          Tensor<Real>::scalar(static_cast<Real>(std::log(1.0 / cfg.init_tau)), true)),
        log_inv_tau_map_("proj.log_inv_tau_map",
                         Tensor<Real>::scalar(static_cast<Real>(std::log(1.0 / cfg.init_tau)), true)) {}

  Tensor<Real> project(const Tensor<Real>& features, ProjectionHead head) const {
    const Parameter<Real>& w = head == ProjectionHead::traj ? w_traj_ : head == ProjectionHead::map ? w_map_ : w_mcl_;
    if (features.rank() != 2 || features.shape[1] != w.value.shape[0])
      throw ShapeError("project: feature dim " + shape_str(features.shape) + " does not match head " +
                       shape_str(w.value.shape));
    return l2_normalize_rows(matmul(features, w.value));
  }

  Tensor<Real> inv_tau_traj() const { return exp_elem(log_inv_tau_traj_.value); }
  Tensor<Real> inv_tau_map() const { return exp_elem(log_inv_tau_map_.value); }

  double tau_traj() const { return 1.0 / std::exp(static_cast<double>(log_inv_tau_traj_.value.at(size_t{0}))); }
  double tau_map() const { return 1.0 / std::exp(static_cast<double>(log_inv_tau_map_.value.at(size_t{0}))); }

  // CLIP-style stability clamp, applied after every optimizer step
  void clamp_temperatures() {
    const Real lo = Real(0);                       // 1/tau >= 1
    const Real hi = static_cast<Real>(std::log(100.0));  // 1/tau <= 100
    for (Parameter<Real>* p : {&log_inv_tau_traj_, &log_inv_tau_map_}) {
      Real& v = (*p->value.data)[0];
      v = std::min(std::max(v, lo), hi);
    }
  }

  void collect(std::vector<Parameter<Real>*>& out) {
    out.push_back(&w_traj_);
    out.push_back(&w_map_);
    out.push_back(&w_mcl_);
    out.push_back(&log_inv_tau_traj_);
    out.push_back(&log_inv_tau_map_);
  }

 private:
  Parameter<Real> w_traj_, w_map_, w_mcl_, log_inv_tau_traj_, log_inv_tau_map_;
};

// masked-reconstruction head used by the masked-trajectory pre-training arm
template <class Real>
struct MtmHead {
  Linear<Real> l1, l2;

  MtmHead() = default;
  MtmHead(const ModelConfig& cfg, uint64_t seed)
      : l1("mtm.recon1", cfg.d_traj, cfg.mlp_width, seed, 50),
        l2("mtm.recon2", cfg.mlp_width, kHistSteps * 3, seed, 51) {}

  // predicts (x, y, v) per timestep from the pooled trajectory feature
  Tensor<Real> operator()(const Tensor<Real>& traj_feat) const { return l2(relu(l1(traj_feat))); }

  void collect(std::vector<Parameter<Real>*>& out) {
    l1.collect(out);
    l2.collect(out);
  }
};

// concat(traj feature, map feature) -> K modes of T_fut displacement steps
// plus K mode logits
template <class Real>
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(const ModelConfig& cfg, uint64_t seed)
      : k_(cfg.k_modes),
        body_("pred_head.body", cfg.d_traj + cfg.d_map, cfg.pred_width, seed, 60),
        disp_("pred_head.disp", cfg.pred_width, cfg.k_modes * kFutLen * 2, seed, 61),
        logit_("pred_head.logit", cfg.pred_width, cfg.k_modes, seed, 62) {}

  struct Output {
    Tensor<Real> displacements;  // [n, K * T_fut * 2]
    Tensor<Real> logits;         // [n, K]
  };

  Output forward(const Tensor<Real>& traj_feat, const Tensor<Real>& map_feat) const {
    Tensor<Real> h = relu(body_(concat_cols(traj_feat, map_feat)));
    return {disp_(h), logit_(h)};
  }

  int k_modes() const { return k_; }

  void collect(std::vector<Parameter<Real>*>& out) {
    body_.collect(out);
    disp_.collect(out);
    logit_.collect(out);
  }

 private:
  int k_ = 0;
  Linear<Real> body_, disp_, logit_;
};

// ---------------------------------------------------------------------------
// input assembly
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> patch_batch_tensor(const std::vector<MapPatch>& patches) {
  if (patches.empty()) throw ShapeError("patch_batch_tensor: empty batch");
  const int c = patches[0].context_px;
  Tensor<Real> x = Tensor<Real>::zeros({static_cast<int>(patches.size()), 3, c, c});
  Real* dst = x.ptr();
  const Real inv = Real(1) / Real(255);
  for (const MapPatch& p : patches) {
    if (p.context_px != c) throw ShapeError("patch_batch_tensor: mixed context sizes");
    // chw layout from the patch's interleaved rgb rows
    for (int ch = 0; ch < 3; ++ch)
      for (int py = 0; py < c; ++py)
        for (int px = 0; px < c; ++px)
          *dst++ = static_cast<Real>(p.pixels[(static_cast<size_t>(py) * c + px) * 3 + ch]) * inv;
  }
  return x;
}

template <class Real>
Tensor<Real> history_batch_tensor(const std::vector<NormalizedHistory>& hists) {
  if (hists.empty()) throw ShapeError("history_batch_tensor: empty batch");
  Tensor<Real> x = Tensor<Real>::zeros({static_cast<int>(hists.size()), kHistSteps, kTrajFeatures});
  Real* dst = x.ptr();
  for (const NormalizedHistory& h : hists) {
    if (h.steps() != kHistSteps) throw ShapeError("history_batch_tensor: wrong step count");
    for (int t = 0; t < kHistSteps; ++t) {
      const double* row = h.row(t);
      for (int f = 0; f < NormalizedHistory::kFeatures; ++f) *dst++ = static_cast<Real>(row[f]);
      *dst++ = Real(0);  // mask indicator
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

template <class Real>
struct PretramModel {
  ModelConfig cfg;
  MapEncoder<Real> map_encoder;
  TrajectoryEncoder<Real> traj_encoder;
  ProjectionHeads<Real> heads;
  MtmHead<Real> mtm;

  PretramModel(const ModelConfig& c, uint64_t seed)
      : cfg(c), map_encoder(c, seed), traj_encoder(c, seed), heads(c, seed), mtm(c, seed) {}

  std::vector<Parameter<Real>*> params() {
    std::vector<Parameter<Real>*> out;
    map_encoder.collect(out);
    traj_encoder.collect(out);
    heads.collect(out);
    mtm.collect(out);
    return out;
  }
};

template <class Real>
struct PredictorModel {
  ModelConfig cfg;
  MapEncoder<Real> map_encoder;
  TrajectoryEncoder<Real> traj_encoder;
  PredictionHead<Real> head;

  PredictorModel(const ModelConfig& c, uint64_t seed)
      : cfg(c), map_encoder(c, seed), traj_encoder(c, seed), head(c, seed) {}

  std::vector<Parameter<Real>*> params() {
    std::vector<Parameter<Real>*> out;
    map_encoder.collect(out);
    traj_encoder.collect(out);
    head.collect(out);
    return out;
  }
};

// ---------------------------------------------------------------------------
// checkpoint conversion and partial loading
// ---------------------------------------------------------------------------

enum class LoadSelector { all, trajectory_encoder_only, map_encoder_only };

inline std::vector<std::string> selector_prefixes(LoadSelector sel) {
  switch (sel) {
    case LoadSelector::all: return {"traj_encoder.", "map_encoder."};
    case LoadSelector::trajectory_encoder_only: return {"traj_encoder."};
    case LoadSelector::map_encoder_only: return {"map_encoder."};
  }
  return {};
}

template <class Real>
std::vector<NamedTensor> export_params(std::vector<Parameter<Real>*> params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const Parameter<Real>* p : params) {
    NamedTensor t;
    t.name = p->name;
    t.dims = p->value.shape;
    t.values.reserve(p->value.numel());
    for (Real v : *p->value.data) t.values.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
  return out;
}

// Loads every parameter whose name starts with one of the prefixes; any
// missing tensor or shape difference aborts with a per-tensor diff.
template <class Real>
void import_params(std::vector<Parameter<Real>*> params, const std::vector<NamedTensor>& tensors,
                   const std::vector<std::string>& prefixes) {
  std::vector<std::string> diffs;
  for (Parameter<Real>* p : params) {
    bool selected = prefixes.empty();
    for (const std::string& pre : prefixes)
      if (p->name.rfind(pre, 0) == 0) selected = true;
    if (!selected) continue;
    const NamedTensor* found = nullptr;
    for (const NamedTensor& t : tensors)
      if (t.name == p->name) {
        found = &t;
        break;
      }
    if (!found) {
      diffs.push_back("missing in checkpoint: " + p->name + " " + shape_str(p->value.shape));
      continue;
    }
    if (found->dims != p->value.shape) {
      diffs.push_back("shape mismatch: " + p->name + " model " + shape_str(p->value.shape) + " vs checkpoint " +
                      shape_str(found->dims));
      continue;
    }
    for (size_t i = 0; i < found->values.size(); ++i) (*p->value.data)[i] = static_cast<Real>(found->values[i]);
  }
  if (!diffs.empty()) {
    std::string msg = "checkpoint/model mismatch:";
    for (const std::string& d : diffs) msg += "\n  " + d;
    throw CheckpointMismatch(msg);
  }
}

}  // namespace pretram
