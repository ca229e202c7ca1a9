#pragma once

// Contrastive pre-training losses plus the masked-reconstruction ablation
// objective and the downstream mixture prediction loss. All losses are graph
// tensors; the in-batch positives sit on the diagonal of the similarity
// matrix.

#include <vector>

#include "pretram/model.hpp"
#include "pretram/ops.hpp"

namespace pretram {

template <class Real>
struct ContrastiveBatch {
  Tensor<Real> traj_embeds;   // [N_traj, d_e], unit rows
  Tensor<Real> map_embeds;    // [N_traj, d_e], row i paired with traj row i
  Tensor<Real> mcl_embeds_a;  // [N_map, d_e], first dropout pass
  Tensor<Real> mcl_embeds_b;  // [N_map, d_e], second dropout pass
  Tensor<Real> inv_tau_traj;  // [1], exp of the learned log temperature
  Tensor<Real> inv_tau_map;   // [1]
};

namespace detail {

inline std::vector<int> diagonal_labels(int n) {
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i;
  return labels;
}

}  // namespace detail

// symmetric cross-entropy over the similarity matrix: the mean of the
// row-wise (trajectory -> map) and column-wise (map -> trajectory) losses
template <class Real>
Tensor<Real> tmcl_loss(const ContrastiveBatch<Real>& batch) {
  const Tensor<Real>& a = batch.traj_embeds;
  const Tensor<Real>& b = batch.map_embeds;
  if (a.rank() != 2 || b.rank() != 2 || a.shape != b.shape)
    throw ShapeError("tmcl_loss: paired embeddings must match, got " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  const int n = a.shape[0];
  Tensor<Real> logits = scale_by(matmul_nt(a, b), batch.inv_tau_traj);
  const auto labels = detail::diagonal_labels(n);
  Tensor<Real> loss_traj = cross_entropy_rows(logits, labels);
  Tensor<Real> loss_map = cross_entropy_rows(transpose(logits), labels);
  return scale(add(loss_traj, loss_map), Real(0.5));
}

// one-directional cross-entropy between the two dropout passes of the same
// patches
template <class Real>
Tensor<Real> mcl_loss(const ContrastiveBatch<Real>& batch) {
  const Tensor<Real>& a = batch.mcl_embeds_a;
  const Tensor<Real>& b = batch.mcl_embeds_b;
  if (a.rank() != 2 || b.rank() != 2 || a.shape != b.shape)
    throw ShapeError("mcl_loss: pass embeddings must match, got " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.shape[0] < 2) throw ShapeError("mcl_loss: needs at least 2 patches, got " + std::to_string(a.shape[0]));
  Tensor<Real> logits = scale_by(matmul_nt(a, b), batch.inv_tau_map);
  return cross_entropy_rows(logits, detail::diagonal_labels(a.shape[0]));
}

template <class Real>
Tensor<Real> pretram_loss(const ContrastiveBatch<Real>& batch, Real lambda) {
  if (lambda < Real(0)) throw ShapeError("pretram_loss: lambda must be >= 0");
  return add(tmcl_loss(batch), scale(mcl_loss(batch), lambda));
}

// ---------------------------------------------------------------------------
// masked trajectory modeling (ablation objective)
// ---------------------------------------------------------------------------

struct MtmMasks {
  // per sample, per timestep; true means the step's (x, y, v) were zeroed
  std::vector<std::vector<bool>> masked;
  size_t masked_entries = 0;
};

inline MtmMasks draw_mtm_masks(int n, double mask_ratio, uint64_t seed) {
  if (!(mask_ratio > 0.0) || mask_ratio >= 1.0) throw ShapeError("mtm: mask_ratio must be in (0,1)");
  Rng rng(hash_u64(seed, 0x6d746d));
  MtmMasks m;
  m.masked.assign(static_cast<size_t>(n), std::vector<bool>(kHistSteps, false));
  for (int i = 0; i < n; ++i) {
    auto& row = m.masked[static_cast<size_t>(i)];
    int count = 0;
    do {  // all-masked and none-masked draws are resampled
      count = 0;
      for (int t = 0; t < kHistSteps; ++t) {
        row[static_cast<size_t>(t)] = rng.bernoulli(mask_ratio);
        if (row[static_cast<size_t>(t)]) ++count;
      }
    } while (count == 0 || count == kHistSteps);
    m.masked_entries += static_cast<size_t>(count) * 3;
  }
  return m;
}

// reconstruct masked (x, y, v) entries from the pooled trajectory feature;
// mean squared error over masked entries only
template <class Real>
Tensor<Real> mtm_loss(const PretramModel<Real>& model, const std::vector<NormalizedHistory>& hists,
                      double mask_ratio, uint64_t seed) {
  if (hists.empty()) throw ShapeError("mtm_loss: empty batch");
  const int n = static_cast<int>(hists.size());
  const MtmMasks masks = draw_mtm_masks(n, mask_ratio, seed);

  Tensor<Real> input = history_batch_tensor<Real>(hists);
  Tensor<Real> target = Tensor<Real>::zeros({n, kHistSteps * 3});
  Tensor<Real> weight = Tensor<Real>::zeros({n, kHistSteps * 3});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < kHistSteps; ++t) {
      const double* row = hists[static_cast<size_t>(i)].row(t);
      Real* tgt = target.ptr() + (static_cast<size_t>(i) * kHistSteps + t) * 3;
      tgt[0] = static_cast<Real>(row[0]);
      tgt[1] = static_cast<Real>(row[1]);
      tgt[2] = static_cast<Real>(row[4]);
      if (masks.masked[static_cast<size_t>(i)][static_cast<size_t>(t)]) {
        Real* in = input.ptr() + (static_cast<size_t>(i) * kHistSteps + t) * kTrajFeatures;
        in[0] = Real(0);                     // x
        in[1] = Real(0);                     // y
        in[4] = Real(0);                     // v
        in[kTrajFeatures - 1] = Real(1);     // mask indicator
        Real* w = weight.ptr() + (static_cast<size_t>(i) * kHistSteps + t) * 3;
        w[0] = w[1] = w[2] = Real(1);
      }
    }

  Tensor<Real> pred = model.mtm(model.traj_encoder.forward(input));
  Tensor<Real> diff = sub(pred, target);
  Tensor<Real> masked_sq = mul(mul(diff, diff), weight);
  return scale(sum_all(masked_sq), Real(1) / static_cast<Real>(masks.masked_entries));
}

// ---------------------------------------------------------------------------
// downstream prediction (variety loss over K modes)
// ---------------------------------------------------------------------------

template <class Real>
struct PredictionLoss {
  Tensor<Real> loss;
  std::vector<int> best_mode;  // argmin of mean L2 per sample
};

// displacement chains become trajectories; regression on the best mode plus
// a mode-classification term at weight 0.5
template <class Real>
PredictionLoss<Real> prediction_loss(const typename PredictionHead<Real>::Output& pred,
                                     const Tensor<Real>& gt_future) {
  const int n = pred.displacements.shape[0];
  const int k = pred.logits.shape[1];
  if (k < 1) throw ShapeError("prediction_loss: need at least one mode");
  const int t2 = kFutLen * 2;
  if (pred.displacements.shape[1] != k * t2)
    throw ShapeError("prediction_loss: displacement width " + shape_str(pred.displacements.shape) +
                     " does not match " + std::to_string(k) + " modes");
  if (gt_future.shape != Shape{n, t2})
    throw ShapeError("prediction_loss: ground truth must be [n," + std::to_string(t2) + "], got " +
                     shape_str(gt_future.shape));

  // per-mode trajectory points from the displacement chains
  Tensor<Real> points = reshape(cumsum_xy(reshape(pred.displacements, {n * k, t2})), {n, k * t2});

  std::vector<int> best(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    double best_err = 0;
    for (int m = 0; m < k; ++m) {
      double err = 0;
      const Real* p = points.ptr() + static_cast<size_t>(i) * k * t2 + static_cast<size_t>(m) * t2;
      const Real* g = gt_future.ptr() + static_cast<size_t>(i) * t2;
      for (int s = 0; s < kFutLen; ++s) {
        const double dx = static_cast<double>(p[2 * s]) - static_cast<double>(g[2 * s]);
        const double dy = static_cast<double>(p[2 * s + 1]) - static_cast<double>(g[2 * s + 1]);
        err += std::sqrt(dx * dx + dy * dy);
      }
      if (m == 0 || err < best_err) {
        best_err = err;
        best[static_cast<size_t>(i)] = m;
      }
    }
  }

  Tensor<Real> selected = select_blocks(points, best, t2);
  Tensor<Real> reg = mean_pointwise_l2(selected, gt_future);
  Tensor<Real> ce = cross_entropy_rows(pred.logits, best);
  PredictionLoss<Real> out;
  out.loss = add(reg, scale(ce, Real(0.5)));
  out.best_mode = std::move(best);
  return out;
}

}  // namespace pretram
