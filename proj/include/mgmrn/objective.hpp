// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mgmrn/nn.hpp"

namespace mgmrn {

constexpr double kCosineEps = 1e-12;

/// Cosine similarities between predicted attribute vectors and a fixed set of
/// class signatures, with the caches needed to backpropagate into z.
template <class Scalar>
struct CosineScores {
  Matrix<Scalar> scores;       // [B x K]
  Matrix<Scalar> z_normed;     // [B x d_s]
  Vector<Scalar> z_norms;      // guarded
  Matrix<Scalar> cand_normed;  // [K x d_s]
};

template <class Scalar>
CosineScores<Scalar> cosine_scores(const Matrix<Scalar>& z, const Matrix<Scalar>& candidates) {
  check(z.cols() == candidates.cols(), "cosine_scores: attribute dimension mismatch");
  CosineScores<Scalar> out;
  out.z_norms = z.rowwise().norm().cwiseMax(Scalar(kCosineEps));
  out.z_normed = z.array().colwise() / out.z_norms.array();
  Vector<Scalar> cnorms = candidates.rowwise().norm().cwiseMax(Scalar(kCosineEps));
  out.cand_normed = candidates.array().colwise() / cnorms.array();
  out.scores.noalias() = out.z_normed * out.cand_normed.transpose();
  return out;
}

template <class Scalar>
Matrix<Scalar> cosine_scores_backward(const CosineScores<Scalar>& cache,
                                      const Matrix<Scalar>& dscores) {
  Vector<Scalar> dot = (dscores.array() * cache.scores.array()).rowwise().sum();
  Matrix<Scalar> dz = dscores * cache.cand_normed;
  dz -= (cache.z_normed.array().colwise() * dot.array()).matrix();
  dz.array().colwise() /= cache.z_norms.array();
  return dz;
}

/// Maps class labels onto positions within a candidate id list; throws if a
/// label is not a candidate.
inline std::vector<Index> label_positions(const std::vector<int>& labels,
                                          const std::vector<int>& candidate_ids) {
  std::vector<Index> pos(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find(candidate_ids.begin(), candidate_ids.end(), labels[i]);
    if (it == candidate_ids.end())
      throw std::invalid_argument("label " + std::to_string(labels[i]) +
                                  " outside the candidate class set");
    pos[i] = it - candidate_ids.begin();
  }
  return pos;
}

template <class Scalar>
struct LossValue {
  Scalar value = Scalar(0);
  Matrix<Scalar> dz;  // [B x d_s]
};

/// Cross-entropy over cosine compatibility with the seen-class signatures,
/// evaluated at the true class and averaged over the batch. `tau` scales the
/// logits (tau = 1 leaves raw cosines).
template <class Scalar>
LossValue<Scalar> sce_loss(const Matrix<Scalar>& z, const Matrix<Scalar>& seen_signatures,
                           const std::vector<Index>& label_pos, Scalar tau) {
  check(tau > Scalar(0), "sce_loss: tau must be positive");
  check(static_cast<Index>(label_pos.size()) == z.rows(), "sce_loss: label count mismatch");
  CosineScores<Scalar> cos = cosine_scores(z, seen_signatures);
  Matrix<Scalar> logits = cos.scores / tau;

  const Index b_n = z.rows();
  LossValue<Scalar> out;
  Matrix<Scalar> probs = softmax_rows(logits);
  for (Index b = 0; b < b_n; ++b) {
    const Index y = label_pos[static_cast<std::size_t>(b)];
    check(y >= 0 && y < logits.cols(), "sce_loss: label position out of range");
    const Scalar mx = logits.row(b).maxCoeff();
    const Scalar lse = mx + std::log((logits.row(b).array() - mx).exp().sum());
    out.value += (lse - logits(b, y)) / static_cast<Scalar>(b_n);
    probs(b, y) -= Scalar(1);
  }
  Matrix<Scalar> dscores = probs / (tau * static_cast<Scalar>(b_n));
  out.dz = cosine_scores_backward(cos, dscores);
  return out;
}

/// Mean over the batch of the squared Euclidean distance to the true
/// signature.
template <class Scalar>
LossValue<Scalar> ar_loss(const Matrix<Scalar>& z, const Matrix<Scalar>& targets) {
  check(z.rows() == targets.rows() && z.cols() == targets.cols(), "ar_loss: shape mismatch");
  LossValue<Scalar> out;
  Matrix<Scalar> diff = z - targets;
  out.value = diff.squaredNorm() / static_cast<Scalar>(z.rows());
  out.dz = diff * (Scalar(2) / static_cast<Scalar>(z.rows()));
  return out;
}

template <class Scalar>
struct TotalLoss {
  Scalar value = Scalar(0);
  std::vector<Scalar> sce_per_stage;
  std::vector<Scalar> ar_per_stage;
  std::vector<Matrix<Scalar>> dz;  // per stage
};

/// Weighted sum of both losses over all stages (default weights 1, plain
/// sum).
template <class Scalar>
TotalLoss<Scalar> total_loss(const std::vector<Matrix<Scalar>>& z_stages,
                             const Matrix<Scalar>& seen_signatures,
                             const std::vector<Index>& label_pos,
                             const Matrix<Scalar>& targets, Scalar lambda_sce, Scalar lambda_ar,
                             Scalar tau) {
  check(!z_stages.empty(), "total_loss: need at least one stage");
  TotalLoss<Scalar> out;
  for (const auto& z : z_stages) {
    LossValue<Scalar> sce = sce_loss(z, seen_signatures, label_pos, tau);
    LossValue<Scalar> ar = ar_loss(z, targets);
    out.sce_per_stage.push_back(sce.value);
    out.ar_per_stage.push_back(ar.value);
    out.value += lambda_sce * sce.value + lambda_ar * ar.value;
    out.dz.push_back(lambda_sce * sce.dz + lambda_ar * ar.dz);
  }
  return out;
}

/// Per-class scores summed over stages and the resulting predictions.
template <class Scalar>
struct ClassScores {
  Matrix<Scalar> scores;           // [B x K]
  std::vector<int> candidate_ids;  // ascending
  std::vector<int> predictions;    // class ids
};

/// Sum of per-stage cosine similarities against each candidate signature;
/// prediction is the argmax, ties broken toward the smallest class id.
template <class Scalar>
ClassScores<Scalar> predict(const std::vector<Matrix<Scalar>>& z_stages,
                            const Matrix<Scalar>& class_attributes,
                            const std::vector<int>& candidate_ids) {
  check(!candidate_ids.empty(), "predict: empty candidate set");
  check(!z_stages.empty(), "predict: need at least one stage");
  std::vector<int> ids = candidate_ids;
  std::sort(ids.begin(), ids.end());

  Matrix<Scalar> cand(static_cast<Index>(ids.size()), class_attributes.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    check(ids[k] >= 0 && ids[k] < class_attributes.rows(), "predict: candidate id out of range");
    cand.row(static_cast<Index>(k)) = class_attributes.row(ids[k]);
  }

  ClassScores<Scalar> out;
  out.candidate_ids = ids;
  out.scores.setZero(z_stages.front().rows(), static_cast<Index>(ids.size()));
  for (const auto& z : z_stages) out.scores += cosine_scores(z, cand).scores;

  out.predictions.resize(static_cast<std::size_t>(out.scores.rows()));
  for (Index b = 0; b < out.scores.rows(); ++b) {
    Index best = 0;
    for (Index k = 1; k < out.scores.cols(); ++k)
      if (out.scores(b, k) > out.scores(b, best)) best = k;
    out.predictions[static_cast<std::size_t>(b)] = ids[static_cast<std::size_t>(best)];
  }
  return out;
}

}  // namespace mgmrn
