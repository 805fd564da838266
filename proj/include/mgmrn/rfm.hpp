// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mgmrn/nn.hpp"

namespace mgmrn {

/// Learnable region prototypes of one stage plus their smoothing factors.
/// Smoothing is parameterized as sigma = exp(log_smoothing) so it stays
/// positive under unconstrained updates.
template <class Scalar>
struct RegionPrototypeBank {
  Matrix<Scalar> prototypes;     // [M x C_l]
  Matrix<Scalar> log_smoothing;  // [1 x M]
  Matrix<Scalar> grad_prototypes;
  Matrix<Scalar> grad_log_smoothing;

  RegionPrototypeBank() = default;
  RegionPrototypeBank(Index parts, Index channels) {
    prototypes.setZero(parts, channels);
    log_smoothing.setZero(1, parts);
    grad_prototypes.setZero(parts, channels);
    grad_log_smoothing.setZero(1, parts);
  }

  Index parts() const { return prototypes.rows(); }
  Index channels() const { return prototypes.cols(); }

  void init(Rng& rng) {
    fill_normal(prototypes, 1.0 / std::sqrt(static_cast<double>(channels())), rng);
    log_smoothing.setZero();  // sigma = 1
  }

  Vector<Scalar> smoothing() const { return log_smoothing.row(0).array().exp(); }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + "/prototypes", &prototypes, &grad_prototypes});
    out.push_back({prefix + "/log_smoothing", &log_smoothing, &grad_log_smoothing});
  }
};

/// Soft assignment of every spatial site to the region prototypes, one
/// probability row per site. `scaled_sq` keeps the smoothed squared
/// distances for the backward pass.
template <class Scalar>
struct RegionMaskData {
  Matrix<Scalar> masks;      // [B*H*W x M], rows sum to 1
  Matrix<Scalar> scaled_sq;  // [B*H*W x M], d(s,m) = ||(f_s - r_m)/sigma_m||^2
};

/// Gaussian-kernel softmax over prototypes: the mask entry for site s and
/// prototype m is softmax_m(-d(s,m)/2), computed with per-site max
/// subtraction.
template <class Scalar>
RegionMaskData<Scalar> region_masks(const Tensor4<Scalar>& f,
                                    const RegionPrototypeBank<Scalar>& bank) {
  check(f.channels == bank.channels(), "region_masks: channel mismatch between feature and bank");
  const Vector<Scalar> inv2 =
      (Scalar(-2) * bank.log_smoothing.row(0).transpose().array()).exp();

  Vector<Scalar> fsq = f.data.rowwise().squaredNorm();
  Vector<Scalar> rsq = bank.prototypes.rowwise().squaredNorm();
  RegionMaskData<Scalar> out;
  out.scaled_sq.noalias() = Scalar(-2) * (f.data * bank.prototypes.transpose());
  out.scaled_sq.colwise() += fsq;
  out.scaled_sq.rowwise() += rsq.transpose();
  out.scaled_sq = out.scaled_sq.cwiseMax(Scalar(0));  // guard cancellation noise
  out.scaled_sq.array().rowwise() *= inv2.transpose().array();

  out.masks = softmax_rows(Matrix<Scalar>(Scalar(-0.5) * out.scaled_sq));
  return out;
}

/// Backpropagates through the soft assignment. Accumulates prototype and
/// smoothing gradients into the bank and returns the feature gradient.
template <class Scalar>
Matrix<Scalar> region_masks_backward(const Tensor4<Scalar>& f, RegionPrototypeBank<Scalar>& bank,
                                     const RegionMaskData<Scalar>& cache,
                                     const Matrix<Scalar>& dmasks) {
  const Vector<Scalar> inv2 =
      (Scalar(-2) * bank.log_smoothing.row(0).transpose().array()).exp();
  const Matrix<Scalar> dlogits = softmax_backward_rows(cache.masks, dmasks);
  const Matrix<Scalar> dsq = Scalar(-0.5) * dlogits;

  // d(scaled_sq)/d(log_smoothing) = -2 * scaled_sq
  bank.grad_log_smoothing.row(0) +=
      Scalar(-2) * (dsq.array() * cache.scaled_sq.array()).colwise().sum().matrix();

  Matrix<Scalar> beta = Scalar(2) * dsq;
  beta.array().rowwise() *= inv2.transpose().array();

  const Vector<Scalar> beta_row = beta.rowwise().sum();
  Matrix<Scalar> df = f.data;
  df.array().colwise() *= beta_row.array();
  df.noalias() -= beta * bank.prototypes;

  const Vector<Scalar> beta_col = beta.colwise().sum().transpose();
  bank.grad_prototypes.noalias() -= beta.transpose() * f.data;
  bank.grad_prototypes += beta_col.asDiagonal() * bank.prototypes;
  return df;
}

/// Mask-weighted average over prototypes. Each mask plane weights the full
/// feature map and the planes are averaged, preserving a spatial map.
template <class Scalar>
Tensor4<Scalar> aggregate_regions(const Tensor4<Scalar>& f, const Matrix<Scalar>& masks) {
  check(masks.rows() == f.rows(), "aggregate_regions: mask rows vs feature sites");
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(masks.cols());
  const Vector<Scalar> scale = inv_m * masks.rowwise().sum();
  Tensor4<Scalar> out = f;
  out.data.array().colwise() *= scale.array();
  return out;
}

template <class Scalar>
void aggregate_regions_backward(const Tensor4<Scalar>& f, const Matrix<Scalar>& masks,
                                const Tensor4<Scalar>& dout, Matrix<Scalar>& df,
                                Matrix<Scalar>& dmasks) {
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(masks.cols());
  const Vector<Scalar> scale = inv_m * masks.rowwise().sum();
  df = dout.data;
  df.array().colwise() *= scale.array();
  const Vector<Scalar> drow =
      inv_m * (dout.data.array() * f.data.array()).rowwise().sum().matrix();
  dmasks = drow.replicate(1, masks.cols());
}

/// Adaptive average pooling to the common grid followed by a learned 1x1
/// channel projection.
template <class Scalar>
Tensor4<Scalar> unify_shape(const Tensor4<Scalar>& x, Index out_h, Index out_w,
                            Linear<Scalar>& proj) {
  Tensor4<Scalar> pooled = adaptive_avg_pool(x, out_h, out_w);
  Tensor4<Scalar> out(pooled.batch, pooled.height, pooled.width, proj.out_features());
  out.data = proj.forward(pooled.data);
  return out;
}

template <class Scalar>
Tensor4<Scalar> unify_shape_backward(const Tensor4<Scalar>& dout, Index in_h, Index in_w,
                                     Linear<Scalar>& proj) {
  Tensor4<Scalar> dpooled(dout.batch, dout.height, dout.width, proj.in_features());
  dpooled.data = proj.backward(dout.data);
  return adaptive_avg_pool_backward(dpooled, in_h, in_w);
}

/// Region mining for one backbone stage: soft assignment, aggregation, and
/// shape unification onto the common grid.
template <class Scalar>
struct RfmStage {
  RegionPrototypeBank<Scalar> bank;
  Linear<Scalar> proj;  // C_l -> C

  RfmStage() = default;
  RfmStage(Index parts, Index in_channels, Index out_channels)
      : bank(parts, in_channels), proj(in_channels, out_channels) {}

  void init(Rng& rng) {
    bank.init(rng);
    proj.init(1.0 / std::sqrt(static_cast<double>(proj.in_features())), rng);
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& f, Index out_h, Index out_w) {
    input_ = f;
    mask_data_ = region_masks(f, bank);
    Tensor4<Scalar> ghat = aggregate_regions(f, mask_data_.masks);
    return unify_shape(ghat, out_h, out_w, proj);
  }

  /// `dmasks_extra` carries gradients flowing into the exported masks
  /// themselves (they are a second output of the stage).
  Tensor4<Scalar> backward(const Tensor4<Scalar>& dg,
                           const Matrix<Scalar>* dmasks_extra = nullptr) {
    Tensor4<Scalar> dghat = unify_shape_backward(dg, input_.height, input_.width, proj);
    Matrix<Scalar> df_agg, dmasks;
    aggregate_regions_backward(input_, mask_data_.masks, dghat, df_agg, dmasks);
    if (dmasks_extra) dmasks += *dmasks_extra;
    Tensor4<Scalar> df = input_;
    df.data = df_agg + region_masks_backward(input_, bank, mask_data_, dmasks);
    return df;
  }

  const RegionMaskData<Scalar>& last_masks() const { return mask_data_; }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    bank.params(out, prefix);
    proj.params(out, prefix + "/proj");
  }

 private:
  Tensor4<Scalar> input_;
  RegionMaskData<Scalar> mask_data_;
};

/// The full region mining pipeline over all stages.
template <class Scalar>
struct Rfm {
  std::vector<RfmStage<Scalar>> stages;
  Index out_h = 0, out_w = 0;

  struct Output {
    std::vector<Tensor4<Scalar>> unified;  // g_1..g_L on the common grid
    std::vector<Matrix<Scalar>> masks;     // per-stage [B*H_l*W_l x M_l]
    std::vector<std::pair<Index, Index>> mask_grids;
  };

  Output forward(const std::vector<Tensor4<Scalar>>& taps) {
    check(taps.size() == stages.size(), "rfm: stage count mismatch");
    Output out;
    for (std::size_t l = 0; l < stages.size(); ++l) {
      check(taps[l].height >= out_h && taps[l].width >= out_w,
            "rfm: common grid larger than stage grid");
      out.unified.push_back(stages[l].forward(taps[l], out_h, out_w));
      out.masks.push_back(stages[l].last_masks().masks);
      out.mask_grids.emplace_back(taps[l].height, taps[l].width);
    }
    return out;
  }

  std::vector<Tensor4<Scalar>> backward(const std::vector<Tensor4<Scalar>>& dgs,
                                        const std::vector<Matrix<Scalar>>* dmasks = nullptr) {
    std::vector<Tensor4<Scalar>> dtaps;
    for (std::size_t l = 0; l < stages.size(); ++l)
      dtaps.push_back(stages[l].backward(dgs[l], dmasks ? &(*dmasks)[l] : nullptr));
    return dtaps;
  }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    for (std::size_t l = 0; l < stages.size(); ++l)
      stages[l].params(out, prefix + "/stage" + std::to_string(l + 1));
  }
};

}  // namespace mgmrn
