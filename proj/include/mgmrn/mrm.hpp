// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mgmrn/nn.hpp"

namespace mgmrn {

/// Spatial and channel gating of a context feature. The spatial gate is a
/// sigmoid over a single-channel 3x3 convolution; the channel gate is a
/// sigmoid over a squeeze-excite bottleneck on globally average-pooled
/// features. Both gates multiply the input elementwise.
template <class Scalar>
struct SpatialChannelGate {
  Conv2d<Scalar> spatial;  // C -> 1
  Linear<Scalar> squeeze;  // C -> bottleneck
  Linear<Scalar> excite;   // bottleneck -> C

  SpatialChannelGate() = default;
  SpatialChannelGate(Index channels, Index bottleneck)
      : spatial(channels, 1, 3, 1, 1), squeeze(channels, bottleneck), excite(bottleneck, channels) {}

  static Index default_bottleneck(Index channels) {
    return std::min(channels, std::max<Index>(4, channels / 4));
  }

  /// Gates start mostly closed (sigmoid(-2) ~ 0.12) so a stage first learns
  /// from its own features and opens the context only where the loss asks.
  void init(Rng& rng) {
    spatial.init(1.0 / std::sqrt(static_cast<double>(spatial.weight.rows())), rng);
    squeeze.init(1.0 / std::sqrt(static_cast<double>(squeeze.in_features())), rng);
    excite.init(1.0 / std::sqrt(static_cast<double>(excite.in_features())), rng);
    spatial.bias.setConstant(Scalar(-2));
    excite.bias.setConstant(Scalar(-2));
  }

  struct Gates {
    Matrix<Scalar> spatial_gate;  // [B*H*W x 1], entries in (0,1)
    Matrix<Scalar> channel_gate;  // [B x C], entries in (0,1)
  };

  Tensor4<Scalar> forward(const Tensor4<Scalar>& s) {
    input_ = s;
    spatial_gate_ = sigmoid(spatial.forward(s).data);

    gap_.setZero(s.batch, s.channels);
    const Scalar inv_sites = Scalar(1) / static_cast<Scalar>(s.sites());
    for (Index b = 0; b < s.batch; ++b) gap_.row(b) = inv_sites * s.item(b).colwise().sum();
    hidden_pre_ = squeeze.forward(gap_);
    Matrix<Scalar> hidden = hidden_pre_.cwiseMax(Scalar(0));
    channel_gate_ = sigmoid(excite.forward(hidden));

    Tensor4<Scalar> out = s;
    for (Index b = 0; b < s.batch; ++b) {
      auto block = out.item(b);
      block.array().colwise() *= spatial_gate_.col(0).segment(b * s.sites(), s.sites()).array();
      block.array().rowwise() *= channel_gate_.row(b).array();
    }
    return out;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& dout) {
    const Tensor4<Scalar>& s = input_;
    const Index sites = s.sites();

    Tensor4<Scalar> ds = dout;
    Matrix<Scalar> dspatial_gate(s.rows(), 1);
    Matrix<Scalar> dchannel_gate(s.batch, s.channels);
    for (Index b = 0; b < s.batch; ++b) {
      auto sg = spatial_gate_.col(0).segment(b * sites, sites);
      auto dblock = ds.item(b);
      auto sblock = s.item(b);
      auto doutb = dout.item(b);

      Matrix<Scalar> s_times_cg = sblock;
      s_times_cg.array().rowwise() *= channel_gate_.row(b).array();
      dspatial_gate.col(0).segment(b * sites, sites) =
          (doutb.array() * s_times_cg.array()).rowwise().sum();

      Matrix<Scalar> s_times_sg = sblock;
      s_times_sg.array().colwise() *= sg.array();
      dchannel_gate.row(b) = (doutb.array() * s_times_sg.array()).colwise().sum();

      dblock.array().colwise() *= sg.array();
      dblock.array().rowwise() *= channel_gate_.row(b).array();
    }

    // Spatial gate path.
    Tensor4<Scalar> dconv(s.batch, s.height, s.width, 1);
    dconv.data = dspatial_gate.cwiseProduct(
        (spatial_gate_.array() * (Scalar(1) - spatial_gate_.array())).matrix());
    ds.data += spatial.backward(dconv).data;

    // Channel gate path.
    Matrix<Scalar> dexc = dchannel_gate.cwiseProduct(
        (channel_gate_.array() * (Scalar(1) - channel_gate_.array())).matrix());
    Matrix<Scalar> dhidden = excite.backward(dexc);
    dhidden = dhidden.cwiseProduct((hidden_pre_.array() > Scalar(0)).template cast<Scalar>().matrix());
    Matrix<Scalar> dgap = squeeze.backward(dhidden);
    const Scalar inv_sites = Scalar(1) / static_cast<Scalar>(sites);
    for (Index b = 0; b < s.batch; ++b)
      ds.item(b).rowwise() += inv_sites * dgap.row(b);
    return ds;
  }

  Gates last_gates() const { return {spatial_gate_, channel_gate_}; }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    spatial.params(out, prefix + "/spatial");
    squeeze.params(out, prefix + "/squeeze");
    excite.params(out, prefix + "/excite");
  }

 private:
  Tensor4<Scalar> input_;
  Matrix<Scalar> spatial_gate_;
  Matrix<Scalar> channel_gate_;
  Matrix<Scalar> gap_;
  Matrix<Scalar> hidden_pre_;
};

/// Channel concatenation of the unified features of all stages deeper than l
/// (shallowest of those first), projected back to C channels per site.
template <class Scalar>
Matrix<Scalar> concat_deeper(const std::vector<Tensor4<Scalar>>& g, std::size_t l) {
  check(l + 1 < g.size(), "concat_deeper: deepest stage has no deeper context");
  const Index rows = g[l + 1].rows();
  const Index c = g[l + 1].channels;
  Matrix<Scalar> out(rows, static_cast<Index>(g.size() - l - 1) * c);
  for (std::size_t k = l + 1; k < g.size(); ++k) {
    check(g[k].rows() == rows && g[k].channels == c, "concat_deeper: stage shape mismatch");
    out.middleCols(static_cast<Index>(k - l - 1) * c, c) = g[k].data;
  }
  return out;
}

/// Stacks the flattened site rows of the current stage and the gated context
/// into one token matrix: 2*H*W tokens of width C.
template <class Scalar>
TokenMatrix<Scalar> augment_tokens(const Tensor4<Scalar>& g, const Tensor4<Scalar>& gated) {
  check(g.same_shape(gated), "augment_tokens: shape mismatch between stage and context");
  TokenMatrix<Scalar> out(g.batch, 2 * g.sites(), g.channels);
  for (Index b = 0; b < g.batch; ++b) {
    out.item(b).topRows(g.sites()) = g.item(b);
    out.item(b).bottomRows(g.sites()) = gated.item(b);
  }
  return out;
}

/// Token matrix of the deepest stage: the flattened sites alone.
template <class Scalar>
TokenMatrix<Scalar> augment_tokens(const Tensor4<Scalar>& g) {
  TokenMatrix<Scalar> out(g.batch, g.sites(), g.channels);
  out.data = g.data;
  return out;
}

/// Cross-granularity refinement: every stage below the deepest receives a
/// projected concatenation of all deeper stages, gated spatially and per
/// channel, and appended to its own tokens.
template <class Scalar>
struct Mrm {
  struct Stage {
    Linear<Scalar> context_proj;  // (L - l)*C -> C
    SpatialChannelGate<Scalar> gate;
  };
  std::vector<Stage> stages;  // L-1 entries, stage l in [0, L-1)

  Mrm() = default;
  Mrm(Index num_stages, Index channels) {
    for (Index l = 0; l + 1 < num_stages; ++l) {
      Stage st;
      st.context_proj = Linear<Scalar>((num_stages - l - 1) * channels, channels);
      st.gate = SpatialChannelGate<Scalar>(channels,
                                           SpatialChannelGate<Scalar>::default_bottleneck(channels));
      stages.push_back(std::move(st));
    }
  }

  void init(Rng& rng) {
    for (auto& st : stages) {
      st.context_proj.init(1.0 / std::sqrt(static_cast<double>(st.context_proj.in_features())), rng);
      st.gate.init(rng);
    }
  }

  std::vector<TokenMatrix<Scalar>> forward(const std::vector<Tensor4<Scalar>>& g) {
    check(g.size() == stages.size() + 1, "mrm: stage count mismatch");
    grids_.assign(g.size(), {0, 0});
    for (std::size_t l = 0; l < g.size(); ++l) grids_[l] = {g[l].height, g[l].width};
    std::vector<TokenMatrix<Scalar>> tokens;
    for (std::size_t l = 0; l + 1 < g.size(); ++l) {
      Matrix<Scalar> ctx = concat_deeper(g, l);
      Tensor4<Scalar> s = g[l];
      s.data = stages[l].context_proj.forward(ctx);
      Tensor4<Scalar> gated = stages[l].gate.forward(s);
      tokens.push_back(augment_tokens(g[l], gated));
    }
    tokens.push_back(augment_tokens(g.back()));
    return tokens;
  }

  std::vector<Tensor4<Scalar>> backward(const std::vector<TokenMatrix<Scalar>>& dtokens) {
    const std::size_t levels = stages.size() + 1;
    check(dtokens.size() == levels, "mrm: dtokens size mismatch");
    std::vector<Tensor4<Scalar>> dg;
    for (std::size_t l = 0; l < levels; ++l) {
      dg.emplace_back(Tensor4<Scalar>::zero(dtokens[l].batch, grids_[l].first, grids_[l].second,
                                            dtokens[l].channels));
    }
    // Deepest stage: tokens are its flattened sites.
    dg.back().data += dtokens.back().data;

    for (std::size_t l = 0; l + 1 < levels; ++l) {
      const auto& dt = dtokens[l];
      const Index sites = dg[l].sites();
      Tensor4<Scalar> dgated(dt.batch, grids_[l].first, grids_[l].second, dt.channels);
      for (Index b = 0; b < dt.batch; ++b) {
        dg[l].item(b) += dt.item(b).topRows(sites);
        dgated.item(b) = dt.item(b).bottomRows(sites);
      }
      Tensor4<Scalar> ds = stages[l].gate.backward(dgated);
      Matrix<Scalar> dctx = stages[l].context_proj.backward(ds.data);
      const Index c = dg[l].channels;
      for (std::size_t k = l + 1; k < levels; ++k)
        dg[k].data += dctx.middleCols(static_cast<Index>(k - l - 1) * c, c);
    }
    return dg;
  }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    for (std::size_t l = 0; l < stages.size(); ++l) {
      const std::string p = prefix + "/stage" + std::to_string(l + 1);
      stages[l].context_proj.params(out, p + "/context");
      stages[l].gate.params(out, p + "/gate");
    }
  }

 private:
  std::vector<std::pair<Index, Index>> grids_;
};

}  // namespace mgmrn
