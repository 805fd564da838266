// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "mgmrn/backbone.hpp"
#include "mgmrn/datamodel.hpp"
#include "mgmrn/mrm.hpp"
#include "mgmrn/objective.hpp"
#include "mgmrn/rfm.hpp"
#include "mgmrn/vsd.hpp"

namespace mgmrn {

/// The full network: backbone taps -> region mining -> cross-granularity
/// refinement -> per-stage semantic decoding. The `baseline` variant decodes
/// the deepest backbone tap directly; `mgm` adds region mining and per-stage
/// decoding; `full` adds the refinement module.
template <class Scalar>
struct Model {
  ModelConfig config;
  Index image_h = 0, image_w = 0, image_c = 0;
  Index d_s = 0, d_w2v = 0;
  Matrix<Scalar> w_att;  // [d_s x d_w2v], fixed attribute word vectors

  Backbone<Scalar> backbone;
  Rfm<Scalar> rfm;
  Mrm<Scalar> mrm;
  std::vector<SemanticDecoder<Scalar>> decoders;

  struct Output {
    std::vector<Matrix<Scalar>> z;          // per decoded stage [B x d_s]
    std::vector<Matrix<Scalar>> attention;  // per decoded stage [B*d_s x T_l]
    std::vector<Index> token_counts;
    std::vector<Matrix<Scalar>> region_masks;  // per backbone stage (mgm/full only)
    std::vector<std::pair<Index, Index>> mask_grids;
    Index grid_h = 0, grid_w = 0;  // spatial layout of the decoded tokens
  };

  static Model build(const ModelConfig& cfg, const MatrixF& word_vectors, Index img_h, Index img_w,
                     Index img_c) {
    cfg.validate();
    Model m;
    m.config = cfg;
    m.image_h = img_h;
    m.image_w = img_w;
    m.image_c = img_c;
    m.d_s = word_vectors.rows();
    m.d_w2v = word_vectors.cols();
    m.w_att = word_vectors.template cast<Scalar>();

    const auto widths = cfg.stage_widths();
    m.backbone = Backbone<Scalar>(img_c, widths);
    m.backbone.validate_input(img_h, img_w);

    const Index l_n = cfg.num_stages;
    const Index deep_h = img_h >> l_n, deep_w = img_w >> l_n;
    Index grid_h = cfg.grid_h > 0 ? cfg.grid_h : deep_h;
    Index grid_w = cfg.grid_w > 0 ? cfg.grid_w : deep_w;
    check(grid_h >= 1 && grid_w >= 1, "model: common grid must be positive");
    check(grid_h <= deep_h && grid_w <= deep_w,
          "model: common grid exceeds the deepest stage grid");

    if (cfg.variant == ModelVariant::baseline) {
      m.decoders.emplace_back(m.d_w2v, widths.back(), cfg.d_model, cfg.heads);
      return m;
    }

    const auto parts = cfg.stage_parts();
    m.rfm.out_h = grid_h;
    m.rfm.out_w = grid_w;
    for (Index l = 0; l < l_n; ++l)
      m.rfm.stages.emplace_back(parts[static_cast<std::size_t>(l)],
                                widths[static_cast<std::size_t>(l)], cfg.common_channels);
    if (cfg.variant == ModelVariant::full) m.mrm = Mrm<Scalar>(l_n, cfg.common_channels);
    for (Index l = 0; l < l_n; ++l)
      m.decoders.emplace_back(m.d_w2v, cfg.common_channels, cfg.d_model, cfg.heads);
    return m;
  }

  /// Sequential initialization from one stream.
  void init(Rng& rng) {
    backbone.init(rng);
    for (auto& st : rfm.stages) st.init(rng);
    mrm.init(rng);
    for (auto& dec : decoders) dec.init(rng);
  }

  /// Per-component initialization: every module draws from a stream derived
  /// from (seed, module path), so components shared between variants start
  /// from identical weights.
  void init(std::uint64_t seed) {
    {
      Rng r(derive_seed(seed, "backbone"));
      backbone.init(r);
    }
    for (std::size_t l = 0; l < rfm.stages.size(); ++l) {
      Rng r(derive_seed(seed, "rfm/stage" + std::to_string(l + 1)));
      rfm.stages[l].init(r);
    }
    for (std::size_t l = 0; l < mrm.stages.size(); ++l) {
      Rng r(derive_seed(seed, "mrm/stage" + std::to_string(l + 1)));
      mrm.stages[l].context_proj.init(
          1.0 / std::sqrt(static_cast<double>(mrm.stages[l].context_proj.in_features())), r);
      mrm.stages[l].gate.init(r);
    }
    for (std::size_t l = 0; l < decoders.size(); ++l) {
      Rng r(derive_seed(seed, "vsd/stage" + std::to_string(l + 1)));
      decoders[l].init(r);
    }
  }

  Index decoded_stages() const { return static_cast<Index>(decoders.size()); }

  Output forward(const Tensor4<Scalar>& images) {
    check(images.height == image_h && images.width == image_w && images.channels == image_c,
          "model: image shape mismatch");
    Output out;
    std::vector<Tensor4<Scalar>> taps = backbone.forward(images);
    tap_shapes_.clear();
    for (const auto& t : taps) tap_shapes_.push_back({t.height, t.width, t.channels});

    std::vector<TokenMatrix<Scalar>> tokens;
    if (config.variant == ModelVariant::baseline) {
      out.grid_h = taps.back().height;
      out.grid_w = taps.back().width;
      tokens.push_back(augment_tokens(taps.back()));
    } else {
      auto mined = rfm.forward(taps);
      out.region_masks = std::move(mined.masks);
      out.mask_grids = std::move(mined.mask_grids);
      out.grid_h = rfm.out_h;
      out.grid_w = rfm.out_w;
      if (config.variant == ModelVariant::full) {
        tokens = mrm.forward(mined.unified);
      } else {
        for (const auto& g : mined.unified) tokens.push_back(augment_tokens(g));
      }
    }

    for (Index l = 0; l < decoded_stages(); ++l) {
      auto pred = decoders[static_cast<std::size_t>(l)].forward(tokens[static_cast<std::size_t>(l)],
                                                                w_att);
      out.z.push_back(std::move(pred.z));
      out.attention.push_back(std::move(pred.attention));
      out.token_counts.push_back(tokens[static_cast<std::size_t>(l)].tokens);
    }
    return out;
  }

  void backward(const std::vector<Matrix<Scalar>>& dz) {
    check(static_cast<Index>(dz.size()) == decoded_stages(), "model: dz stage count mismatch");
    std::vector<TokenMatrix<Scalar>> dtokens;
    for (Index l = 0; l < decoded_stages(); ++l)
      dtokens.push_back(
          decoders[static_cast<std::size_t>(l)].backward(dz[static_cast<std::size_t>(l)], w_att));

    const Index l_n = config.num_stages;
    std::vector<Tensor4<Scalar>> dtaps;
    if (config.variant == ModelVariant::baseline) {
      for (Index l = 0; l + 1 < l_n; ++l) {
        const auto& s = tap_shapes_[static_cast<std::size_t>(l)];
        dtaps.push_back(Tensor4<Scalar>::zero(dtokens[0].batch, s[0], s[1], s[2]));
      }
      const auto& s = tap_shapes_.back();
      Tensor4<Scalar> dtap(dtokens[0].batch, s[0], s[1], s[2]);
      dtap.data = dtokens[0].data;
      dtaps.push_back(std::move(dtap));
    } else {
      std::vector<Tensor4<Scalar>> dgs;
      if (config.variant == ModelVariant::full) {
        dgs = mrm.backward(dtokens);
      } else {
        for (Index l = 0; l < l_n; ++l) {
          Tensor4<Scalar> dg(dtokens[static_cast<std::size_t>(l)].batch, rfm.out_h, rfm.out_w,
                             config.common_channels);
          dg.data = dtokens[static_cast<std::size_t>(l)].data;
          dgs.push_back(std::move(dg));
        }
      }
      dtaps = rfm.backward(dgs);
    }
    backbone.backward(std::move(dtaps));
  }

  ParamList<Scalar> params() {
    ParamList<Scalar> out;
    backbone.params(out, "backbone");
    rfm.params(out, "rfm");
    mrm.params(out, "mrm");
    for (std::size_t l = 0; l < decoders.size(); ++l)
      decoders[l].params(out, "vsd/stage" + std::to_string(l + 1));
    return out;
  }

  void zero_grads() {
    for (auto& p : params()) p.grad->setZero();
  }

  /// Name of the first parameter holding a non-finite value, or empty.
  std::string first_nonfinite_param() {
    for (auto& p : params())
      if (!p.value->allFinite()) return p.name;
    return {};
  }

 private:
  std::vector<std::array<Index, 3>> tap_shapes_;
};

}  // namespace mgmrn
