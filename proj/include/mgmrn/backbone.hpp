// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mgmrn/nn.hpp"

namespace mgmrn {

/// One downsampling stage: 3x3 conv (stride 1) + bias + ReLU, then a 3x3
/// stride-2 conv that halves the grid.
template <class Scalar>
struct BackboneStage {
  Conv2d<Scalar> conv;
  Relu<Scalar> relu;
  Conv2d<Scalar> down;

  BackboneStage() = default;
  BackboneStage(Index in_ch, Index out_ch)
      : conv(in_ch, out_ch, 3, 1, 1), down(out_ch, out_ch, 3, 2, 1) {}

  void init(Rng& rng) {
    conv.init(1.0 / std::sqrt(static_cast<double>(conv.weight.rows())), rng);
    down.init(1.0 / std::sqrt(static_cast<double>(down.weight.rows())), rng);
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x) {
    return down.forward(relu.forward(conv.forward(x)));
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& dy) {
    return conv.backward(relu.backward(down.backward(dy)));
  }
  void params(ParamList<Scalar>& out, const std::string& prefix) {
    conv.params(out, prefix + "/conv");
    down.params(out, prefix + "/down");
  }
};

/// L-stage convolutional extractor behind a stride-1 stem. Stage l (1-based)
/// emits a feature map at 1/2^l of the input grid with non-decreasing channel
/// width. The stem widens the first stage's receptive field so the shallow
/// tap carries more than raw colors.
template <class Scalar>
struct Backbone {
  Conv2d<Scalar> stem;
  Relu<Scalar> stem_relu;
  std::vector<BackboneStage<Scalar>> stages;

  Backbone() = default;
  Backbone(Index in_channels, const std::vector<int>& widths) {
    check(!widths.empty(), "backbone: need at least one stage");
    stem = Conv2d<Scalar>(in_channels, widths.front(), 3, 1, 1);
    Index ch = widths.front();
    for (int w : widths) {
      stages.emplace_back(ch, static_cast<Index>(w));
      ch = w;
    }
  }

  Index num_stages() const { return static_cast<Index>(stages.size()); }
  Index cumulative_stride() const { return Index(1) << num_stages(); }

  void init(Rng& rng) {
    stem.init(1.0 / std::sqrt(static_cast<double>(stem.weight.rows())), rng);
    for (auto& s : stages) s.init(rng);
  }

  /// Checks the divisibility precondition for a given input grid.
  void validate_input(Index height, Index width) const {
    const Index s = cumulative_stride();
    check(height % s == 0 && width % s == 0,
          "backbone: input spatial size must be divisible by " + std::to_string(s));
  }

  /// Returns one feature map per stage, shallowest first.
  std::vector<Tensor4<Scalar>> forward(const Tensor4<Scalar>& images) {
    validate_input(images.height, images.width);
    std::vector<Tensor4<Scalar>> taps;
    taps.reserve(stages.size());
    Tensor4<Scalar> x = stem_relu.forward(stem.forward(images));
    const Tensor4<Scalar>* cur = &x;
    for (auto& stage : stages) {
      taps.push_back(stage.forward(*cur));
      cur = &taps.back();
    }
    return taps;
  }

  /// dtaps[l] is the gradient flowing into the stage-l output from consumers
  /// other than stage l+1. Returns the gradient w.r.t. the input images.
  Tensor4<Scalar> backward(std::vector<Tensor4<Scalar>> dtaps) {
    check(dtaps.size() == stages.size(), "backbone: dtaps size mismatch");
    Tensor4<Scalar> g = std::move(dtaps.back());
    for (Index l = num_stages() - 1; l >= 1; --l) {
      Tensor4<Scalar> gx = stages[static_cast<std::size_t>(l)].backward(g);
      g = std::move(dtaps[static_cast<std::size_t>(l - 1)]);
      g.data += gx.data;
    }
    Tensor4<Scalar> gstem = stages.front().backward(g);
    return stem.backward(stem_relu.backward(gstem));
  }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    stem.params(out, prefix + "/stem");
    for (std::size_t l = 0; l < stages.size(); ++l)
      stages[l].params(out, prefix + "/stage" + std::to_string(l + 1));
  }
};

}  // namespace mgmrn
