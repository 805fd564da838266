// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mgmrn/backbone.hpp"
#include "mgmrn/numerics.hpp"

using namespace mgmrn;

TEST_CASE("stage grids halve and channels grow") {
  Backbone<float> net(3, {16, 32, 64});
  Rng rng(1);
  net.init(rng);
  Tensor4F images(2, 64, 64, 3);
  fill_normal(images.data, 1.0, rng);
  auto taps = net.forward(images);
  REQUIRE(taps.size() == 3);
  CHECK(taps[0].height == 32);
  CHECK(taps[0].width == 32);
  CHECK(taps[0].channels == 16);
  CHECK(taps[1].height == 16);
  CHECK(taps[1].channels == 32);
  CHECK(taps[2].height == 8);
  CHECK(taps[2].channels == 64);
  for (const auto& t : taps) CHECK(t.all_finite());
}

TEST_CASE("indivisible input size is a configuration error") {
  Backbone<float> net(1, {4, 8});
  CHECK_THROWS_AS(net.validate_input(10, 10), std::invalid_argument);
  CHECK_NOTHROW(net.validate_input(12, 12));
}

TEST_CASE("zero input with zero biases produces zero maps") {
  Backbone<float> net(2, {4, 6});
  Rng rng(2);
  net.init(rng);  // biases stay zero
  Tensor4F images = Tensor4F::zero(1, 8, 8, 2);
  auto taps = net.forward(images);
  CHECK(taps[0].data.cwiseAbs().maxCoeff() == 0.0f);
  CHECK(taps[1].data.cwiseAbs().maxCoeff() == 0.0f);
}

namespace {

struct BackboneHarness {
  Backbone<double> net{2, {3, 4}};
  Tensor4D images{1, 8, 8, 2};
  std::vector<MatrixD> readout;

  BackboneHarness() {
    Rng rng(5);
    net.init(rng);
    for (auto& stage : net.stages) {
      fill_normal(stage.conv.bias, 0.1, rng);
      fill_normal(stage.down.bias, 0.1, rng);
    }
    fill_normal(images.data, 1.0, rng);
    readout.push_back(MatrixD(4 * 4, 3));
    readout.push_back(MatrixD(2 * 2, 4));
    fill_normal(readout[0], 1.0, rng);
    fill_normal(readout[1], 1.0, rng);
  }

  double forward_scalar() {
    auto taps = net.forward(images);
    return (taps[0].data.array() * readout[0].array()).sum() +
           (taps[1].data.array() * readout[1].array()).sum();
  }
  void compute_grads() {
    ParamList<double> ps;
    net.params(ps, "backbone");
    for (auto& p : ps) p.grad->setZero();
    auto taps = net.forward(images);
    std::vector<Tensor4D> dtaps;
    for (std::size_t l = 0; l < taps.size(); ++l) {
      Tensor4D d = taps[l];
      d.data = readout[l];
      dtaps.push_back(std::move(d));
    }
    net.backward(std::move(dtaps));
  }
};

}  // namespace

TEST_CASE("backbone gradients match finite differences") {
  BackboneHarness h;
  ParamList<double> ps;
  h.net.params(ps, "backbone");
  auto report = grad_check(
      ps, [&h] { return h.forward_scalar(); }, [&h] { h.compute_grads(); });
  CHECK(report.max_rel_err() < 1e-5);
}

TEST_CASE("each stage checks independently") {
  Rng rng(6);
  for (int stage_channels : {3, 5}) {
    Backbone<double> net(2, {stage_channels});
    net.init(rng);
    Tensor4D x(1, 4, 4, 2);
    fill_normal(x.data, 1.0, rng);
    MatrixD w(2 * 2, stage_channels);
    fill_normal(w, 1.0, rng);

    ParamList<double> ps;
    net.params(ps, "stage");
    auto forward_scalar = [&] { return (net.forward(x)[0].data.array() * w.array()).sum(); };
    auto compute = [&] {
      for (auto& p : ps) p.grad->setZero();
      auto taps = net.forward(x);
      Tensor4D d = taps[0];
      d.data = w;
      net.backward({d});
    };
    auto report = grad_check(ps, forward_scalar, compute);
    CHECK(report.max_rel_err() < 1e-5);
  }
}

TEST_CASE("backward returns an image gradient of the right shape") {
  BackboneHarness h;
  auto taps = h.net.forward(h.images);
  std::vector<Tensor4D> dtaps;
  for (std::size_t l = 0; l < taps.size(); ++l) {
    Tensor4D d = taps[l];
    d.data = h.readout[l];
    dtaps.push_back(std::move(d));
  }
  Tensor4D dimages = h.net.backward(std::move(dtaps));
  CHECK(dimages.same_shape(h.images));
  CHECK(dimages.all_finite());
}
