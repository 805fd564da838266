// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mgmrn/numerics.hpp"
#include "mgmrn/rfm.hpp"

using namespace mgmrn;

TEST_CASE("a single prototype claims every site") {
  Tensor4D f(2, 3, 3, 4);
  Rng rng(1);
  fill_normal(f.data, 1.0, rng);
  RegionPrototypeBank<double> bank(1, 4);
  bank.init(rng);
  auto md = region_masks(f, bank);
  CHECK(md.masks.minCoeff() == 1.0);
  CHECK(md.masks.maxCoeff() == 1.0);
}

TEST_CASE("equidistant prototypes with equal smoothing split a site evenly") {
  Tensor4D f(1, 1, 1, 1);
  f.data(0, 0) = 1.0;
  RegionPrototypeBank<double> bank(2, 1);
  bank.prototypes << 0.0, 2.0;  // both at distance 1
  auto md = region_masks(f, bank);
  CHECK(md.masks(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(md.masks(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soft assignment matches the direct evaluation") {
  // C=1, f=0, prototypes (0, 2), sigma=(1, 1): squared distances (0, 4),
  // logits (0, -2).
  Tensor4D f = Tensor4D::zero(1, 1, 1, 1);
  RegionPrototypeBank<double> bank(2, 1);
  bank.prototypes << 0.0, 2.0;
  auto md = region_masks(f, bank);
  const double expected0 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(std::abs(md.masks(0, 0) - expected0) < 1e-12);
  CHECK(std::abs(md.masks(0, 1) - (1.0 - expected0)) < 1e-12);
  CHECK(md.masks(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(md.masks(0, 1) == doctest::Approx(0.1192).epsilon(1e-4));
}

TEST_CASE("mask rows sum to one on random inputs") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index parts = 1 + static_cast<Index>(rng.uniform_int(6));
    const Index channels = 1 + static_cast<Index>(rng.uniform_int(5));
    Tensor4D f(1 + static_cast<Index>(rng.uniform_int(2)), 3, 2, channels);
    fill_normal(f.data, 2.0, rng);
    RegionPrototypeBank<double> bank(parts, channels);
    bank.init(rng);
    fill_normal(bank.log_smoothing, 0.3, rng);
    auto md = region_masks(f, bank);
    for (Index r = 0; r < md.masks.rows(); ++r)
      CHECK(std::abs(md.masks.row(r).sum() - 1.0) < 1e-5);
    CHECK(md.masks.minCoeff() >= 0.0);
  }
}

TEST_CASE("channel mismatch is rejected") {
  Tensor4D f(1, 2, 2, 3);
  RegionPrototypeBank<double> bank(2, 4);
  CHECK_THROWS_AS(region_masks(f, bank), std::invalid_argument);
}

TEST_CASE("aggregation follows the mask-weighted mean") {
  SUBCASE("single all-ones mask is the identity") {
    Tensor4D f(1, 2, 2, 3);
    Rng rng(4);
    fill_normal(f.data, 1.0, rng);
    Matrix<double> masks = Matrix<double>::Ones(4, 1);
    CHECK(aggregate_regions(f, masks).data == f.data);
  }
  SUBCASE("uniform masks divide by the prototype count") {
    Tensor4D f(1, 2, 2, 3);
    Rng rng(5);
    fill_normal(f.data, 1.0, rng);
    Matrix<double> masks = Matrix<double>::Constant(4, 5, 0.2);
    Tensor4D out = aggregate_regions(f, masks);
    CHECK((out.data - f.data / 5.0).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("hand-evaluated single site") {
    Tensor4D f(1, 1, 1, 1);
    f.data(0, 0) = 3.0;
    Matrix<double> masks(1, 2);
    masks << 0.25, 0.75;
    CHECK(aggregate_regions(f, masks).data(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
  }
  SUBCASE("linear in the features for fixed masks") {
    Tensor4D f(2, 2, 2, 3);
    Rng rng(6);
    fill_normal(f.data, 1.0, rng);
    Matrix<double> masks(f.rows(), 3);
    fill_normal(masks, 1.0, rng);
    masks = masks.array().abs();
    Tensor4D scaled = f;
    scaled.data *= 2.5;
    CHECK((aggregate_regions(scaled, masks).data - 2.5 * aggregate_regions(f, masks).data)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("shape unification") {
  SUBCASE("identity projection on the target grid is the identity") {
    Tensor4D x(1, 2, 2, 3);
    Rng rng(7);
    fill_normal(x.data, 1.0, rng);
    Linear<double> proj(3, 3);
    proj.weight.setIdentity();
    Tensor4D out = unify_shape(x, 2, 2, proj);
    CHECK((out.data - x.data).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("constant maps pool to the same constant") {
    Tensor4D x(1, 4, 4, 2);
    x.data.setConstant(0.7);
    Linear<double> proj(2, 2);
    proj.weight.setIdentity();
    Tensor4D out = unify_shape(x, 2, 2, proj);
    CHECK(out.height == 2);
    CHECK((out.data.array() - 0.7).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("target larger than the source grid is rejected") {
    Tensor4D x(1, 2, 2, 3);
    Linear<double> proj(3, 3);
    CHECK_THROWS_AS(unify_shape(x, 4, 4, proj), std::invalid_argument);
  }
  SUBCASE("pooling plus projection gradient matches finite differences") {
    Tensor4D x(1, 4, 4, 3);
    Rng rng(8);
    fill_normal(x.data, 1.0, rng);
    Linear<double> proj(3, 2);
    proj.init(0.8, rng);
    fill_normal(proj.bias, 0.2, rng);
    MatrixD w(4, 2);
    fill_normal(w, 1.0, rng);

    MatrixD dx_grad = MatrixD::Zero(x.data.rows(), x.data.cols());
    ParamList<double> ps;
    proj.params(ps, "proj");
    ps.push_back({"input", &x.data, &dx_grad});

    auto forward_scalar = [&] {
      return (unify_shape(x, 2, 2, proj).data.array() * w.array()).sum();
    };
    auto compute = [&] {
      for (auto& p : ps) p.grad->setZero();
      unify_shape(x, 2, 2, proj);
      Tensor4D dy(1, 2, 2, 2);
      dy.data = w;
      dx_grad = unify_shape_backward(dy, 4, 4, proj).data;
    };
    auto report = grad_check(ps, forward_scalar, compute);
    CHECK(report.max_rel_err() < 1e-5);
  }
}

TEST_CASE("smoothing scale does not move the winning prototype") {
  Rng rng(9);
  Tensor4D f(2, 3, 3, 4);
  fill_normal(f.data, 1.5, rng);
  RegionPrototypeBank<double> bank(5, 4);
  bank.init(rng);
  fill_normal(bank.log_smoothing, 0.4, rng);
  auto before = region_masks(f, bank);

  RegionPrototypeBank<double> scaled = bank;
  scaled.log_smoothing.array() += std::log(3.7);  // sigma *= 3.7 for every prototype
  auto after = region_masks(f, scaled);

  for (Index r = 0; r < before.masks.rows(); ++r) {
    Index a, b;
    before.masks.row(r).maxCoeff(&a);
    after.masks.row(r).maxCoeff(&b);
    CHECK(a == b);
  }
}

TEST_CASE("zero features with zero prototypes give uniform masks and zero output") {
  Tensor4D f = Tensor4D::zero(1, 2, 2, 3);
  RfmStage<double> stage(4, 3, 2);  // prototypes stay zero
  Tensor4D g = stage.forward(f, 2, 2);
  CHECK((stage.last_masks().masks.array() - 0.25).abs().maxCoeff() < 1e-12);
  CHECK(g.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-stage pipeline equals the composition of its pieces") {
  Rng rng(10);
  Tensor4D f(1, 4, 4, 3);
  fill_normal(f.data, 1.0, rng);
  RfmStage<double> stage(3, 3, 2);
  stage.init(rng);
  Tensor4D composed;
  {
    auto md = region_masks(f, stage.bank);
    Tensor4D ghat = aggregate_regions(f, md.masks);
    composed = unify_shape(ghat, 2, 2, stage.proj);
  }
  Tensor4D piped = stage.forward(f, 2, 2);
  CHECK((piped.data - composed.data).cwiseAbs().maxCoeff() < 1e-15);
}

namespace {

// Two-stage toy pipeline; the readout covers both outputs of the module: the
// unified features and the exported region masks.
struct RfmHarness {
  Rfm<double> rfm;
  std::vector<Tensor4D> taps;
  std::vector<MatrixD> w_unified;
  std::vector<MatrixD> w_masks;

  RfmHarness() {
    Rng rng(11);
    rfm.out_h = 2;
    rfm.out_w = 2;
    rfm.stages.emplace_back(2, 3, 4);
    rfm.stages.emplace_back(3, 5, 4);
    for (auto& st : rfm.stages) st.init(rng);
    taps.emplace_back(1, 4, 4, 3);
    taps.emplace_back(1, 2, 2, 5);
    for (auto& t : taps) fill_normal(t.data, 1.0, rng);
    w_unified.assign(2, MatrixD());
    w_masks.assign(2, MatrixD());
    for (int l = 0; l < 2; ++l) {
      w_unified[l].resize(4, 4);
      fill_normal(w_unified[l], 1.0, rng);
      w_masks[l].resize(taps[l].rows(), rfm.stages[l].bank.parts());
      fill_normal(w_masks[l], 1.0, rng);
    }
  }

  double forward_scalar() {
    auto out = rfm.forward(taps);
    double v = 0.0;
    for (int l = 0; l < 2; ++l) {
      v += (out.unified[l].data.array() * w_unified[l].array()).sum();
      v += (out.masks[l].array() * w_masks[l].array()).sum();
    }
    return v;
  }
  ParamList<double> params() {
    ParamList<double> ps;
    rfm.params(ps, "rfm");
    return ps;
  }
  void compute_grads() {
    for (auto& p : params()) p.grad->setZero();
    auto out = rfm.forward(taps);
    std::vector<Tensor4D> dgs;
    for (int l = 0; l < 2; ++l) {
      Tensor4D d = out.unified[l];
      d.data = w_unified[l];
      dgs.push_back(std::move(d));
    }
    rfm.backward(dgs, &w_masks);
  }
};

}  // namespace

TEST_CASE("two-stage region mining gradients match finite differences") {
  RfmHarness h;
  auto report = grad_check(
      h.params(), [&h] { return h.forward_scalar(); }, [&h] { h.compute_grads(); });
  CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("mask rows still sum to one after a parameter update") {
  RfmHarness h;
  h.compute_grads();
  for (auto& p : h.params()) *p.value -= 0.05 * *p.grad;
  auto out = h.rfm.forward(h.taps);
  for (const auto& masks : out.masks)
    for (Index r = 0; r < masks.rows(); ++r) CHECK(std::abs(masks.row(r).sum() - 1.0) < 1e-5);
}
