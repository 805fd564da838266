// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mgmrn/numerics.hpp"
#include "mgmrn/vsd.hpp"

using namespace mgmrn;

namespace {

TokenMatrix<double> random_tokens(Index batch, Index tokens, Index channels, Rng& rng) {
  TokenMatrix<double> t(batch, tokens, channels);
  fill_normal(t.data, 1.0, rng);
  return t;
}

MatrixD random_words(Index d_s, Index d_w2v, Rng& rng) {
  MatrixD w(d_s, d_w2v);
  fill_normal(w, 1.0, rng);
  return w;
}

}  // namespace

TEST_CASE("a single token receives all attention") {
  Rng rng(1);
  SemanticDecoder<double> dec(3, 4, 5);
  dec.init(rng);
  auto tokens = random_tokens(2, 1, 4, rng);
  auto pred = dec.forward(tokens, random_words(6, 3, rng));
  CHECK(pred.attention.rows() == 12);
  CHECK(pred.attention.cols() == 1);
  CHECK((pred.attention.array() == 1.0).all());
}

TEST_CASE("identical tokens attract uniform attention") {
  Rng rng(2);
  SemanticDecoder<double> dec(3, 4, 5);
  dec.init(rng);
  TokenMatrix<double> tokens(1, 7, 4);
  MatrixD row(1, 4);
  fill_normal(row, 1.0, rng);
  for (Index t = 0; t < 7; ++t) tokens.data.row(t) = row;
  auto pred = dec.forward(tokens, random_words(3, 3, rng));
  CHECK((pred.attention.array() - 1.0 / 7.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("hand-evaluated scalar decoder") {
  // One attribute, one token, every dimension 1, all weights 1:
  // q=2, k=3, attention=[1], v=3, p=3, z = 2*3 = 6.
  SemanticDecoder<double> dec(1, 1, 1);
  dec.w_query.setOnes();
  dec.w_key.setOnes();
  dec.w_value.setOnes();
  dec.w_out.setOnes();
  dec.embed.setOnes();
  TokenMatrix<double> tokens(1, 1, 1);
  tokens.data(0, 0) = 3.0;
  MatrixD w_att(1, 1);
  w_att(0, 0) = 2.0;
  auto pred = dec.forward(tokens, w_att);
  CHECK(std::abs(pred.z(0, 0) - 6.0) < 1e-12);
  CHECK(pred.attention(0, 0) == 1.0);
}

TEST_CASE("softmax is invariant to shifting all logits") {
  Rng rng(12);
  MatrixD logits(4, 6);
  fill_normal(logits, 2.0, rng);
  MatrixD shifted = logits;
  shifted.array() += 37.5;
  MatrixD a = softmax_rows(logits);
  MatrixD b = softmax_rows(shifted);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rows sum to one") {
  Rng rng(3);
  SemanticDecoder<double> dec(4, 5, 6);
  dec.init(rng);
  auto tokens = random_tokens(3, 9, 5, rng);
  auto pred = dec.forward(tokens, random_words(7, 4, rng));
  for (Index r = 0; r < pred.attention.rows(); ++r)
    CHECK(std::abs(pred.attention.row(r).sum() - 1.0) < 1e-5);
  CHECK(pred.attention.minCoeff() >= 0.0);
}

TEST_CASE("token permutation permutes attention but not the prediction") {
  Rng rng(4);
  SemanticDecoder<double> dec(4, 5, 6);
  dec.init(rng);
  auto tokens = random_tokens(1, 6, 5, rng);
  auto w_att = random_words(3, 4, rng);
  auto base = dec.forward(tokens, w_att);

  std::vector<Index> perm = {3, 0, 5, 1, 4, 2};
  TokenMatrix<double> shuffled(1, 6, 5);
  for (Index t = 0; t < 6; ++t) shuffled.data.row(t) = tokens.data.row(perm[t]);
  auto moved = dec.forward(shuffled, w_att);

  CHECK((moved.z - base.z).cwiseAbs().maxCoeff() < 1e-12);
  for (Index r = 0; r < base.attention.rows(); ++r)
    for (Index t = 0; t < 6; ++t)
      CHECK(moved.attention(r, t) == doctest::Approx(base.attention(r, perm[t])).epsilon(1e-12));
}

TEST_CASE("multi-head variant keeps row normalization and shapes") {
  Rng rng(5);
  SemanticDecoder<double> dec(4, 5, 6, 2);
  dec.init(rng);
  auto tokens = random_tokens(2, 5, 5, rng);
  auto pred = dec.forward(tokens, random_words(3, 4, rng));
  CHECK(pred.z.rows() == 2);
  CHECK(pred.z.cols() == 3);
  for (Index r = 0; r < pred.attention.rows(); ++r)
    CHECK(std::abs(pred.attention.row(r).sum() - 1.0) < 1e-5);
}

namespace {

struct VsdHarness {
  SemanticDecoder<double> dec{3, 4, 4};
  TokenMatrix<double> tokens{2, 5, 4};
  MatrixD w_att{MatrixD(3, 3)};
  MatrixD readout{MatrixD(2, 3)};
  MatrixD dtokens_store{MatrixD::Zero(10, 4)};

  VsdHarness() {
    Rng rng(6);
    dec.init(rng);
    fill_normal(tokens.data, 1.0, rng);
    fill_normal(w_att, 1.0, rng);
    fill_normal(readout, 1.0, rng);
  }

  double forward_scalar() { return (dec.forward(tokens, w_att).z.array() * readout.array()).sum(); }
  ParamList<double> params() {
    ParamList<double> ps;
    dec.params(ps, "vsd");
    ps.push_back({"tokens", &tokens.data, &dtokens_store});
    return ps;
  }
  void compute_grads() {
    for (auto& p : params()) p.grad->setZero();
    dec.forward(tokens, w_att);
    dtokens_store = dec.backward(readout, w_att).data;
  }
};

}  // namespace

TEST_CASE("decoder gradients match finite differences") {
  VsdHarness h;
  auto report = grad_check(
      h.params(), [&h] { return h.forward_scalar(); }, [&h] { h.compute_grads(); });
  CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("attention maps collapse tokens onto the grid") {
  SUBCASE("uniform attention gives a constant map") {
    MatrixD row = MatrixD::Constant(1, 8, 1.0 / 8.0);  // two halves of a 2x2 grid
    MatrixD map = attention_grid_map(row, 2, 2);
    CHECK((map.array() - 1.0 / 8.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("one-hot attention lights a single cell") {
    MatrixD row = MatrixD::Zero(1, 4);
    row(0, 2) = 1.0;  // token 2 of a 2x2 grid = site (1, 0)
    MatrixD map = attention_grid_map(row, 2, 2);
    CHECK(map(1, 0) == 1.0);
    CHECK(map.sum() == 1.0);

    MatrixD two_half = MatrixD::Zero(1, 8);
    two_half(0, 2) = 1.0;
    MatrixD map2 = attention_grid_map(two_half, 2, 2);
    CHECK(map2(1, 0) == 0.5);  // halves are averaged
    CHECK(map2.sum() == 0.5);
  }
  SUBCASE("layout mismatch is rejected") {
    MatrixD row = MatrixD::Zero(1, 5);
    CHECK_THROWS_AS(attention_grid_map(row, 2, 2), std::invalid_argument);
  }
  SUBCASE("fusion is the mean over stages") {
    MatrixD a = MatrixD::Constant(2, 2, 0.2);
    MatrixD b = MatrixD::Constant(2, 2, 0.4);
    MatrixD fused = fuse_attention_maps<double>({a, b});
    CHECK((fused.array() - 0.3).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bilinear upsampling preserves constants and stays nonnegative") {
  MatrixD map = MatrixD::Constant(2, 2, 0.25);
  MatrixD up = bilinear_upsample(map, 8, 8);
  CHECK(up.rows() == 8);
  CHECK((up.array() - 0.25).abs().maxCoeff() < 1e-12);

  Rng rng(7);
  MatrixD noisy(3, 3);
  fill_normal(noisy, 1.0, rng);
  noisy = noisy.array().abs();
  MatrixD up2 = bilinear_upsample(noisy, 7, 5);
  CHECK(up2.minCoeff() >= 0.0);
}
