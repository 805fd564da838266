// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mgmrn/nn.hpp"

namespace mgmrn {

/// Predicted attribute vectors for one stage plus the attention weights of
/// every attribute query over the visual tokens (rows sum to 1).
template <class Scalar>
struct SemanticPrediction {
  Matrix<Scalar> z;          // [B x d_s]
  Matrix<Scalar> attention;  // [B*d_s x T], the row of (b, attribute i) is b*d_s + i
};

/// Cross-attention decoder: attribute word vectors form the queries, visual
/// tokens the keys and values. Each attribute's decoded token is embedded
/// back into word-vector space and scored against its own word vector, giving
/// one confidence per attribute.
template <class Scalar>
struct SemanticDecoder {
  Matrix<Scalar> w_query;  // [d_w2v x d_model]
  Matrix<Scalar> w_key;    // [C x d_model]
  Matrix<Scalar> w_value;  // [C x d_model]
  Matrix<Scalar> w_out;    // [d_model x d_model]
  Matrix<Scalar> embed;    // [d_model x d_w2v]
  Index heads = 1;
  Matrix<Scalar> grad_w_query, grad_w_key, grad_w_value, grad_w_out, grad_embed;

  SemanticDecoder() = default;
  SemanticDecoder(Index d_w2v, Index token_channels, Index d_model, Index num_heads = 1)
      : heads(num_heads) {
    check(d_model >= 1, "decoder: d_model must be >= 1");
    check(num_heads >= 1 && d_model % num_heads == 0, "decoder: heads must divide d_model");
    w_query.setZero(d_w2v, d_model);
    w_key.setZero(token_channels, d_model);
    w_value.setZero(token_channels, d_model);
    w_out.setZero(d_model, d_model);
    embed.setZero(d_model, d_w2v);
    grad_w_query = w_query;
    grad_w_key = w_key;
    grad_w_value = w_value;
    grad_w_out = w_out;
    grad_embed = embed;
  }

  void init(Rng& rng) {
    fill_normal(w_query, 1.0 / std::sqrt(static_cast<double>(w_query.rows())), rng);
    fill_normal(w_key, 1.0 / std::sqrt(static_cast<double>(w_key.rows())), rng);
    fill_normal(w_value, 1.0 / std::sqrt(static_cast<double>(w_value.rows())), rng);
    fill_normal(w_out, 1.0 / std::sqrt(static_cast<double>(w_out.rows())), rng);
    fill_normal(embed, 1.0 / std::sqrt(static_cast<double>(embed.rows())), rng);
  }

  Index head_dim() const { return w_query.cols() / heads; }

  SemanticPrediction<Scalar> forward(const TokenMatrix<Scalar>& tokens,
                                     const Matrix<Scalar>& w_att) {
    check(tokens.channels == w_key.rows(), "decoder: token channel mismatch");
    check(w_att.cols() == w_query.rows(), "decoder: word vector dimension mismatch");
    tokens_ = tokens;
    const Index b_n = tokens.batch, d_s = w_att.rows(), t = tokens.tokens;
    const Index dh = head_dim();
    const Scalar scale = Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(dh)));

    query_.noalias() = w_att * w_query;
    keys_.resize(static_cast<std::size_t>(b_n));
    values_.resize(static_cast<std::size_t>(b_n));
    attn_.assign(static_cast<std::size_t>(b_n * heads), Matrix<Scalar>());
    context_.resize(static_cast<std::size_t>(b_n));
    decoded_.resize(static_cast<std::size_t>(b_n));

    SemanticPrediction<Scalar> out;
    out.z.setZero(b_n, d_s);
    out.attention.setZero(b_n * d_s, t);
    for (Index b = 0; b < b_n; ++b) {
      auto u = tokens.item(b);
      keys_[b].noalias() = u * w_key;
      values_[b].noalias() = u * w_value;
      Matrix<Scalar>& ctx = context_[b];
      ctx.setZero(d_s, w_query.cols());
      for (Index h = 0; h < heads; ++h) {
        Matrix<Scalar> logits =
            scale * (query_.middleCols(h * dh, dh) * keys_[b].middleCols(h * dh, dh).transpose());
        Matrix<Scalar>& attn = attn_[static_cast<std::size_t>(b * heads + h)];
        attn = softmax_rows(std::move(logits));
        ctx.middleCols(h * dh, dh).noalias() = attn * values_[b].middleCols(h * dh, dh);
        out.attention.middleRows(b * d_s, d_s) += attn / static_cast<Scalar>(heads);
      }
      decoded_[b].noalias() = ctx * w_out;
      out.z.row(b) =
          ((decoded_[b] * embed).array() * w_att.array()).rowwise().sum().transpose();
    }
    return out;
  }

  /// Backpropagates dz into the token matrix; parameter gradients accumulate.
  TokenMatrix<Scalar> backward(const Matrix<Scalar>& dz, const Matrix<Scalar>& w_att) {
    const Index b_n = tokens_.batch;
    const Index dh = head_dim();
    const Scalar scale = Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(dh)));

    TokenMatrix<Scalar> dtokens(tokens_.batch, tokens_.tokens, tokens_.channels);
    dtokens.data.setZero();
    Matrix<Scalar> dquery = Matrix<Scalar>::Zero(query_.rows(), query_.cols());
    for (Index b = 0; b < b_n; ++b) {
      Matrix<Scalar> dembedded = dz.row(b).transpose().asDiagonal() * w_att;
      grad_embed.noalias() += decoded_[b].transpose() * dembedded;
      Matrix<Scalar> ddecoded = dembedded * embed.transpose();
      grad_w_out.noalias() += context_[b].transpose() * ddecoded;
      Matrix<Scalar> dctx = ddecoded * w_out.transpose();

      Matrix<Scalar> dkeys = Matrix<Scalar>::Zero(keys_[b].rows(), keys_[b].cols());
      Matrix<Scalar> dvalues = Matrix<Scalar>::Zero(values_[b].rows(), values_[b].cols());
      for (Index h = 0; h < heads; ++h) {
        const Matrix<Scalar>& attn = attn_[static_cast<std::size_t>(b * heads + h)];
        Matrix<Scalar> dattn = dctx.middleCols(h * dh, dh) *
                               values_[b].middleCols(h * dh, dh).transpose();
        dvalues.middleCols(h * dh, dh).noalias() =
            attn.transpose() * dctx.middleCols(h * dh, dh);
        Matrix<Scalar> dlogits = softmax_backward_rows(attn, dattn);
        dquery.middleCols(h * dh, dh).noalias() +=
            scale * (dlogits * keys_[b].middleCols(h * dh, dh));
        dkeys.middleCols(h * dh, dh).noalias() =
            scale * (dlogits.transpose() * query_.middleCols(h * dh, dh));
      }
      auto u = tokens_.item(b);
      grad_w_key.noalias() += u.transpose() * dkeys;
      grad_w_value.noalias() += u.transpose() * dvalues;
      dtokens.item(b) = dkeys * w_key.transpose() + dvalues * w_value.transpose();
    }
    grad_w_query.noalias() += w_att.transpose() * dquery;
    return dtokens;
  }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + "/w_query", &w_query, &grad_w_query});
    out.push_back({prefix + "/w_key", &w_key, &grad_w_key});
    out.push_back({prefix + "/w_value", &w_value, &grad_w_value});
    out.push_back({prefix + "/w_out", &w_out, &grad_w_out});
    out.push_back({prefix + "/embed", &embed, &grad_embed});
  }

 private:
  TokenMatrix<Scalar> tokens_;
  Matrix<Scalar> query_;
  std::vector<Matrix<Scalar>> keys_, values_, context_, decoded_;
  std::vector<Matrix<Scalar>> attn_;  // indexed b*heads + h
};

/// Collapses token attention onto the spatial grid. Token matrices of the
/// stages below the deepest hold two flattened site blocks (the stage's own
/// sites and the gated context); their attention halves are averaged into a
/// single map per attribute.
template <class Scalar>
Matrix<Scalar> attention_grid_map(const Matrix<Scalar>& attention_row, Index grid_h, Index grid_w) {
  const Index sites = grid_h * grid_w;
  Matrix<Scalar> map(grid_h, grid_w);
  if (attention_row.cols() == sites) {
    for (Index i = 0; i < grid_h; ++i)
      for (Index j = 0; j < grid_w; ++j) map(i, j) = attention_row(0, i * grid_w + j);
  } else if (attention_row.cols() == 2 * sites) {
    for (Index i = 0; i < grid_h; ++i)
      for (Index j = 0; j < grid_w; ++j)
        map(i, j) = Scalar(0.5) * (attention_row(0, i * grid_w + j) +
                                   attention_row(0, sites + i * grid_w + j));
  } else {
    throw std::invalid_argument("attention_grid_map: token count does not match the grid layout");
  }
  return map;
}

/// Mean of the per-stage maps of one attribute; all stages share the common
/// grid so no resampling is needed before fusion.
template <class Scalar>
Matrix<Scalar> fuse_attention_maps(const std::vector<Matrix<Scalar>>& per_stage) {
  check(!per_stage.empty(), "fuse_attention_maps: no maps");
  Matrix<Scalar> fused = per_stage.front();
  for (std::size_t i = 1; i < per_stage.size(); ++i) fused += per_stage[i];
  fused /= static_cast<Scalar>(per_stage.size());
  return fused;
}

}  // namespace mgmrn
