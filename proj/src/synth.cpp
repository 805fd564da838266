// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/synth.hpp"

#include <cmath>

namespace mgmrn {

namespace {

constexpr int kRowRetries = 200;
constexpr float kBackground = 0.08f;
constexpr float kPixelNoise = 0.06f;

MatrixF make_signatures(const SynthSpec& spec, Rng& rng) {
  MatrixF sig(spec.num_classes, spec.d_s);
  for (int c = 0; c < spec.num_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kRowRetries && !placed; ++attempt) {
      int active = 0;
      for (int a = 0; a < spec.d_s; ++a) {
        const float bit = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        sig(c, a) = bit;
        active += bit > 0.0f;
      }
      if (active == 0) continue;  // an all-zero class renders as pure noise
      bool duplicate = false;
      for (int prev = 0; prev < c && !duplicate; ++prev)
        duplicate = sig.row(prev) == sig.row(c);
      placed = !duplicate;
    }
    if (!placed)
      throw std::runtime_error(
          "synth_generate: could not draw distinct attribute signatures for " +
          std::to_string(spec.num_classes) + " classes with d_s=" + std::to_string(spec.d_s));
  }
  return sig;
}

}  // namespace

DatasetBundle synth_generate(const SynthSpec& spec) {
  check(spec.num_classes >= 2, "synth_generate: need at least two classes");
  check(spec.num_seen >= 1, "synth_generate: need at least one seen class");
  check(spec.num_seen < spec.num_classes, "synth_generate: need at least one unseen class");
  check(spec.d_s >= 2, "synth_generate: d_s must be >= 2");
  check(spec.d_w2v >= 1, "synth_generate: d_w2v must be >= 1");
  check(spec.images_per_class >= 1, "synth_generate: images_per_class must be >= 1");
  check(spec.channels >= 1, "synth_generate: channels must be >= 1");

  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.d_s))));
  check(spec.image_size >= grid, "synth_generate: image_size too small for attribute grid");

  Rng rng(spec.seed);
  DatasetBundle bundle;

  AttributeSpace& attrs = bundle.attribute_space;
  attrs.class_attributes = make_signatures(spec, rng);

  attrs.attribute_word_vectors.resize(spec.d_s, spec.d_w2v);
  fill_normal(attrs.attribute_word_vectors, 1.0, rng);
  for (int a = 0; a < spec.d_s; ++a) attrs.attribute_word_vectors.row(a).normalize();

  // One cell of an implicit grid per attribute, with three rendering scales:
  //   solid   - the cell is filled with a per-attribute color; decodable at
  //             any resolution.
  //   stripe  - one-pixel stripes around a mean shared by ALL striped
  //             attributes, so identity vanishes below the stripe period.
  //   arrange - two small blobs in opposite cell corners; attributes come in
  //             pairs that share a color and differ only in diagonal versus
  //             anti-diagonal placement, so identity needs a receptive field
  //             spanning both blobs. These take the most interior cells to
  //             keep image-border cues away.
  const int cell = spec.image_size / grid;
  const int inset = cell >= 4 ? 1 : 0;
  const float stripe_mean = 0.55f;

  std::vector<int> cell_of(static_cast<std::size_t>(spec.d_s));
  {
    std::vector<int> order(static_cast<std::size_t>(grid * grid));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    auto interiorness = [grid](int c) {
      const int r = c / grid, q = c % grid;
      return std::min(std::min(r, grid - 1 - r), std::min(q, grid - 1 - q));
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return interiorness(a) > interiorness(b); });
    std::size_t interior_next = 0, other_next = 0;
    std::vector<int> others;
    for (int a = 0; a < spec.d_s; ++a)
      if (a % 4 != 2) others.push_back(a);
    // arrangement attributes (a % 4 == 2) claim the most interior cells
    std::vector<char> taken(order.size(), 0);
    for (int a = 0; a < spec.d_s; ++a) {
      if (a % 4 != 2) continue;
      cell_of[static_cast<std::size_t>(a)] = order[interior_next];
      taken[static_cast<std::size_t>(order[interior_next])] = 1;
      ++interior_next;
    }
    for (int a : others) {
      while (taken[other_next]) ++other_next;
      cell_of[static_cast<std::size_t>(a)] = static_cast<int>(other_next);
      taken[other_next] = 1;
    }
  }

  MatrixF colors(spec.d_s, spec.channels);  // solid fill / blob color
  MatrixF deltas(spec.d_s, spec.channels);  // stripe contrast
  attrs.attribute_names.resize(static_cast<std::size_t>(spec.d_s));
  int arrange_rank = 0;
  for (int a = 0; a < spec.d_s; ++a) {
    for (int ch = 0; ch < spec.channels; ++ch) {
      colors(a, ch) = static_cast<float>(rng.uniform(0.3, 1.0));
      deltas(a, ch) = static_cast<float>(rng.uniform(0.18, 0.4)) *
                      (rng.uniform() < 0.5 ? -1.0f : 1.0f);
    }
    if (a % 4 == 2 && arrange_rank % 2 == 1) {
      // second member of an arrangement pair reuses its partner's color
      int partner = a - 1;
      while (partner >= 0 && partner % 4 != 2) --partner;
      if (partner >= 0) colors.row(a) = colors.row(partner);
    }
    if (a % 4 == 2) ++arrange_rank;
    const int r = cell_of[static_cast<std::size_t>(a)] / grid;
    const int c = cell_of[static_cast<std::size_t>(a)] % grid;
    const char* kind = a % 4 == 0 ? "solid" : (a % 4 == 2 ? "arrange" : "stripe");
    attrs.attribute_names[static_cast<std::size_t>(a)] =
        std::string(kind) + std::to_string(a) + "_cell" + std::to_string(r) + "x" +
        std::to_string(c);
  }

  const Index n = static_cast<Index>(spec.num_classes) * spec.images_per_class;
  bundle.images = Tensor4F(n, spec.image_size, spec.image_size, spec.channels);
  bundle.images.data.setConstant(kBackground);
  bundle.labels.assign(static_cast<std::size_t>(n), 0);

  // Blob geometry degrades gracefully on tiny cells: blobs always fit inside
  // the cell, collapsing onto each other when there is no room to separate.
  const int blob = std::min(cell, std::max(1, cell / 4));
  const int blob_margin = std::max(0, std::min(cell / 8, (cell - blob) / 2));
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int k = 0; k < spec.images_per_class; ++k) {
      const Index item = static_cast<Index>(cls) * spec.images_per_class + k;
      bundle.labels[static_cast<std::size_t>(item)] = cls;
      int rank = 0;
      for (int a = 0; a < spec.d_s; ++a) {
        // 0 = solid fill, 1 = stripes, 2 = corner-blob arrangement
        const int kind = a % 4 == 0 ? 0 : (a % 4 == 2 ? 2 : 1);
        const bool anti = kind == 2 && rank % 2 == 1;
        if (kind == 2) ++rank;
        if (attrs.class_attributes(cls, a) <= 0.0f) continue;
        const float intensity = static_cast<float>(rng.uniform(0.6, 1.0));
        const int cr = (cell_of[static_cast<std::size_t>(a)] / grid) * cell;
        const int cc = (cell_of[static_cast<std::size_t>(a)] % grid) * cell;
        if (kind == 2) {
          // two blobs, diagonal or anti-diagonal corners of the cell
          const int lo = blob_margin, hi = std::max(lo, cell - blob_margin - blob);
          const int rows[2] = {lo, hi};
          const int cols_diag[2] = {lo, hi};
          const int cols_anti[2] = {hi, lo};
          for (int bidx = 0; bidx < 2; ++bidx) {
            const int br = cr + rows[bidx];
            const int bc = cc + (anti ? cols_anti[bidx] : cols_diag[bidx]);
            for (int i = br; i < br + blob; ++i)
              for (int j = bc; j < bc + blob; ++j)
                for (int ch = 0; ch < spec.channels; ++ch)
                  bundle.images.at(item, i, j, ch) = colors(a, ch) * intensity;
          }
        } else {
          for (int i = cr + inset; i < cr + cell - inset; ++i)
            for (int j = cc + inset; j < cc + cell - inset; ++j)
              for (int ch = 0; ch < spec.channels; ++ch) {
                float value;
                if (kind == 1) {
                  const float sign = j % 2 == 0 ? 1.0f : -1.0f;
                  value = stripe_mean + sign * deltas(a, ch);
                } else {
                  value = colors(a, ch);
                }
                bundle.images.at(item, i, j, ch) = value * intensity;
              }
        }
      }
      for (int i = 0; i < spec.image_size; ++i)
        for (int j = 0; j < spec.image_size; ++j)
          for (int ch = 0; ch < spec.channels; ++ch) {
            float& px = bundle.images.at(item, i, j, ch);
            px = std::min(1.0f, std::max(0.0f, px + kPixelNoise * static_cast<float>(rng.normal())));
          }
    }
  }

  for (int cls = 0; cls < spec.num_classes; ++cls)
    (cls < spec.num_seen ? bundle.seen_classes : bundle.unseen_classes).push_back(cls);

  int n_train = static_cast<int>(std::lround(spec.train_fraction * spec.images_per_class));
  n_train = std::min(spec.images_per_class, std::max(1, n_train));
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int k = 0; k < spec.images_per_class; ++k) {
      const Index item = static_cast<Index>(cls) * spec.images_per_class + k;
      if (cls >= spec.num_seen) {
        bundle.test_unseen_indices.push_back(item);
      } else if (k < n_train) {
        bundle.train_indices.push_back(item);
      } else {
        bundle.test_seen_indices.push_back(item);
      }
    }
  }
  return bundle;
}

}  // namespace mgmrn
