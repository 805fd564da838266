// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "mgmrn/common.hpp"

namespace mgmrn {

/// Class-level attribute signatures plus one word vector per attribute.
struct AttributeSpace {
  MatrixF class_attributes;        // [num_classes x d_s]
  MatrixF attribute_word_vectors;  // [d_s x d_w2v]
  std::vector<std::string> attribute_names;

  Index num_classes() const { return class_attributes.rows(); }
  Index num_attributes() const { return class_attributes.cols(); }
  Index word_dim() const { return attribute_word_vectors.cols(); }

  int attribute_index(const std::string& name) const {
    auto it = std::find(attribute_names.begin(), attribute_names.end(), name);
    return it == attribute_names.end() ? -1 : static_cast<int>(it - attribute_names.begin());
  }
};

/// Images, labels, attribute space and the seen/unseen split. Immutable after
/// construction; shared freely across readers.
struct DatasetBundle {
  Tensor4F images;  // values in [0, 1]
  std::vector<int> labels;
  AttributeSpace attribute_space;
  std::vector<int> seen_classes;    // sorted, disjoint from unseen_classes
  std::vector<int> unseen_classes;  // sorted
  std::vector<Index> train_indices;
  std::vector<Index> test_seen_indices;
  std::vector<Index> test_unseen_indices;

  Index num_items() const { return images.batch; }

  bool is_seen(int cls) const {
    return std::binary_search(seen_classes.begin(), seen_classes.end(), cls);
  }
  bool is_unseen(int cls) const {
    return std::binary_search(unseen_classes.begin(), unseen_classes.end(), cls);
  }
};

/// Parameters of the synthetic dataset generator.
struct SynthSpec {
  int num_classes = 20;
  int num_seen = 16;
  int d_s = 16;  // number of attributes
  int images_per_class = 80;
  int image_size = 32;
  int channels = 3;
  int d_w2v = 16;
  double train_fraction = 0.75;  // per seen class; remainder is test-seen
  std::uint64_t seed = 0;
};

enum class ModelVariant { baseline, mgm, full };

std::string variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& s);

enum class LrSchedule { constant, cosine };

std::string schedule_name(LrSchedule s);
LrSchedule schedule_from_name(const std::string& s);

/// Hyperparameters shared by the model, trainer and CLI.
struct ModelConfig {
  int num_stages = 2;                 // L
  std::vector<int> parts_per_stage;   // M_l; empty => all stages use `parts`
  int parts = 3;                      // N_p
  int grid_h = 0, grid_w = 0;         // common grid; 0 => stage-L grid
  int common_channels = 32;           // C
  int d_model = 32;
  int d_w2v = 16;
  int heads = 1;
  double lambda_sce = 1.0;
  double lambda_ar = 1.0;
  double tau = 1.0;
  double learning_rate = 0.0005;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int batch_size = 32;
  int epochs = 60;
  int eval_every = 5;
  std::uint64_t seed = 0;
  ModelVariant variant = ModelVariant::full;
  std::vector<int> backbone_widths;   // empty => (16, 32, 64, 128)[:L]

  std::vector<int> stage_parts() const {
    if (!parts_per_stage.empty()) return parts_per_stage;
    return std::vector<int>(static_cast<std::size_t>(num_stages), parts);
  }
  std::vector<int> stage_widths() const {
    if (!backbone_widths.empty()) return backbone_widths;
    static const int defaults[] = {16, 32, 64, 128};
    std::vector<int> w;
    for (int l = 0; l < num_stages && l < 4; ++l) w.push_back(defaults[l]);
    while (static_cast<int>(w.size()) < num_stages) w.push_back(w.back());
    return w;
  }

  void validate() const {
    check(num_stages >= 1, "config: num_stages must be >= 1");
    for (int m : stage_parts()) check(m >= 1, "config: parts_per_stage entries must be >= 1");
    check(tau > 0.0, "config: tau must be positive");
    check(batch_size >= 1, "config: batch_size must be >= 1");
    check(epochs >= 0, "config: epochs must be >= 0");
    check(d_model >= 1, "config: d_model must be >= 1");
    check(heads >= 1 && d_model % heads == 0, "config: heads must divide d_model");
  }
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

/// Diagnostic audit of a bundle against its structural invariants. Returns
/// one line per violation; an empty report means the bundle is valid.
std::vector<std::string> validate_split(const DatasetBundle& bundle);

}  // namespace mgmrn
