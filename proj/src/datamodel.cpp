// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/datamodel.hpp"

#include <json.hpp>

#include <set>
#include <sstream>

namespace mgmrn {

using nlohmann::json;

std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::baseline: return "baseline";
    case ModelVariant::mgm: return "mgm";
    case ModelVariant::full: return "full";
  }
  throw std::invalid_argument("variant_name: unknown variant");
}

ModelVariant variant_from_name(const std::string& s) {
  if (s == "baseline") return ModelVariant::baseline;
  if (s == "mgm") return ModelVariant::mgm;
  if (s == "full") return ModelVariant::full;
  throw std::invalid_argument("unknown model variant: " + s);
}

std::string schedule_name(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "cosine";
}

LrSchedule schedule_from_name(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw std::invalid_argument("unknown lr schedule: " + s);
}

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["num_stages"] = cfg.num_stages;
  j["parts_per_stage"] = cfg.parts_per_stage;
  j["parts"] = cfg.parts;
  j["grid_h"] = cfg.grid_h;
  j["grid_w"] = cfg.grid_w;
  j["common_channels"] = cfg.common_channels;
  j["d_model"] = cfg.d_model;
  j["d_w2v"] = cfg.d_w2v;
  j["heads"] = cfg.heads;
  j["lambda_sce"] = cfg.lambda_sce;
  j["lambda_ar"] = cfg.lambda_ar;
  j["tau"] = cfg.tau;
  j["learning_rate"] = cfg.learning_rate;
  j["lr_schedule"] = schedule_name(cfg.lr_schedule);
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["eval_every"] = cfg.eval_every;
  j["seed"] = cfg.seed;
  j["variant"] = variant_name(cfg.variant);
  j["backbone_widths"] = cfg.backbone_widths;
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig cfg;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("num_stages", cfg.num_stages);
  get("parts_per_stage", cfg.parts_per_stage);
  get("parts", cfg.parts);
  get("grid_h", cfg.grid_h);
  get("grid_w", cfg.grid_w);
  get("common_channels", cfg.common_channels);
  get("d_model", cfg.d_model);
  get("d_w2v", cfg.d_w2v);
  get("heads", cfg.heads);
  get("lambda_sce", cfg.lambda_sce);
  get("lambda_ar", cfg.lambda_ar);
  get("tau", cfg.tau);
  get("learning_rate", cfg.learning_rate);
  if (j.contains("lr_schedule"))
    cfg.lr_schedule = schedule_from_name(j.at("lr_schedule").get<std::string>());
  get("momentum", cfg.momentum);
  get("weight_decay", cfg.weight_decay);
  get("batch_size", cfg.batch_size);
  get("epochs", cfg.epochs);
  get("eval_every", cfg.eval_every);
  get("seed", cfg.seed);
  if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  get("backbone_widths", cfg.backbone_widths);
  return cfg;
}

namespace {

bool sorted_disjoint(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> inter;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  return inter.empty();
}

}  // namespace

std::vector<std::string> validate_split(const DatasetBundle& bundle) {
  std::vector<std::string> report;
  auto note = [&report](const std::string& s) { report.push_back(s); };

  const Index n = bundle.images.batch;
  if (static_cast<Index>(bundle.labels.size()) != n)
    note("shape mismatch: images has " + std::to_string(n) + " items but labels has " +
         std::to_string(bundle.labels.size()));

  std::vector<int> seen = bundle.seen_classes;
  std::vector<int> unseen = bundle.unseen_classes;
  if (!std::is_sorted(seen.begin(), seen.end())) note("seen class list is not sorted");
  if (!std::is_sorted(unseen.begin(), unseen.end())) note("unseen class list is not sorted");
  std::sort(seen.begin(), seen.end());
  std::sort(unseen.begin(), unseen.end());
  if (!sorted_disjoint(seen, unseen)) note("split overlap: a class is both seen and unseen");

  const Index num_classes = bundle.attribute_space.num_classes();
  auto declared = [&](int cls) {
    return std::binary_search(seen.begin(), seen.end(), cls) ||
           std::binary_search(unseen.begin(), unseen.end(), cls);
  };
  for (int cls : seen)
    if (cls < 0 || cls >= num_classes) note("seen class id out of range: " + std::to_string(cls));
  for (int cls : unseen)
    if (cls < 0 || cls >= num_classes) note("unseen class id out of range: " + std::to_string(cls));

  for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
    const int y = bundle.labels[i];
    if (y < 0 || y >= num_classes) {
      note("label out of range at item " + std::to_string(i));
    } else if (!declared(y)) {
      note("label " + std::to_string(y) + " belongs to neither split at item " + std::to_string(i));
    }
  }

  auto check_indices = [&](const std::vector<Index>& idx, const char* split,
                           const std::vector<int>& allowed) {
    for (Index i : idx) {
      if (i < 0 || i >= n) {
        note(std::string(split) + " index out of range: " + std::to_string(i));
        continue;
      }
      const int y = bundle.labels[static_cast<std::size_t>(i)];
      if (!std::binary_search(allowed.begin(), allowed.end(), y))
        note(std::string(split) + " index " + std::to_string(i) + " has label " +
             std::to_string(y) + " outside its class set");
    }
  };
  check_indices(bundle.train_indices, "train", seen);
  check_indices(bundle.test_seen_indices, "test_seen", seen);
  check_indices(bundle.test_unseen_indices, "test_unseen", unseen);

  std::set<Index> all;
  std::size_t total = 0;
  for (const auto* lst :
       {&bundle.train_indices, &bundle.test_seen_indices, &bundle.test_unseen_indices}) {
    all.insert(lst->begin(), lst->end());
    total += lst->size();
  }
  if (all.size() != total) note("split index lists are not disjoint");

  if (!bundle.images.all_finite()) note("images contain non-finite values");
  if (!bundle.attribute_space.class_attributes.allFinite())
    note("class attributes contain non-finite values");
  if (!bundle.attribute_space.attribute_word_vectors.allFinite())
    note("attribute word vectors contain non-finite values");
  if (bundle.attribute_space.num_attributes() < 1) note("attribute dimension must be >= 1");
  if (static_cast<Index>(bundle.attribute_space.attribute_names.size()) !=
      bundle.attribute_space.num_attributes())
    note("shape mismatch: attribute name list vs attribute dimension");
  if (bundle.attribute_space.attribute_word_vectors.rows() !=
      bundle.attribute_space.num_attributes())
    note("shape mismatch: word vector rows vs attribute dimension");

  for (Index a = 0; a < num_classes; ++a)
    for (Index b = a + 1; b < num_classes; ++b)
      if (bundle.attribute_space.class_attributes.row(a) ==
          bundle.attribute_space.class_attributes.row(b))
        note("classes " + std::to_string(a) + " and " + std::to_string(b) +
             " share an identical attribute row");

  return report;
}

}  // namespace mgmrn
