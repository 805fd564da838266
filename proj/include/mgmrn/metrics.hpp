// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgmrn/datamodel.hpp"
#include "mgmrn/model.hpp"

namespace mgmrn {

/// Mean over classes of the in-class accuracy. Classes without test samples
/// are excluded from the mean.
double per_class_top1(const std::vector<int>& predictions, const std::vector<int>& labels,
                      const std::vector<int>& class_set);

/// 2*S*U / (S + U); 0 when S + U == 0.
double harmonic_mean(double s, double u);

struct GzslResult {
  double u = 0.0, s = 0.0, h = 0.0;
};

struct AusucPoint {
  double gamma = 0.0, seen_acc = 0.0, unseen_acc = 0.0;
};

struct AusucResult {
  double area = 0.0;
  std::vector<AusucPoint> curve;  // gamma ascending
};

/// Inputs for the calibrated-stacking sweep: scores over every class for all
/// test items of both splits.
struct AusucInput {
  MatrixD scores;                  // [N x K], columns follow candidate_ids
  std::vector<int> candidate_ids;  // ascending, seen and unseen classes
  std::vector<int> labels;         // N
  std::vector<char> from_unseen_split;  // N; true counts toward U
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
};

/// Sweeps a penalty subtracted from every seen-class score before the argmax
/// and integrates the traced (S, U) curve with the trapezoid rule. The sweep
/// range doubles until the curve reaches both axes (S = 0 and U = 0).
AusucResult ausuc_sweep(const AusucInput& input, int grid_points = 201);

struct ErrorStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

/// Euclidean error per item between predicted and true attribute vectors.
ErrorStats error_stats(const MatrixD& z, const MatrixD& targets);

/// Binary float32 matrix + JSON sidecar with labels and split tags, for
/// external projection tools. `base` is extended with .bin / .json.
void export_features(const std::filesystem::path& base, const MatrixF& features,
                     const std::vector<int>& labels, const std::vector<std::string>& split_tags);

struct ExportedFeatures {
  MatrixF features;
  std::vector<int> labels;
  std::vector<std::string> split_tags;
};
ExportedFeatures load_features(const std::filesystem::path& base);

struct EvalOptions {
  int batch_size = 64;
  bool with_ausuc = false;
  bool with_errors = false;
  int ausuc_grid = 201;
};

struct EvalReport {
  double t1 = 0.0;  // CZSL per-class top-1 on the unseen split
  double u = 0.0, s = 0.0, h = 0.0;
  bool has_ausuc = false;
  AusucResult ausuc;
  bool has_errors = false;
  ErrorStats seen_errors, unseen_errors;  // on the stage-averaged prediction
};

/// Runs both test splits through the model and assembles every metric the
/// report asks for. Requires nonempty test splits.
EvalReport evaluate_model(Model<float>& model, const DatasetBundle& data,
                          const EvalOptions& options);

std::string eval_report_to_json(const EvalReport& report);
std::string ausuc_curve_to_csv(const AusucResult& result);

/// Per-stage semantic predictions for a list of items, forwarded in batches.
std::vector<MatrixF> predict_stage_semantics(Model<float>& model, const DatasetBundle& data,
                                             const std::vector<Index>& items, int batch_size);

}  // namespace mgmrn
