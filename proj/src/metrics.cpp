// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "mgmrn/dataset_io.hpp"
#include "mgmrn/objective.hpp"

namespace mgmrn {

namespace fs = std::filesystem;
using nlohmann::json;

double per_class_top1(const std::vector<int>& predictions, const std::vector<int>& labels,
                      const std::vector<int>& class_set) {
  check(!class_set.empty(), "per_class_top1: empty class set");
  check(predictions.size() == labels.size(), "per_class_top1: prediction/label size mismatch");
  std::map<int, std::pair<std::int64_t, std::int64_t>> per_class;  // correct, total
  for (int cls : class_set) per_class[cls] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = per_class.find(labels[i]);
    check(it != per_class.end(), "per_class_top1: label outside class set");
    it->second.second += 1;
    it->second.first += predictions[i] == labels[i];
  }
  double sum = 0.0;
  std::int64_t populated = 0;
  for (const auto& [cls, counts] : per_class) {
    if (counts.second == 0) continue;  // classes without samples are excluded
    sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    ++populated;
  }
  return populated == 0 ? 0.0 : sum / static_cast<double>(populated);
}

double harmonic_mean(double s, double u) {
  const double denom = s + u;
  return denom == 0.0 ? 0.0 : 2.0 * s * u / denom;
}

namespace {

std::vector<int> argmax_with_penalty(const AusucInput& in, double gamma) {
  std::vector<char> is_seen(in.candidate_ids.size(), 0);
  for (std::size_t k = 0; k < in.candidate_ids.size(); ++k)
    is_seen[k] = std::binary_search(in.seen_classes.begin(), in.seen_classes.end(),
                                    in.candidate_ids[k]);
  std::vector<int> preds(static_cast<std::size_t>(in.scores.rows()));
  for (Index i = 0; i < in.scores.rows(); ++i) {
    Index best = -1;
    double best_score = 0.0;
    for (Index k = 0; k < in.scores.cols(); ++k) {
      const double v = in.scores(i, k) - (is_seen[static_cast<std::size_t>(k)] ? gamma : 0.0);
      if (best < 0 || v > best_score) {
        best = k;
        best_score = v;
      }
    }
    preds[static_cast<std::size_t>(i)] = in.candidate_ids[static_cast<std::size_t>(best)];
  }
  return preds;
}

std::pair<double, double> seen_unseen_accuracy(const AusucInput& in,
                                               const std::vector<int>& preds) {
  std::vector<int> seen_preds, seen_labels, unseen_preds, unseen_labels;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (in.from_unseen_split[i]) {
      unseen_preds.push_back(preds[i]);
      unseen_labels.push_back(in.labels[i]);
    } else {
      seen_preds.push_back(preds[i]);
      seen_labels.push_back(in.labels[i]);
    }
  }
  const double s = seen_preds.empty() ? 0.0 : per_class_top1(seen_preds, seen_labels, in.seen_classes);
  const double u =
      unseen_preds.empty() ? 0.0 : per_class_top1(unseen_preds, unseen_labels, in.unseen_classes);
  return {s, u};
}

// Trapezoid rule along the gamma-ordered curve. S is non-increasing and U
// non-decreasing in gamma, so consecutive points always step toward the
// S-axis and the parametric integral is the area under the staircase.
double staircase_area(const std::vector<std::pair<double, double>>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i - 1].first - pts[i].first) * 0.5 * (pts[i].second + pts[i - 1].second);
  return area;
}

}  // namespace

AusucResult ausuc_sweep(const AusucInput& input, int grid_points) {
  check(grid_points >= 2, "ausuc_sweep: need at least two grid points");
  check(input.scores.rows() == static_cast<Index>(input.labels.size()) &&
            input.scores.rows() == static_cast<Index>(input.from_unseen_split.size()),
        "ausuc_sweep: row count mismatch");
  check(std::is_sorted(input.seen_classes.begin(), input.seen_classes.end()) &&
            std::is_sorted(input.unseen_classes.begin(), input.unseen_classes.end()),
        "ausuc_sweep: class lists must be sorted");

  double m = 1e-6;
  for (Index i = 0; i < input.scores.rows(); ++i)
    m = std::max(m, input.scores.row(i).maxCoeff() - input.scores.row(i).minCoeff());

  for (int attempt = 0; attempt < 40; ++attempt) {
    const auto low = seen_unseen_accuracy(input, argmax_with_penalty(input, -m));
    const auto high = seen_unseen_accuracy(input, argmax_with_penalty(input, m));
    if (low.second == 0.0 && high.first == 0.0) break;  // U(-m)=0 and S(+m)=0
    m *= 2.0;
  }

  AusucResult out;
  std::vector<std::pair<double, double>> pts;
  for (int g = 0; g < grid_points; ++g) {
    const double gamma = -m + 2.0 * m * static_cast<double>(g) / static_cast<double>(grid_points - 1);
    const auto [s, u] = seen_unseen_accuracy(input, argmax_with_penalty(input, gamma));
    out.curve.push_back({gamma, s, u});
    pts.emplace_back(s, u);
  }
  out.area = staircase_area(pts);
  return out;
}

ErrorStats error_stats(const MatrixD& z, const MatrixD& targets) {
  check(z.rows() == targets.rows() && z.cols() == targets.cols(), "error_stats: shape mismatch");
  ErrorStats out;
  if (z.rows() == 0) return out;
  VectorD err = (z - targets).rowwise().norm();
  out.mean = err.mean();
  out.stddev = std::sqrt((err.array() - out.mean).square().mean());
  return out;
}

void export_features(const fs::path& base, const MatrixF& features, const std::vector<int>& labels,
                     const std::vector<std::string>& split_tags) {
  check(static_cast<Index>(labels.size()) == features.rows(),
        "export_features: label count vs feature rows");
  check(static_cast<Index>(split_tags.size()) == features.rows(),
        "export_features: split tag count vs feature rows");
  fs::path bin = base;
  bin += ".bin";
  write_f32(bin, features.data(), static_cast<std::size_t>(features.size()));
  json j;
  j["rows"] = features.rows();
  j["cols"] = features.cols();
  j["dtype"] = "float32";
  j["file"] = bin.filename().string();
  j["labels"] = labels;
  j["split_tags"] = split_tags;
  fs::path meta = base;
  meta += ".json";
  std::ofstream os(meta, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + meta.string());
  os << j.dump(2) << "\n";
}

ExportedFeatures load_features(const fs::path& base) {
  fs::path meta = base;
  meta += ".json";
  std::ifstream is(meta);
  if (!is) throw std::runtime_error("missing file: " + meta.string());
  json j = json::parse(is);
  ExportedFeatures out;
  const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  out.features.resize(rows, cols);
  auto raw = read_f32(base.parent_path() / j.at("file").get<std::string>(),
                      static_cast<std::size_t>(rows * cols));
  std::copy(raw.begin(), raw.end(), out.features.data());
  out.labels = j.at("labels").get<std::vector<int>>();
  out.split_tags = j.at("split_tags").get<std::vector<std::string>>();
  return out;
}

std::vector<MatrixF> predict_stage_semantics(Model<float>& model, const DatasetBundle& data,
                                             const std::vector<Index>& items, int batch_size) {
  check(batch_size >= 1, "predict_stage_semantics: batch_size must be >= 1");
  const Index stages = model.decoded_stages();
  std::vector<MatrixF> z(static_cast<std::size_t>(stages));
  for (auto& m : z) m.setZero(static_cast<Index>(items.size()), model.d_s);
  const Index sites = data.images.sites();
  for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(items.size() - start, static_cast<std::size_t>(batch_size));
    Tensor4F batch(static_cast<Index>(count), data.images.height, data.images.width,
                   data.images.channels);
    for (std::size_t i = 0; i < count; ++i)
      batch.item(static_cast<Index>(i)) = data.images.data.middleRows(items[start + i] * sites, sites);
    auto out = model.forward(batch);
    for (Index l = 0; l < stages; ++l)
      z[static_cast<std::size_t>(l)].middleRows(static_cast<Index>(start),
                                                static_cast<Index>(count)) =
          out.z[static_cast<std::size_t>(l)];
  }
  return z;
}

namespace {

std::vector<int> labels_of(const DatasetBundle& data, const std::vector<Index>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (Index i : items) out.push_back(data.labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

EvalReport evaluate_model(Model<float>& model, const DatasetBundle& data,
                          const EvalOptions& options) {
  check(!data.test_seen_indices.empty(), "evaluate_model: empty test-seen split");
  check(!data.test_unseen_indices.empty(), "evaluate_model: empty test-unseen split");

  auto z_seen = predict_stage_semantics(model, data, data.test_seen_indices, options.batch_size);
  auto z_unseen =
      predict_stage_semantics(model, data, data.test_unseen_indices, options.batch_size);
  const auto labels_seen = labels_of(data, data.test_seen_indices);
  const auto labels_unseen = labels_of(data, data.test_unseen_indices);
  const MatrixF& attrs = data.attribute_space.class_attributes;

  EvalReport report;

  // CZSL: unseen candidates only.
  auto czsl = predict(z_unseen, attrs, data.unseen_classes);
  report.t1 = per_class_top1(czsl.predictions, labels_unseen, data.unseen_classes);

  // GZSL: candidates are all declared classes.
  std::vector<int> all_classes = data.seen_classes;
  all_classes.insert(all_classes.end(), data.unseen_classes.begin(), data.unseen_classes.end());
  std::sort(all_classes.begin(), all_classes.end());
  auto gz_seen = predict(z_seen, attrs, all_classes);
  auto gz_unseen = predict(z_unseen, attrs, all_classes);
  report.s = per_class_top1(gz_seen.predictions, labels_seen, data.seen_classes);
  report.u = per_class_top1(gz_unseen.predictions, labels_unseen, data.unseen_classes);
  report.h = harmonic_mean(report.s, report.u);

  if (options.with_ausuc) {
    AusucInput in;
    in.candidate_ids = all_classes;
    in.seen_classes = data.seen_classes;
    in.unseen_classes = data.unseen_classes;
    const Index n = gz_seen.scores.rows() + gz_unseen.scores.rows();
    in.scores.resize(n, gz_seen.scores.cols());
    in.scores.topRows(gz_seen.scores.rows()) = gz_seen.scores.cast<double>();
    in.scores.bottomRows(gz_unseen.scores.rows()) = gz_unseen.scores.cast<double>();
    in.labels = labels_seen;
    in.labels.insert(in.labels.end(), labels_unseen.begin(), labels_unseen.end());
    in.from_unseen_split.assign(labels_seen.size(), 0);
    in.from_unseen_split.insert(in.from_unseen_split.end(), labels_unseen.size(), 1);
    report.ausuc = ausuc_sweep(in, options.ausuc_grid);
    report.has_ausuc = true;
  }

  if (options.with_errors) {
    auto mean_stage = [](const std::vector<MatrixF>& z) {
      MatrixD acc = z.front().cast<double>();
      for (std::size_t l = 1; l < z.size(); ++l) acc += z[l].cast<double>();
      return MatrixD(acc / static_cast<double>(z.size()));
    };
    auto targets_for = [&attrs](const std::vector<int>& labels) {
      MatrixD t(static_cast<Index>(labels.size()), attrs.cols());
      for (std::size_t i = 0; i < labels.size(); ++i)
        t.row(static_cast<Index>(i)) = attrs.row(labels[i]).cast<double>();
      return t;
    };
    report.seen_errors = error_stats(mean_stage(z_seen), targets_for(labels_seen));
    report.unseen_errors = error_stats(mean_stage(z_unseen), targets_for(labels_unseen));
    report.has_errors = true;
  }
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["t1"] = report.t1;
  j["u"] = report.u;
  j["s"] = report.s;
  j["h"] = report.h;
  if (report.has_ausuc) j["ausuc"] = report.ausuc.area;
  if (report.has_errors) {
    j["errors"]["seen"] = {{"mean", report.seen_errors.mean},
                           {"stddev", report.seen_errors.stddev}};
    j["errors"]["unseen"] = {{"mean", report.unseen_errors.mean},
                             {"stddev", report.unseen_errors.stddev}};
  }
  return j.dump(2);
}

std::string ausuc_curve_to_csv(const AusucResult& result) {
  std::ostringstream os;
  os << "gamma,seen_acc,unseen_acc\n";
  os.precision(10);
  for (const auto& p : result.curve)
    os << p.gamma << "," << p.seen_acc << "," << p.unseen_acc << "\n";
  return os.str();
}

}  // namespace mgmrn
