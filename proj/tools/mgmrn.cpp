// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset synthesis, training, evaluation, the
// hyperparameter sweep and attention/feature export.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mgmrn/checkpoint.hpp"
#include "mgmrn/dataset_io.hpp"
#include "mgmrn/metrics.hpp"
#include "mgmrn/synth.hpp"
#include "mgmrn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgmrn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void write_text(const fs::path& file, const std::string& text) {
  if (!file.parent_path().empty()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + file.string());
  os << text;
  if (!text.empty() && text.back() != '\n') os << "\n";
}

/// Every command records its invocation before any heavy work starts.
void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const std::string& config_path, const std::string& data_path,
                        std::uint64_t seed, int argc, char** argv) {
  json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["data_path"] = data_path;
  j["output_dir"] = out_dir.string();
  j["seed"] = seed;
  j["started_at"] = timestamp_utc();
  std::vector<std::string> args(argv, argv + argc);
  j["argv"] = args;
  fs::create_directories(out_dir);
  write_text(out_dir / "run_manifest.json", j.dump(2));
}

std::uint64_t seed_fallback() {
  if (const char* env = std::getenv("MGMRN_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw std::invalid_argument("MGMRN_SEED is not a valid integer: " + std::string(env));
    }
  }
  return 0;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

struct TrainFlags {
  std::string data, out = "run", config;
  ModelConfig cfg;
  std::string variant = "full", schedule = "cosine";
  std::uint64_t seed = 0;
};

/// Registers the shared training flags on a subcommand. Precedence is
/// flags > config file > built-in defaults.
void add_train_options(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "dataset directory")->required();
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--config", f.config, "JSON config file (flags override it)");
  cmd->add_option("--epochs", f.cfg.epochs, "training epochs");
  cmd->add_option("--L", f.cfg.num_stages, "number of granularity stages");
  cmd->add_option("--np", f.cfg.parts, "region prototypes per stage");
  cmd->add_option("--grid", f.cfg.grid_h, "common grid size (square; 0 = deepest stage grid)");
  cmd->add_option("--channels", f.cfg.common_channels, "common channel width C");
  cmd->add_option("--dmodel", f.cfg.d_model, "decoder width");
  cmd->add_option("--heads", f.cfg.heads, "decoder attention heads");
  cmd->add_option("--lr", f.cfg.learning_rate, "learning rate");
  cmd->add_option("--schedule", f.schedule, "lr schedule: constant|cosine");
  cmd->add_option("--momentum", f.cfg.momentum, "SGD momentum");
  cmd->add_option("--wd", f.cfg.weight_decay, "weight decay");
  cmd->add_option("--batch", f.cfg.batch_size, "batch size");
  cmd->add_option("--tau", f.cfg.tau, "compatibility-loss temperature");
  cmd->add_option("--lambda-sce", f.cfg.lambda_sce, "compatibility loss weight");
  cmd->add_option("--lambda-ar", f.cfg.lambda_ar, "regression loss weight");
  cmd->add_option("--eval-every", f.cfg.eval_every, "evaluate every N epochs");
  cmd->add_option("--variant", f.variant, "model variant: baseline|mgm|full");
  cmd->add_option("--seed", f.seed, "run seed (falls back to MGMRN_SEED)");
}

ModelConfig resolve_config(const CLI::App* cmd, const TrainFlags& f) {
  ModelConfig cfg;
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    if (!is) throw std::runtime_error("missing file: " + f.config);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    cfg = config_from_json(text);
  }
  auto take = [&cmd](const char* flag, auto& into, const auto& value) {
    if (cmd->count(flag) > 0) into = value;
  };
  take("--epochs", cfg.epochs, f.cfg.epochs);
  take("--L", cfg.num_stages, f.cfg.num_stages);
  take("--np", cfg.parts, f.cfg.parts);
  if (cmd->count("--grid") > 0) {
    cfg.grid_h = f.cfg.grid_h;
    cfg.grid_w = f.cfg.grid_h;
  }
  take("--channels", cfg.common_channels, f.cfg.common_channels);
  take("--dmodel", cfg.d_model, f.cfg.d_model);
  take("--heads", cfg.heads, f.cfg.heads);
  take("--lr", cfg.learning_rate, f.cfg.learning_rate);
  if (cmd->count("--schedule") > 0) cfg.lr_schedule = schedule_from_name(f.schedule);
  take("--momentum", cfg.momentum, f.cfg.momentum);
  take("--wd", cfg.weight_decay, f.cfg.weight_decay);
  take("--batch", cfg.batch_size, f.cfg.batch_size);
  take("--tau", cfg.tau, f.cfg.tau);
  take("--lambda-sce", cfg.lambda_sce, f.cfg.lambda_sce);
  take("--lambda-ar", cfg.lambda_ar, f.cfg.lambda_ar);
  take("--eval-every", cfg.eval_every, f.cfg.eval_every);
  if (cmd->count("--variant") > 0) cfg.variant = variant_from_name(f.variant);
  cfg.seed = cmd->count("--seed") > 0 ? f.seed : seed_fallback();
  cfg.validate();
  return cfg;
}

void print_metrics_line(const EvalReport& r) {
  std::cout << "T1 " << r.t1 << "  U " << r.u << "  S " << r.s << "  H " << r.h << "\n";
}

EvalReport train_once(const ModelConfig& cfg, const DatasetBundle& data, const fs::path& out_dir,
                      bool quiet = false) {
  Trainer trainer(cfg, data);
  auto result = trainer.fit();

  save_checkpoint(out_dir / "checkpoint.bin", result.best);
  write_text(out_dir / "history.json", history_to_json(result.history));

  Model<float> best = model_from_state(result.best);
  EvalReport report = evaluate_model(best, data, EvalOptions{});
  write_text(out_dir / "final_metrics.json", eval_report_to_json(report));
  if (!quiet) {
    std::cout << "saved " << (out_dir / "checkpoint.bin").string() << "\n";
    print_metrics_line(report);
  }
  return report;
}

/// Classifies a metric sequence along one hyperparameter axis.
std::string trend_of(const std::vector<double>& v) {
  if (v.size() < 2) return "flat";
  const double tol = 1e-9;
  bool rising = true, falling = true;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1] - tol) rising = false;
    if (v[i] > v[i - 1] + tol) falling = false;
    if (v[i] > v[peak]) peak = i;
  }
  if (rising) return "increasing";
  if (falling) return "decreasing";
  bool unimodal = true;
  for (std::size_t i = 1; i <= peak; ++i)
    if (v[i] < v[i - 1] - tol) unimodal = false;
  for (std::size_t i = peak + 1; i < v.size(); ++i)
    if (v[i] > v[i - 1] + tol) unimodal = false;
  return unimodal ? "rise-then-fall" : "non-monotone";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-granularity zero-shot learning toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
  SynthSpec synth_spec;
  std::string synth_out = "dataset";
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output dataset directory");
  synth->add_option("--classes", synth_spec.num_classes, "total classes");
  synth->add_option("--seen", synth_spec.num_seen, "seen classes");
  synth->add_option("--attrs", synth_spec.d_s, "attribute count d_s");
  synth->add_option("--per-class", synth_spec.images_per_class, "images per class");
  synth->add_option("--size", synth_spec.image_size, "image edge length");
  synth->add_option("--dw2v", synth_spec.d_w2v, "attribute word-vector width");
  synth->add_option("--train-fraction", synth_spec.train_fraction,
                    "train share of each seen class");
  synth->add_option("--seed", synth_seed, "generator seed (falls back to MGMRN_SEED)");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train a model and keep the best-H checkpoint");
  TrainFlags tf;
  add_train_options(train, tf);

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_out = "eval", eval_mode = "gzsl";
  bool eval_export = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--mode", eval_mode, "czsl|gzsl|ausuc|errors");
  eval->add_flag("--export-features", eval_export,
                 "also export stage-averaged semantic features per test item");

  // ---- visualize ----
  auto* vis = app.add_subcommand("visualize", "export attention maps and region masks");
  std::string vis_ckpt, vis_data, vis_out = "maps", vis_items, vis_attrs;
  vis->add_option("--checkpoint", vis_ckpt, "checkpoint file")->required();
  vis->add_option("--data", vis_data, "dataset directory")->required();
  vis->add_option("--out", vis_out, "output directory");
  vis->add_option("--items", vis_items, "comma-separated item ids")->required();
  vis->add_option("--attributes", vis_attrs, "comma-separated attribute names")->required();

  // ---- sweep ----
  auto* sweep = app.add_subcommand("sweep", "train over a grid of L and N_p and report trends");
  TrainFlags sf;
  add_train_options(sweep, sf);
  std::string sweep_l = "1,2,3", sweep_np = "1,3,5,7";
  sweep->add_option("--L-values", sweep_l, "comma-separated stage counts");
  sweep->add_option("--np-values", sweep_np, "comma-separated prototype counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      synth_spec.seed = synth->count("--seed") > 0 ? synth_seed : seed_fallback();
      write_run_manifest(synth_out, "synth", "", "", synth_spec.seed, argc, argv);
      DatasetBundle bundle = synth_generate(synth_spec);
      save_bundle(synth_out, bundle);
      std::cout << "dataset: " << synth_out << "\n"
                << "classes total/seen/unseen: " << synth_spec.num_classes << " / "
                << bundle.seen_classes.size() << " / " << bundle.unseen_classes.size() << "\n"
                << "images total/train/test-unseen/seen: " << bundle.num_items() << " / "
                << bundle.train_indices.size() << " / " << bundle.test_unseen_indices.size()
                << " / " << bundle.test_seen_indices.size() << "\n"
                << "semantic dimension: " << synth_spec.d_s << "\n";
      return 0;
    }

    if (train->parsed()) {
      ModelConfig cfg = resolve_config(train, tf);
      write_run_manifest(tf.out, "train", tf.config, tf.data, cfg.seed, argc, argv);
      write_text(fs::path(tf.out) / "effective_config.json", config_to_json(cfg));
      DatasetBundle data = load_bundle(tf.data);
      train_once(cfg, data, tf.out);
      return 0;
    }

    if (eval->parsed()) {
      if (eval_mode != "czsl" && eval_mode != "gzsl" && eval_mode != "ausuc" &&
          eval_mode != "errors") {
        std::cerr << "unknown eval mode: " << eval_mode << "\n";
        return kExitUsage;
      }
      write_run_manifest(eval_out, "eval", "", eval_data, 0, argc, argv);
      TrainState state = load_checkpoint(eval_ckpt);
      DatasetBundle data = load_bundle(eval_data);
      if (state.d_s != data.attribute_space.num_attributes())
        throw std::runtime_error("incompatible attribute dimension: checkpoint d_s=" +
                                 std::to_string(state.d_s) + ", dataset d_s=" +
                                 std::to_string(data.attribute_space.num_attributes()));
      Model<float> model = model_from_state(state);
      EvalOptions options;
      options.with_ausuc = eval_mode == "ausuc";
      options.with_errors = eval_mode == "errors";
      EvalReport report = evaluate_model(model, data, options);
      write_text(fs::path(eval_out) / "report.json", eval_report_to_json(report));
      if (report.has_ausuc)
        write_text(fs::path(eval_out) / "ausuc_curve.csv", ausuc_curve_to_csv(report.ausuc));
      if (eval_export) {
        std::vector<Index> items = data.test_seen_indices;
        items.insert(items.end(), data.test_unseen_indices.begin(),
                     data.test_unseen_indices.end());
        auto z = predict_stage_semantics(model, data, items, 64);
        MatrixF mean = z.front();
        for (std::size_t l = 1; l < z.size(); ++l) mean += z[l];
        mean /= static_cast<float>(z.size());
        std::vector<int> labels;
        std::vector<std::string> tags;
        for (std::size_t i = 0; i < items.size(); ++i) {
          labels.push_back(data.labels[static_cast<std::size_t>(items[i])]);
          tags.push_back(i < data.test_seen_indices.size() ? "test_seen" : "test_unseen");
        }
        export_features(fs::path(eval_out) / "semantic_features", mean, labels, tags);
      }
      print_metrics_line(report);
      return 0;
    }

    if (vis->parsed()) {
      write_run_manifest(vis_out, "visualize", "", vis_data, 0, argc, argv);
      TrainState state = load_checkpoint(vis_ckpt);
      DatasetBundle data = load_bundle(vis_data);
      if (state.d_s != data.attribute_space.num_attributes())
        throw std::runtime_error("incompatible attribute dimension");
      Model<float> model = model_from_state(state);

      std::vector<int> item_ids = parse_int_list(vis_items);
      std::vector<std::string> attr_names = parse_name_list(vis_attrs);
      if (item_ids.empty() || attr_names.empty()) {
        std::cerr << "need at least one item and one attribute\n";
        return kExitUsage;
      }
      std::vector<int> attr_ids;
      for (const auto& name : attr_names) {
        const int idx = data.attribute_space.attribute_index(name);
        if (idx < 0) {
          std::cerr << "unknown attribute name: " << name << "\n";
          return kExitUsage;
        }
        attr_ids.push_back(idx);
      }
      for (int id : item_ids)
        if (id < 0 || id >= data.num_items())
          throw std::runtime_error("item id out of range: " + std::to_string(id));

      std::vector<Index> items(item_ids.begin(), item_ids.end());
      Tensor4F batch(static_cast<Index>(items.size()), data.images.height, data.images.width,
                     data.images.channels);
      const Index sites = data.images.sites();
      for (std::size_t i = 0; i < items.size(); ++i)
        batch.item(static_cast<Index>(i)) = data.images.data.middleRows(items[i] * sites, sites);
      auto out = model.forward(batch);

      fs::create_directories(vis_out);
      json sidecar;
      sidecar["image_size"] = {data.images.height, data.images.width};
      sidecar["entries"] = json::array();
      for (std::size_t i = 0; i < items.size(); ++i) {
        for (std::size_t a = 0; a < attr_ids.size(); ++a) {
          std::vector<MatrixF> per_stage;
          for (std::size_t l = 0; l < out.attention.size(); ++l) {
            MatrixF row =
                out.attention[l].row(static_cast<Index>(i) * model.d_s + attr_ids[a]);
            per_stage.push_back(attention_grid_map(row, out.grid_h, out.grid_w));
          }
          MatrixF fused = fuse_attention_maps(per_stage);
          MatrixF up = bilinear_upsample(fused, data.images.height, data.images.width);
          const std::string file =
              "map_item" + std::to_string(item_ids[i]) + "_" + attr_names[a] + ".bin";
          write_f32(fs::path(vis_out) / file, up.data(), static_cast<std::size_t>(up.size()));
          sidecar["entries"].push_back({{"item", item_ids[i]},
                                        {"attribute", attr_names[a]},
                                        {"attribute_index", attr_ids[a]},
                                        {"file", file},
                                        {"rows", up.rows()},
                                        {"cols", up.cols()}});
        }
      }
      write_text(fs::path(vis_out) / "maps.json", sidecar.dump(2));

      // region masks per stage, for the same items
      json mask_meta;
      mask_meta["entries"] = json::array();
      for (std::size_t l = 0; l < out.region_masks.size(); ++l) {
        const auto [mh, mw] = out.mask_grids[l];
        const Index parts = out.region_masks[l].cols();
        const std::string file = "masks_stage" + std::to_string(l + 1) + ".bin";
        // layout: item x prototype x height x width
        std::vector<float> blob;
        blob.reserve(static_cast<std::size_t>(items.size() * parts * mh * mw));
        for (std::size_t i = 0; i < items.size(); ++i)
          for (Index m = 0; m < parts; ++m)
            for (Index s = 0; s < mh * mw; ++s)
              blob.push_back(out.region_masks[l](static_cast<Index>(i) * mh * mw + s, m));
        write_f32(fs::path(vis_out) / file, blob.data(), blob.size());
        mask_meta["entries"].push_back({{"stage", l + 1},
                                        {"file", file},
                                        {"items", item_ids},
                                        {"prototypes", parts},
                                        {"rows", mh},
                                        {"cols", mw}});
      }
      write_text(fs::path(vis_out) / "masks.json", mask_meta.dump(2));
      std::cout << "wrote " << sidecar["entries"].size() << " attention maps to " << vis_out
                << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      ModelConfig base = resolve_config(sweep, sf);
      write_run_manifest(sf.out, "sweep", sf.config, sf.data, base.seed, argc, argv);
      DatasetBundle data = load_bundle(sf.data);
      const std::vector<int> l_values = parse_int_list(sweep_l);
      const std::vector<int> np_values = parse_int_list(sweep_np);
      if (l_values.empty() || np_values.empty()) {
        std::cerr << "empty sweep grid\n";
        return kExitUsage;
      }

      json combos = json::array();
      std::map<std::pair<int, int>, EvalReport> grid;
      for (int l : l_values) {
        for (int np : np_values) {
          ModelConfig cfg = base;
          cfg.num_stages = l;
          cfg.parts = np;
          cfg.parts_per_stage.clear();
          cfg.backbone_widths.clear();
          const fs::path run_dir =
              fs::path(sf.out) / ("L" + std::to_string(l) + "_np" + std::to_string(np));
          fs::create_directories(run_dir);
          write_text(run_dir / "effective_config.json", config_to_json(cfg));
          std::cout << "sweep L=" << l << " np=" << np << " ..." << std::flush;
          EvalReport r = train_once(cfg, data, run_dir, /*quiet=*/true);
          std::cout << " T1 " << r.t1 << " H " << r.h << "\n";
          grid[{l, np}] = r;
          combos.push_back(
              {{"L", l}, {"np", np}, {"t1", r.t1}, {"u", r.u}, {"s", r.s}, {"h", r.h}});
        }
      }

      json trends = json::array();
      for (int np : np_values) {
        std::vector<double> t1s, hs;
        for (int l : l_values) {
          t1s.push_back(grid[{l, np}].t1);
          hs.push_back(grid[{l, np}].h);
        }
        trends.push_back({{"axis", "L"},
                          {"np", np},
                          {"t1_trend", trend_of(t1s)},
                          {"h_trend", trend_of(hs)}});
      }
      for (int l : l_values) {
        std::vector<double> t1s, hs;
        for (int np : np_values) {
          t1s.push_back(grid[{l, np}].t1);
          hs.push_back(grid[{l, np}].h);
        }
        trends.push_back({{"axis", "np"},
                          {"L", l},
                          {"t1_trend", trend_of(t1s)},
                          {"h_trend", trend_of(hs)}});
      }

      json report;
      report["grid"] = combos;
      report["trends"] = trends;
      write_text(fs::path(sf.out) / "sweep_report.json", report.dump(2));
      std::cout << "sweep report: " << (fs::path(sf.out) / "sweep_report.json").string() << "\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
