// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mgmrn/metrics.hpp"
#include "mgmrn/numerics.hpp"
#include "mgmrn/synth.hpp"
#include "mgmrn/trainer.hpp"

using namespace mgmrn;
namespace fs = std::filesystem;

namespace {

DatasetBundle tiny_bundle() {
  SynthSpec spec;
  spec.num_classes = 6;
  spec.num_seen = 4;
  spec.d_s = 6;
  spec.images_per_class = 4;
  spec.image_size = 8;
  spec.d_w2v = 5;
  spec.seed = 21;
  return synth_generate(spec);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_stages = 2;
  cfg.parts = 2;
  cfg.common_channels = 6;
  cfg.d_model = 8;
  cfg.backbone_widths = {4, 6};
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.eval_every = 1;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters untouched") {
  DatasetBundle data = tiny_bundle();
  ModelConfig cfg = tiny_config();
  cfg.learning_rate = 0.0;
  Trainer trainer(cfg, data);
  std::vector<MatrixF> before;
  for (auto& p : trainer.model().params()) before.push_back(*p.value);
  StepStats stats = trainer.train_step({data.train_indices.begin(), data.train_indices.begin() + 4});
  CHECK(std::isfinite(stats.loss));
  CHECK(stats.loss > 0.0);
  auto refs = trainer.model().params();
  for (std::size_t i = 0; i < refs.size(); ++i) CHECK(*refs[i].value == before[i]);
}

TEST_CASE("same seed, same trace") {
  DatasetBundle data = tiny_bundle();
  Trainer a(tiny_config(), data);
  Trainer b(tiny_config(), data);
  auto ra = a.fit();
  auto rb = b.fit();
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].loss == rb.history[i].loss);
    CHECK(ra.history[i].has_metrics == rb.history[i].has_metrics);
    if (ra.history[i].has_metrics) CHECK(ra.history[i].metrics.h == rb.history[i].metrics.h);
  }
}

TEST_CASE("zero epochs yield the initial state and empty history") {
  DatasetBundle data = tiny_bundle();
  ModelConfig cfg = tiny_config();
  cfg.epochs = 0;
  Trainer trainer(cfg, data);
  auto result = trainer.fit();
  CHECK(result.history.empty());
  CHECK(result.final_state.epoch == 0);
  auto refs = trainer.model().params();
  for (std::size_t i = 0; i < refs.size(); ++i)
    CHECK(*refs[i].value == result.final_state.params[i].second);
}

TEST_CASE("config snapshot echoes the input config") {
  DatasetBundle data = tiny_bundle();
  ModelConfig cfg = tiny_config();
  cfg.parts = 2;
  cfg.tau = 0.5;
  Trainer trainer(cfg, data);
  auto result = trainer.fit();
  CHECK(config_to_json(result.final_state.config) == config_to_json(cfg));
}

TEST_CASE("checkpoint round trip is byte-identical") {
  DatasetBundle data = tiny_bundle();
  Trainer trainer(tiny_config(), data);
  auto result = trainer.fit();

  fs::path f1 = fs::temp_directory_path() / "mgmrn_ck1.bin";
  fs::path f2 = fs::temp_directory_path() / "mgmrn_ck2.bin";
  save_checkpoint(f1, result.final_state);
  TrainState loaded = load_checkpoint(f1);
  save_checkpoint(f2, loaded);

  std::ifstream a(f1, std::ios::binary), b(f2, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK(!bytes_a.empty());

  // restoring reproduces the exact parameters
  Model<float> rebuilt = model_from_state(loaded);
  auto refs_a = trainer.model().params();
  auto refs_b = rebuilt.params();
  REQUIRE(refs_a.size() == refs_b.size());
  for (std::size_t i = 0; i < refs_a.size(); ++i) CHECK(*refs_a[i].value == *refs_b[i].value);

  fs::remove(f1);
  fs::remove(f2);
}

TEST_CASE("restored checkpoints evaluate identically") {
  DatasetBundle data = tiny_bundle();
  Trainer trainer(tiny_config(), data);
  auto result = trainer.fit();
  EvalReport direct = evaluate_model(trainer.model(), data, EvalOptions{});

  fs::path f = fs::temp_directory_path() / "mgmrn_ck3.bin";
  save_checkpoint(f, result.final_state);
  Model<float> rebuilt = model_from_state(load_checkpoint(f));
  EvalReport replay = evaluate_model(rebuilt, data, EvalOptions{});
  CHECK(direct.t1 == replay.t1);
  CHECK(direct.h == replay.h);
  fs::remove(f);
}

TEST_CASE("non-finite parameters abort with a named tensor") {
  DatasetBundle data = tiny_bundle();
  Trainer trainer(tiny_config(), data);
  auto refs = trainer.model().params();
  (*refs[2].value)(0, 0) = std::numeric_limits<float>::quiet_NaN();
  std::vector<Index> batch(data.train_indices.begin(), data.train_indices.begin() + 4);
  CHECK_THROWS_AS(trainer.train_step(batch), NonFiniteError);
  try {
    trainer.train_step(batch);
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("whole-model gradients match finite differences on the frozen micro-config") {
  // L=2 stages, common grid 2x2, C=4, d_s=3, d_model=4, batch 1.
  ModelConfig cfg;
  cfg.num_stages = 2;
  cfg.parts = 2;
  cfg.common_channels = 4;
  cfg.d_model = 4;
  cfg.backbone_widths = {3, 4};
  cfg.heads = 1;
  cfg.seed = 17;

  Rng rng(31);
  MatrixF wv(3, 5);
  fill_normal(wv, 1.0, rng);
  Model<double> model = Model<double>::build(cfg, wv, 8, 8, 2);
  model.init(rng);

  Tensor4D images(1, 8, 8, 2);
  fill_normal(images.data, 0.5, rng);
  images.data = images.data.array().min(1.0).max(0.0);

  std::vector<MatrixD> readout(2, MatrixD(1, 3));
  fill_normal(readout[0], 1.0, rng);
  fill_normal(readout[1], 1.0, rng);

  auto forward_scalar = [&] {
    auto out = model.forward(images);
    return (out.z[0].array() * readout[0].array()).sum() +
           (out.z[1].array() * readout[1].array()).sum();
  };
  auto compute = [&] {
    model.zero_grads();
    model.forward(images);
    model.backward(readout);
  };
  auto report = grad_check(model.params(), forward_scalar, compute, 1e-5);
  CHECK(report.max_rel_err() < 1e-3);
}
