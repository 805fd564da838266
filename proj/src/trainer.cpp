// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/trainer.hpp"

#include <cmath>

#include "mgmrn/metrics.hpp"
#include "mgmrn/objective.hpp"

namespace mgmrn {

namespace {

std::uint64_t epoch_seed(std::uint64_t run_seed, int epoch) {
  std::uint64_t x = run_seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  return x;
}

}  // namespace

Trainer::Trainer(const ModelConfig& config, const DatasetBundle& data)
    : config_(config), data_(&data), rng_(config.seed) {
  config_.validate();
  model_ = Model<float>::build(config_, data.attribute_space.attribute_word_vectors,
                               data.images.height, data.images.width, data.images.channels);
  model_.init(config_.seed);

  seen_ids_ = data.seen_classes;
  seen_signatures_.resize(static_cast<Index>(seen_ids_.size()),
                          data.attribute_space.num_attributes());
  for (std::size_t k = 0; k < seen_ids_.size(); ++k)
    seen_signatures_.row(static_cast<Index>(k)) =
        data.attribute_space.class_attributes.row(seen_ids_[k]);
}

Tensor4F Trainer::gather_images(const std::vector<Index>& items) const {
  const Tensor4F& images = data_->images;
  Tensor4F batch(static_cast<Index>(items.size()), images.height, images.width, images.channels);
  const Index sites = images.sites();
  for (std::size_t i = 0; i < items.size(); ++i)
    batch.item(static_cast<Index>(i)) = images.data.middleRows(items[i] * sites, sites);
  return batch;
}

StepStats Trainer::train_step(const std::vector<Index>& batch_items) {
  check(!batch_items.empty(), "train_step: empty batch");
  Tensor4F batch = gather_images(batch_items);

  std::vector<int> labels;
  labels.reserve(batch_items.size());
  for (Index i : batch_items) labels.push_back(data_->labels[static_cast<std::size_t>(i)]);
  const std::vector<Index> label_pos = label_positions(labels, seen_ids_);

  MatrixF targets(static_cast<Index>(labels.size()), data_->attribute_space.num_attributes());
  for (std::size_t i = 0; i < labels.size(); ++i)
    targets.row(static_cast<Index>(i)) = data_->attribute_space.class_attributes.row(labels[i]);

  model_.zero_grads();
  auto out = model_.forward(batch);
  auto loss = total_loss(out.z, seen_signatures_, label_pos, targets,
                         static_cast<float>(config_.lambda_sce),
                         static_cast<float>(config_.lambda_ar), static_cast<float>(config_.tau));

  if (!std::isfinite(static_cast<double>(loss.value))) {
    for (std::size_t l = 0; l < out.z.size(); ++l)
      if (!out.z[l].allFinite())
        throw NonFiniteError("non-finite loss: first non-finite tensor is stage " +
                             std::to_string(l + 1) + " semantic prediction");
    const std::string bad = model_.first_nonfinite_param();
    throw NonFiniteError("non-finite loss: first non-finite tensor is " +
                         (bad.empty() ? std::string("the loss itself") : bad));
  }

  model_.backward(loss.dz);
  sgd_update();

  StepStats stats;
  stats.loss = static_cast<double>(loss.value);
  for (float v : loss.sce_per_stage) stats.sce_per_stage.push_back(static_cast<double>(v));
  for (float v : loss.ar_per_stage) stats.ar_per_stage.push_back(static_cast<double>(v));
  return stats;
}

double Trainer::current_learning_rate() const {
  if (config_.lr_schedule == LrSchedule::constant || config_.epochs <= 1 || epoch_ <= 0)
    return config_.learning_rate;
  const double t = static_cast<double>(epoch_ - 1) / static_cast<double>(config_.epochs);
  return config_.learning_rate * 0.5 * (1.0 + std::cos(M_PI * t));
}

void Trainer::sgd_update() {
  const float lr = static_cast<float>(current_learning_rate());
  const float mu = static_cast<float>(config_.momentum);
  const float wd = static_cast<float>(config_.weight_decay);
  for (auto& p : model_.params()) {
    auto [it, inserted] = momentum_.try_emplace(p.name);
    if (inserted) it->second.setZero(p.value->rows(), p.value->cols());
    MatrixF& vel = it->second;
    vel = mu * vel + (*p.grad + wd * *p.value);
    *p.value -= lr * vel;
  }
}

Trainer::FitResult Trainer::fit() {
  FitResult result;
  const bool can_eval = !data_->test_seen_indices.empty() && !data_->test_unseen_indices.empty();

  auto snapshot = [this](const std::vector<HistoryEntry>& history) {
    return snapshot_state(model_, epoch_, rng_.state(), history, momentum_);
  };

  result.best = snapshot(result.history);
  if (config_.epochs == 0) {
    result.final_state = result.best;
    return result;
  }

  for (epoch_ = 1; epoch_ <= config_.epochs; ++epoch_) {
    std::vector<Index> order = data_->train_indices;
    Rng shuffle_rng(epoch_seed(config_.seed, epoch_));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t item_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t count =
          std::min(order.size() - start, static_cast<std::size_t>(config_.batch_size));
      std::vector<Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(start + count));
      StepStats stats = train_step(batch);
      loss_sum += stats.loss * static_cast<double>(count);
      item_count += count;
    }

    HistoryEntry entry;
    entry.epoch = epoch_;
    entry.loss = item_count == 0 ? 0.0 : loss_sum / static_cast<double>(item_count);

    const bool eval_now =
        can_eval && (epoch_ % config_.eval_every == 0 || epoch_ == config_.epochs);
    if (eval_now) {
      EvalReport report = evaluate_model(model_, *data_, EvalOptions{});
      entry.has_metrics = true;
      entry.metrics = {report.t1, report.u, report.s, report.h};
      if (report.h > result.best_h) {
        result.best_h = report.h;
        result.best = snapshot(result.history);
        result.best.history.push_back(entry);
      }
    }
    result.history.push_back(entry);
  }

  result.final_state = snapshot(result.history);
  if (result.best_h < 0.0) result.best = result.final_state;
  return result;
}

}  // namespace mgmrn
