// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mgmrn/checkpoint.hpp"
#include "mgmrn/datamodel.hpp"
#include "mgmrn/model.hpp"

namespace mgmrn {

/// Raised when the loss or a tensor goes non-finite during training; the
/// message names the first offending tensor.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepStats {
  double loss = 0.0;
  std::vector<double> sce_per_stage;
  std::vector<double> ar_per_stage;
};

/// SGD-with-momentum training loop over the seen-class split, with periodic
/// evaluation on both test splits and best-by-H snapshotting. Deterministic
/// for a fixed config seed.
class Trainer {
 public:
  Trainer(const ModelConfig& config, const DatasetBundle& data);

  /// One optimizer update on a batch of train-split indices.
  StepStats train_step(const std::vector<Index>& batch_items);

  struct FitResult {
    TrainState best;         // highest GZSL H seen during fit (initial state if never evaluated)
    TrainState final_state;  // after the last epoch
    std::vector<HistoryEntry> history;
    double best_h = -1.0;
  };

  /// epochs x batches of train_step, shuffling the train split each epoch
  /// with a seed derived from the run seed.
  FitResult fit();

  Model<float>& model() { return model_; }
  const ModelConfig& config() const { return config_; }
  std::string rng_state() const { return rng_.state(); }
  const std::map<std::string, MatrixF>& momentum() const { return momentum_; }

  /// Learning rate of the epoch currently being trained (schedule applied).
  double current_learning_rate() const;

 private:
  ModelConfig config_;
  const DatasetBundle* data_;
  Model<float> model_;
  Rng rng_;
  std::map<std::string, MatrixF> momentum_;
  int epoch_ = 0;
  std::vector<int> seen_ids_;
  MatrixF seen_signatures_;

  Tensor4F gather_images(const std::vector<Index>& items) const;
  void sgd_update();
};

}  // namespace mgmrn
