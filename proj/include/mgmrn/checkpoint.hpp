// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgmrn/model.hpp"

namespace mgmrn {

struct EvalSnapshot {
  double t1 = 0.0, u = 0.0, s = 0.0, h = 0.0;
};

struct HistoryEntry {
  int epoch = 0;
  double loss = 0.0;
  bool has_metrics = false;
  EvalSnapshot metrics;
};

/// Everything needed to resume or evaluate a run: config snapshot, epoch
/// counter, rng state, metric history, parameters and optimizer slots.
/// Parameter blobs are stored as little-endian float32 in model order, so a
/// save -> load -> save round trip is byte-identical.
struct TrainState {
  ModelConfig config;
  int epoch = 0;
  std::string rng_state;
  std::vector<HistoryEntry> history;
  Index d_s = 0, d_w2v = 0;
  std::array<Index, 3> image{0, 0, 0};  // height, width, channels
  MatrixF word_vectors;  // training-time w_att, [d_s x d_w2v]
  std::vector<std::pair<std::string, MatrixF>> params;    // model order
  std::vector<std::pair<std::string, MatrixF>> momentum;  // sorted by name
};

void save_checkpoint(const std::filesystem::path& file, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& file);

/// Copies the model's current parameters (and optional momentum slots) into a
/// serializable state.
TrainState snapshot_state(Model<float>& model, int epoch, const std::string& rng_state,
                          const std::vector<HistoryEntry>& history,
                          const std::map<std::string, MatrixF>& momentum);

/// Writes the state's parameters back into a model built from the same
/// config. Name or shape mismatches throw.
void restore_model(Model<float>& model, const TrainState& state);

/// Rebuilds the model a state was snapshotted from, including its
/// training-time word vectors.
Model<float> model_from_state(const TrainState& state);

std::string history_to_json(const std::vector<HistoryEntry>& history);

}  // namespace mgmrn
