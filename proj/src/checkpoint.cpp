// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

namespace mgmrn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'G', 'M', 'R', 'N', 'C', 'K', '1'};

json history_json(const std::vector<HistoryEntry>& history) {
  json arr = json::array();
  for (const auto& e : history) {
    json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    if (e.has_metrics) {
      j["t1"] = e.metrics.t1;
      j["u"] = e.metrics.u;
      j["s"] = e.metrics.s;
      j["h"] = e.metrics.h;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<HistoryEntry> history_from_json(const json& arr) {
  std::vector<HistoryEntry> out;
  for (const auto& j : arr) {
    HistoryEntry e;
    e.epoch = j.at("epoch").get<int>();
    e.loss = j.at("loss").get<double>();
    if (j.contains("h")) {
      e.has_metrics = true;
      e.metrics.t1 = j.at("t1").get<double>();
      e.metrics.u = j.at("u").get<double>();
      e.metrics.s = j.at("s").get<double>();
      e.metrics.h = j.at("h").get<double>();
    }
    out.push_back(e);
  }
  return out;
}

json blob_index(const std::vector<std::pair<std::string, MatrixF>>& blobs, std::uint64_t& offset) {
  json arr = json::array();
  for (const auto& [name, m] : blobs) {
    arr.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  return arr;
}

}  // namespace

std::string history_to_json(const std::vector<HistoryEntry>& history) {
  return history_json(history).dump(2);
}

void save_checkpoint(const fs::path& file, const TrainState& state) {
  json header;
  header["format"] = "mgmrn-checkpoint-v1";
  header["config"] = json::parse(config_to_json(state.config));
  header["epoch"] = state.epoch;
  header["rng"] = state.rng_state;
  header["history"] = history_json(state.history);
  header["d_s"] = state.d_s;
  header["d_w2v"] = state.d_w2v;
  header["image"] = {state.image[0], state.image[1], state.image[2]};
  std::vector<std::pair<std::string, MatrixF>> constants;
  constants.emplace_back("w_att", state.word_vectors);
  std::uint64_t offset = 0;
  header["params"] = blob_index(state.params, offset);
  header["momentum"] = blob_index(state.momentum, offset);
  header["constants"] = blob_index(constants, offset);

  const std::string text = header.dump();
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + file.string());
  os.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const std::vector<std::pair<std::string, MatrixF>>* sections[] = {&state.params,
                                                                    &state.momentum, &constants};
  for (const auto* blobs : sections)
    for (const auto& [name, m] : *blobs)
      os.write(reinterpret_cast<const char*>(m.data()),
               static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
  if (!os) throw std::runtime_error("write failed: " + file.string());
}

TrainState load_checkpoint(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("missing file: " + file.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + file.string());
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("truncated checkpoint header: " + file.string());
  json header = json::parse(text);

  TrainState state;
  state.config = config_from_json(header.at("config").dump());
  state.epoch = header.at("epoch").get<int>();
  state.rng_state = header.at("rng").get<std::string>();
  state.history = history_from_json(header.at("history"));
  state.d_s = header.at("d_s").get<Index>();
  state.d_w2v = header.at("d_w2v").get<Index>();
  auto img = header.at("image").get<std::vector<Index>>();
  if (img.size() != 3) throw std::runtime_error("checkpoint image shape must have 3 entries");
  state.image = {img[0], img[1], img[2]};

  const std::streampos blob_start = is.tellg();
  auto read_blobs = [&](const json& index, std::vector<std::pair<std::string, MatrixF>>& out) {
    for (const auto& j : index) {
      MatrixF m(j.at("rows").get<Index>(), j.at("cols").get<Index>());
      is.seekg(blob_start + static_cast<std::streamoff>(sizeof(float) *
                                                        j.at("offset").get<std::uint64_t>()));
      is.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
      if (!is) throw std::runtime_error("truncated checkpoint blobs: " + file.string());
      out.emplace_back(j.at("name").get<std::string>(), std::move(m));
    }
  };
  read_blobs(header.at("params"), state.params);
  read_blobs(header.at("momentum"), state.momentum);
  std::vector<std::pair<std::string, MatrixF>> constants;
  read_blobs(header.at("constants"), constants);
  for (auto& [name, m] : constants)
    if (name == "w_att") state.word_vectors = std::move(m);
  if (state.word_vectors.rows() != state.d_s || state.word_vectors.cols() != state.d_w2v)
    throw std::runtime_error("checkpoint word vector shape mismatch");
  return state;
}

TrainState snapshot_state(Model<float>& model, int epoch, const std::string& rng_state,
                          const std::vector<HistoryEntry>& history,
                          const std::map<std::string, MatrixF>& momentum) {
  TrainState state;
  state.config = model.config;
  state.epoch = epoch;
  state.rng_state = rng_state;
  state.history = history;
  state.d_s = model.d_s;
  state.d_w2v = model.d_w2v;
  state.image = {model.image_h, model.image_w, model.image_c};
  state.word_vectors = model.w_att;
  for (const auto& p : model.params()) state.params.emplace_back(p.name, *p.value);
  for (const auto& [name, m] : momentum) state.momentum.emplace_back(name, m);
  return state;
}

void restore_model(Model<float>& model, const TrainState& state) {
  auto refs = model.params();
  if (refs.size() != state.params.size())
    throw std::runtime_error("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& [name, m] = state.params[i];
    if (refs[i].name != name)
      throw std::runtime_error("checkpoint parameter order mismatch at " + name);
    if (refs[i].value->rows() != m.rows() || refs[i].value->cols() != m.cols())
      throw std::runtime_error("checkpoint parameter shape mismatch at " + name);
    *refs[i].value = m;
  }
}

Model<float> model_from_state(const TrainState& state) {
  Model<float> model = Model<float>::build(state.config, state.word_vectors, state.image[0],
                                           state.image[1], state.image[2]);
  restore_model(model, state);
  return model;
}

}  // namespace mgmrn
