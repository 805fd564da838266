// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/dataset_io.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "dataset binaries are little-endian; big-endian hosts are unsupported");

namespace mgmrn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
void write_raw(const fs::path& file, const T* data, std::size_t count) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + file.string());
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!os) throw std::runtime_error("write failed: " + file.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& file, std::size_t expect) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("missing file: " + file.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != expect * sizeof(T))
    throw std::runtime_error("shape mismatch: " + file.string() + " holds " +
                             std::to_string(bytes / sizeof(T)) + " values, manifest expects " +
                             std::to_string(expect));
  is.seekg(0);
  std::vector<T> out(expect);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw std::runtime_error("read failed: " + file.string());
  return out;
}

std::vector<Index> to_indices(const json& arr) {
  std::vector<Index> out;
  for (const auto& v : arr) out.push_back(v.get<Index>());
  return out;
}

}  // namespace

void write_f32(const fs::path& file, const float* data, std::size_t count) {
  write_raw(file, data, count);
}
std::vector<float> read_f32(const fs::path& file, std::size_t expect) {
  return read_raw<float>(file, expect);
}
void write_i32(const fs::path& file, const std::int32_t* data, std::size_t count) {
  write_raw(file, data, count);
}
std::vector<std::int32_t> read_i32(const fs::path& file, std::size_t expect) {
  return read_raw<std::int32_t>(file, expect);
}

void save_bundle(const fs::path& dir, const DatasetBundle& bundle) {
  fs::create_directories(dir);
  const auto& attrs = bundle.attribute_space;

  json manifest;
  manifest["format"] = "mgmrn-dataset-v1";
  manifest["arrays"]["images"] = {
      {"file", "images.bin"},
      {"dtype", "float32"},
      {"shape", {bundle.images.batch, bundle.images.height, bundle.images.width,
                 bundle.images.channels}}};
  manifest["arrays"]["labels"] = {
      {"file", "labels.bin"}, {"dtype", "int32"}, {"shape", {bundle.images.batch}}};
  manifest["arrays"]["class_attributes"] = {
      {"file", "class_attributes.bin"},
      {"dtype", "float32"},
      {"shape", {attrs.class_attributes.rows(), attrs.class_attributes.cols()}}};
  manifest["arrays"]["attribute_word_vectors"] = {
      {"file", "attribute_word_vectors.bin"},
      {"dtype", "float32"},
      {"shape", {attrs.attribute_word_vectors.rows(), attrs.attribute_word_vectors.cols()}}};
  manifest["num_classes"] = attrs.num_classes();
  manifest["d_s"] = attrs.num_attributes();
  manifest["d_w2v"] = attrs.word_dim();
  manifest["attribute_names"] = attrs.attribute_names;
  manifest["seen_classes"] = bundle.seen_classes;
  manifest["unseen_classes"] = bundle.unseen_classes;
  manifest["splits"]["train"] = bundle.train_indices;
  manifest["splits"]["test_seen"] = bundle.test_seen_indices;
  manifest["splits"]["test_unseen"] = bundle.test_unseen_indices;

  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";

  write_f32(dir / "images.bin", bundle.images.data.data(),
            static_cast<std::size_t>(bundle.images.data.size()));
  std::vector<std::int32_t> labels(bundle.labels.begin(), bundle.labels.end());
  write_i32(dir / "labels.bin", labels.data(), labels.size());
  write_f32(dir / "class_attributes.bin", attrs.class_attributes.data(),
            static_cast<std::size_t>(attrs.class_attributes.size()));
  write_f32(dir / "attribute_word_vectors.bin", attrs.attribute_word_vectors.data(),
            static_cast<std::size_t>(attrs.attribute_word_vectors.size()));
}

DatasetBundle load_bundle(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("missing file: " + (dir / "manifest.json").string());
  json manifest = json::parse(is);

  if (manifest.value("format", "") != "mgmrn-dataset-v1")
    throw std::runtime_error("unrecognized dataset format in " + (dir / "manifest.json").string());

  auto shape_of = [&manifest](const char* name) {
    return manifest.at("arrays").at(name).at("shape").get<std::vector<Index>>();
  };
  auto file_of = [&manifest, &dir](const char* name) {
    return dir / manifest.at("arrays").at(name).at("file").get<std::string>();
  };

  const auto img_shape = shape_of("images");
  if (img_shape.size() != 4) throw std::runtime_error("shape mismatch: images must be rank 4");
  const auto lbl_shape = shape_of("labels");
  if (lbl_shape.size() != 1 || lbl_shape[0] != img_shape[0])
    throw std::runtime_error("shape mismatch: labels row count vs images");
  const auto ca_shape = shape_of("class_attributes");
  const auto wv_shape = shape_of("attribute_word_vectors");
  if (ca_shape.size() != 2 || wv_shape.size() != 2)
    throw std::runtime_error("shape mismatch: attribute arrays must be rank 2");

  const Index d_s = manifest.at("d_s").get<Index>();
  const Index d_w2v = manifest.at("d_w2v").get<Index>();
  const Index num_classes = manifest.at("num_classes").get<Index>();
  if (ca_shape[0] != num_classes || ca_shape[1] != d_s)
    throw std::runtime_error("shape mismatch: class_attributes vs declared num_classes/d_s");
  if (wv_shape[0] != d_s || wv_shape[1] != d_w2v)
    throw std::runtime_error("shape mismatch: attribute_word_vectors vs declared d_s/d_w2v");

  DatasetBundle bundle;
  bundle.images = Tensor4F(img_shape[0], img_shape[1], img_shape[2], img_shape[3]);
  {
    auto raw = read_f32(file_of("images"), static_cast<std::size_t>(bundle.images.data.size()));
    std::copy(raw.begin(), raw.end(), bundle.images.data.data());
  }
  {
    auto raw = read_i32(file_of("labels"), static_cast<std::size_t>(img_shape[0]));
    bundle.labels.assign(raw.begin(), raw.end());
  }
  auto& attrs = bundle.attribute_space;
  attrs.class_attributes.resize(num_classes, d_s);
  {
    auto raw = read_f32(file_of("class_attributes"),
                        static_cast<std::size_t>(attrs.class_attributes.size()));
    std::copy(raw.begin(), raw.end(), attrs.class_attributes.data());
  }
  attrs.attribute_word_vectors.resize(d_s, d_w2v);
  {
    auto raw = read_f32(file_of("attribute_word_vectors"),
                        static_cast<std::size_t>(attrs.attribute_word_vectors.size()));
    std::copy(raw.begin(), raw.end(), attrs.attribute_word_vectors.data());
  }
  attrs.attribute_names = manifest.at("attribute_names").get<std::vector<std::string>>();
  if (static_cast<Index>(attrs.attribute_names.size()) != d_s)
    throw std::runtime_error("shape mismatch: attribute_names length vs d_s");

  bundle.seen_classes = manifest.at("seen_classes").get<std::vector<int>>();
  bundle.unseen_classes = manifest.at("unseen_classes").get<std::vector<int>>();
  std::sort(bundle.seen_classes.begin(), bundle.seen_classes.end());
  std::sort(bundle.unseen_classes.begin(), bundle.unseen_classes.end());
  bundle.train_indices = to_indices(manifest.at("splits").at("train"));
  bundle.test_seen_indices = to_indices(manifest.at("splits").at("test_seen"));
  bundle.test_unseen_indices = to_indices(manifest.at("splits").at("test_unseen"));

  // Structural invariants; a violated one signals a corrupt dataset.
  for (int cls : bundle.seen_classes)
    if (bundle.is_unseen(cls))
      throw std::runtime_error("split overlap: class " + std::to_string(cls) +
                               " declared both seen and unseen");
  for (const auto& [name, idx, allowed_seen] :
       {std::tuple{"train", &bundle.train_indices, true},
        std::tuple{"test_seen", &bundle.test_seen_indices, true},
        std::tuple{"test_unseen", &bundle.test_unseen_indices, false}}) {
    for (Index i : *idx) {
      if (i < 0 || i >= bundle.images.batch)
        throw std::runtime_error("shape mismatch: split index out of range in " +
                                 std::string(name));
      const int y = bundle.labels[static_cast<std::size_t>(i)];
      const bool ok = allowed_seen ? bundle.is_seen(y) : bundle.is_unseen(y);
      if (!ok)
        throw std::runtime_error("corrupt split: " + std::string(name) + " index " +
                                 std::to_string(i) + " has label " + std::to_string(y) +
                                 " outside its class set");
    }
  }
  for (int y : bundle.labels)
    if (y < 0 || y >= num_classes)
      throw std::runtime_error("corrupt labels: value outside declared class range");
  if (!bundle.images.all_finite() || !attrs.class_attributes.allFinite() ||
      !attrs.attribute_word_vectors.allFinite())
    throw std::runtime_error("corrupt dataset: non-finite values");

  return bundle;
}

}  // namespace mgmrn
