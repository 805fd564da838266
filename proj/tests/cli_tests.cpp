// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the command-line interface: exit codes, file outputs,
// determinism of repeated invocations.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  std::printf("%s: %s\n", ok ? "PASS" : "FAIL", what.c_str());
  if (!ok) ++failures;
}

int run(const std::string& args) {
  const std::string cmd = std::string(MGMRN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "mgmrn_cli_tests";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string ds = (root / "ds").string();

  // synth: success, summary files, determinism
  expect(run("synth --out " + ds + " --classes 8 --seen 6 --attrs 9 --per-class 6 --size 16 "
             "--seed 5") == 0,
         "synth exits 0");
  expect(fs::exists(root / "ds" / "manifest.json"), "synth writes manifest.json");
  expect(fs::exists(root / "ds" / "run_manifest.json"), "synth writes run manifest");
  {
    const std::string first = slurp(root / "ds" / "manifest.json");
    const std::string ds2 = (root / "ds2").string();
    expect(run("synth --out " + ds2 + " --classes 8 --seen 6 --attrs 9 --per-class 6 --size 16 "
               "--seed 5") == 0,
           "synth rerun exits 0");
    expect(slurp(root / "ds2" / "manifest.json") == first,
           "repeated synth produces an identical dataset manifest");
    expect(slurp(root / "ds2" / "images.bin") == slurp(root / "ds" / "images.bin"),
           "repeated synth produces identical image bytes");
  }

  // usage errors exit with 2
  expect(run("synth --out " + (root / "bad").string() + " --classes 5 --seen 5") == 2,
         "synth without an unseen class exits 2");
  expect(run("definitely-not-a-command") == 2, "unknown subcommand exits 2");
  expect(run("train --out x") == 2, "train without --data exits 2");

  // train: epochs 0 keeps the initial state and writes an empty history
  const std::string run0 = (root / "run0").string();
  expect(run("train --data " + ds + " --out " + run0 +
             " --epochs 0 --L 2 --np 2 --channels 8 --dmodel 8 --batch 8 --seed 3") == 0,
         "train --epochs 0 exits 0");
  expect(json::parse(slurp(root / "run0" / "history.json")).empty(),
         "epochs 0 leaves an empty history");
  expect(fs::exists(root / "run0" / "checkpoint.bin"), "epochs 0 still writes a checkpoint");
  {
    json cfg = json::parse(slurp(root / "run0" / "effective_config.json"));
    expect(cfg.at("num_stages") == 2 && cfg.at("parts") == 2, "effective config echoes flags");
  }

  // train twice with the same seed -> identical history files
  const std::string runa = (root / "runa").string(), runb = (root / "runb").string();
  const std::string train_flags =
      " --epochs 2 --L 2 --np 2 --channels 8 --dmodel 8 --batch 8 --seed 11 --eval-every 1";
  expect(run("train --data " + ds + " --out " + runa + train_flags) == 0, "train run A exits 0");
  expect(run("train --data " + ds + " --out " + runb + train_flags) == 0, "train run B exits 0");
  expect(slurp(root / "runa" / "history.json") == slurp(root / "runb" / "history.json"),
         "same seed gives identical history files");

  // config echo of the paper-dimension flags
  const std::string runc = (root / "runc").string();
  expect(run("train --data " + ds + " --out " + runc +
             " --epochs 0 --L 3 --np 7 --channels 8 --dmodel 8 --seed 3") == 0,
         "train with L=3 np=7 exits 0");
  {
    json cfg = json::parse(slurp(root / "runc" / "effective_config.json"));
    expect(cfg.at("num_stages") == 3 && cfg.at("parts") == 7, "L=3, N_p=7 echoed");
  }

  // eval modes, report invariants
  const std::string ev = (root / "ev").string();
  expect(run("eval --checkpoint " + runa + "/checkpoint.bin --data " + ds + " --out " + ev +
             " --mode gzsl") == 0,
         "eval gzsl exits 0");
  {
    json rep = json::parse(slurp(root / "ev" / "report.json"));
    const double s = rep.at("s"), u = rep.at("u"), h = rep.at("h");
    const double expect_h = (s + u) == 0.0 ? 0.0 : 2.0 * s * u / (s + u);
    expect(std::abs(h - expect_h) < 1e-9, "report satisfies H = 2SU/(S+U)");
  }
  const std::string eva = (root / "eva").string();
  expect(run("eval --checkpoint " + runa + "/checkpoint.bin --data " + ds + " --out " + eva +
             " --mode ausuc --export-features") == 0,
         "eval ausuc exits 0");
  {
    std::ifstream is(root / "eva" / "ausuc_curve.csv");
    std::string header, first, line, last;
    std::getline(is, header);
    std::getline(is, first);
    while (std::getline(is, line))
      if (!line.empty()) last = line;
    auto unseen_of = [](const std::string& row) {
      const auto a = row.find(','), b = row.rfind(',');
      return std::stod(row.substr(b + 1)) + 0 * a;
    };
    auto seen_of = [](const std::string& row) {
      const auto a = row.find(','), b = row.rfind(',');
      return std::stod(row.substr(a + 1, b - a - 1));
    };
    expect(unseen_of(first) == 0.0, "curve start pins U = 0");
    expect(seen_of(last) == 0.0, "curve end pins S = 0");
    expect(fs::exists(root / "eva" / "semantic_features.bin"), "feature export written");
  }
  expect(run("eval --checkpoint " + runa + "/checkpoint.bin --data " + ds + " --out " +
             (root / "evb").string() + " --mode nonsense") == 2,
         "unknown eval mode exits 2");

  // attribute-dimension compatibility check
  const std::string ds3 = (root / "ds3").string();
  expect(run("synth --out " + ds3 + " --classes 8 --seen 6 --attrs 12 --per-class 4 --size 16 "
             "--seed 5") == 0,
         "synth with different d_s exits 0");
  expect(run("eval --checkpoint " + runa + "/checkpoint.bin --data " + ds3 + " --out " +
             (root / "evc").string()) == 3,
         "incompatible attribute dimension exits 3");

  // visualize: 2 attributes x 3 items -> 6 map files + sidecar
  {
    json manifest = json::parse(slurp(root / "ds" / "manifest.json"));
    const std::string attr0 = manifest.at("attribute_names")[0];
    const std::string attr1 = manifest.at("attribute_names")[1];
    const std::string maps = (root / "maps").string();
    expect(run("visualize --checkpoint " + runa + "/checkpoint.bin --data " + ds + " --out " +
               maps + " --items 0,1,2 --attributes " + attr0 + "," + attr1) == 0,
           "visualize exits 0");
    json sidecar = json::parse(slurp(root / "maps" / "maps.json"));
    expect(sidecar.at("entries").size() == 6, "3 items x 2 attributes give 6 maps");
    int present = 0;
    for (const auto& e : sidecar.at("entries"))
      present += fs::exists(root / "maps" / e.at("file").get<std::string>());
    expect(present == 6, "all 6 map files exist");
    // maps are nonnegative float32 arrays
    std::ifstream bin(root / "maps" / sidecar.at("entries")[0].at("file").get<std::string>(),
                      std::ios::binary);
    std::vector<float> values(16 * 16);
    bin.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(float)));
    bool nonneg = bin.good();
    for (float v : values) nonneg = nonneg && v >= 0.0f;
    expect(nonneg, "exported maps are nonnegative");
    expect(run("visualize --checkpoint " + runa + "/checkpoint.bin --data " + ds + " --out " +
               maps + " --items 0 --attributes not_an_attribute") == 2,
           "unknown attribute name exits 2");
  }

  // a single unseen class forces every CZSL prediction onto it: T1 = 1.0
  {
    const std::string ds1u = (root / "ds1u").string();
    expect(run("synth --out " + ds1u + " --classes 7 --seen 6 --attrs 9 --per-class 4 --size 16 "
               "--seed 5") == 0,
           "single-unseen-class synth exits 0");
    const std::string run1u = (root / "run1u").string();
    expect(run("train --data " + ds1u + " --out " + run1u +
               " --epochs 0 --L 2 --np 2 --channels 8 --dmodel 8 --seed 3") == 0,
           "train on the single-unseen-class toy exits 0");
    const std::string ev1u = (root / "ev1u").string();
    expect(run("eval --checkpoint " + run1u + "/checkpoint.bin --data " + ds1u + " --out " +
               ev1u + " --mode czsl") == 0,
           "czsl eval exits 0");
    json rep = json::parse(slurp(root / "ev1u" / "report.json"));
    expect(rep.at("t1").get<double>() == 1.0, "czsl T1 is 1.0 with one unseen candidate");
  }

  // MGMRN_SEED fallback: same env seed -> same dataset
  {
    const std::string dse1 = (root / "dse1").string(), dse2 = (root / "dse2").string();
    const std::string base = "synth --classes 8 --seen 6 --attrs 9 --per-class 4 --size 16 ";
    expect(std::system(("MGMRN_SEED=77 " + std::string(MGMRN_CLI_PATH) + " " + base + "--out " +
                        dse1 + " > /dev/null 2>&1")
                           .c_str()) == 0,
           "synth honors MGMRN_SEED");
    expect(std::system(("MGMRN_SEED=77 " + std::string(MGMRN_CLI_PATH) + " " + base + "--out " +
                        dse2 + " > /dev/null 2>&1")
                           .c_str()) == 0,
           "second env-seeded synth runs");
    expect(slurp(root / "dse1" / "images.bin") == slurp(root / "dse2" / "images.bin"),
           "MGMRN_SEED fallback is deterministic");
  }

  fs::remove_all(root);
  if (failures > 0) {
    std::printf("%d CLI check(s) failed\n", failures);
    return 1;
  }
  std::printf("all CLI checks passed\n");
  return 0;
}
