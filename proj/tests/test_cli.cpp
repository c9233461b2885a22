#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "robarch/checkpoint.hpp"
#include "robarch/manifest.hpp"
#include "robarch/outcome_io.hpp"
#include "test_util.hpp"

using namespace robarch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

const fs::path kRoot = fs::temp_directory_path() / "robarch_cli_test";

Run run(const std::string& args) {
  const fs::path log = kRoot / "last_output.txt";
  const std::string cmd = std::string(ROBARCH_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

fs::path write_config(const std::string& name, const json& j) {
  const fs::path p = kRoot / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::vector<fs::path> runs_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

const json kDataset = {{"source", "synthetic_shapes"}, {"image_size", 16}, {"samples_per_class", 20}, {"seed", 2}};

// Trains a one-epoch model once and returns its checkpoint.
fs::path trained_checkpoint(const std::string& family) {
  const fs::path out = kRoot / ("model_" + family);
  if (!runs_in(out).empty()) return runs_in(out).front() / "model.ckpt";
  json model = {{"family", family}};
  if (family == "vit") model = {{"family", "vit"}, {"embed_dim", 16}, {"num_heads", 2}, {"depth", 1}, {"token_size", 4}};
  if (family == "mlp") model = {{"family", "mlp"}, {"hidden_dim", 16}};
  const json cfg = {{"dataset", kDataset}, {"model", model}, {"train", {{"epochs", 1}, {"warmup_epochs", 0.5}, {"batch_size", 16}}}};
  const Run r = run("train --config " + write_config(family + ".json", cfg).string() + " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.output);
  return runs_in(out).front() / "model.ckpt";
}

struct Setup {
  Setup() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};
const Setup kSetup;

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and unknown commands") {
    CHECK(run("--help").code == 0);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("").code == 1);
  }

  TEST_CASE("gen-data writes a verified manifest") {
    const fs::path out = kRoot / "gen";
    const Run r = run("gen-data --num-classes 4 --samples-per-class 5 --image-size 12 --seed 3 --out " + out.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto dirs = runs_in(out);
    REQUIRE(dirs.size() == 1);
    CHECK(verify_manifest(dirs[0]).empty());
    const RunManifest m = read_manifest(dirs[0]);
    CHECK(m.command == "gen-data");
    CHECK(m.seed == 3);
    CHECK(m.config.at("num_classes") == 4);
    const json summary = json::parse(read_text_file(dirs[0] / "summary.json"));
    CHECK(summary.at("histogram") == json::array({5, 5, 5, 5}));
    // A second identical invocation gets a fresh directory with identical content.
    REQUIRE(run("gen-data --num-classes 4 --samples-per-class 5 --image-size 12 --seed 3 --out " + out.string()).code == 0);
    const auto again = runs_in(out);
    REQUIRE(again.size() == 2);
    CHECK(read_text_file(again[0] / "summary.json") == read_text_file(again[1] / "summary.json"));
  }

  TEST_CASE("train resolves presets, files and flags in order") {
    const json cfg = {{"dataset", kDataset},
                      {"model", {{"family", "mlp"}, {"hidden_dim", 8}}},
                      {"preset", "full-at"},
                      {"train", {{"epochs", 2}, {"warmup_epochs", 1.0}, {"cooldown_epochs", 0.0}, {"batch_size", 32}}}};
    const fs::path out = kRoot / "train_prec";
    const Run r = run("train --config " + write_config("prec.json", cfg).string() +
                      " --preset plain-short --epochs 1 --seed 11 --out " + out.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto dirs = runs_in(out);
    REQUIRE(dirs.size() == 1);
    const RunManifest m = read_manifest(dirs[0]);
    const json& t = m.config.at("train");
    CHECK(t.at("epochs") == 1);         // flag
    CHECK(t.at("batch_size") == 32);    // file
    CHECK(t.at("peak_lr") == 0.004);    // preset chosen by flag
    CHECK(t.at("at_inner_steps") == 0);
    CHECK(t.at("seed") == 11);
    CHECK(m.config.at("preset") == "plain-short");
    CHECK(verify_manifest(dirs[0]).empty());
    CHECK(fs::exists(dirs[0] / "epoch_001.ckpt"));
    CHECK(fs::exists(dirs[0] / "model.ckpt"));
    CHECK(fs::exists(dirs[0] / "history.json"));
  }

  TEST_CASE("invalid configs fail with exit code 1 before any work") {
    const fs::path out = kRoot / "invalid";
    const json no_path = {{"dataset", {{"source", "image_folder"}}}, {"model", {{"family", "mlp"}}}};
    Run r = run("train --config " + write_config("nopath.json", no_path).string() + " --out " + out.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("dataset.path") != std::string::npos);
    const json bad_field = {{"dataset", kDataset}, {"train", {{"epochz", 3}}}};
    r = run("train --config " + write_config("badfield.json", bad_field).string() + " --out " + out.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("train.epochz") != std::string::npos);
    r = run("train --preset nope --out " + out.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("ladder-short") != std::string::npos);
    CHECK(runs_in(out).empty());
  }

  TEST_CASE("attack is deterministic and its summary matches its records") {
    const fs::path ckpt = trained_checkpoint("mlp");
    const json cfg = {{"dataset", kDataset}};
    const fs::path file = write_config("attack.json", cfg);
    const fs::path out = kRoot / "attack";
    const std::string args = "attack --config " + file.string() + " --checkpoint " + ckpt.string() +
                             " --threat linf --iterations 5 --points 8 --seed 4 --out " + out.string();
    REQUIRE(run(args).code == 0);
    REQUIRE(run(args).code == 0);
    const auto dirs = runs_in(out);
    REQUIRE(dirs.size() == 2);
    const std::string s1 = read_text_file(dirs[0] / "summary.json");
    CHECK(s1 == read_text_file(dirs[1] / "summary.json"));
    CHECK(sha256_file(dirs[0] / "adversarial.rbt") == sha256_file(dirs[1] / "adversarial.rbt"));
    const json records = json::parse(read_text_file(dirs[0] / "records.json"));
    CHECK(json::parse(s1).at("robust_accuracy").get<double>() == doctest::Approx(robust_accuracy_from_records(records)));
    CHECK(records.at("records").size() == 8);
    CHECK(verify_manifest(dirs[0]).empty());

    Run r = run("attack --config " + file.string() + " --checkpoint " + ckpt.string() + " --threat patch --out " +
                out.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("grid") != std::string::npos);
    r = run("attack --config " + file.string() + " --checkpoint " + ckpt.string() + " --threat l3 --out " + out.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("linf") != std::string::npos);
    r = run("attack --config " + file.string() + " --checkpoint " + ckpt.string() +
            " --threat patch --token-size 4 --alignment aligned --points 4 --out " + out.string());
    CHECK_MESSAGE(r.code == 0, r.output);
    r = run("attack --config " + file.string() + " --checkpoint " + (kRoot / "none.ckpt").string() +
            " --threat linf --out " + out.string());
    CHECK(r.code == 2);
  }

  TEST_CASE("sweep reuses completed cells") {
    const fs::path ckpt = trained_checkpoint("mlp");
    const json cfg = {{"dataset", kDataset},
                      {"models", {{{"name", "tiny"}, {"checkpoint", ckpt.string()}}}},
                      {"threats",
                       {{{"kind", "linf"}, {"iterations", 3}},
                        {{"kind", "frame"}, {"epsilon", 1}, {"iterations", 3}, {"restarts", 1}}}},
                      {"worst_case", {"linf", "frame"}},
                      {"points", 20}};
    const fs::path file = write_config("sweep.json", cfg);
    const fs::path out = kRoot / "sweep";
    const Run a = run("sweep --config " + file.string() + " --points 6 --out " + out.string());
    REQUIRE_MESSAGE(a.code == 0, a.output);
    CHECK(a.output.find("0 reused") != std::string::npos);
    const Run b = run("sweep --config " + file.string() + " --points 6 --out " + out.string());
    REQUIRE(b.code == 0);
    CHECK(b.output.find("2 reused") != std::string::npos);
    const auto dirs = runs_in(out);
    REQUIRE(dirs.size() == 2);
    CHECK(read_text_file(dirs[0] / "report.txt") == read_text_file(dirs[1] / "report.txt"));
    CHECK(read_text_file(dirs[0] / "report.txt").find("| clean | linf | frame | worst-case") != std::string::npos);
    CHECK(read_manifest(dirs[0]).config.at("points") == 6);
    const Run c = run("sweep --config " + file.string() + " --points 7 --format csv --out " + out.string());
    REQUIRE(c.code == 0);
    CHECK(c.output.find("0 reused") != std::string::npos);
    CHECK(c.output.find("model,clean,linf,frame,worst_case,error") != std::string::npos);
  }

  TEST_CASE("visualize checks family compatibility and writes maps") {
    const fs::path mlp = trained_checkpoint("mlp");
    const fs::path vit = trained_checkpoint("vit");
    const fs::path file = write_config("vis.json", {{"dataset", kDataset}});
    const fs::path out = kRoot / "vis";
    Run r = run("visualize --config " + file.string() + " --checkpoint " + mlp.string() +
                " --kind attention --index 0 --out " + out.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("vit") != std::string::npos);
    r = run("visualize --config " + file.string() + " --checkpoint " + vit.string() + " --kind attention --index 0 --out " +
            out.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    auto dirs = runs_in(out);
    REQUIRE(dirs.size() == 1);
    CHECK(fs::exists(dirs[0] / "head_0.png"));
    CHECK(fs::exists(dirs[0] / "head_1.png"));
    CHECK_FALSE(fs::exists(dirs[0] / "head_2.png"));
    r = run("visualize --config " + file.string() + " --checkpoint " + vit.string() +
            " --kind lossmap --patch 4 --iterations 2 --index 1 --out " + out.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    r = run("visualize --config " + file.string() + " --checkpoint " + mlp.string() +
            " --kind perturbation --iterations 3 --index 2 --out " + out.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    dirs = runs_in(out);
    REQUIRE(dirs.size() == 3);
    bool pair = false, pert = false;
    for (const auto& d : dirs) {
      pair = pair || (fs::exists(d / "lossmap_aligned.png") && fs::exists(d / "lossmap_non_aligned.png"));
      pert = pert || fs::exists(d / "perturbation.png");
      CHECK(verify_manifest(d).empty());
    }
    CHECK(pair);
    CHECK(pert);
  }

  TEST_CASE("ladder lists every row") {
    const fs::path out = kRoot / "ladder";
    const Run r = run("ladder --out " + out.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("ConvNeXt-T") != std::string::npos);
    const auto dirs = runs_in(out);
    REQUIRE(dirs.size() == 1);
    CHECK(json::parse(read_text_file(dirs[0] / "ladder.json")).size() == 16);
  }
}
