// End-to-end checks of the installed binary, driven through std::system.
// The test runner passes the binary path in OAIF_CLI_BIN.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
  const char* bin = std::getenv("OAIF_CLI_BIN");
  REQUIRE(bin != nullptr);
  return bin;
}

int run(const std::string& args) {
  const std::string cmd = cli_bin() + " " + args + " >> cli_test_stdout.log 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_tiny_config(const fs::path& path) {
  std::ofstream out(path);
  out << "[policy]\n"
         "vocab = 8\n"
         "order = 2\n"
         "features = 256\n"
         "max_len = 8\n"
         "prompt_cap = 4\n"
         "[train]\n"
         "batch_size = 4\n"
         "max_steps = 6\n"
         "warmup_steps = 2\n"
         "eval_every = 3\n"
         "seed = 11\n"
         "[annotator]\n"
         "target_symbol = 3\n"
         "[prompts]\n"
         "count = 8\n"
         "[eval]\n"
         "prompts = 20\n";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_test") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
};

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("train-online produces checkpoints, metrics, and a resolved config") {
  TempDir dir("online");
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);
  const fs::path out = dir.path / "run";
  REQUIRE(run("train-online --config " + cfg.string() + " --out " + out.string()) == 0);

  CHECK(fs::exists(out / "config.resolved.ini"));
  CHECK(fs::exists(out / "ckpt_ref.bin"));
  CHECK(fs::exists(out / "ckpt_final.bin"));
  CHECK(fs::exists(out / "ckpt_000003.bin"));  // eval_every == 3
  const std::string metrics = slurp(out / "metrics.jsonl");
  CHECK(count_lines(metrics) == 6);
  std::istringstream in(metrics);
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("pairs_used").get<int>() + j.at("ties_dropped").get<int>() +
              j.at("failures").get<int>() ==
          4);
  }
}

TEST_CASE("reruns with the same config are byte-identical") {
  TempDir dir("rerun");
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);
  const fs::path out_a = dir.path / "a";
  const fs::path out_b = dir.path / "b";
  REQUIRE(run("train-online --config " + cfg.string() + " --out " + out_a.string()) == 0);

  // Second run is launched from the first run's resolved snapshot.
  REQUIRE(run("train-online --config " + (out_a / "config.resolved.ini").string() +
              " --out " + out_b.string()) == 0);
  CHECK(slurp(out_a / "metrics.jsonl") == slurp(out_b / "metrics.jsonl"));
  CHECK(slurp(out_a / "ckpt_final.bin") == slurp(out_b / "ckpt_final.bin"));
}

TEST_CASE("a different seed changes the trajectory") {
  TempDir dir("seed");
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);
  const fs::path out_a = dir.path / "a";
  const fs::path out_b = dir.path / "b";
  REQUIRE(run("train-online --config " + cfg.string() + " --out " + out_a.string()) == 0);
  REQUIRE(run("train-online --config " + cfg.string() + " --seed 999 --out " +
              out_b.string()) == 0);
  CHECK(slurp(out_a / "ckpt_final.bin") != slurp(out_b / "ckpt_final.bin"));
}

TEST_CASE("make-dataset then train-offline round trips through the file formats") {
  TempDir dir("offline");
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);
  const fs::path dataset = dir.path / "prefs.jsonl";
  REQUIRE(run("make-dataset --config " + cfg.string() + " --out " +
              (dir.path / "mk").string() + " --n 80 --dataset-out " +
              dataset.string()) == 0);

  std::ifstream in(dataset);
  REQUIRE(in.good());
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("provenance").at("online").get<bool>() == false);
    CHECK(j.at("provenance").at("on_policy").get<bool>() == false);
    CHECK(j.at("score").get<double>() > 0.5);
    ++rows;
  }
  CHECK(rows > 20);

  const fs::path out = dir.path / "run";
  REQUIRE(run("train-offline --config " + cfg.string() + " --dataset " +
              dataset.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "ckpt_final.bin"));

  // The trained policy should beat its own reference under the oracle judge.
  REQUIRE(run("eval --config " + cfg.string() + " --out " + out.string() + " " +
              (out / "ckpt_final.bin").string() + " " +
              (out / "ckpt_ref.bin").string()) == 0);
  const std::string report = slurp(out / "winrate.jsonl");
  const auto j = nlohmann::json::parse(report.substr(0, report.find('\n')));
  CHECK(j.at("n").get<int>() > 0);
}

TEST_CASE("validation failures exit with code 1") {
  TempDir dir("invalid");
  const fs::path bad = dir.path / "bad.ini";
  {
    std::ofstream out(bad);
    out << "[train]\nloss = hinge-ish\n";
  }
  CHECK(run("train-online --config " + bad.string() + " --out " +
            (dir.path / "x").string()) == 1);
  CHECK(run("train-online --preset giant --out " + (dir.path / "y").string()) == 1);
  CHECK(run("no-such-subcommand") == 1);
}

TEST_CASE("I/O failures exit with code 2") {
  TempDir dir("io");
  CHECK(run("train-online --config does_not_exist.ini --out " +
            (dir.path / "x").string()) == 2);
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);
  CHECK(run("train-offline --config " + cfg.string() + " --dataset missing.jsonl"
            " --out " + (dir.path / "y").string()) == 2);
  CHECK(run("eval --config " + cfg.string() + " --out " + (dir.path / "z").string() +
            " missing_a.bin missing_b.bin") == 2);
}

TEST_CASE("multiway, probe-shift, and agreement run end to end") {
  TempDir dir("suite");
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);
  const fs::path out = dir.path / "run";
  REQUIRE(run("train-online --config " + cfg.string() + " --out " + out.string()) == 0);

  const std::string ref = (out / "ckpt_ref.bin").string();
  const std::string fin = (out / "ckpt_final.bin").string();
  CHECK(run("multiway --config " + cfg.string() + " --out " + out.string() + " " +
            ref + " " + fin) == 0);
  CHECK(fs::exists(out / "multiway.jsonl"));

  CHECK(run("probe-shift --config " + cfg.string() + " --out " + out.string() +
            " --policy " + fin + " --gen-a " + fin + " --gen-b " + ref + " --n 40") == 0);
  CHECK(fs::exists(out / "shift.jsonl"));

  CHECK(run("agreement --config " + cfg.string() + " --out " + out.string() +
            " --n 50") == 0);
  const std::string report = slurp(out / "agreement.jsonl");
  const auto j = nlohmann::json::parse(report.substr(0, report.find('\n')));
  // A noiseless oracle judged against itself must agree perfectly.
  CHECK(j.at("accuracy").get<double>() == 1.0);
}

TEST_CASE("resume continues to the same final weights") {
  TempDir dir("resume");
  const fs::path cfg = dir.path / "tiny.ini";
  write_tiny_config(cfg);

  const fs::path straight = dir.path / "straight";
  REQUIRE(run("train-online --config " + cfg.string() + " --out " +
              straight.string()) == 0);

  // Interrupted run: first 3 steps, then resume to 6 in the same directory.
  const fs::path half_cfg = dir.path / "half.ini";
  std::string text = slurp(cfg);
  const auto at = text.find("max_steps = 6");
  REQUIRE(at != std::string::npos);
  text.replace(at, 13, "max_steps = 3");
  {
    std::ofstream out(half_cfg);
    out << text;
  }
  const fs::path resumed = dir.path / "resumed";
  REQUIRE(run("train-online --config " + half_cfg.string() + " --out " +
              resumed.string()) == 0);
  REQUIRE(run("train-online --config " + cfg.string() + " --resume --out " +
              resumed.string()) == 0);
  CHECK(slurp(straight / "ckpt_final.bin") == slurp(resumed / "ckpt_final.bin"));
}
