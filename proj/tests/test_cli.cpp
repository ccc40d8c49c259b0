#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "chunkdec/eval.hpp"
#include "chunkdec/tensor_io.hpp"

using namespace chunkdec;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(CHUNKDEC_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("chunkdec_cli_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

// Small model so every command stays fast.
std::string write_small_config(const TempDir& d) {
  const std::string p = d / "small.json";
  std::ofstream(p) << R"({"schema":1,"seed":3,
    "decoder":{"layers":2,"heads":2,"d_model":8,"d_ff":16,"chunk_size":4,"past":5,"mel_bins":6},
    "train":{"steps":2,"batch_size":2,"frames":16,"eval_batch":1},
    "sweep":{"layers":[1],"heads":[2],"d_model":[8],"chunk":[3],"mel_bins":4},
    "bench":{"frames":40,"repeats":2,"warmup":1},
    "ablation":{"frames":40,"seeds":3}})";
  return p;
}

}  // namespace

TEST_CASE("rf prints the formula value") {
  auto r = run("rf --layers 6 --chunk 30 --past 15");
  CHECK(r.code == 0);
  CHECK(r.out == "210\n");
  auto o = run("rf --layers 6 --chunk 30 --past 30 --oracle");
  CHECK(o.code == 0);
  CHECK(o.out.find("formula 240") != std::string::npos);
  CHECK(o.out.find("oracle 210") != std::string::npos);
  CHECK(o.out.find("delta -30") != std::string::npos);
}

TEST_CASE("mask renders ascii") {
  auto r = run("mask --frames 4 --chunk 2 --past 1");
  CHECK(r.code == 0);
  CHECK(r.out == "##..\n##..\n.###\n.###\n");
  CHECK(run("mask --frames 4 --chunk 2 --past all").out == "##..\n##..\n####\n####\n");
}

TEST_CASE("exit codes") {
  TempDir d;
  CHECK(run("").code == 2);
  CHECK(run("rf --layers 6").code == 2);
  CHECK(run("mask --frames 4 --chunk 2 --past nope").code == 2);
  CHECK(run("--config " + d / "missing.json" + " equiv").code == 2);
  std::ofstream(d / "bad.json") << R"({"schema":1,"wat":true})";
  CHECK(run("--config " + d / "bad.json" + " equiv").code == 2);
  std::ofstream(d / "junk.ctn") << "not a tensor";
  CHECK(run("msd " + d / "junk.ctn" + " " + d / "junk.ctn").code == 3);
  save_ctn(d / "a.ctn", Tensor<double>({3, 2}));
  save_ctn(d / "b.ctn", Tensor<double>({4, 2}));
  CHECK(run("msd " + d / "a.ctn" + " " + d / "b.ctn").code == 3);
}

TEST_CASE("msd of a file with itself is 0.0") {
  TempDir d;
  save_ctn(d / "x.ctn", random_features<double>(10, 4, 1));
  auto r = run("msd " + d / "x.ctn" + " " + d / "x.ctn");
  CHECK(r.code == 0);
  CHECK(r.out == "0.0\n");
}

TEST_CASE("dump-config prints every default") {
  auto r = run("--dump-config");
  REQUIRE(r.code == 0);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["schema"] == 1);
  for (const char* k : {"decoder", "train", "task", "sweep", "study", "bench", "ablation", "seed"})
    CHECK(j.contains(k));
  CHECK(run("--seed 9 --dump-config").out.find("\"seed\": 9") != std::string::npos);
}

TEST_CASE("equiv, bench and ablate on a small config") {
  TempDir d;
  const auto cfg = write_small_config(d);
  auto e = run("--config " + cfg + " equiv");
  CHECK(e.code == 0);
  auto ej = nlohmann::json::parse(e.out);
  CHECK(ej["passed"] == true);
  CHECK(ej["max_abs_diff"].get<double>() <= 1e-9);
  CHECK(run("--config " + cfg + " equiv --tol -1").code == 1);

  auto b = run("--config " + cfg + " bench --json");
  CHECK(b.code == 0);
  auto bj = nlohmann::json::parse(b.out);
  CHECK(bj["bench"]["frames"] == 40);

  auto a = run("--config " + cfg + " ablate --mode drop_both");
  CHECK(nlohmann::json::parse(a.out)["mode"] == "drop_both");
}

TEST_CASE("train, synth and state resume") {
  TempDir d;
  const auto cfg = write_small_config(d);
  REQUIRE(run("--config " + cfg + " train --out " + d / "m.cfpw" + " --log " + d / "log.json")
              .code == 0);
  CHECK(fs::exists(d / "log.json"));
  save_ctn(d / "f.ctn", random_features<double>(22, 8, 5));

  const std::string base = "synth --model " + d / "m.cfpw" + " --features " + d / "f.ctn";
  REQUIRE(run(base + " --mode incremental --out " + d / "inc.ctn").code == 0);
  REQUIRE(run(base + " --mode parallel --out " + d / "par.ctn").code == 0);
  auto diff = run("msd --metric mean_squared " + d / "inc.ctn" + " " + d / "par.ctn");
  CHECK(diff.code == 0);
  CHECK(std::stod(diff.out) <= 1e-18);

  // Decode 2 chunks, save state, resume for the rest.
  REQUIRE(run(base + " --max-chunks 2 --out " + d / "head.ctn" + " --state-out " + d / "s.cfps")
              .code == 0);
  REQUIRE(run(base + " --state-in " + d / "s.cfps" + " --out " + d / "tail.ctn").code == 0);
  const auto whole = std::get<Tensor<double>>(load_ctn(d / "inc.ctn"));
  const auto head = std::get<Tensor<double>>(load_ctn(d / "head.ctn"));
  const auto tail = std::get<Tensor<double>>(load_ctn(d / "tail.ctn"));
  REQUIRE(head.rows() == 8);
  REQUIRE(tail.rows() == 14);
  CHECK(concat_time(head, tail) == whole);

  auto garbage = run(base + " --state-in " + d / "f.ctn" + " --out " + d / "x.ctn");
  CHECK(garbage.code == 3);
}
