#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "racs/data_io.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string output;  // stdout + stderr, interleaved
};

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s)
    if (c == '\'')
      q += "'\\''";
    else
      q += c;
  return q + "'";
}

CmdResult run_cli(const std::vector<std::string>& args) {
  std::string cmd = shell_quote(RACS_CLI);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult res;
  char buf[512];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) res.output.append(buf, got);
  const int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

fs::path scratch_dir() {
  auto d = fs::temp_directory_path() / "racs_cli_tests";
  fs::create_directories(d);
  return d;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = scratch_dir() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

long line_count(const fs::path& p) {
  const std::string s = slurp(p);
  long n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// A tiny but complete staged run: b=8, rows 3..10, 19 steps total.
std::vector<std::string> tiny_train_args(const fs::path& out, const std::string& seed = "5") {
  return {"train",           "--mode",        "rate-adaptive", "--head",     "autoencoder",
          "--block",         "8",             "--k-min",       "3",          "--m-max",
          "10",              "--max-iters-1", "10",            "--max-iters-2",
          "8",               "--iters-per-row", "1",           "--batch-size", "8",
          "--train-count",   "40",            "--seed",        seed,         "--out",
          out.string()};
}

}  // namespace

TEST_CASE("usage mistakes exit with code 1 and help with 0") {
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"explode"}).code == 1);
  CHECK(run_cli({"train", "--no-such-flag"}).code == 1);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"train", "--help"}).code == 0);
}

TEST_CASE("training writes checkpoints and a step log") {
  const fs::path out = fresh_dir("train_basic");
  const CmdResult res = run_cli(tiny_train_args(out));
  CHECK(res.code == 0);
  CHECK(fs::is_regular_file(out / "stage1.racs"));
  CHECK(fs::is_regular_file(out / "stage2.racs"));
  CHECK(fs::is_regular_file(out / "final.racs"));
  CHECK(fs::is_regular_file(out / "train_log.csv"));
  // header + 10 + 8 + 7 attempted steps
  CHECK(line_count(out / "train_log.csv") == 26);
  const std::string log = slurp(out / "train_log.csv");
  CHECK(log.rfind("iter,stage,loss\n", 0) == 0);
  CHECK(log.find("\n9,1,") != std::string::npos);
  CHECK(log.find("\n10,2,") != std::string::npos);
  CHECK(log.find("\n18,3,") != std::string::npos);
}

TEST_CASE("identical configurations produce identical artifacts") {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  REQUIRE(run_cli(tiny_train_args(a)).code == 0);
  REQUIRE(run_cli(tiny_train_args(b)).code == 0);
  CHECK(slurp(a / "final.racs") == slurp(b / "final.racs"));
  CHECK(slurp(a / "stage1.racs") == slurp(b / "stage1.racs"));
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));

  const fs::path c = fresh_dir("det_c");
  REQUIRE(run_cli(tiny_train_args(c, "6")).code == 0);
  CHECK(slurp(a / "final.racs") != slurp(c / "final.racs"));
}

TEST_CASE("flags override config-file values") {
  const fs::path dir = fresh_dir("override");
  const fs::path ini = dir / "run.ini";
  {
    std::ofstream out(ini);
    out << "[run]\nmode = rate-adaptive\nhead = autoencoder\n"
        << "[train]\nk_min = 3\nm_max = 10\nmax_iters_1 = 10\nmax_iters_2 = 8\n"
        << "iters_per_row = 1\nbatch_size = 8\nseed = 5\n"
        << "[data]\nkind = dct-lowpass\ntrain_count = 40\nblock = 8\n";
  }
  const fs::path from_ini = fresh_dir("override_ini");
  REQUIRE(run_cli({"train", "--config", ini.string(), "--out", from_ini.string()}).code == 0);
  // The INI alone reproduces the all-flags run above.
  const fs::path flags = fresh_dir("override_flags");
  REQUIRE(run_cli(tiny_train_args(flags)).code == 0);
  CHECK(slurp(from_ini / "final.racs") == slurp(flags / "final.racs"));

  // A flag beats the file's seed and lands on the seed-6 artifacts.
  const fs::path overridden = fresh_dir("override_seed");
  REQUIRE(run_cli({"train", "--config", ini.string(), "--seed", "6", "--out",
                   overridden.string()})
              .code == 0);
  const fs::path six = fresh_dir("override_six");
  REQUIRE(run_cli(tiny_train_args(six, "6")).code == 0);
  CHECK(slurp(overridden / "final.racs") == slurp(six / "final.racs"));
  CHECK(slurp(overridden / "final.racs") != slurp(from_ini / "final.racs"));
}

TEST_CASE("sweeping a checkpoint emits one row per rate") {
  const fs::path out = fresh_dir("sweep_run");
  REQUIRE(run_cli(tiny_train_args(out)).code == 0);
  const CmdResult res =
      run_cli({"sweep", "--checkpoint", (out / "final.racs").string(), "--block", "8",
               "--test-count", "6", "--seed", "5", "--out", out.string()});
  CHECK(res.code == 0);
  REQUIRE(fs::is_regular_file(out / "sweep.csv"));
  CHECK(line_count(out / "sweep.csv") == 1 + 8);  // header + r=3..10
  const std::string csv = slurp(out / "sweep.csv");
  CHECK(csv.rfind("r,mr,mean_metric,n_items\n", 0) == 0);
  CHECK(csv.find("\n3,") != std::string::npos);
  CHECK(csv.find("\n10,") != std::string::npos);

  // An explicit sub-range narrows the sweep.
  const fs::path sub = fresh_dir("sweep_sub");
  const CmdResult res2 =
      run_cli({"sweep", "--checkpoint", (out / "final.racs").string(), "--block", "8",
               "--test-count", "6", "--seed", "5", "--r-min", "4", "--r-max", "7", "--out",
               sub.string()});
  CHECK(res2.code == 0);
  CHECK(line_count(sub / "sweep.csv") == 1 + 4);

  // A range the operator cannot serve is a configuration error.
  CHECK(run_cli({"sweep", "--checkpoint", (out / "final.racs").string(), "--block", "8",
                 "--r-min", "1", "--r-max", "10", "--out", sub.string()})
            .code == 2);
}

TEST_CASE("a wide sweep covers the documented 55-rate range") {
  const fs::path out = fresh_dir("sweep_wide");
  // Zero-iteration staged training still yields a valid full-range operator.
  REQUIRE(run_cli({"train", "--mode", "rate-adaptive", "--head", "autoencoder", "--block",
                   "16", "--k-min", "10", "--m-max", "64", "--max-iters-1", "0",
                   "--max-iters-2", "0", "--iters-per-row", "0", "--train-count", "40",
                   "--seed", "3", "--out", out.string()})
              .code == 0);
  const CmdResult res =
      run_cli({"sweep", "--checkpoint", (out / "final.racs").string(), "--block", "16",
               "--test-count", "5", "--seed", "3", "--r-min", "10", "--r-max", "64", "--out",
               out.string()});
  CHECK(res.code == 0);
  CHECK(line_count(out / "sweep.csv") == 1 + 55);
}

TEST_CASE("classification scoring prints the accuracy it stores") {
  const fs::path out = fresh_dir("classify_run");
  REQUIRE(run_cli({"train", "--mode", "vanilla", "--head", "classifier", "--classes", "4",
                   "--data-kind", "shapes", "--block", "8", "--k-min", "3", "--m-max", "10",
                   "--max-iters-1", "10", "--batch-size", "8", "--train-count", "60", "--seed",
                   "7", "--out", out.string()})
              .code == 0);
  const CmdResult res =
      run_cli({"classify", "--checkpoint", (out / "final.racs").string(), "--data-kind",
               "shapes", "--block", "8", "--test-count", "20", "--seed", "7", "--r", "5",
               "--out", out.string()});
  CHECK(res.code == 0);
  CHECK(res.output.find("r=5 accuracy=") != std::string::npos);
  REQUIRE(fs::is_regular_file(out / "classify.csv"));
  CHECK(line_count(out / "classify.csv") == 2);

  // Pointing classify at a reconstruction checkpoint is a config error.
  const fs::path recon = fresh_dir("classify_wrong");
  REQUIRE(run_cli(tiny_train_args(recon)).code == 0);
  CHECK(run_cli({"classify", "--checkpoint", (recon / "final.racs").string(), "--block", "8",
                 "--out", recon.string()})
            .code == 2);
}

TEST_CASE("adaptation simulation reproduces the constant-scene ratchet") {
  const fs::path out = fresh_dir("adapt_run");
  REQUIRE(run_cli(tiny_train_args(out)).code == 0);

  const fs::path frames = fresh_dir("adapt_frames");
  for (int i = 0; i < 6; ++i)
    racs::data_io::save_pgm(racs::data_io::make_image(8, 8, 0.4f),
                            (frames / ("f" + std::to_string(i) + ".pgm")).string());

  const CmdResult res = run_cli({"adapt-sim", "--checkpoint", (out / "final.racs").string(),
                                 "--policy", "framediff", "--alpha", "0.15", "--beta", "0.3",
                                 "--delta", "3", "--ground-truth-diff", "--frames",
                                 frames.string(), "--out", out.string()});
  CHECK(res.code == 0);
  CHECK(res.output.find("avg_mr=0.0963542") != std::string::npos);
  const std::string trace = slurp(out / "trace.csv");
  CHECK(trace.rfind("frame,r,mr,psnr\n", 0) == 0);
  CHECK(trace.find("\n0,10,") != std::string::npos);
  CHECK(trace.find("\n1,10,") != std::string::npos);
  CHECK(trace.find("\n2,7,") != std::string::npos);
  CHECK(trace.find("\n3,4,") != std::string::npos);
  CHECK(trace.find("\n4,3,") != std::string::npos);
  CHECK(trace.find("\n5,3,") != std::string::npos);

  // Confidence runs need their score file.
  CHECK(run_cli({"adapt-sim", "--checkpoint", (out / "final.racs").string(), "--policy",
                 "confidence", "--frames", frames.string(), "--out", out.string()})
            .code == 2);
  const fs::path conf = out / "conf.csv";
  {
    std::ofstream c(conf);
    c << "0.9\n0.2\n0.2\n0.9\n0.31\n0.5\n";
  }
  const CmdResult res2 = run_cli({"adapt-sim", "--checkpoint", (out / "final.racs").string(),
                                  "--policy", "confidence", "--gamma", "0.3", "--delta", "3",
                                  "--frames", frames.string(), "--confidence", conf.string(),
                                  "--out", out.string()});
  CHECK(res2.code == 0);
  const std::string trace2 = slurp(out / "trace.csv");
  CHECK(trace2.find("\n0,10,") != std::string::npos);
  CHECK(trace2.find("\n1,7,") != std::string::npos);
  CHECK(trace2.find("\n2,10,") != std::string::npos);
  CHECK(trace2.find("\n3,10,") != std::string::npos);
  CHECK(trace2.find("\n4,7,") != std::string::npos);
  CHECK(trace2.find("\n5,4,") != std::string::npos);

  // The linear schedule lands exactly on its endpoints.
  const CmdResult res3 = run_cli({"adapt-sim", "--checkpoint", (out / "final.racs").string(),
                                  "--policy", "linear", "--frames", frames.string(), "--out",
                                  out.string()});
  CHECK(res3.code == 0);
  const std::string trace3 = slurp(out / "trace.csv");
  CHECK(trace3.find("\n0,10,") != std::string::npos);
  CHECK(trace3.find("\n5,3,") != std::string::npos);
}

TEST_CASE("operator rows export as one image per row") {
  const fs::path out = fresh_dir("phi_run");
  REQUIRE(run_cli(tiny_train_args(out)).code == 0);
  const fs::path dir = fresh_dir("phi_images");
  CHECK(run_cli({"export-phi", "--checkpoint", (out / "final.racs").string(), "--out",
                 dir.string()})
            .code == 0);
  int pgms = 0;
  for (const auto& e : fs::directory_iterator(dir)) pgms += e.path().extension() == ".pgm";
  CHECK(pgms == 10);
}

TEST_CASE("failures map to distinct exit codes") {
  const fs::path dir = fresh_dir("exit_codes");

  // 2: config problems — bad values, unknown keys, missing inputs.
  CHECK(run_cli({"train", "--k-min", "20", "--m-max", "10", "--out", dir.string()}).code == 2);
  const fs::path bad_ini = dir / "bad.ini";
  {
    std::ofstream out(bad_ini);
    out << "[train]\nwarp_speed = 9\n";
  }
  CHECK(run_cli({"train", "--config", bad_ini.string()}).code == 2);
  CHECK(run_cli({"train", "--config", (dir / "absent.ini").string()}).code == 2);
  CHECK(run_cli({"sweep", "--checkpoint", (dir / "absent.racs").string()}).code == 2);

  // 3: data problems — corrupt checkpoint, unlabeled classifier data.
  const fs::path corrupt = dir / "corrupt.racs";
  {
    std::ofstream out(corrupt, std::ios::binary);
    out << "RACSgarbagegarbage";
  }
  CHECK(run_cli({"sweep", "--checkpoint", corrupt.string(), "--block", "8", "--out",
                 dir.string()})
            .code == 3);
  CHECK(run_cli({"train", "--mode", "vanilla", "--head", "classifier", "--classes", "4",
                 "--data-kind", "dct-lowpass", "--block", "8", "--m-max", "10",
                 "--max-iters-1", "1", "--train-count", "20", "--out", dir.string()})
            .code == 3);
}
