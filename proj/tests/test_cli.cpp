#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "support/test_util.hpp"

namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

struct CmdResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

CmdResult run_tool(const TempDir& td, const std::string& tool, const std::string& args) {
  static int counter = 0;
  const std::string capture = td.file("capture_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(STACKLAB_BIN_DIR) + "/" + tool + " " + args + " > " + capture + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult res;
  res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  res.output = slurp(capture);
  return res;
}

CmdResult run_cli(const TempDir& td, const std::string& args) {
  return run_tool(td, "stacklab", args);
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("speedup subcommand prints closed-form and integer-plan ratios") {
  TempDir td("cli_speedup");
  const CmdResult r = run_cli(td, "speedup --layers 24 --block 4 --alpha 2");
  CHECK(r.code == 0);
  CHECK(r.output.find("closed-form speedup: 1.24") != std::string::npos);
  CHECK(r.output.find("ratio 1.238095") != std::string::npos);
  CHECK(r.output.find("integer-plan speedup:") != std::string::npos);

  const CmdResult alpha1 = run_cli(td, "speedup --layers 24 --block 4 --alpha 1");
  CHECK(alpha1.output.find("ratio 1.384615") != std::string::npos);

  const CmdResult bad = run_cli(td, "speedup --layers 10 --block 4 --alpha 1");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("config error:") != std::string::npos);
}

TEST_CASE("gen-data is deterministic and emits JSONL") {
  TempDir td("cli_gendata");
  const std::string f1 = td.file("a.jsonl");
  const std::string f2 = td.file("b.jsonl");
  CHECK(run_cli(td, "gen-data --task psm --n 5 --seed 3 --out " + f1).code == 0);
  CHECK(run_cli(td, "gen-data --task psm --n 5 --seed 3 --out " + f2).code == 0);
  CHECK(slurp(f1) == slurp(f2));
  CHECK(slurp(f1).find("\"task\":\"psm\"") != std::string::npos);

  const std::string f3 = td.file("c.jsonl");
  CHECK(run_cli(td, "gen-data --task psm --n 5 --seed 4 --out " + f3).code == 0);
  CHECK(slurp(f1) != slurp(f3));

  // rendered k-shot text on stdout carries the support answers inline
  const CmdResult kshot =
      run_cli(td, "gen-data --task arithmetic --n 2 --k 2 --seed 5 --kshot-text --out -");
  CHECK(kshot.code == 0);
  CHECK(kshot.output.find("\n\n") != std::string::npos);
  CHECK(kshot.output.find('=') != std::string::npos);
}

TEST_CASE("argument errors exit nonzero") {
  TempDir td("cli_args");
  CHECK(run_cli(td, "speedup --layers 24 --block 4").code != 0);  // --alpha required
  CHECK(run_cli(td, "no-such-command").code != 0);
  CHECK(run_cli(td, "").code != 0);  // a subcommand is required
  CHECK(run_cli(td, "evaluate --checkpoint missing.ckpt --task arithmetic --n 2").code == 1);
}

TEST_CASE("pretrain, evaluate and analyze round-trip through the binaries") {
  TempDir td("cli_train");
  const std::string corpus = td.file("corpus.txt");
  const CmdResult mk =
      run_tool(td, "stacklab-make-corpus", "--out " + corpus + " --seed 3 --bytes 60000");
  CHECK(mk.code == 0);
  CHECK(mk.output.find("wrote") != std::string::npos);
  CHECK(fs::file_size(corpus) >= 60000);

  const std::string config = td.file("run.ini");
  {
    std::ofstream os(config);
    os << "[model]\nn_layers = 2\nd_model = 16\nn_heads = 2\nd_ff = 32\nseq_len = 32\n"
       << "\n[growth]\nkind = baseline\n"
       << "\n[schedule]\ntotal_steps = 6\nalpha = 1\n"
       << "\n[data]\ncorpus = " << corpus << "\nbatch_size = 2\n"
       << "\n[run]\nname = clirun\neval_every = 3\nval_batches = 2\n";
  }
  const std::string out_dir = td.file("run_out");
  const CmdResult pre = run_cli(td, "pretrain --config " + config + " --out " + out_dir);
  INFO(pre.output);
  CHECK(pre.code == 0);
  CHECK(pre.output.find("pretrain done: run=clirun") != std::string::npos);
  CHECK(fs::exists(out_dir + "/metrics.csv"));
  CHECK(fs::exists(out_dir + "/manifest.json"));
  CHECK(fs::exists(out_dir + "/final.ckpt"));

  const CmdResult ev = run_cli(
      td, "evaluate --checkpoint " + out_dir + "/final.ckpt --task arithmetic --n 4 --seed 9");
  INFO(ev.output);
  CHECK(ev.code == 0);
  CHECK(ev.output.find("task=arithmetic accuracy=") != std::string::npos);
  CHECK(ev.output.find("scored=4") != std::string::npos);

  const std::string sim_csv = td.file("cosine.csv");
  const CmdResult an = run_cli(td, "analyze --checkpoint " + out_dir +
                                        "/final.ckpt --metric block_cosine --out " + sim_csv);
  INFO(an.output);
  CHECK(an.code == 0);
  CHECK(an.output.find("block_cosine: n=2") != std::string::npos);
  CHECK(slurp(sim_csv).find("label,block1,block2") != std::string::npos);
}

TEST_CASE("config errors exit with code 2") {
  TempDir td("cli_config");
  const std::string config = td.file("bad.ini");
  {
    std::ofstream os(config);
    os << "[model]\nn_layers = 2\nd_model = 16\nn_heads = 2\nd_ff = 32\nseq_len = 32\n"
       << "mystery_knob = 1\n"
       << "\n[schedule]\ntotal_steps = 6\nalpha = 1\n"
       << "\n[data]\ncorpus = c.txt\nbatch_size = 2\n"
       << "\n[run]\neval_every = 3\n";
  }
  const CmdResult r = run_cli(td, "pretrain --config " + config + " --out " + td.file("out"));
  CHECK(r.code == 2);
  CHECK(r.output.find("config error:") != std::string::npos);
  CHECK(r.output.find("mystery_knob") != std::string::npos);
}

TEST_SUITE_END();
