#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxreg/io.hpp"
#include "voxreg/network.hpp"
#include "voxreg/rng.hpp"

using namespace voxreg;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  fs::path dir = fs::temp_directory_path() / "voxreg_cli_tests";
  fs::create_directories(dir);
  const std::string log = (dir / "out.log").string();
  const std::string cmd =
      std::string(VOXREG_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = status == -1 ? -1 : WEXITSTATUS(status);
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

std::string scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "voxreg_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gen-data, train epochs=0, register, eval pipeline") {
  const std::string data = scratch("data");
  RunResult gen = run_cli("gen-data --seed 5 --dims 16 --pairs 1 --out " + data);
  INFO(gen.output);
  REQUIRE(gen.exit_code == 0);
  CHECK(fs::exists(data + "/pair_000.moving.rvf"));
  CHECK(fs::exists(data + "/pair_000.fixed.rvf"));
  CHECK(fs::exists(data + "/pair_000.moving_labels.rvf"));
  CHECK(fs::exists(data + "/pair_000.gt_field.rvf"));
  CHECK(fs::exists(data + "/config.effective.txt"));
  CHECK(fs::exists(data + "/pairs.csv"));

  // epochs=0 leaves the checkpoint at initialization
  const std::string run = scratch("run");
  RunResult tr = run_cli(
      "train --data " + data + " --out " + run +
      " --set epochs=0 --set stages=2 --set channels=4,8 --set stride_k=2,2"
      " --set bottleneck_d=8 --set lncc_window=3 --set seed=5");
  INFO(tr.output);
  REQUIRE(tr.exit_code == 0);
  REQUIRE(fs::exists(run + "/checkpoint.hsgk"));

  RegistrationModel loaded = read_checkpoint(run + "/checkpoint.hsgk");
  NetworkConfig cfg = loaded.config;
  RegistrationModel fresh = build_model(cfg, 5);
  auto pa = loaded.named_params();
  auto pb = fresh.named_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    for (Index j = 0; j < pa[i].tensor->size(); ++j) {
      REQUIRE(pa[i].tensor->array()(j) == pb[i].tensor->array()(j));
    }
  }

  // register with the zero-flow checkpoint reproduces the moving volume
  const std::string reg = scratch("reg");
  RunResult rr = run_cli("register --checkpoint " + run + "/checkpoint.hsgk" +
                         " --moving " + data + "/pair_000.moving.rvf" +
                         " --fixed " + data + "/pair_000.fixed.rvf" +
                         " --out " + reg);
  INFO(rr.output);
  REQUIRE(rr.exit_code == 0);
  CHECK(rr.output.find("registration time") != std::string::npos);
  CHECK(file_bytes(reg + "/warped.rvf") ==
        file_bytes(data + "/pair_000.moving.rvf"));

  // eval with identical labels and the identity field
  const std::string evald = scratch("eval");
  DeformationField zero = Tensor::zeros({3, 16, 16, 16});
  write_field(evald + "/zero_field.rvf", zero);
  RunResult ev = run_cli("eval --fixed-labels " + data +
                         "/pair_000.moving_labels.rvf --moving-labels " + data +
                         "/pair_000.moving_labels.rvf --field " + evald +
                         "/zero_field.rvf --out " + evald + "/report.csv");
  INFO(ev.output);
  REQUIRE(ev.exit_code == 0);
  CHECK(ev.output.find("pair_id,label,dice,njd_percent") != std::string::npos);
  CHECK(ev.output.find("0,mean,1,0") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected by name") {
  const std::string dir = scratch("badcfg");
  {
    std::ofstream os(dir + "/run.cfg");
    os << "epochs=1\nbogus_key=3\n";
  }
  RunResult r = run_cli("train --config " + dir + "/run.cfg --data " + dir +
                        " --out " + dir);
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("bogus_key") != std::string::npos);
}

TEST_CASE("bench emits csv rows") {
  RunResult r = run_cli("bench --kind both --k-list 8,16 --d 8 --iters 1");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("kind,k,d,flops,wall_ns") != std::string::npos);
  CHECK(r.output.find("ssa,8,8,") != std::string::npos);
  CHECK(r.output.find("mha,16,8,") != std::string::npos);
}

TEST_CASE("grad-check subcommand") {
  RunResult r = run_cli("grad-check --module ssa");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("gradient checks passed") != std::string::npos);
}
