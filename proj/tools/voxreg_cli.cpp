// Command-line front end: data generation, training, registration,
// evaluation, mixer benchmarks, stride sweeps, gradient checks.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "voxreg/gradcheck.hpp"
#include "voxreg/io.hpp"
#include "voxreg/metrics.hpp"
#include "voxreg/network.hpp"
#include "voxreg/runconfig.hpp"
#include "voxreg/ssaformer.hpp"
#include "voxreg/synthdata.hpp"

namespace fs = std::filesystem;
using namespace voxreg;

namespace {

std::string pair_stem(const std::string& dir, int index) {
  std::ostringstream os;
  os << dir << "/pair_" << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  RunConfig rc;
  if (!config_path.empty()) rc.load_file(config_path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return rc;
}

void echo_config(const RunConfig& rc) {
  std::cout << "# effective config\n" << rc.to_text();
}

struct LoadedPair {
  RegPair volumes;
  LabelMap moving_labels, fixed_labels;
  bool has_labels = false;
};

std::vector<LoadedPair> load_pairs(const std::string& dir, bool want_labels) {
  std::vector<LoadedPair> out;
  for (int i = 0;; ++i) {
    const std::string stem = pair_stem(dir, i);
    if (!fs::exists(stem + ".moving.rvf")) break;
    LoadedPair p;
    p.volumes.moving = read_volume(stem + ".moving.rvf");
    p.volumes.fixed = read_volume(stem + ".fixed.rvf");
    if (want_labels) {
      p.moving_labels = read_labels(stem + ".moving_labels.rvf");
      p.fixed_labels = read_labels(stem + ".fixed_labels.rvf");
      p.has_labels = true;
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) {
    throw std::runtime_error("no pair_*.moving.rvf files found in '" + dir +
                             "'");
  }
  return out;
}

void write_loss_csv(const std::string& path,
                    const std::vector<EpochLoss>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch,sim_loss,reg_loss,total\n";
  os.precision(12);
  for (size_t i = 0; i < history.size(); ++i) {
    os << (i + 1) << "," << history[i].sim << "," << history[i].reg << ","
       << history[i].total << "\n";
  }
}

int cmd_gen_data(const RunConfig& rc, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_effective_config(rc, out_dir);
  echo_config(rc);
  SynthPairOptions opt;
  opt.field.amplitude = rc.amplitude;
  opt.field.smoothness = rc.smoothness;
  const std::array<Index, 3> dims{rc.dims, rc.dims, rc.dims};
  std::ofstream manifest(out_dir + "/pairs.csv");
  manifest << "pair_id,baseline_dice\n";
  manifest.precision(8);
  for (Index i = 0; i < rc.pairs; ++i) {
    SynthPair pair = make_pair(rc.seed + static_cast<std::uint64_t>(i) * 1000,
                               dims, opt);
    const std::string stem = pair_stem(out_dir, static_cast<int>(i));
    write_volume(stem + ".moving.rvf", pair.moving.volume);
    write_volume(stem + ".fixed.rvf", pair.fixed.volume);
    write_labels(stem + ".moving_labels.rvf", pair.moving.labels);
    write_labels(stem + ".fixed_labels.rvf", pair.fixed.labels);
    write_field(stem + ".gt_field.rvf", pair.gt_field);
    manifest << i << "," << pair.baseline_dice << "\n";
    std::cout << "pair " << i << ": baseline dice " << pair.baseline_dice
              << "\n";
  }
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_dir,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_effective_config(rc, out_dir);
  echo_config(rc);
  std::vector<LoadedPair> loaded = load_pairs(data_dir, false);
  std::vector<RegPair> pairs;
  for (LoadedPair& p : loaded) pairs.push_back(std::move(p.volumes));

  RegistrationModel model = build_model(rc.network, rc.seed);
  std::cout << "parameters: " << model.param_count() << "\n";
  TrainOptions opt;
  opt.epochs = rc.epochs;
  opt.sim = rc.sim;
  opt.verbose = true;
  std::vector<EpochLoss> history = train(model, pairs, opt);
  write_loss_csv(out_dir + "/loss.csv", history);
  write_checkpoint(out_dir + "/checkpoint.hsgk", model);
  std::cout << "checkpoint: " << out_dir << "/checkpoint.hsgk\n";
  return 0;
}

int cmd_register(const std::string& checkpoint, const std::string& moving_path,
                 const std::string& fixed_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  RegistrationModel model = read_checkpoint(checkpoint);
  Volume moving = read_volume(moving_path);
  Volume fixed = read_volume(fixed_path);
  const auto start = std::chrono::steady_clock::now();
  ForwardResult res = forward(model, moving, fixed);
  const auto stop = std::chrono::steady_clock::now();
  const double seconds =
      std::chrono::duration_cast<std::chrono::duration<double>>(stop - start)
          .count();
  write_volume(out_dir + "/warped.rvf", res.warped);
  write_field(out_dir + "/field.rvf", res.field);
  std::ofstream cfg(out_dir + "/config.effective.txt");
  cfg << config_to_text(model.config);
  std::cout << "registration time (s): " << seconds << "\n";
  std::cout << "outputs: " << out_dir << "/warped.rvf, " << out_dir
            << "/field.rvf\n";
  return 0;
}

int cmd_eval(const std::string& fixed_labels_path,
             const std::string& moving_labels_path,
             const std::string& field_path, const std::string& out_csv) {
  LabelMap fixed_labels = read_labels(fixed_labels_path);
  LabelMap moving_labels = read_labels(moving_labels_path);
  DeformationField field = read_field(field_path);
  LabelMap warped = label_transform(moving_labels, field);
  MetricReport report =
      dice(fixed_labels, warped, present_labels(fixed_labels, warped));
  report.njd_percent = njd_percent(field);

  std::ostringstream csv;
  csv << "pair_id,label,dice,njd_percent\n";
  csv.precision(8);
  for (const auto& [label, value] : report.dice_per_label) {
    csv << "0," << label << "," << value << "," << report.njd_percent << "\n";
  }
  csv << "0,mean," << report.dice_mean << "," << report.njd_percent << "\n";
  std::cout << csv.str();
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("cannot write " + out_csv);
    os << csv.str();
  }
  return 0;
}

int cmd_bench(const std::string& kind, const std::vector<Index>& k_list,
              Index d, int iters) {
  std::cout << "kind,k,d,flops,wall_ns\n";
  for (Index k : k_list) {
    std::vector<MixerKind> kinds;
    if (kind == "ssa" || kind == "both") kinds.push_back(MixerKind::ssa);
    if (kind == "mha" || kind == "both") kinds.push_back(MixerKind::mha);
    if (kinds.empty()) {
      throw std::invalid_argument("--kind must be ssa, mha or both");
    }
    for (MixerKind mk : kinds) {
      MixerBenchRow row = bench_mixer(mk, k, d, iters, 42);
      std::cout << (mk == MixerKind::ssa ? "ssa" : "mha") << "," << row.k
                << "," << row.d << "," << row.flops << "," << row.wall_ns
                << "\n";
    }
  }
  return 0;
}

int cmd_sweep_k(const RunConfig& base, const std::vector<Index>& k_list,
                const std::string& data_dir, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_effective_config(base, out_dir);
  std::vector<LoadedPair> loaded = load_pairs(data_dir, true);

  std::ofstream os(out_dir + "/sweep_k.csv");
  os << "k,dice_pre,dice_post,njd_percent\n";
  os.precision(8);
  std::cout << "k,dice_pre,dice_post,njd_percent\n";
  for (Index k : k_list) {
    RunConfig rc = base;
    rc.network.stride_k.assign(static_cast<size_t>(rc.network.stages), k);
    RegistrationModel model = build_model(rc.network, rc.seed);
    std::vector<RegPair> pairs;
    for (LoadedPair& p : loaded) pairs.push_back(p.volumes);
    TrainOptions opt;
    opt.epochs = rc.epochs;
    opt.sim = rc.sim;
    train(model, pairs, opt);

    double pre = 0.0, post = 0.0, njd = 0.0;
    for (LoadedPair& p : loaded) {
      ForwardResult res = forward(model, p.volumes.moving, p.volumes.fixed);
      LabelMap warped = label_transform(p.moving_labels, res.field);
      const auto labels = present_labels(p.fixed_labels, p.moving_labels);
      pre += dice(p.fixed_labels, p.moving_labels, labels).dice_mean;
      post += dice(p.fixed_labels, warped, labels).dice_mean;
      njd += njd_percent(res.field);
    }
    const double n = static_cast<double>(loaded.size());
    pre /= n;
    post /= n;
    njd /= n;
    os << k << "," << pre << "," << post << "," << njd << "\n";
    std::cout << k << "," << pre << "," << post << "," << njd << "\n";
  }
  return 0;
}

int cmd_grad_check(const std::string& module, std::uint64_t seed) {
  std::vector<GradCheckResult> results = run_gradcheck(module, seed);
  int failures = 0;
  for (const GradCheckResult& r : results) {
    std::cout << (r.pass ? "[ok]   " : "[FAIL] ") << r.name
              << "  max_rel_err=" << r.max_rel_err << "  (" << r.checked
              << " elements)\n";
    if (!r.pass) ++failures;
  }
  std::cout << (failures == 0 ? "gradient checks passed\n"
                              : "gradient checks FAILED\n");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxreg: deformable 3D registration engine"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed_flag = 0;
  bool seed_given = false;

  auto add_config_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides,
                    "override a config key, e.g. --set epochs=5");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic pairs");
  Index gen_dims = 0, gen_pairs = 0;
  add_config_flags(gen);
  gen->add_option("--seed", seed_flag, "rng seed")->each([&](std::string) {
    seed_given = true;
  });
  gen->add_option("--dims", gen_dims, "cubic volume extent");
  gen->add_option("--pairs", gen_pairs, "number of pairs");
  gen->add_option("--out", out_dir, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a registration model");
  add_config_flags(tr);
  tr->add_option("--data", data_dir, "directory with pair_*.rvf")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  // register
  auto* reg = app.add_subcommand("register", "apply a trained model");
  std::string ckpt, moving_path, fixed_path;
  reg->add_option("--checkpoint", ckpt)->required();
  reg->add_option("--moving", moving_path)->required();
  reg->add_option("--fixed", fixed_path)->required();
  reg->add_option("--out", out_dir)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Dice + NJD report");
  std::string fixed_labels_path, moving_labels_path, field_path, out_csv;
  ev->add_option("--fixed-labels", fixed_labels_path)->required();
  ev->add_option("--moving-labels", moving_labels_path)->required();
  ev->add_option("--field", field_path)->required();
  ev->add_option("--out", out_csv, "CSV output path");

  // bench
  auto* be = app.add_subcommand("bench", "token-mixer FLOPs and timing");
  std::string bench_kind = "both";
  std::vector<Index> k_list{1024, 4096};
  Index bench_d = 64;
  int bench_iters = 5;
  be->add_option("--kind", bench_kind, "ssa|mha|both");
  be->add_option("--k-list", k_list, "token counts")->delimiter(',');
  be->add_option("--d", bench_d, "embedding dim");
  be->add_option("--iters", bench_iters, "iterations per row");

  // sweep-k
  auto* sw = app.add_subcommand("sweep-k", "train/evaluate across SGA strides");
  std::vector<Index> sweep_k{1, 2, 4};
  add_config_flags(sw);
  sw->add_option("--k-list", sweep_k, "stride values")->delimiter(',');
  sw->add_option("--data", data_dir)->required();
  sw->add_option("--out", out_dir)->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference suite");
  std::string gc_module = "all";
  std::uint64_t gc_seed = 2024;
  gc->add_option("--module", gc_module, "all|tensor|sga|ssa|losses|network");
  gc->add_option("--seed", gc_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      RunConfig rc = load_run_config(config_path, overrides);
      if (seed_given) rc.seed = seed_flag;
      if (gen_dims > 0) rc.dims = gen_dims;
      if (gen_pairs > 0) rc.pairs = gen_pairs;
      return cmd_gen_data(rc, out_dir);
    }
    if (tr->parsed()) {
      RunConfig rc = load_run_config(config_path, overrides);
      return cmd_train(rc, data_dir, out_dir);
    }
    if (reg->parsed()) {
      return cmd_register(ckpt, moving_path, fixed_path, out_dir);
    }
    if (ev->parsed()) {
      return cmd_eval(fixed_labels_path, moving_labels_path, field_path,
                      out_csv);
    }
    if (be->parsed()) {
      return cmd_bench(bench_kind, k_list, bench_d, bench_iters);
    }
    if (sw->parsed()) {
      RunConfig rc = load_run_config(config_path, overrides);
      return cmd_sweep_k(rc, sweep_k, data_dir, out_dir);
    }
    if (gc->parsed()) {
      return cmd_grad_check(gc_module, gc_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
