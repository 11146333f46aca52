#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sgcdet/config.hpp"
#include "sgcdet/runner.hpp"
#include "sgcdet/serialize.hpp"

namespace {

sgcdet::RunConfig load_run_config(const std::string& path, bool seed_given,
                                  std::uint64_t seed) {
  sgcdet::RunConfig rc = sgcdet::run_config_from_json(sgcdet::read_json_file(path));
  if (seed_given) rc.seed = seed;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive multi-view 3D volume construction and detection"};
  app.require_subcommand(1);

  std::string config_path;
  std::string manifest_dir;
  std::string params_path;
  std::string out_path;
  std::uint64_t seed = 1;
  bool seed_given = false;
  int threads = 1;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config_path, "JSON config file");
    if (needs_config) c->required();
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_given = true;
    });
    cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  };

  CLI::App* gen = app.add_subcommand("generate", "generate and render synthetic scenes");
  int count = 1;
  double split = 0.8;
  add_common(gen, true);
  gen->add_option("--out", out_path, "output dataset directory")->required();
  gen->add_option("--count", count, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--split", split, "train fraction (floor(count*split) scenes train)");

  CLI::App* train = app.add_subcommand("train", "train on the manifest's train split");
  add_common(train, true);
  train->add_option("--manifest", manifest_dir, "dataset directory")->required();
  train->add_option("--out", out_path, "output directory for params and log")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate on the manifest's val split");
  add_common(eval, true);
  eval->add_option("--manifest", manifest_dir, "dataset directory")->required();
  eval->add_option("--params", params_path, "trained parameter file")->required();
  eval->add_option("--out", out_path, "output directory for reports")->required();

  CLI::App* bench = app.add_subcommand("bench", "compare volume-construction costs");
  add_common(bench, true);
  bench->add_option("--manifest", manifest_dir, "dataset directory")->required();
  bench->add_option("--out", out_path, "output CSV path")->required();

  CLI::App* exp = app.add_subcommand("export", "export a 2D slice of a built volume");
  int scene_index = 0, stage = 0, slice_index = 0;
  std::string what = "occupancy", axis = "z";
  add_common(exp, true);
  exp->add_option("--manifest", manifest_dir, "dataset directory")->required();
  exp->add_option("--params", params_path, "parameter file (default: seeded init)");
  exp->add_option("--scene", scene_index, "scene index in manifest order");
  exp->add_option("--what", what, "occupancy or features");
  exp->add_option("--stage", stage, "pipeline stage");
  exp->add_option("--axis", axis, "slice axis: x, y, or z");
  exp->add_option("--index", slice_index, "slice index along the axis");
  exp->add_option("--out", out_path, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const sgcdet::GenConfig g =
          sgcdet::gen_config_from_json(sgcdet::read_json_file(config_path));
      const sgcdet::DatasetManifest m =
          sgcdet::cmd_generate(g, seed, out_path, count, split, threads);
      int n_train = 0;
      for (const auto& e : m.scenes) n_train += e.split == "train" ? 1 : 0;
      std::cout << "wrote " << m.scenes.size() << " scenes (" << n_train << " train / "
                << (m.scenes.size() - n_train) << " val) to " << out_path << "\n"
                << "config hash " << m.hash << "\n";
    } else if (train->parsed()) {
      const sgcdet::RunConfig rc = load_run_config(config_path, seed_given, seed);
      const sgcdet::TrainResult r = sgcdet::cmd_train(rc, manifest_dir, out_path, threads);
      std::cout << "steps " << r.rows.size() << "\n"
                << "mean train loss " << sgcdet::fmt_g17(r.initial_mean_loss) << " -> "
                << sgcdet::fmt_g17(r.final_mean_loss) << "\n"
                << "params " << r.params_path.string() << "\n"
                << "log " << r.log_path.string() << "\n";
    } else if (eval->parsed()) {
      const sgcdet::RunConfig rc = load_run_config(config_path, seed_given, seed);
      const sgcdet::EvalResult r =
          sgcdet::cmd_eval(rc, manifest_dir, params_path, out_path, threads);
      for (size_t t = 0; t < r.report.thresholds.size(); ++t)
        std::cout << "mAP@" << r.report.thresholds[t] << " = "
                  << sgcdet::fmt_g17(r.report.map[t]) << "\n";
      std::cout << "wall seconds " << r.cost.wall_seconds << " (informational)\n"
                << "reports " << r.json_path.string() << ", " << r.csv_path.string() << "\n";
    } else if (bench->parsed()) {
      const sgcdet::BenchConfig bc =
          sgcdet::bench_config_from_json(sgcdet::read_json_file(config_path));
      const std::vector<sgcdet::BenchRow> rows =
          sgcdet::cmd_bench(bc, manifest_dir, out_path, threads);
      for (const sgcdet::BenchRow& row : rows)
        std::cout << row.label << ": aggregate " << row.cost.aggregate_total << ", samples "
                  << row.cost.deformable_samples << ", bytes " << row.cost.feature_bytes
                  << ", wall " << row.cost.wall_seconds << "s (informational)\n";
      std::cout << "csv " << out_path << "\n";
    } else if (exp->parsed()) {
      const sgcdet::RunConfig rc = load_run_config(config_path, seed_given, seed);
      if (axis.size() != 1) throw std::invalid_argument("export: axis must be x, y, or z");
      sgcdet::cmd_export(rc, manifest_dir, params_path, scene_index, what, stage, axis[0],
                         slice_index, out_path, threads);
      std::cout << "slice " << out_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
