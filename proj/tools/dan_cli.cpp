#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "dan/commands.hpp"

namespace {

struct Globals {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::string device = "cpu";
  std::vector<std::string> overrides;
};

dan::RunConfig resolve_config(const Globals& g) {
  dan::RunConfig config = g.config_path.empty() ? dan::RunConfig{} : dan::RunConfig::from_file(g.config_path);
  for (const auto& o : g.overrides) config.apply_override(o);
  if (g.seed) config.seed = *g.seed;
  if (g.deterministic) config.deterministic = true;
  config.device = g.device;
  dan::apply_runtime(config);
  return config;
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent video deblurring: toy data synthesis, training, inference and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI run configuration");
  app.add_option("--seed", g.seed, "Seed for data synthesis, initialisation and sampling");
  app.add_flag("--deterministic", g.deterministic, "Single thread, deterministic kernels");
  app.add_option("--device", g.device, "Compute device (cpu)");
  app.add_option("--set", g.overrides, "Override a config value: section.key=value")->allow_extra_args(false);

  auto* synth = app.add_subcommand("synth", "Write a toy blur/sharp dataset under data.root");

  auto* train = app.add_subcommand("train", "Train on train.dataset (or data.root)");
  std::string resume;
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* deblur = app.add_subcommand("deblur", "Restore a directory of blurry frames");
  std::string checkpoint;
  std::string input;
  std::string output;
  bool dump = false;
  deblur->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  deblur->add_option("--input", input, "Directory of NNNNN.png frames (or a video directory with blur/)")->required();
  deblur->add_option("--output", output, "Directory for restored frames")->required();
  deblur->add_flag("--dump-intermediates", dump, "Also write P, D, RM and Occ images");

  auto* eval = app.add_subcommand("eval", "PSNR of the full pipeline and of the blurry inputs");
  std::string dataset;
  std::string out_dir;
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--dataset", dataset, "Dataset directory (default eval.dataset, then data.root)");
  eval->add_option("--out", out_dir, "Report directory (default eval.out_dir)");

  auto* ablate = app.add_subcommand("ablate", "Evaluate module combinations and occlusion switches");
  std::string modes;
  ablate->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ablate->add_option("--dataset", dataset, "Dataset directory (default eval.dataset, then data.root)");
  ablate->add_option("--modes", modes, "Comma-separated modes (default eval.modes)");
  ablate->add_option("--out", out_dir, "Report directory (default eval.out_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dan: error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    const dan::RunConfig config = resolve_config(g);
    if (synth->parsed()) {
      const auto r = dan::cmd_synth(config);
      std::cout << "wrote " << r.video_ids.size() << " videos to " << r.root.string() << '\n';
    } else if (train->parsed()) {
      dan::TrainCommandOptions opts;
      if (!resume.empty()) opts.resume = resume;
      opts.progress = &std::cout;
      const auto r = dan::cmd_train(config, opts);
      std::cout << "trained to iteration " << r.iterations << "; checkpoint " << r.final_checkpoint.string() << '\n';
    } else if (deblur->parsed()) {
      const auto r = dan::cmd_deblur(checkpoint, input, output, dump);
      std::cout << "restored " << r.frames << " frames into " << output << '\n';
    } else if (eval->parsed()) {
      const auto r = dan::cmd_eval(config, checkpoint, dataset, out_dir);
      std::cout << "mean PSNR " << r.report.overall() << " dB (input " << r.baseline.overall() << " dB); report "
                << r.report_path.string() << '\n';
    } else if (ablate->parsed()) {
      std::vector<std::string> list;
      if (!modes.empty()) {
        dan::RunConfig tmp;
        tmp.eval.modes = modes;
        list = tmp.ablation_modes();
      }
      const auto r = dan::cmd_ablate(config, checkpoint, dataset, list, out_dir);
      for (const auto& report : r.reports) std::cout << report.mode << ": " << report.overall() << " dB\n";
      if (r.trend) std::cout << "trend " << (r.trend->holds() ? "holds" : "FAILED") << ": " << r.trend->describe() << '\n';
      std::cout << "summary " << r.summary_path.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "dan: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
