#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "sit/config.hpp"
#include "sit/errors.hpp"
#include "sit/pipeline.hpp"
#include "sit/toy_world.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string flag_name(const std::string& key) {
  std::string out = "--";
  for (char c : key) out.push_back(c == '_' ? '-' : c);
  return out;
}

struct TranslateArgs {
  std::string config_file;
  bool dry_run = false;
  std::map<std::string, std::string> staged;
  std::map<std::string, CLI::Option*> opts;
};

void add_translate_options(CLI::App* cmd, TranslateArgs& args) {
  cmd->add_option("--config", args.config_file, "flat key=value config file");
  cmd->add_flag("--dry-run", args.dry_run, "validate and print the resolved config, do not run");
  for (const sit::ConfigField& f : sit::run_config_fields()) {
    args.staged[f.key];  // create the slot first so the reference is stable
    args.opts[f.key] = cmd->add_option(flag_name(f.key), args.staged[f.key],
                                       f.help.empty() ? ("config key " + f.key) : f.help);
  }
}

int run_translate(const std::string& mode, const TranslateArgs& args) {
  std::map<std::string, std::string> file_pairs;
  if (!args.config_file.empty()) file_pairs = sit::parse_config_file(args.config_file);
  std::map<std::string, std::string> cli_pairs;
  for (const auto& [key, opt] : args.opts)
    if (opt->count() > 0) cli_pairs[key] = args.staged.at(key);

  sit::RunConfig cfg = sit::resolve_config(mode, file_pairs, cli_pairs);
  if (args.dry_run) {
    sit::validate_config(cfg);
    std::cout << "mode = " << cfg.mode << "\n";
    for (const sit::ConfigField& f : sit::run_config_fields())
      std::cout << f.key << " = " << f.get(cfg) << "\n";
    return 0;
  }
  sit::run_translate_pipeline(cfg, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic image translation with guided diffusion sampling"};
  app.require_subcommand(1);

  TranslateArgs text_args, image_args;
  CLI::App* cmd_text =
      app.add_subcommand("translate-text", "translate an image toward a target text prompt");
  add_translate_options(cmd_text, text_args);
  CLI::App* cmd_image =
      app.add_subcommand("translate-image", "translate an image toward a target style image");
  add_translate_options(cmd_image, image_args);

  sit::EvalConfig eval_cfg;
  CLI::App* cmd_eval = app.add_subcommand("eval", "score generated images against references");
  cmd_eval->add_option("--manifest", eval_cfg.manifest, "path label role [pair] rows")->required();
  cmd_eval->add_option("--embedder", eval_cfg.embedder, "toy|worker");
  cmd_eval->add_option("--embedder-cmd", eval_cfg.embedder_cmd, "worker command line");
  cmd_eval->add_flag("--no-perceptual-fallback", [&](std::int64_t) { eval_cfg.perceptual_fallback = false; },
                     "fail instead of using the multi-scale fallback metric");
  cmd_eval->add_option("--out", eval_cfg.report_out, "also write the report to this file");

  sit::toy::TrainConfig train_cfg;
  std::string train_out;
  CLI::App* cmd_train =
      app.add_subcommand("train-toy", "train the small synthetic-world score model");
  cmd_train->add_option("--out", train_out, "checkpoint output path")->required();
  cmd_train->add_option("--steps", train_cfg.steps, "optimizer steps");
  cmd_train->add_option("--batch", train_cfg.batch, "batch size");
  cmd_train->add_option("--channels", train_cfg.channels, "conv channels");
  cmd_train->add_option("--lr", train_cfg.lr, "learning rate");
  cmd_train->add_option("--seed", train_cfg.seed, "training seed");
  cmd_train->add_option("--t-train", train_cfg.t_train, "training schedule length");
  cmd_train->add_option("--dataset-size", train_cfg.dataset_size, "synthetic dataset size");
  cmd_train->add_option("--size", train_cfg.world.size, "image side length");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_text->parsed()) return run_translate("text", text_args);
    if (cmd_image->parsed()) return run_translate("image", image_args);
    if (cmd_eval->parsed()) {
      sit::run_eval_pipeline(eval_cfg, std::cout);
      return 0;
    }
    if (cmd_train->parsed()) {
      sit::ToyConvScore model = sit::toy::train_score_model(train_cfg, &std::cout);
      model.save(train_out);
      std::cout << "saved score checkpoint to " << train_out << "\n";
      return 0;
    }
  } catch (const sit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sit::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
