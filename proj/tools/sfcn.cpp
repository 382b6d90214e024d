// sfcn: command-line front end (synth, project, train, eval, infer, compare-fusion).
//
// Every subcommand accepts --config FILE with key=value lines whose keys are
// long flag names ("data-root=/data/kitti"); flags given on the command line win.

#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include "sfcn/commands.hpp"

namespace {

using namespace sfcn;
using namespace sfcn::cli;

// Splices config-file entries into argv ahead of the user's flags, skipping
// keys the user set explicitly. Returns the rewritten argument list.
std::vector<std::string> apply_config_files(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::vector<std::string> out;
  std::vector<std::string> config_files;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_files.push_back(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_files.push_back(args[i].substr(9));
    } else {
      out.push_back(args[i]);
    }
  }
  if (config_files.empty()) return out;
  auto given = [&](const std::string& key) {
    for (const auto& a : out) {
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> injected;
  for (const auto& file : config_files) {
    for (const auto& [k, v] : read_key_value_file(file)) {
      if (given(k)) continue;
      injected.push_back("--" + k + "=" + v);
    }
  }
  // argv[0] and the subcommand name stay in front.
  const std::size_t head = std::min<std::size_t>(2, out.size());
  out.insert(out.begin() + static_cast<long>(head), injected.begin(), injected.end());
  return out;
}

void add_common(CLI::App* sub, CommonOptions& c, bool needs_data) {
  auto* d = sub->add_option("--data-root", c.data_root, "KITTI ROAD layout root (contains training/)");
  if (needs_data) d->required();
  sub->add_option("--out", c.out, "output directory")->required();
  sub->add_option("--seed", c.seed, "seed for every random choice");
  sub->add_option("--preset", c.preset, "paper or tiny")
      ->transform(CLI::CheckedTransformer(std::map<std::string, Preset>{{"paper", Preset::Paper}, {"tiny", Preset::Tiny}}));
  sub->add_option("--strategy", c.strategy, "early, late or siamese")
      ->transform(CLI::CheckedTransformer(std::map<std::string, FusionStrategy>{
          {"early", FusionStrategy::Early}, {"late", FusionStrategy::Late}, {"siamese", FusionStrategy::Siamese}}));
  sub->add_option("--fnr-mode", c.fnr_mode, "paper: FN/(FN+FP); standard: FN/(FN+TP)")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, FnrMode>{{"paper", FnrMode::Paper}, {"standard", FnrMode::Standard}}));
  sub->add_flag("--bev", c.bev, "evaluate in the ground-plane bird's-eye view");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera+LiDAR road detection: Siamese FCN and fusion baselines"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.add_option("--config", "key=value config file (flags override)");  // consumed before parsing

  SynthCommand synth;
  auto* s = app.add_subcommand("synth", "generate synthetic frames in KITTI ROAD layout");
  add_common(s, synth.common, false);
  s->add_option("--frames", synth.frames, "number of frames")->check(CLI::PositiveNumber);
  s->add_option("--height", synth.height, "image height")->check(CLI::PositiveNumber);
  s->add_option("--width", synth.width, "image width")->check(CLI::PositiveNumber);

  ProjectCommand project;
  auto* p = app.add_subcommand("project", "project velodyne scans into LIMG LiDAR images");
  add_common(p, project.common, true);

  TrainCommand train;
  auto* t = app.add_subcommand("train", "train a model on every frame under --data-root");
  add_common(t, train.common, true);
  t->add_option("--iterations", train.iterations, "override the preset's iteration count");
  t->add_option("--lr", train.lr, "override the preset's initial learning rate");
  t->add_option("--checkpoint-every", train.checkpoint_every, "0 = final checkpoint only");

  EvalCommand eval;
  auto* e = app.add_subcommand("eval", "MaxF/AP/PRE/REC/FPR/FNR per category");
  add_common(e, eval.common, true);
  e->add_option("--checkpoint", eval.checkpoint, "model checkpoint (with .cfg sidecar)");
  e->add_option("--pred-dir", eval.pred_dir, "gray probability PNGs named <frame_id>.png");

  InferCommand infer;
  auto* i = app.add_subcommand("infer", "write probability maps and TP/FP/FN overlays");
  add_common(i, infer.common, true);
  i->add_option("--checkpoint", infer.checkpoint, "model checkpoint (with .cfg sidecar)")->required();
  i->add_option("--tau", infer.tau, "overlay threshold");

  CompareFusionCommand cmp;
  auto* c = app.add_subcommand("compare-fusion", "train early/late/Siamese and tabulate (Table-2 layout)");
  add_common(c, cmp.common, false);
  c->add_option("--iterations", cmp.iterations, "override the preset's iteration count");
  c->add_option("--lr", cmp.lr, "override the preset's initial learning rate");
  c->add_option("--n-train", cmp.n_train, "training frames; the rest validate");
  c->add_option("--synth-frames", cmp.synth_frames, "synthetic frames when no --data-root is given");

  std::vector<std::string> args;
  try {
    args = apply_config_files(argc, argv);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());

  if (s->parsed()) return run_guarded(synth.common.out, [&] { cmd_synth(synth); });
  if (p->parsed()) return run_guarded(project.common.out, [&] { cmd_project(project); });
  if (t->parsed()) return run_guarded(train.common.out, [&] { cmd_train(train); });
  if (e->parsed()) return run_guarded(eval.common.out, [&] { cmd_eval(eval); });
  if (i->parsed()) return run_guarded(infer.common.out, [&] { cmd_infer(infer); });
  if (c->parsed()) return run_guarded(cmp.common.out, [&] { cmd_compare_fusion(cmp); });
  return 2;
}
