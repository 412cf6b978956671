// uniflow: dataset generation, training, restoration, evaluation, flow-trace
// dumps and model inspection.
//
// Exit codes: 0 success, 1 usage, 2 I/O, 3 configuration, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uniflow/config.hpp"
#include "uniflow/data.hpp"
#include "uniflow/flow.hpp"
#include "uniflow/metrics.hpp"
#include "uniflow/trainer.hpp"

namespace fs = std::filesystem;
using namespace uniflow;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kConfig = 3, kNumerical = 4 };

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::vector<unsigned char> bytes(text.begin(), text.end());
  write_file_bytes(path, bytes);
}

// Solver and toggles from a checkpoint, overridden by --toggles / --steps / --tdt.
struct FlowOverrides {
  std::string toggles;
  std::optional<int> steps;
  std::optional<double> tdt;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--toggles", toggles,
                    "Field terms: full, simplified, momentum-only, none, or a comma list of "
                    "momentum,potential,decay,prompt (default: as trained)");
    cmd->add_option("--steps", steps, "Euler steps T (default: as trained)")->check(CLI::PositiveNumber);
    cmd->add_option("--tdt", tdt, "Total integration time T*dt; sets dt = tdt / T (default: as trained)")
        ->check(CLI::PositiveNumber);
  }

  void apply(SolverSettings& s, FieldToggles& t) const {
    if (!toggles.empty()) t = FieldToggles::parse(toggles);
    if (steps) s.steps = *steps;
    if (tdt) s.dt = *tdt / s.steps;
    s.validate();
  }
};

std::vector<fs::path> list_inputs(const fs::path& input) {
  std::vector<fs::path> out;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.path().extension() == ".ppm") out.push_back(e.path());
    std::sort(out.begin(), out.end());
  } else {
    if (!fs::exists(input)) throw IoError("input not found: " + input.string());
    out.push_back(input);
  }
  if (out.empty()) throw ConfigError("no input frames in " + input.string());
  return out;
}

void print_summary(const std::vector<MetricSummary>& summary) {
  std::printf("%-22s %6s %10s %10s %9s %9s\n", "task", "frames", "psnr_in", "psnr_out", "ssim_in", "ssim_out");
  for (const auto& s : summary) {
    std::printf("%-22s %6lld %10s %10s %9.4f %9.4f\n", s.task.c_str(), static_cast<long long>(s.frames),
                format_metric(s.psnr_in).c_str(), format_metric(s.psnr_out).c_str(), s.ssim_in, s.ssim_out);
  }
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Prompt-guided flow restoration of degraded video frames"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "uniflow 1.0.0");

  // synth-frames
  auto* synth = app.add_subcommand("synth-frames", "Write procedural clean clips (clip_xxx/frame_yyy.ppm)");
  std::string synth_out;
  int synth_clips = 20, synth_frames = 10, synth_size = 64;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out-dir", synth_out, "Output directory")->required();
  synth->add_option("--clips", synth_clips, "Number of clips")->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames, "Frames per clip")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Frame height and width in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Scene seed");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Degrade clean clips and write a JSON-lines manifest");
  std::string gen_clean, gen_out, gen_manifest, gen_mix, gen_config;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--clean-dir", gen_clean, "Directory of clean clips (subdirectories) or frames (.ppm)")->required();
  gen->add_option("--out-dir", gen_out, "Directory for degraded frames")->required();
  gen->add_option("--out-manifest", gen_manifest, "Manifest path (default: <out-dir>/manifest.jsonl)");
  gen->add_option("--mix-config", gen_mix, "Mixture JSON (weights, ranges, seed); overrides the config's mix");
  gen->add_option("--config", gen_config, "Run config JSON (mix and data sections are used)");
  gen->add_option("--seed", gen_seed, "Generation seed (default: mix seed)");

  // train
  auto* train = app.add_subcommand("train", "Train a model on the train split of a manifest");
  std::string train_manifest, train_out, train_config, train_toggles, train_resume;
  std::optional<int> train_iters;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--manifest", train_manifest, "Dataset manifest (JSON lines)")->required();
  train->add_option("--out-dir", train_out, "Output directory for checkpoints and curves")->required();
  train->add_option("--config", train_config, "Run config JSON");
  train->add_option("--iterations", train_iters, "Override train.iterations")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", train_seed, "Override train.seed");
  train->add_option("--toggles", train_toggles, "Override the field toggles (e.g. simplified)");
  train->add_option("--resume", train_resume, "Continue from a checkpoint");

  // restore
  auto* restore = app.add_subcommand("restore", "Restore frames with a trained checkpoint");
  std::string restore_ckpt, restore_input, restore_out;
  FlowOverrides restore_flow;
  restore->add_option("--checkpoint", restore_ckpt, "Checkpoint file")->required();
  restore->add_option("--input", restore_input, "Input .ppm file or directory of .ppm files")->required();
  restore->add_option("--out-dir", restore_out, "Output directory")->required();
  restore_flow.add_to(restore);

  // eval
  auto* eval = app.add_subcommand("eval", "Per-frame PSNR/SSIM before and after restoration");
  std::string eval_ckpt, eval_manifest, eval_split = "test", eval_csv;
  FlowOverrides eval_flow;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  eval->add_option("--split", eval_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out-csv", eval_csv, "Report path")->required();
  eval_flow.add_to(eval);

  // dump-flow
  auto* dump = app.add_subcommand("dump-flow", "Write every Euler state of one frame and a trace CSV");
  std::string dump_ckpt, dump_input, dump_out, dump_gt;
  FlowOverrides dump_flow;
  dump->add_option("--checkpoint", dump_ckpt, "Checkpoint file")->required();
  dump->add_option("--input", dump_input, "Degraded .ppm frame")->required();
  dump->add_option("--out-dir", dump_out, "Output directory")->required();
  dump->add_option("--gt", dump_gt, "Clean .ppm frame; fills the l1_to_gt column");
  dump_flow.add_to(dump);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Parameter and multiply-accumulate counts");
  std::string inspect_config, inspect_ckpt;
  std::int64_t inspect_h = 64, inspect_w = 64;
  bool inspect_layers = false;
  inspect->add_option("--config", inspect_config, "Run config JSON (default: built-in defaults)");
  inspect->add_option("--checkpoint", inspect_ckpt, "Read architecture and solver from a checkpoint");
  inspect->add_option("--height", inspect_h, "Frame height")->check(CLI::PositiveNumber);
  inspect->add_option("--width", inspect_w, "Frame width")->check(CLI::PositiveNumber);
  inspect->add_flag("--layers", inspect_layers, "Print the per-layer table");

  // print-config
  auto* print = app.add_subcommand("print-config", "Print the effective run config as JSON");
  std::string print_config;
  print->add_option("--config", print_config, "Run config JSON (default: built-in defaults)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (*synth) {
    write_synthetic_clips(synth_out, synth_clips, synth_frames, synth_size, synth_seed);
    std::printf("wrote %d clips of %d frames to %s\n", synth_clips, synth_frames, synth_out.c_str());
  } else if (*gen) {
    RunConfig cfg = config_or_default(gen_config);
    if (!gen_mix.empty()) cfg.mix = mixture_from_json(parse_json_file(gen_mix));
    const std::uint64_t seed = gen_seed.value_or(cfg.mix.seed);
    const fs::path manifest_path = gen_manifest.empty() ? fs::path(gen_out) / "manifest.jsonl" : fs::path(gen_manifest);
    ClipManifest m = generate_dataset(gen_clean, gen_out, cfg.mix, cfg.data, seed);
    // Degraded paths are stored relative to the manifest's directory.
    const fs::path base = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
    for (auto& clip : m.clips)
      for (auto& d : clip.degraded) d = fs::relative(fs::absolute(fs::path(gen_out) / d), fs::absolute(base)).string();
    write_manifest(m, manifest_path);
    nlohmann::json echo = {{"mix", to_json(cfg.mix)}, {"data", to_json(cfg.data)}, {"seed", seed}};
    write_text(fs::path(gen_out) / "gen_config.json", echo.dump(2) + "\n");
    std::size_t frames = 0;
    for (const auto& c : m.clips) frames += c.frames.size();
    std::printf("wrote %zu degraded frames in %zu clips; manifest %s\n", frames, m.clips.size(),
                manifest_path.string().c_str());
  } else if (*train) {
    RunConfig cfg = config_or_default(train_config);
    if (train_iters) cfg.train.iterations = *train_iters;
    if (train_seed) cfg.train.seed = *train_seed;
    if (!train_toggles.empty()) cfg.toggles = FieldToggles::parse(train_toggles);
    cfg.validate();
    const ClipManifest m = read_manifest(train_manifest);
    const std::vector<FramePair> train_pairs = load_pairs(m, "train");
    const std::vector<FramePair> val_pairs = load_pairs(m, "val");
    if (train_pairs.empty()) throw ConfigError("manifest has no train frames");
    std::optional<Trainer> trainer;
    if (train_resume.empty()) {
      trainer.emplace(cfg.arch, cfg.train, cfg.solver, cfg.toggles);
    } else {
      Checkpoint c = load_checkpoint(train_resume, cfg.arch);
      c.train.iterations = cfg.train.iterations;
      trainer.emplace(c);
    }
    write_text(fs::path(train_out) / "config.json", to_json(cfg).dump(2) + "\n");
    std::printf("training %d iterations on %zu frames (%zu validation), toggles %s\n", cfg.train.iterations,
                train_pairs.size(), val_pairs.size(), cfg.toggles.str().c_str());
    trainer->run(train_pairs, val_pairs, fs::path(train_out), [](const CurveRow& r) {
      std::printf("iter %6lld  train_l1 %.5f", static_cast<long long>(r.iteration), r.train_l1);
      if (r.val_psnr) std::printf("  val_psnr %s  val_ssim %.4f", format_metric(*r.val_psnr).c_str(), *r.val_ssim);
      std::printf("\n");
      std::fflush(stdout);
    });
  } else if (*restore) {
    const Checkpoint c = load_checkpoint(restore_ckpt);
    const Model model = model_from_checkpoint(c);
    SolverSettings solver = c.solver;
    FieldToggles toggles = c.toggles;
    restore_flow.apply(solver, toggles);
    for (const fs::path& in : list_inputs(restore_input)) {
      Graph g(false);
      RestoreResult r = restore_frame(g, load_image(in), model, solver, toggles);
      save_image(clamp01(r.output), fs::path(restore_out) / in.filename());
    }
    std::printf("restored into %s (toggles %s, T=%d, dt=%g)\n", restore_out.c_str(), toggles.str().c_str(),
                solver.steps, solver.dt);
  } else if (*eval) {
    const Checkpoint c = load_checkpoint(eval_ckpt);
    const Model model = model_from_checkpoint(c);
    SolverSettings solver = c.solver;
    FieldToggles toggles = c.toggles;
    eval_flow.apply(solver, toggles);
    const std::vector<FramePair> pairs = load_pairs(read_manifest(eval_manifest), eval_split);
    const std::vector<MetricRow> rows = evaluate(model, pairs, solver, toggles);
    write_metric_csv(rows, eval_csv);
    print_summary(summarize(rows));
  } else if (*dump) {
    const Checkpoint c = load_checkpoint(dump_ckpt);
    const Model model = model_from_checkpoint(c);
    SolverSettings solver = c.solver;
    FieldToggles toggles = c.toggles;
    dump_flow.apply(solver, toggles);
    const Tensor x = load_image(dump_input);
    std::optional<Tensor> gt;
    if (!dump_gt.empty()) gt = load_image(dump_gt);
    Graph g(false);
    RestoreResult r = restore_frame(g, x, model, solver, toggles, true, gt ? &*gt : nullptr);
    export_flow_trace(*r.trace, dump_out);
    std::printf("wrote %zu states to %s\n", r.trace->entries.size(), dump_out.c_str());
  } else if (*inspect) {
    ArchConfig arch;
    SolverSettings solver;
    if (!inspect_ckpt.empty()) {
      const Checkpoint c = load_checkpoint(inspect_ckpt);
      arch = c.arch;
      solver = c.solver;
    } else {
      const RunConfig cfg = config_or_default(inspect_config);
      arch = cfg.arch;
      solver = cfg.solver;
    }
    const Complexity cx = count_params_macs(arch, inspect_h, inspect_w, solver.steps);
    std::printf("arch: levels=%d channels=", arch.levels);
    for (int l = 0; l < arch.levels; ++l) std::printf("%s%d", l ? "/" : "", arch.channels(l));
    std::printf(" prompt_dim=%d prompt_mode=%s input_skip=%s\n", arch.prompt_dim, to_string(arch.prompt_mode),
                arch.input_skip ? "on" : "off");
    std::printf("solver: T=%d dt=%g lambda=%g\n", solver.steps, solver.dt, solver.lambda);
    if (inspect_layers) {
      std::printf("%-20s %12s %16s\n", "layer", "params", "macs");
      for (const auto& l : cx.layers)
        std::printf("%-20s %12lld %16lld\n", l.name.c_str(), static_cast<long long>(l.params), static_cast<long long>(l.macs));
    }
    std::printf("parameters: %lld\n", static_cast<long long>(cx.params));
    std::printf("macs_per_frame: %lld (%lldx%lld)\n", static_cast<long long>(cx.macs), static_cast<long long>(inspect_h),
                static_cast<long long>(inspect_w));
  } else if (*print) {
    std::printf("%s\n", to_json(config_or_default(print_config)).dump(2).c_str());
  }
  return kOk;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::fprintf(stderr, "uniflow: I/O error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "uniflow: I/O error: %s\n", e.what());
    return kIo;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "uniflow: config error: %s\n", e.what());
    return kConfig;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "uniflow: config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "uniflow: numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "uniflow: error: %s\n", e.what());
    return kUsage;
  }
}
