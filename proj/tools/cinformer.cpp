// Command-line front end: synth, train, eval, gradcheck, bench, dump-features.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cinformer/checkpoint.hpp"
#include "cinformer/gradcheck.hpp"
#include "cinformer/model.hpp"
#include "cinformer/profile.hpp"

using namespace cinformer;
namespace fs = std::filesystem;

namespace {

int cmd_synth(const std::string& out, const SynthOptions& options) {
  std::cout << generate_dataset(out, options) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out,
              std::optional<std::uint64_t> seed, const std::string& resume, std::optional<std::size_t> max_steps,
              bool verbose) {
  Config config = config_path.empty() ? Config{} : load_config(config_path);
  if (seed) config.train.seed = *seed;
  if (!data_dir.empty()) config.data.dir = data_dir;
  if (config.data.dir.empty()) throw UsageError("no dataset: pass --data or set data.dir in the config");
  validate(config);
  const Dataset train = load_split(config.data.dir, "train");
  const Dataset test = load_split(config.data.dir, "test");
  TrainOptions options;
  options.out_dir = out;
  if (!resume.empty()) options.resume = resume;
  options.max_steps = max_steps;
  options.verbose = verbose;
  const TrainResult result = train_loop(config, train, test, options);
  std::cout << "steps " << result.steps << " loss " << result.last_loss << " best_miou " << result.best_miou << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split) {
  const TrainingState state = load_checkpoint(checkpoint);
  const std::string dir = data_dir.empty() ? state.config.data.dir : data_dir;
  if (dir.empty()) throw UsageError("no dataset: pass --data");
  const Dataset data = load_split(dir, split);
  if (data.size != state.config.model.input_size) {
    throw DataError("checkpoint expects " + std::to_string(state.config.model.input_size) + "x" +
                    std::to_string(state.config.model.input_size) + " inputs but " + dir + " holds " +
                    std::to_string(data.size) + "x" + std::to_string(data.size) + " images");
  }
  if (data.count() == 0) throw DataError("split '" + split + "' of " + dir + " is empty");
  std::cout << evaluate(state.params, state.config.model, data).to_json() << "\n";
  return 0;
}

int cmd_gradcheck(const gradcheck::Options& options, const std::string& corrupt, double factor) {
  if (!corrupt.empty()) ad::testing::inject_fault(corrupt, factor);
  const auto results = gradcheck::run_suite(options);
  ad::testing::clear_fault();
  bool ok = true;
  std::printf("%-30s %12s %8s %8s  %-6s %s\n", "op", "max_rel_err", "probes", "skipped", "result", "worst tensor");
  for (const auto& r : results) {
    std::printf("%-30s %12.3e %8zu %8zu  %-6s %s\n", r.name.c_str(), r.max_rel_error, r.probes, r.skipped,
                r.passed ? "pass" : "FAIL", r.worst_leaf.c_str());
    ok = ok && r.passed;
  }
  std::printf("%s (eps %g, tolerance %g)\n", ok ? "all gradients match" : "gradient check FAILED", options.eps,
              options.tolerance);
  return ok ? 0 : 3;
}

int cmd_bench(const std::string& config_path) {
  const Config base = config_path.empty() ? Config{} : load_config(config_path);
  std::vector<std::size_t> hosts;
  for (std::size_t s = 0; s < 4; ++s) {
    if (base.model.attention.kinds[s] == AttentionKind::kTopK) hosts.push_back(s);
  }
  if (hosts.empty()) hosts = {2, 3};
  struct Row {
    std::string name;
    AttentionKind kind;
    TopKVariant variant;
  };
  const std::vector<Row> rows{{"dense-global", AttentionKind::kGlobal, TopKVariant::kFullKey},
                              {"window", AttentionKind::kWindow, TopKVariant::kFullKey},
                              {"topk full-key", AttentionKind::kTopK, TopKVariant::kFullKey},
                              {"topk selected-key", AttentionKind::kTopK, TopKVariant::kSelectedKey}};
  nlohmann::json json = nlohmann::json::array();
  std::printf("attention in stages");
  for (std::size_t s : hosts) std::printf(" %zu", s + 1);
  std::printf(" (input %zux%zu)\n", base.model.input_size, base.model.input_size);
  std::printf("%-18s %12s %16s %16s\n", "variant", "params", "total_flops", "attention_flops");
  for (const Row& row : rows) {
    ModelConfig mc = base.model;
    for (std::size_t s : hosts) mc.attention.kinds[s] = row.kind;
    mc.attention.topk_variant = row.variant;
    Config check = base;
    check.model = mc;
    validate(check);
    const profile::Profile p = profile::profile(mc);
    std::uint64_t attn = 0;
    for (std::size_t s : hosts) attn += profile::attention_flops(mc, s);
    std::printf("%-18s %12llu %16llu %16llu\n", row.name.c_str(), static_cast<unsigned long long>(p.total.params),
                static_cast<unsigned long long>(p.total.flops), static_cast<unsigned long long>(attn));
    json.push_back({{"variant", row.name},
                    {"params", p.total.params},
                    {"flops", p.total.flops},
                    {"attention_flops", attn}});
  }
  std::cout << json.dump() << "\n";
  return 0;
}

int cmd_dump_features(const std::string& checkpoint, const std::string& image_path, std::size_t stage,
                      const std::string& out) {
  if (stage < 1 || stage > 4) throw UsageError("--stage must be 1..4");
  const TrainingState state = load_checkpoint(checkpoint);
  const ModelConfig& mc = state.config.model;
  const ByteImage image = read_pgm(image_path);
  if (image.width != mc.input_size || image.height != mc.input_size) {
    throw DataError(image_path + " is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    ", the model expects " + std::to_string(mc.input_size));
  }
  ForwardTrace<float> trace;
  {
    ad::NoGradGuard no_grad;
    forward(state.params, image_tensor(image), mc, &trace);
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  const TokenMap<float>& s = trace.encoder.stages[stage - 1];
  const std::size_t n = s.tokens();
  const std::size_t c = s.channels();
  std::vector<double> mean(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < c; ++k) mean[t] += s.values[t * c + k];
    mean[t] /= static_cast<double>(c);
  }
  const std::string prefix = (fs::path(out) / ("stage" + std::to_string(stage))).string();
  write_pgm(prefix + "_mean.pgm", minmax_image(mean, s.height, s.width));
  std::cout << prefix << "_mean.pgm\n";
  const auto& blocks = trace.attention.blocks[stage - 1];
  if (mc.attention.kinds[stage - 1] == AttentionKind::kTopK && !blocks.empty()) {
    ByteImage mask{s.width, s.height, std::vector<std::uint8_t>(n, 0)};
    for (std::size_t t : blocks.front().selections.front().tokens) mask.pixels[t] = 255;
    write_pgm(prefix + "_selection.pgm", mask);
    std::cout << prefix << "_selection.pgm\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CINFormer surface-defect segmentation: data synthesis, training, evaluation and verification"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(36);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic defect dataset");
  std::string synth_out;
  SynthOptions synth_opts;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_opts.count, "Number of images")->capture_default_str();
  synth->add_option("--size", synth_opts.size, "Image side, a multiple of 32")->capture_default_str();
  synth->add_option("--contrast", synth_opts.contrast, "Defect contrast in (0,1]")->capture_default_str();
  synth->add_option("--seed", synth_opts.seed, "Generator seed")->capture_default_str();
  synth->add_option("--train-frac", synth_opts.train_fraction, "Share of each category in the train split")
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_out, train_resume;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_max_steps;
  bool train_verbose = false;
  train->add_option("--config", train_config, "JSON config (built-in defaults when omitted)");
  train->add_option("--data", train_data, "Dataset directory (overrides data.dir)");
  train->add_option("--out", train_out, "Output directory for checkpoints and metrics")->required();
  train->add_option("--seed", train_seed, "Overrides train.seed");
  train->add_option("--resume", train_resume, "Checkpoint to continue from");
  train->add_option("--max-steps", train_max_steps, "Stop after this many steps (resumable)");
  train->add_flag("--verbose", train_verbose, "Log every step to stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints a JSON report");
  std::string eval_ckpt, eval_data, eval_split = "test";
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory (defaults to the checkpoint's data.dir)");
  eval->add_option("--split", eval_split, "Manifest split")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck::Options gc_opts;
  std::string gc_corrupt;
  double gc_factor = 1.01;
  gc->add_option("--eps", gc_opts.eps, "Central-difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_opts.tolerance, "Maximum relative error")->capture_default_str();
  gc->add_option("--trials", gc_opts.trials, "Random inputs per op")->capture_default_str();
  gc->add_option("--seed", gc_opts.seed, "Seed for inputs and probes")->capture_default_str();
  gc->add_option("--corrupt", gc_corrupt, "Test hook: scale the backward input of this op");
  gc->add_option("--corrupt-factor", gc_factor, "Scale used by --corrupt")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Params/FLOPs of the attention variants");
  std::string bench_config;
  bench->add_option("--config", bench_config, "JSON config (built-in defaults when omitted)");

  auto* dump = app.add_subcommand("dump-features", "Write stage activation and selection maps as PGM");
  std::string dump_ckpt, dump_image, dump_out;
  std::size_t dump_stage = 0;
  dump->add_option("--checkpoint", dump_ckpt, "Checkpoint file")->required();
  dump->add_option("--image", dump_image, "Input PGM")->required();
  dump->add_option("--stage", dump_stage, "Encoder stage 1..4")->required();
  dump->add_option("--out", dump_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_opts);
    if (*train) {
      return cmd_train(train_config, train_data, train_out, train_seed, train_resume, train_max_steps,
                       train_verbose);
    }
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_split);
    if (*gc) return cmd_gradcheck(gc_opts, gc_corrupt, gc_factor);
    if (*bench) return cmd_bench(bench_config);
    if (*dump) return cmd_dump_features(dump_ckpt, dump_image, dump_stage, dump_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 1;
}
