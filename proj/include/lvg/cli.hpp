#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lvg/config.hpp"
#include "lvg/corpus.hpp"
#include "lvg/evalbench.hpp"
#include "lvg/pipeline.hpp"

namespace lvg {

// --- logging -----------------------------------------------------------------

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("LVG_LOG");
    if (!env) return LogLevel::info;
    const std::string s(env);
    if (s == "error") return LogLevel::error;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

template <typename... Args>
void log_at(LogLevel lvl, const char* fmt, Args... args) {
  if (log_level() < lvl) return;
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

#define LVG_INFO(...) ::lvg::log_at(::lvg::LogLevel::info, __VA_ARGS__)
#define LVG_DEBUG(...) ::lvg::log_at(::lvg::LogLevel::debug, __VA_ARGS__)

// --- shared option state --------------------------------------------------------

namespace cli_detail {

struct Options {
  std::string config_path;
  std::string corpus_dir;
  std::string ckpt_dir;
  std::string input_path;
  std::string out_path;
  std::string kind = "vg-dpm";
  std::string sweep_axis = "r";
  std::string ae_objective;
  std::vector<std::string> kinds;
  std::size_t target = 0;
  std::size_t reps = 5;
  // flag overrides; only applied when the user passed them
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<double> noise_frac;
  std::optional<std::size_t> lprime;
  std::optional<std::size_t> threads;
};

inline RunConfig effective_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.steps) cfg.fm_steps = *o.steps;
  if (o.noise_frac) cfg.noise_frac = *o.noise_frac;
  if (o.lprime) cfg.lprime = *o.lprime;
  if (o.threads) cfg.threads = *o.threads;
  if (!o.ae_objective.empty()) cfg.ae_objective = ae_objective_from_name(o.ae_objective);
  validate_config(cfg);
  return cfg;
}

inline ConvertParams convert_params(const RunConfig& cfg) {
  ConvertParams prm;
  prm.lprime = cfg.lprime;
  prm.noise_frac = cfg.noise_frac;
  prm.steps = cfg.fm_steps;
  prm.suppress_final_noise = cfg.suppress_final_noise;
  return prm;
}

inline std::optional<Autoencoder> maybe_load_ae(PipelineKind kind, const std::string& ckpt_dir) {
  if (!kind.is_latent()) return std::nullopt;
  return autoencoder_from_checkpoint(load_checkpoint(ae_ckpt_path(ckpt_dir)));
}

}  // namespace cli_detail

// --- subcommand bodies -----------------------------------------------------------

inline void cmd_gen_data(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  LVG_INFO("generating corpus: %zu speakers, %zu train + %zu held-out utterances",
           cfg.corpus.speakers, cfg.corpus.train_utterances, cfg.corpus.heldout_utterances);
  Corpus corpus = gen_corpus(cfg.corpus, cfg.seed);
  save_corpus(corpus, o.out_path);
  LVG_INFO("corpus written to %s", o.out_path.c_str());
}

inline void cmd_train_ae(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  Corpus corpus = load_corpus(o.corpus_dir);
  LVG_INFO("training autoencoder (%s objective, %zu epochs)",
           cfg.ae_objective == AeObjective::adversarial ? "adversarial" : "regular",
           cfg.epochs_ae);
  AeBundle bundle = train_autoencoder(cfg, corpus, std::nullopt, [](std::size_t e, double loss) {
    LVG_DEBUG("ae epoch %zu: total %.5f", e, loss);
  });
  std::filesystem::create_directories(o.out_path);
  const std::uint64_t hash = config_hash(cfg);
  save_checkpoint(checkpoint_from_autoencoder(bundle.ae, hash, cfg.seed, bundle.epoch),
                  ae_ckpt_path(o.out_path));
  save_checkpoint(checkpoint_from_discriminator(bundle.disc, hash, cfg.seed, bundle.epoch),
                  disc_ckpt_path(o.out_path));
  write_loss_csv(bundle.log, std::filesystem::path(o.out_path) / "ae_loss.csv");
  LVG_INFO("checkpoints written to %s", o.out_path.c_str());
}

inline void cmd_train_gen(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  Corpus corpus = load_corpus(o.corpus_dir);
  PipelineKind kind = parse_kind(o.kind);
  auto ae = cli_detail::maybe_load_ae(kind, o.ckpt_dir.empty() ? o.out_path : o.ckpt_dir);
  LVG_INFO("training %s generator (%zu epochs)", kind_name(kind).c_str(), cfg.epochs_gen);
  GenBundle bundle = train_generator(cfg, corpus, kind, ae ? &*ae : nullptr, std::nullopt,
                                     [](std::size_t e, double loss) {
                                       LVG_DEBUG("gen epoch %zu: loss %.5f", e, loss);
                                     });
  std::filesystem::create_directories(o.out_path);
  save_generator(bundle.gen, kind, o.out_path, config_hash(cfg), cfg.seed, bundle.epoch);
  write_loss_csv(bundle.log,
                 std::filesystem::path(o.out_path) / ("gen_" + kind_name(kind) + "_loss.csv"));
  LVG_INFO("generator checkpoints written to %s", o.out_path.c_str());
}

inline void cmd_convert(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  PipelineKind kind = parse_kind(o.kind);
  Utterance src = load_utterance(o.input_path);
  GeneratorModel gen = load_generator(kind, o.ckpt_dir);
  auto ae = cli_detail::maybe_load_ae(kind, o.ckpt_dir);
  NoiseSchedule sched = build_schedule(cfg.schedule_L, cfg.beta_min, cfg.beta_max);
  ConvertResult res = convert(kind, gen, ae ? &*ae : nullptr, sched, src, o.target,
                              cli_detail::convert_params(cfg), cfg.seed);
  Utterance out;
  out.features = std::move(res.features);
  detail::snap_f32(out.features);
  out.speaker_id = static_cast<std::uint16_t>(o.target);
  out.codes = src.codes;
  save_utterance(out, o.out_path);
  LVG_INFO("converted %zu frames with %zu network evaluations -> %s", out.frames(), res.nfe,
           o.out_path.c_str());
}

inline void cmd_eval(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  Corpus corpus = load_corpus(o.corpus_dir);
  std::vector<ConvertedUtterance> converted;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(o.input_path))
    if (e.path().extension() == ".lvgu") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("eval: no .lvgu files in " + o.input_path);
  for (const auto& f : files) {
    Utterance u = load_utterance(f);
    converted.push_back({std::move(u.features), u.speaker_id, u.codes});
  }
  ConversionReport rep = eval_conversion(converted, corpus.spec, cfg.threads);
  std::ofstream out(o.out_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + o.out_path);
  out << "index,target,hit,margin,content_acc\n";
  char buf[128];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%d,%.6f,%.6f", r.index, r.target, r.hit ? 1 : 0,
                  r.margin, r.content_acc);
    out << buf << "\n";
  }
  std::printf("conversions=%zu similarity_acc=%.4f content_acc=%.4f mean_margin=%.3f\n",
              rep.rows.size(), rep.similarity_acc, rep.content_acc, rep.mean_margin);
}

inline void cmd_sweep(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  Corpus corpus = load_corpus(o.corpus_dir);
  PipelineKind kind = parse_kind(o.kind);
  GeneratorModel gen = load_generator(kind, o.ckpt_dir);
  auto ae = cli_detail::maybe_load_ae(kind, o.ckpt_dir);
  NoiseSchedule sched = build_schedule(cfg.schedule_L, cfg.beta_min, cfg.beta_max);
  std::vector<SweepRow> rows;
  if (o.sweep_axis == "r") {
    rows = sweep_r(kind, gen, ae ? &*ae : nullptr, sched, corpus, cfg.fm_steps, cfg.seed,
                   cfg.threads);
  } else if (o.sweep_axis == "L") {
    rows = sweep_L(kind, gen, ae ? &*ae : nullptr, sched, corpus, cfg.noise_frac, cfg.seed,
                   cfg.threads);
  } else {
    throw ConfigError("sweep: axis must be 'r' or 'L'");
  }
  write_sweep_csv(rows, o.out_path);
  LVG_INFO("sweep rows written to %s", o.out_path.c_str());
}

inline void cmd_bench(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  Corpus corpus = load_corpus(o.corpus_dir);
  if (corpus.heldout.empty()) throw ConfigError("bench: corpus has no held-out utterances");
  const Utterance& sample = corpus.heldout.front();
  std::vector<std::string> kinds(o.kinds);
  if (kinds.empty())
    kinds.assign(all_kind_names().begin(), all_kind_names().end());
  NoiseSchedule sched = build_schedule(cfg.schedule_L, cfg.beta_min, cfg.beta_max);
  std::vector<BenchRecord> rows;
  for (const auto& ks : kinds) {
    PipelineKind kind = parse_kind(ks);
    GeneratorModel gen = load_generator(kind, o.ckpt_dir);
    auto ae = cli_detail::maybe_load_ae(kind, o.ckpt_dir);
    rows.push_back(bench_kind(kind, gen, ae ? &*ae : nullptr, sched, sample,
                              cli_detail::convert_params(cfg), o.reps, cfg.seed));
    LVG_INFO("bench %s: nfe=%zu %.2f ms / 100 frames", rows.back().kind.c_str(),
             rows.back().nfe, rows.back().ms_per_100_frames);
  }
  write_bench_csv(rows, o.out_path);
}

inline void cmd_snapshot(const cli_detail::Options& o) {
  RunConfig cfg = cli_detail::effective_config(o);
  PipelineKind kind = parse_kind(o.kind);
  Utterance src = load_utterance(o.input_path);
  GeneratorModel gen = load_generator(kind, o.ckpt_dir);
  auto ae = cli_detail::maybe_load_ae(kind, o.ckpt_dir);
  NoiseSchedule sched = build_schedule(cfg.schedule_L, cfg.beta_min, cfg.beta_max);
  std::filesystem::create_directories(o.out_path);
  const std::filesystem::path dir(o.out_path);
  dump_pgm(src.features, dir / "source.pgm");
  auto observer = [&](std::size_t step, const Tensor2<double>& x_rows) {
    char name[64];
    Tensor2<double> seq = x_rows.transposed();
    if (kind.is_latent()) {
      std::snprintf(name, sizeof(name), "step_%02zu_latent.pgm", step);
      dump_pgm(seq, dir / name);
      std::snprintf(name, sizeof(name), "step_%02zu_decoded.pgm", step);
      dump_pgm(decode(*ae, seq), dir / name);
    } else {
      std::snprintf(name, sizeof(name), "step_%02zu.pgm", step);
      dump_pgm(seq, dir / name);
    }
  };
  ConvertResult res = convert(kind, gen, ae ? &*ae : nullptr, sched, src, o.target,
                              cli_detail::convert_params(cfg), cfg.seed, observer);
  dump_pgm(res.features, dir / "converted.pgm");
  LVG_INFO("wrote per-step snapshots to %s", o.out_path.c_str());
}

// --- entry point -------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Conditional feature conversion with diffusion and flow-matching samplers"};
  app.require_subcommand(1);
  cli_detail::Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run config; flags override it");
    sub->add_option("--seed", o.seed, "RNG seed override");
    sub->add_option("--threads", o.threads, "worker cap for conversion/eval");
  };

  auto* gen_data = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen_data);
  gen_data->add_option("--out", o.out_path, "corpus output directory")->required();

  auto* train_ae = app.add_subcommand("train-ae", "train the bottleneck autoencoder");
  add_common(train_ae);
  train_ae->add_option("--corpus", o.corpus_dir, "corpus directory")->required();
  train_ae->add_option("--out", o.out_path, "checkpoint output directory")->required();
  train_ae->add_option("--ae-objective", o.ae_objective, "regular | adversarial");

  auto* train_gen = app.add_subcommand("train-gen", "train a score / vector-field network");
  add_common(train_gen);
  train_gen->add_option("--corpus", o.corpus_dir, "corpus directory")->required();
  train_gen->add_option("--kind", o.kind, "vg-dpm | lvg-dpm | vg-fm | lvg-fm")->required();
  train_gen->add_option("--out", o.out_path, "checkpoint output directory")->required();
  train_gen->add_option("--ckpt", o.ckpt_dir, "directory holding ae.lvgc (latent kinds)");

  auto* convert_cmd = app.add_subcommand("convert", "convert one utterance");
  add_common(convert_cmd);
  convert_cmd->add_option("--input", o.input_path, "source .lvgu file")->required();
  convert_cmd->add_option("--kind", o.kind)->required();
  convert_cmd->add_option("--ckpt", o.ckpt_dir, "checkpoint directory")->required();
  convert_cmd->add_option("--target", o.target, "target speaker id")->required();
  convert_cmd->add_option("--steps", o.steps, "FM Euler steps");
  convert_cmd->add_option("--noise-frac", o.noise_frac, "FM initial noise fraction r");
  convert_cmd->add_option("--lprime", o.lprime, "DPM reverse start timestep");
  convert_cmd->add_option("--out", o.out_path, "converted .lvgu path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score converted utterances with the oracles");
  add_common(eval_cmd);
  eval_cmd->add_option("--corpus", o.corpus_dir, "corpus directory")->required();
  eval_cmd->add_option("--in", o.input_path, "directory of converted .lvgu files")->required();
  eval_cmd->add_option("--out", o.out_path, "report CSV path")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "noise-fraction or step-count sweep (FM kinds)");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--sweep", o.sweep_axis, "r | L")->required();
  sweep_cmd->add_option("--corpus", o.corpus_dir)->required();
  sweep_cmd->add_option("--kind", o.kind)->required();
  sweep_cmd->add_option("--ckpt", o.ckpt_dir)->required();
  sweep_cmd->add_option("--steps", o.steps, "fixed L for the r sweep");
  sweep_cmd->add_option("--noise-frac", o.noise_frac, "fixed r for the L sweep");
  sweep_cmd->add_option("--out", o.out_path, "sweep CSV path")->required();

  auto* bench_cmd = app.add_subcommand("bench", "NFE and wall-clock benchmark");
  add_common(bench_cmd);
  bench_cmd->add_option("--corpus", o.corpus_dir)->required();
  bench_cmd->add_option("--ckpt", o.ckpt_dir)->required();
  bench_cmd->add_option("--kinds", o.kinds, "kinds to benchmark (default: all four)");
  bench_cmd->add_option("--reps", o.reps, "timed repetitions per kind");
  bench_cmd->add_option("--steps", o.steps);
  bench_cmd->add_option("--noise-frac", o.noise_frac);
  bench_cmd->add_option("--lprime", o.lprime);
  bench_cmd->add_option("--out", o.out_path, "bench CSV path")->required();

  auto* snap_cmd = app.add_subcommand("snapshot", "dump per-step PGM views of one conversion");
  add_common(snap_cmd);
  snap_cmd->add_option("--input", o.input_path)->required();
  snap_cmd->add_option("--kind", o.kind)->required();
  snap_cmd->add_option("--ckpt", o.ckpt_dir)->required();
  snap_cmd->add_option("--target", o.target)->required();
  snap_cmd->add_option("--steps", o.steps);
  snap_cmd->add_option("--noise-frac", o.noise_frac);
  snap_cmd->add_option("--lprime", o.lprime);
  snap_cmd->add_option("--out", o.out_path, "snapshot output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_data->parsed()) cmd_gen_data(o);
    if (train_ae->parsed()) cmd_train_ae(o);
    if (train_gen->parsed()) cmd_train_gen(o);
    if (convert_cmd->parsed()) cmd_convert(o);
    if (eval_cmd->parsed()) cmd_eval(o);
    if (sweep_cmd->parsed()) cmd_sweep(o);
    if (bench_cmd->parsed()) cmd_bench(o);
    if (snap_cmd->parsed()) cmd_snapshot(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const LookupError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

}  // namespace lvg
