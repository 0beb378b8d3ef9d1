#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "lvg/corpus.hpp"
#include "lvg/errors.hpp"
#include "lvg/latentae.hpp"

namespace lvg {

// Full run configuration. Defaults follow the reference setup: 80-dim
// features with a 32-dim bottleneck, L=20 with conversions starting at
// L'=18, FM sampling with r=0.7 over 10 steps, Adam at 2e-4 with batches
// of 8, and lambda=45 on the autoencoder reconstruction/KL group.
struct RunConfig {
  CorpusSpec corpus;

  std::size_t schedule_L = 20;
  double beta_min = 1e-4;
  double beta_max = 0.06;

  std::size_t bottleneck = 32;
  std::size_t speaker_dim = 16;
  std::size_t sin_dim = 32;
  std::size_t temb_dim = 32;
  std::size_t width_feature = 128;
  std::size_t width_latent = 64;
  std::size_t width_ae = 128;
  std::size_t width_disc = 128;
  std::size_t context = 2;

  std::size_t epochs_ae = 300;
  std::size_t epochs_gen = 500;
  std::size_t batch_size = 8;
  std::size_t crop_frames = 32;
  double lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;
  double lambda_ae = 45.0;
  double sigma_cfm = 0.01;
  AeObjective ae_objective = AeObjective::adversarial;
  bool kl_per_dimension = false;

  std::size_t lprime = 18;
  std::size_t fm_steps = 10;
  double noise_frac = 0.7;
  bool suppress_final_noise = true;

  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + scope + it.key() + "'");
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  RunConfig c;
  detail::reject_unknown(j, {"corpus", "schedule", "model", "train", "sampler", "seed", "threads"},
                         "");
  if (j.contains("corpus")) {
    const auto& co = j.at("corpus");
    detail::reject_unknown(co,
                           {"speakers", "alphabet", "feat_dim", "train_utterances",
                            "heldout_utterances", "frames_min", "frames_max", "dwell_min",
                            "dwell_max", "frame_noise", "template_scale",
                            "min_separation_factor"},
                           "corpus.");
    detail::read_key(co, "speakers", c.corpus.speakers);
    detail::read_key(co, "alphabet", c.corpus.alphabet);
    detail::read_key(co, "feat_dim", c.corpus.feat_dim);
    detail::read_key(co, "train_utterances", c.corpus.train_utterances);
    detail::read_key(co, "heldout_utterances", c.corpus.heldout_utterances);
    detail::read_key(co, "frames_min", c.corpus.frames_min);
    detail::read_key(co, "frames_max", c.corpus.frames_max);
    detail::read_key(co, "dwell_min", c.corpus.dwell_min);
    detail::read_key(co, "dwell_max", c.corpus.dwell_max);
    detail::read_key(co, "frame_noise", c.corpus.frame_noise);
    detail::read_key(co, "template_scale", c.corpus.template_scale);
    detail::read_key(co, "min_separation_factor", c.corpus.min_separation_factor);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    detail::reject_unknown(s, {"L", "beta_min", "beta_max"}, "schedule.");
    detail::read_key(s, "L", c.schedule_L);
    detail::read_key(s, "beta_min", c.beta_min);
    detail::read_key(s, "beta_max", c.beta_max);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m,
                           {"bottleneck", "speaker_dim", "sin_dim", "temb_dim", "width_feature",
                            "width_latent", "width_ae", "width_disc", "context"},
                           "model.");
    detail::read_key(m, "bottleneck", c.bottleneck);
    detail::read_key(m, "speaker_dim", c.speaker_dim);
    detail::read_key(m, "sin_dim", c.sin_dim);
    detail::read_key(m, "temb_dim", c.temb_dim);
    detail::read_key(m, "width_feature", c.width_feature);
    detail::read_key(m, "width_latent", c.width_latent);
    detail::read_key(m, "width_ae", c.width_ae);
    detail::read_key(m, "width_disc", c.width_disc);
    detail::read_key(m, "context", c.context);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t,
                           {"epochs_ae", "epochs_gen", "batch_size", "crop_frames", "lr",
                            "adam_beta1", "adam_beta2", "adam_eps", "grad_clip", "lambda_ae",
                            "sigma_cfm", "ae_objective", "kl_per_dimension"},
                           "train.");
    detail::read_key(t, "epochs_ae", c.epochs_ae);
    detail::read_key(t, "epochs_gen", c.epochs_gen);
    detail::read_key(t, "batch_size", c.batch_size);
    detail::read_key(t, "crop_frames", c.crop_frames);
    detail::read_key(t, "lr", c.lr);
    detail::read_key(t, "adam_beta1", c.adam_beta1);
    detail::read_key(t, "adam_beta2", c.adam_beta2);
    detail::read_key(t, "adam_eps", c.adam_eps);
    detail::read_key(t, "grad_clip", c.grad_clip);
    detail::read_key(t, "lambda_ae", c.lambda_ae);
    detail::read_key(t, "sigma_cfm", c.sigma_cfm);
    detail::read_key(t, "kl_per_dimension", c.kl_per_dimension);
    if (t.contains("ae_objective"))
      c.ae_objective = ae_objective_from_name(t.at("ae_objective").get<std::string>());
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    detail::reject_unknown(s, {"lprime", "steps", "noise_frac", "suppress_final_noise"},
                           "sampler.");
    detail::read_key(s, "lprime", c.lprime);
    detail::read_key(s, "steps", c.fm_steps);
    detail::read_key(s, "noise_frac", c.noise_frac);
    detail::read_key(s, "suppress_final_noise", c.suppress_final_noise);
  }
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "threads", c.threads);
  return c;
}

inline void validate_config(const RunConfig& c) {
  if (c.corpus.speakers < 2) throw ConfigError("config: corpus.speakers must be >= 2");
  if (c.corpus.alphabet < 2) throw ConfigError("config: corpus.alphabet must be >= 2");
  if (c.bottleneck >= c.corpus.feat_dim)
    throw ConfigError("config: model.bottleneck must be below corpus.feat_dim");
  if (c.schedule_L < 1) throw ConfigError("config: schedule.L must be >= 1");
  if (!(c.beta_min > 0.0) || !(c.beta_min <= c.beta_max) || !(c.beta_max < 1.0))
    throw ConfigError("config: need 0 < beta_min <= beta_max < 1");
  if (c.lprime < 1 || c.lprime > c.schedule_L)
    throw ConfigError("config: sampler.lprime must lie in [1, schedule.L]");
  if (c.fm_steps < 1) throw ConfigError("config: sampler.steps must be >= 1");
  if (c.noise_frac < 0.0 || c.noise_frac > 1.0)
    throw ConfigError("config: sampler.noise_frac must lie in [0, 1]");
  if (c.batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");
  if (c.crop_frames < 1) throw ConfigError("config: train.crop_frames must be >= 1");
  if (!(c.lambda_ae > 0.0)) throw ConfigError("config: train.lambda_ae must be positive");
  if (c.sigma_cfm < 0.0) throw ConfigError("config: train.sigma_cfm must be >= 0");
  if (c.threads < 1) throw ConfigError("config: threads must be >= 1");
  if (c.sin_dim % 2 != 0) throw ConfigError("config: model.sin_dim must be even");
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  RunConfig c = parse_config(j);
  validate_config(c);
  return c;
}

// FNV-1a over a canonical dump; stored in checkpoints to spot config drift.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::json j;
  j["corpus"] = {{"speakers", c.corpus.speakers},
                 {"alphabet", c.corpus.alphabet},
                 {"feat_dim", c.corpus.feat_dim},
                 {"train_utterances", c.corpus.train_utterances},
                 {"heldout_utterances", c.corpus.heldout_utterances},
                 {"frames_min", c.corpus.frames_min},
                 {"frames_max", c.corpus.frames_max},
                 {"dwell_min", c.corpus.dwell_min},
                 {"dwell_max", c.corpus.dwell_max},
                 {"frame_noise", c.corpus.frame_noise},
                 {"template_scale", c.corpus.template_scale}};
  j["schedule"] = {{"L", c.schedule_L}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}};
  j["model"] = {{"bottleneck", c.bottleneck}, {"speaker_dim", c.speaker_dim},
                {"sin_dim", c.sin_dim},       {"temb_dim", c.temb_dim},
                {"width_feature", c.width_feature}, {"width_latent", c.width_latent},
                {"width_ae", c.width_ae},     {"width_disc", c.width_disc},
                {"context", c.context}};
  j["train"] = {{"batch_size", c.batch_size}, {"crop_frames", c.crop_frames}, {"lr", c.lr},
                {"lambda_ae", c.lambda_ae},   {"sigma_cfm", c.sigma_cfm}};
  j["seed"] = c.seed;
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lvg
