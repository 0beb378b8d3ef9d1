#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lvg/checkpoint.hpp"
#include "lvg/config.hpp"
#include "lvg/conditioning.hpp"
#include "lvg/corpus.hpp"
#include "lvg/diffusion.hpp"
#include "lvg/flowmatch.hpp"
#include "lvg/latentae.hpp"
#include "lvg/schedule.hpp"

namespace lvg {

// --- pipeline kinds -----------------------------------------------------------

enum class GenModel { dpm, fm };
enum class ConvSpace { feature, latent };

struct PipelineKind {
  GenModel model = GenModel::dpm;
  ConvSpace space = ConvSpace::feature;

  bool is_latent() const { return space == ConvSpace::latent; }
  bool is_fm() const { return model == GenModel::fm; }
};

inline PipelineKind parse_kind(const std::string& s) {
  if (s == "vg-dpm") return {GenModel::dpm, ConvSpace::feature};
  if (s == "lvg-dpm") return {GenModel::dpm, ConvSpace::latent};
  if (s == "vg-fm") return {GenModel::fm, ConvSpace::feature};
  if (s == "lvg-fm") return {GenModel::fm, ConvSpace::latent};
  throw ConfigError("unknown pipeline kind '" + s + "' (use vg-dpm, lvg-dpm, vg-fm, lvg-fm)");
}

inline std::string kind_name(PipelineKind k) {
  return std::string(k.is_latent() ? "lvg" : "vg") + (k.is_fm() ? "-fm" : "-dpm");
}

inline const std::array<const char*, 4>& all_kind_names() {
  static const std::array<const char*, 4> names = {"vg-dpm", "lvg-dpm", "vg-fm", "lvg-fm"};
  return names;
}

// --- loss logging ---------------------------------------------------------------

struct LossRow {
  std::size_t epoch = 0;
  std::string component;
  double value = 0.0;
};

inline void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch,component,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    f << r.epoch << "," << r.component << "," << buf << "\n";
  }
}

// --- crops ---------------------------------------------------------------------

namespace detail {

// Random contiguous crop of a D x N sequence, F frames wide.
inline Tensor2<double> crop_seq(const Tensor2<double>& x, std::size_t frames, Rng& rng) {
  if (x.cols <= frames) return x;
  const auto off = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(x.cols - frames)));
  Tensor2<double> out(x.rows, frames);
  for (std::size_t d = 0; d < x.rows; ++d)
    for (std::size_t n = 0; n < frames; ++n) out(d, n) = x(d, off + n);
  return out;
}

struct CropRows {
  Tensor2<double> rows;               // frames x dim
  std::vector<std::uint8_t> codes;    // aligned to the crop
  std::size_t speaker = 0;
};

inline CropRows crop_rows(const Tensor2<double>& seq, const std::vector<std::uint8_t>& codes,
                          std::size_t speaker, std::size_t frames, Rng& rng) {
  CropRows out;
  out.speaker = speaker;
  std::size_t off = 0;
  std::size_t take = std::min<std::size_t>(frames, seq.cols);
  if (seq.cols > frames)
    off = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(seq.cols - frames)));
  out.rows = Tensor2<double>(take, seq.rows);
  for (std::size_t n = 0; n < take; ++n)
    for (std::size_t d = 0; d < seq.rows; ++d) out.rows(n, d) = seq(d, off + n);
  out.codes.assign(codes.begin() + static_cast<std::ptrdiff_t>(off),
                   codes.begin() + static_cast<std::ptrdiff_t>(off + take));
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

// --- autoencoder training --------------------------------------------------------

struct AeBundle {
  Autoencoder ae;
  Discriminator disc;
  RenderTransform rt;
  std::vector<LossRow> log;
  std::uint32_t epoch = 0;
};

struct AeResume {
  Autoencoder ae;
  Discriminator disc;
  std::uint32_t start_epoch = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Alternating adversarial training over the train split. Deterministic given
// (config, corpus, seed); per-epoch RNG streams are derived from (seed, epoch)
// so a resumed run replays the same batches.
inline AeBundle train_autoencoder(const RunConfig& cfg, const Corpus& corpus,
                                  const std::optional<AeResume>& resume = std::nullopt,
                                  const EpochCallback& progress = {}) {
  if (corpus.train.empty()) throw ConfigError("train_autoencoder: empty corpus");
  AeBundle out;
  out.rt = make_render(corpus.spec.feat_dim);
  if (resume) {
    out.ae = resume->ae;
    out.disc = resume->disc;
    out.epoch = resume->start_epoch;
  } else {
    Rng init(derive_seed(cfg.seed, stream::init, 0xAE));
    out.ae = make_autoencoder(corpus.spec.feat_dim, cfg.bottleneck, cfg.width_ae, cfg.context,
                              init);
    out.disc = make_discriminator(out.rt, cfg.width_disc, init);
  }

  AeTrainParams prm;
  prm.lambda = cfg.lambda_ae;
  prm.mode = cfg.ae_objective;
  prm.grad_clip = cfg.grad_clip;
  prm.kl_per_dimension = cfg.kl_per_dimension;

  auto ae_opt = make_adam<double>(out.ae.param_count(), cfg.lr);
  auto disc_opt = make_adam<double>(out.disc.net.param_count(), cfg.lr);
  ae_opt.beta1 = disc_opt.beta1 = cfg.adam_beta1;
  ae_opt.beta2 = disc_opt.beta2 = cfg.adam_beta2;
  ae_opt.eps = disc_opt.eps = cfg.adam_eps;

  for (std::uint32_t epoch = out.epoch; epoch < cfg.epochs_ae; ++epoch) {
    Rng rng(derive_seed(cfg.seed, stream::train, 0xAE, epoch));
    const auto order = detail::shuffled_indices(corpus.train.size(), rng);
    AeLossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= order.size();
         start += cfg.batch_size) {
      std::vector<Tensor2<double>> batch;
      for (std::size_t i = 0; i < cfg.batch_size; ++i)
        batch.push_back(
            detail::crop_seq(corpus.train[order[start + i]].features, cfg.crop_frames, rng));
      AeLossBreakdown b;
      try {
        b = ae_train_step(out.ae, out.disc, out.rt, batch, ae_opt, disc_opt, prm);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      sum.rec += b.rec;
      sum.mel += b.mel;
      sum.kl += b.kl;
      sum.adv_gen += b.adv_gen;
      sum.feat += b.feat;
      sum.disc += b.disc;
      sum.total_ae += b.total_ae;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    out.log.push_back({epoch, "rec", sum.rec * inv});
    out.log.push_back({epoch, "kl", sum.kl * inv});
    if (prm.mode == AeObjective::adversarial) {
      out.log.push_back({epoch, "mel", sum.mel * inv});
      out.log.push_back({epoch, "adv_gen", sum.adv_gen * inv});
      out.log.push_back({epoch, "feat", sum.feat * inv});
      out.log.push_back({epoch, "disc", sum.disc * inv});
    }
    out.log.push_back({epoch, "total_ae", sum.total_ae * inv});
    if (progress) progress(epoch, sum.total_ae * inv);
    out.epoch = epoch + 1;
  }
  return out;
}

// --- generator training ------------------------------------------------------------

struct GeneratorModel {
  ConditionedNet net;
  SpeakerTable table;

  std::size_t param_count() const { return net.param_count() + table.emb.size(); }
};

struct GenBundle {
  GeneratorModel gen;
  std::vector<LossRow> log;
  std::uint32_t epoch = 0;
};

namespace detail {

inline std::uint64_t kind_tag(PipelineKind kind) {
  return 0x100 + (kind.is_fm() ? 2 : 0) + (kind.is_latent() ? 1 : 0);
}

// Joint Adam over trunk + time MLP + speaker table with global norm clipping.
struct GenOptimizer {
  AdamState<double> state;

  static GenOptimizer make(const GeneratorModel& g, const RunConfig& cfg) {
    GenOptimizer opt;
    opt.state = make_adam<double>(g.param_count(), cfg.lr);
    opt.state.beta1 = cfg.adam_beta1;
    opt.state.beta2 = cfg.adam_beta2;
    opt.state.eps = cfg.adam_eps;
    return opt;
  }

  void step(GeneratorModel& g, NetGrads<double>& trunk_g, NetGrads<double>& temb_g,
            Tensor2<double>& table_g, double clip) {
    detail::check_net_grads(trunk_g, "trunk");
    detail::check_net_grads(temb_g, "time-embed");
    for (double v : table_g.data)
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient in speaker table");
    double sq = grad_sq_norm(trunk_g) + grad_sq_norm(temb_g);
    for (double v : table_g.data) sq += v * v;
    if (sq > clip * clip) {
      const double s = clip / std::sqrt(sq);
      scale_grads(trunk_g, s);
      scale_grads(temb_g, s);
      for (auto& v : table_g.data) v *= s;
    }
    std::vector<double> p = flatten_params(g.net.trunk);
    {
      auto pt = flatten_params(g.net.temb.mlp);
      p.insert(p.end(), pt.begin(), pt.end());
      p.insert(p.end(), g.table.emb.data.begin(), g.table.emb.data.end());
    }
    std::vector<double> gr = flatten_grads(trunk_g);
    {
      auto gt = flatten_grads(temb_g);
      gr.insert(gr.end(), gt.begin(), gt.end());
      gr.insert(gr.end(), table_g.data.begin(), table_g.data.end());
    }
    adam_step_flat(p.data(), gr.data(), p.size(), state);
    const std::size_t n_trunk = g.net.trunk.param_count();
    const std::size_t n_temb = g.net.temb.mlp.param_count();
    std::vector<double> part(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n_trunk));
    set_params(g.net.trunk, part);
    part.assign(p.begin() + static_cast<std::ptrdiff_t>(n_trunk),
                p.begin() + static_cast<std::ptrdiff_t>(n_trunk + n_temb));
    set_params(g.net.temb.mlp, part);
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(n_trunk + n_temb), p.end(),
              g.table.emb.data.begin());
  }
};

}  // namespace detail

struct GenResume {
  GeneratorModel gen;
  std::uint32_t start_epoch = 0;
};

// Trains the score net (DPM) or vector-field net (FM) on features or on
// frozen-encoder latents; the speaker table trains jointly.
inline GenBundle train_generator(const RunConfig& cfg, const Corpus& corpus, PipelineKind kind,
                                 const Autoencoder* ae = nullptr,
                                 const std::optional<GenResume>& resume = std::nullopt,
                                 const EpochCallback& progress = {}) {
  if (kind.is_latent() && !ae)
    throw ConfigError("train_generator: latent kinds need a trained autoencoder");
  if (corpus.train.empty()) throw ConfigError("train_generator: empty corpus");

  const std::size_t x_dim = kind.is_latent() ? ae->bottleneck : corpus.spec.feat_dim;
  const std::size_t width = kind.is_latent() ? cfg.width_latent : cfg.width_feature;
  const std::size_t dp = corpus.spec.alphabet;

  GenBundle out;
  if (resume) {
    out.gen = resume->gen;
    out.epoch = resume->start_epoch;
  } else {
    Rng init(derive_seed(cfg.seed, stream::init, detail::kind_tag(kind)));
    out.gen.net = make_conditioned_net(x_dim, cfg.speaker_dim, dp, cfg.sin_dim, cfg.temb_dim,
                                       width, init);
    out.gen.table = make_speaker_table(corpus.spec.speakers, cfg.speaker_dim, init);
  }

  // Latent kinds model the frozen encoder's outputs.
  std::vector<Tensor2<double>> sequences;
  sequences.reserve(corpus.train.size());
  for (const auto& u : corpus.train)
    sequences.push_back(kind.is_latent() ? encode(*ae, u.features) : u.features);

  NoiseSchedule sched = build_schedule(cfg.schedule_L, cfg.beta_min, cfg.beta_max);
  auto opt = detail::GenOptimizer::make(out.gen, cfg);
  const char* loss_name = kind.is_fm() ? "cfm_loss" : "dpm_loss";

  for (std::uint32_t epoch = out.epoch; epoch < cfg.epochs_gen; ++epoch) {
    Rng rng(derive_seed(cfg.seed, stream::train, detail::kind_tag(kind), epoch));
    const auto order = detail::shuffled_indices(corpus.train.size(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= order.size();
         start += cfg.batch_size) {
      std::vector<detail::CropRows> crops;
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const auto& u = corpus.train[order[start + i]];
        crops.push_back(detail::crop_rows(sequences[order[start + i]], u.codes, u.speaker_id,
                                          cfg.crop_frames, rng));
      }
      double loss;
      std::vector<ConditionedGrads> grads(crops.size());
      for (auto& g : grads) g = zero_cond_grads(out.gen.net);
      if (kind.is_fm()) {
        std::vector<CfmBatchSample> batch;
        for (auto& c : crops) {
          CfmBatchSample s;
          s.x1_rows = std::move(c.rows);
          s.x0_rows = random_normal<double>(s.x1_rows.rows, s.x1_rows.cols, rng);
          s.t = rng.uniform();
          s.eps = random_normal<double>(s.x1_rows.rows, s.x1_rows.cols, rng);
          s.sigma = cfg.sigma_cfm;
          s.cond.s = speaker_embed(out.gen.table, c.speaker);
          s.cond.p = content_embed(c.codes, dp);
          batch.push_back(std::move(s));
        }
        loss = cfm_train_loss(out.gen.net, batch, &grads);
      } else {
        std::vector<DpmBatchSample> batch;
        for (auto& c : crops) {
          DpmBatchSample s;
          s.x0_rows = std::move(c.rows);
          s.l = static_cast<std::size_t>(
              rng.uniform_int(1, static_cast<std::int64_t>(sched.L)));
          s.eps = random_normal<double>(s.x0_rows.rows, s.x0_rows.cols, rng);
          s.cond.s = speaker_embed(out.gen.table, c.speaker);
          s.cond.p = content_embed(c.codes, dp);
          batch.push_back(std::move(s));
        }
        loss = dpm_train_loss(out.gen.net, batch, sched, &grads);
      }
      NetGrads<double> trunk_g = zero_grads(out.gen.net.trunk);
      NetGrads<double> temb_g = zero_grads(out.gen.net.temb.mlp);
      Tensor2<double> table_g(out.gen.table.emb.rows, out.gen.table.emb.cols);
      for (std::size_t bi = 0; bi < grads.size(); ++bi) {
        const auto& g = grads[bi];
        for (std::size_t li = 0; li < trunk_g.layers.size(); ++li) {
          for (std::size_t k = 0; k < trunk_g.layers[li].dw.size(); ++k)
            trunk_g.layers[li].dw.data[k] += g.trunk.layers[li].dw.data[k];
          for (std::size_t k = 0; k < trunk_g.layers[li].db.size(); ++k)
            trunk_g.layers[li].db[k] += g.trunk.layers[li].db[k];
        }
        for (std::size_t li = 0; li < temb_g.layers.size(); ++li) {
          for (std::size_t k = 0; k < temb_g.layers[li].dw.size(); ++k)
            temb_g.layers[li].dw.data[k] += g.temb_mlp.layers[li].dw.data[k];
          for (std::size_t k = 0; k < temb_g.layers[li].db.size(); ++k)
            temb_g.layers[li].db[k] += g.temb_mlp.layers[li].db[k];
        }
        double* row = table_g.row(crops[bi].speaker);
        for (std::size_t k = 0; k < g.ds.size(); ++k) row[k] += g.ds[k];
      }
      try {
        opt.step(out.gen, trunk_g, temb_g, table_g, cfg.grad_clip);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      epoch_loss += loss;
      ++batches;
    }
    out.log.push_back({epoch, loss_name, epoch_loss / static_cast<double>(batches)});
    if (progress) progress(epoch, epoch_loss / static_cast<double>(batches));
    out.epoch = epoch + 1;
  }
  return out;
}

// --- conversion ----------------------------------------------------------------

struct ConvertParams {
  std::size_t lprime = 18;      // DPM reverse start
  double noise_frac = 0.7;      // FM initial noise mix
  std::size_t steps = 10;       // FM Euler steps
  bool suppress_final_noise = true;
};

struct ConvertResult {
  Tensor2<double> features;  // D x N, frame count preserved
  std::size_t nfe = 0;
};

// Runs the conversion matching `kind`: build the bundle from the target
// speaker and the source content codes, then reverse-diffuse (DPM, from the
// clean source at L') or noise-mix + Euler-integrate (FM); latent kinds
// encode first and decode after.
inline ConvertResult convert(PipelineKind kind, const GeneratorModel& gen, const Autoencoder* ae,
                             const NoiseSchedule& sched, const Utterance& src,
                             std::size_t target_speaker, const ConvertParams& prm,
                             std::uint64_t seed, const StepObserver& observer = {}) {
  if (kind.is_latent()) {
    if (!ae) throw ConfigError("convert: latent kinds need the autoencoder checkpoint");
    if (ae->bottleneck != gen.net.x_dim)
      throw ConfigError("convert: autoencoder bottleneck does not match the generator input");
    if (ae->feat_dim != src.features.rows)
      throw ConfigError("convert: feature dim does not match the autoencoder");
  } else if (gen.net.x_dim != src.features.rows) {
    throw ConfigError("convert: feature dim does not match the generator");
  }

  ConditioningBundle cond;
  cond.s = speaker_embed(gen.table, target_speaker);
  cond.p = content_embed(src.codes, gen.net.dp);

  Tensor2<double> x_rows = kind.is_latent() ? encode(*ae, src.features).transposed()
                                            : src.features.transposed();
  Rng rng(derive_seed(seed, stream::convert));

  SampleResult res;
  if (kind.is_fm()) {
    Tensor2<double> eps = random_normal<double>(x_rows.rows, x_rows.cols, rng);
    Tensor2<double> mixed = noise_mix(x_rows, prm.noise_frac, eps);
    res = euler_integrate(gen.net, mixed, prm.steps, cond, observer);
  } else {
    ReverseSampleOptions opts;
    opts.suppress_final_noise = prm.suppress_final_noise;
    res = reverse_sample(gen.net, x_rows, prm.lprime, cond, sched, rng, opts, observer);
  }

  ConvertResult out;
  out.nfe = res.nfe;
  Tensor2<double> seq = res.x.transposed();
  out.features = kind.is_latent() ? decode(*ae, seq) : std::move(seq);
  return out;
}

// --- checkpoint file layout ----------------------------------------------------

inline std::filesystem::path ae_ckpt_path(const std::filesystem::path& dir) {
  return dir / "ae.lvgc";
}
inline std::filesystem::path disc_ckpt_path(const std::filesystem::path& dir) {
  return dir / "disc.lvgc";
}
inline std::filesystem::path gen_ckpt_path(const std::filesystem::path& dir, PipelineKind kind) {
  return dir / ("gen_" + kind_name(kind) + ".lvgc");
}
inline std::filesystem::path spk_ckpt_path(const std::filesystem::path& dir, PipelineKind kind) {
  return dir / ("spk_" + kind_name(kind) + ".lvgc");
}

inline void save_generator(const GeneratorModel& gen, PipelineKind kind,
                           const std::filesystem::path& dir, std::uint64_t hash,
                           std::uint64_t seed, std::uint32_t epoch) {
  const ModelRole role = kind.is_fm() ? ModelRole::vfield : ModelRole::score;
  save_checkpoint(checkpoint_from_conditioned_net(gen.net, role, hash, seed, epoch),
                  gen_ckpt_path(dir, kind));
  save_checkpoint(checkpoint_from_speaker_table(gen.table, hash, seed, epoch),
                  spk_ckpt_path(dir, kind));
}

inline GeneratorModel load_generator(PipelineKind kind, const std::filesystem::path& dir) {
  GeneratorModel g;
  const ModelCheckpoint net_c = load_checkpoint(gen_ckpt_path(dir, kind));
  const ModelRole want = kind.is_fm() ? ModelRole::vfield : ModelRole::score;
  if (net_c.role != want)
    throw ConfigError(std::string("generator checkpoint role '") + role_name(net_c.role) +
                      "' does not match kind " + kind_name(kind));
  g.net = conditioned_net_from_checkpoint(net_c);
  g.table = speaker_table_from_checkpoint(load_checkpoint(spk_ckpt_path(dir, kind)));
  return g;
}

}  // namespace lvg
