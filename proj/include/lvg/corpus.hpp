#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvg/binio.hpp"
#include "lvg/errors.hpp"
#include "lvg/rng.hpp"
#include "lvg/tensor.hpp"

namespace lvg {

// Generative law of the synthetic corpus: one Gaussian template per
// (speaker, code) pair, isotropic frame noise, dwell-structured code
// sequences. Everything an exact Bayes oracle needs.
struct CorpusSpec {
  std::size_t speakers = 4;
  std::size_t alphabet = 8;
  std::size_t feat_dim = 80;
  std::size_t train_utterances = 200;
  std::size_t heldout_utterances = 40;
  std::size_t frames_min = 80;
  std::size_t frames_max = 120;
  std::size_t dwell_min = 5;
  std::size_t dwell_max = 12;
  double frame_noise = 0.5;
  double template_scale = 1.0;
  double min_separation_factor = 4.0;

  // Realized by gen_corpus.
  Tensor2<double> means;  // (speakers*alphabet) x feat_dim, raw domain
  double std_mean = 0.0;  // global standardization: x -> (x - std_mean) / std_scale
  double std_scale = 1.0;

  const double* mean_at(std::size_t speaker, std::size_t code) const {
    return means.row(speaker * alphabet + code);
  }
  // Template mean / noise std in the standardized feature domain.
  double std_mean_at(std::size_t speaker, std::size_t code, std::size_t d) const {
    return (mean_at(speaker, code)[d] - std_mean) / std_scale;
  }
  double std_noise() const { return frame_noise / std_scale; }
};

struct Utterance {
  Tensor2<double> features;  // feat_dim x frames, standardized domain
  std::uint16_t speaker_id = 0;
  std::vector<std::uint8_t> codes;  // one per frame

  std::size_t frames() const { return features.cols; }
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Utterance> train;
  std::vector<Utterance> heldout;
};

namespace detail {

inline void snap_f32(Tensor2<double>& t) {
  for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

inline std::vector<std::uint8_t> draw_code_sequence(const CorpusSpec& spec, std::size_t frames,
                                                    Rng& rng) {
  std::vector<std::uint8_t> codes;
  codes.reserve(frames);
  int prev = -1;
  while (codes.size() < frames) {
    int c = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(spec.alphabet) - 1));
    if (c == prev) c = (c + 1) % static_cast<int>(spec.alphabet);
    std::size_t dwell = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.dwell_min),
                        static_cast<std::int64_t>(spec.dwell_max)));
    if (codes.size() + dwell > frames) {
      const std::size_t rest = frames - codes.size();
      // Too short for a fresh segment; extend the previous code instead.
      if (rest < spec.dwell_min && prev >= 0) {
        codes.insert(codes.end(), rest, static_cast<std::uint8_t>(prev));
        break;
      }
      dwell = rest;
    }
    codes.insert(codes.end(), dwell, static_cast<std::uint8_t>(c));
    prev = c;
  }
  return codes;
}

inline Utterance draw_utterance(const CorpusSpec& spec, std::uint16_t speaker, Rng& rng) {
  const std::size_t frames = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.frames_min),
                      static_cast<std::int64_t>(spec.frames_max)));
  Utterance u;
  u.speaker_id = speaker;
  u.codes = draw_code_sequence(spec, frames, rng);
  u.features = Tensor2<double>(spec.feat_dim, frames);
  for (std::size_t n = 0; n < frames; ++n) {
    const double* mu = spec.mean_at(speaker, u.codes[n]);
    for (std::size_t d = 0; d < spec.feat_dim; ++d)
      u.features(d, n) = mu[d] + spec.frame_noise * rng.normal();
  }
  return u;
}

}  // namespace detail

// Deterministic given (spec parameters, seed). Features come out globally
// standardized and snapped to f32 so disk round-trips are bit-exact.
inline Corpus gen_corpus(CorpusSpec spec, std::uint64_t seed) {
  if (spec.speakers < 2) throw ConfigError("corpus: need at least 2 speakers");
  if (spec.alphabet < 2) throw ConfigError("corpus: need at least 2 content codes");
  if (spec.frames_min < spec.dwell_min || spec.frames_min > spec.frames_max)
    throw ConfigError("corpus: bad frame length range");
  if (!(spec.frame_noise > 0.0)) throw ConfigError("corpus: frame_noise must be positive");

  Rng rng(derive_seed(seed, stream::corpus));
  spec.means = random_normal<double>(spec.speakers * spec.alphabet, spec.feat_dim, rng,
                                     spec.template_scale);

  // Same-code templates of different speakers must stay separated or the
  // oracle floors below are meaningless.
  double min_sep = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < spec.alphabet; ++c)
    for (std::size_t k = 0; k < spec.speakers; ++k)
      for (std::size_t k2 = k + 1; k2 < spec.speakers; ++k2) {
        double d2 = 0.0;
        const double* a = spec.mean_at(k, c);
        const double* b = spec.mean_at(k2, c);
        for (std::size_t d = 0; d < spec.feat_dim; ++d) d2 += (a[d] - b[d]) * (a[d] - b[d]);
        min_sep = std::min(min_sep, std::sqrt(d2));
      }
  if (min_sep < spec.min_separation_factor * spec.frame_noise)
    throw ConfigError("corpus: template separation " + std::to_string(min_sep) +
                      " below required " +
                      std::to_string(spec.min_separation_factor * spec.frame_noise));

  Corpus corpus;
  for (std::size_t i = 0; i < spec.train_utterances; ++i) {
    const auto speaker = static_cast<std::uint16_t>(i % spec.speakers);
    corpus.train.push_back(detail::draw_utterance(spec, speaker, rng));
  }
  for (std::size_t i = 0; i < spec.heldout_utterances; ++i) {
    const auto speaker = static_cast<std::uint16_t>(i % spec.speakers);
    corpus.heldout.push_back(detail::draw_utterance(spec, speaker, rng));
  }

  // Global zero-mean / unit-variance normalization over every element.
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (const auto* set : {&corpus.train, &corpus.heldout})
    for (const auto& u : *set) {
      for (double v : u.features.data) {
        sum += v;
        sum2 += v * v;
      }
      count += u.features.size();
    }
  const double mean = sum / static_cast<double>(count);
  const double var = sum2 / static_cast<double>(count) - mean * mean;
  spec.std_mean = mean;
  spec.std_scale = std::sqrt(var);
  for (auto* set : {&corpus.train, &corpus.heldout})
    for (auto& u : *set) {
      for (auto& v : u.features.data) v = (v - mean) / spec.std_scale;
      detail::snap_f32(u.features);
    }

  corpus.spec = std::move(spec);
  return corpus;
}

// --- Bayes oracles (standardized feature domain) ----------------------------

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace detail

struct SpeakerPosterior {
  std::size_t speaker_id = 0;
  std::vector<double> log_posterior;  // per speaker, normalized
  double margin = 0.0;                // top1 - top2 log-posterior
};

// Exact Bayes speaker classification, marginalizing codes per frame and
// summing over frames; uniform priors.
inline SpeakerPosterior oracle_speaker_classify(const Tensor2<double>& x, const CorpusSpec& spec) {
  if (x.rows != spec.feat_dim) throw ShapeError("speaker oracle: feature dim mismatch");
  const double sig = spec.std_noise();
  const double inv2s2 = 1.0 / (2.0 * sig * sig);
  const double log_c = std::log(static_cast<double>(spec.alphabet));
  std::vector<double> loglik(spec.speakers, 0.0);
  std::vector<double> percode(spec.alphabet);
  for (std::size_t n = 0; n < x.cols; ++n) {
    for (std::size_t k = 0; k < spec.speakers; ++k) {
      for (std::size_t c = 0; c < spec.alphabet; ++c) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < spec.feat_dim; ++d) {
          const double diff = x(d, n) - spec.std_mean_at(k, c, d);
          d2 += diff * diff;
        }
        percode[c] = -d2 * inv2s2;  // shared Gaussian constant cancels
      }
      loglik[k] += detail::log_sum_exp(percode) - log_c;
    }
  }
  SpeakerPosterior out;
  const double z = detail::log_sum_exp(loglik);
  out.log_posterior.resize(spec.speakers);
  for (std::size_t k = 0; k < spec.speakers; ++k) out.log_posterior[k] = loglik[k] - z;
  out.speaker_id = static_cast<std::size_t>(
      std::max_element(out.log_posterior.begin(), out.log_posterior.end()) -
      out.log_posterior.begin());
  double top2 = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < spec.speakers; ++k)
    if (k != out.speaker_id) top2 = std::max(top2, out.log_posterior[k]);
  out.margin = out.log_posterior[out.speaker_id] - top2;
  return out;
}

// Per-frame maximum-likelihood codes marginalizing speakers, then a
// dwell-window majority filter. Ties break toward the lowest code id.
inline std::vector<std::uint8_t> oracle_content_decode(const Tensor2<double>& x,
                                                       const CorpusSpec& spec) {
  if (x.rows != spec.feat_dim) throw ShapeError("content oracle: feature dim mismatch");
  const double sig = spec.std_noise();
  const double inv2s2 = 1.0 / (2.0 * sig * sig);
  std::vector<std::uint8_t> raw(x.cols);
  std::vector<double> perspk(spec.speakers);
  for (std::size_t n = 0; n < x.cols; ++n) {
    double best = -std::numeric_limits<double>::infinity();
    std::uint8_t best_c = 0;
    for (std::size_t c = 0; c < spec.alphabet; ++c) {
      for (std::size_t k = 0; k < spec.speakers; ++k) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < spec.feat_dim; ++d) {
          const double diff = x(d, n) - spec.std_mean_at(k, c, d);
          d2 += diff * diff;
        }
        perspk[k] = -d2 * inv2s2;
      }
      const double ll = detail::log_sum_exp(perspk);
      if (ll > best) {
        best = ll;
        best_c = static_cast<std::uint8_t>(c);
      }
    }
    raw[n] = best_c;
  }
  // Centered majority vote over the minimum dwell length.
  const std::size_t w = spec.dwell_min;
  std::vector<std::uint8_t> smoothed(raw.size());
  std::vector<std::size_t> votes(spec.alphabet);
  for (std::size_t n = 0; n < raw.size(); ++n) {
    std::fill(votes.begin(), votes.end(), 0);
    const std::size_t lo = n >= w / 2 ? n - w / 2 : 0;
    const std::size_t hi = std::min(raw.size(), n + w / 2 + 1);
    for (std::size_t i = lo; i < hi; ++i) ++votes[raw[i]];
    std::size_t best = 0;
    for (std::size_t c = 1; c < spec.alphabet; ++c)
      if (votes[c] > votes[best]) best = c;
    smoothed[n] = static_cast<std::uint8_t>(best);
  }
  return smoothed;
}

// --- serialization -----------------------------------------------------------

constexpr std::uint16_t kUtteranceVersion = 1;

inline std::vector<std::uint8_t> utterance_bytes(const Utterance& u) {
  ByteWriter w;
  w.raw("LVGU", 4);
  w.u16(kUtteranceVersion);
  w.u32(static_cast<std::uint32_t>(u.features.rows));
  w.u32(static_cast<std::uint32_t>(u.features.cols));
  w.u16(u.speaker_id);
  w.raw(u.codes.data(), u.codes.size());
  for (double v : u.features.data) w.f32(static_cast<float>(v));
  return std::move(w.bytes);
}

inline void save_utterance(const Utterance& u, const std::filesystem::path& path) {
  if (u.codes.size() != u.features.cols) throw ShapeError("utterance: codes/frames mismatch");
  const auto bytes = utterance_bytes(u);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

inline Utterance load_utterance(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.need(4);
  std::memcpy(magic, r.p, 4);
  r.pos += 4;
  if (std::string(magic, 4) != "LVGU") throw IoError(path.string() + ": bad magic");
  const auto version = r.u16();
  if (version != kUtteranceVersion)
    throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  const std::size_t d = r.u32();
  const std::size_t n = r.u32();
  Utterance u;
  u.speaker_id = r.u16();
  u.codes.resize(n);
  r.need(n);
  std::memcpy(u.codes.data(), r.p + r.pos, n);
  r.pos += n;
  u.features = Tensor2<double>(d, n);
  for (auto& v : u.features.data) v = static_cast<double>(r.f32());
  if (r.pos != r.n) throw IoError(path.string() + ": trailing bytes");
  return u;
}

inline nlohmann::json corpus_spec_json(const CorpusSpec& s) {
  nlohmann::json j;
  j["speakers"] = s.speakers;
  j["alphabet"] = s.alphabet;
  j["feat_dim"] = s.feat_dim;
  j["train_utterances"] = s.train_utterances;
  j["heldout_utterances"] = s.heldout_utterances;
  j["frames_min"] = s.frames_min;
  j["frames_max"] = s.frames_max;
  j["dwell_min"] = s.dwell_min;
  j["dwell_max"] = s.dwell_max;
  j["frame_noise"] = s.frame_noise;
  j["template_scale"] = s.template_scale;
  j["min_separation_factor"] = s.min_separation_factor;
  j["std_mean"] = s.std_mean;
  j["std_scale"] = s.std_scale;
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < s.means.rows; ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < s.means.cols; ++c) row.push_back(s.means(r, c));
    rows.push_back(std::move(row));
  }
  j["means"] = std::move(rows);
  return j;
}

inline CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.speakers = j.at("speakers").get<std::size_t>();
  s.alphabet = j.at("alphabet").get<std::size_t>();
  s.feat_dim = j.at("feat_dim").get<std::size_t>();
  s.train_utterances = j.at("train_utterances").get<std::size_t>();
  s.heldout_utterances = j.at("heldout_utterances").get<std::size_t>();
  s.frames_min = j.at("frames_min").get<std::size_t>();
  s.frames_max = j.at("frames_max").get<std::size_t>();
  s.dwell_min = j.at("dwell_min").get<std::size_t>();
  s.dwell_max = j.at("dwell_max").get<std::size_t>();
  s.frame_noise = j.at("frame_noise").get<double>();
  s.template_scale = j.at("template_scale").get<double>();
  s.min_separation_factor = j.at("min_separation_factor").get<double>();
  s.std_mean = j.at("std_mean").get<double>();
  s.std_scale = j.at("std_scale").get<double>();
  const auto& rows = j.at("means");
  s.means = Tensor2<double>(rows.size(), s.feat_dim);
  for (std::size_t r = 0; r < s.means.rows; ++r)
    for (std::size_t c = 0; c < s.feat_dim; ++c) s.means(r, c) = rows[r][c].get<double>();
  return s;
}

inline std::string utterance_filename(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05zu.lvgu", prefix, i);
  return buf;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream spec_out(dir / "spec.json", std::ios::trunc);
  if (!spec_out) throw IoError("cannot write corpus spec.json");
  spec_out << corpus_spec_json(corpus.spec).dump(2) << "\n";
  for (std::size_t i = 0; i < corpus.train.size(); ++i)
    save_utterance(corpus.train[i], dir / utterance_filename("train", i));
  for (std::size_t i = 0; i < corpus.heldout.size(); ++i)
    save_utterance(corpus.heldout[i], dir / utterance_filename("heldout", i));
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream spec_in(dir / "spec.json");
  if (!spec_in) throw IoError("cannot read " + (dir / "spec.json").string());
  nlohmann::json j;
  spec_in >> j;
  Corpus corpus;
  corpus.spec = corpus_spec_from_json(j);
  for (std::size_t i = 0; i < corpus.spec.train_utterances; ++i)
    corpus.train.push_back(load_utterance(dir / utterance_filename("train", i)));
  for (std::size_t i = 0; i < corpus.spec.heldout_utterances; ++i)
    corpus.heldout.push_back(load_utterance(dir / utterance_filename("heldout", i)));
  return corpus;
}

}  // namespace lvg
