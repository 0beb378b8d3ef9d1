#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "lvg/corpus.hpp"
#include "lvg/pipeline.hpp"

namespace lvg {

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

// One finished conversion plus what the oracles need to judge it.
struct ConvertedUtterance {
  Tensor2<double> features;
  std::size_t target_speaker = 0;
  std::vector<std::uint8_t> source_codes;
};

struct ReportRow {
  std::size_t index = 0;
  std::size_t target = 0;
  bool hit = false;
  double margin = 0.0;
  double content_acc = 0.0;
};

struct ConversionReport {
  std::vector<ReportRow> rows;
  double similarity_acc = 0.0;
  double content_acc = 0.0;
  double mean_margin = 0.0;
};

// Oracle-based conversion metrics: speaker similarity is a target hit under
// the Bayes speaker oracle, content preservation is frame accuracy of the
// decoded codes against the source codes.
inline ConversionReport eval_conversion(const std::vector<ConvertedUtterance>& converted,
                                        const CorpusSpec& spec, std::size_t threads = 1) {
  ConversionReport rep;
  rep.rows.resize(converted.size());
  detail::parallel_for(converted.size(), threads, [&](std::size_t i) {
    const auto& c = converted[i];
    ReportRow row;
    row.index = i;
    row.target = c.target_speaker;
    SpeakerPosterior p = oracle_speaker_classify(c.features, spec);
    row.hit = p.speaker_id == c.target_speaker;
    row.margin = p.margin;
    const auto codes = oracle_content_decode(c.features, spec);
    std::size_t ok = 0;
    for (std::size_t n = 0; n < codes.size(); ++n)
      if (codes[n] == c.source_codes[n]) ++ok;
    row.content_acc = codes.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(codes.size());
    rep.rows[i] = row;
  });
  for (const auto& r : rep.rows) {
    rep.similarity_acc += r.hit ? 1.0 : 0.0;
    rep.content_acc += r.content_acc;
    rep.mean_margin += r.margin;
  }
  if (!rep.rows.empty()) {
    const double inv = 1.0 / static_cast<double>(rep.rows.size());
    rep.similarity_acc *= inv;
    rep.content_acc *= inv;
    rep.mean_margin *= inv;
  }
  return rep;
}

// Converts every held-out utterance to every other speaker; task i gets its
// own derived RNG stream so thread count cannot change the output.
inline std::vector<ConvertedUtterance> convert_heldout(
    PipelineKind kind, const GeneratorModel& gen, const Autoencoder* ae,
    const NoiseSchedule& sched, const Corpus& corpus, const ConvertParams& prm,
    std::uint64_t seed, std::size_t threads = 1) {
  struct Task {
    const Utterance* src;
    std::size_t target;
  };
  std::vector<Task> tasks;
  for (const auto& u : corpus.heldout)
    for (std::size_t k = 0; k < corpus.spec.speakers; ++k)
      if (k != u.speaker_id) tasks.push_back({&u, k});
  std::vector<ConvertedUtterance> out(tasks.size());
  detail::parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const auto& t = tasks[i];
    ConvertResult res = convert(kind, gen, ae, sched, *t.src, t.target, prm,
                                derive_seed(seed, 0x77, i));
    out[i] = {std::move(res.features), t.target, t.src->codes};
  });
  return out;
}

// --- parameter sweeps -----------------------------------------------------------

struct SweepRow {
  std::string kind;
  double r = 0.0;
  std::size_t L = 0;
  double similarity_acc = 0.0;
  double content_acc = 0.0;
  double mean_margin = 0.0;
};

inline void write_sweep_csv(const std::vector<SweepRow>& rows,
                            const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "kind,r,L,similarity_acc,content_acc,mean_margin\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.3f,%zu,%.6f,%.6f,%.6f", r.kind.c_str(), r.r, r.L,
                  r.similarity_acc, r.content_acc, r.mean_margin);
    f << buf << "\n";
  }
}

// Noise-fraction sweep over r in {0.0, 0.1, ..., 1.0} at fixed L; FM only.
inline std::vector<SweepRow> sweep_r(PipelineKind kind, const GeneratorModel& gen,
                                     const Autoencoder* ae, const NoiseSchedule& sched,
                                     const Corpus& corpus, std::size_t L, std::uint64_t seed,
                                     std::size_t threads = 1) {
  if (!kind.is_fm()) throw ConfigError("sweep_r: only FM kinds take a noise fraction");
  std::vector<SweepRow> rows;
  for (int i = 0; i <= 10; ++i) {
    const double r = static_cast<double>(i) / 10.0;
    ConvertParams prm;
    prm.noise_frac = r;
    prm.steps = L;
    auto converted = convert_heldout(kind, gen, ae, sched, corpus, prm,
                                     derive_seed(seed, 0x5157, static_cast<std::uint64_t>(i)),
                                     threads);
    ConversionReport rep = eval_conversion(converted, corpus.spec, threads);
    rows.push_back({kind_name(kind), r, L, rep.similarity_acc, rep.content_acc, rep.mean_margin});
  }
  return rows;
}

// Step-count sweep over L in {1, 2, 3, 5, 10, 20} at fixed r; FM only.
inline std::vector<SweepRow> sweep_L(PipelineKind kind, const GeneratorModel& gen,
                                     const Autoencoder* ae, const NoiseSchedule& sched,
                                     const Corpus& corpus, double r, std::uint64_t seed,
                                     std::size_t threads = 1) {
  if (!kind.is_fm()) throw ConfigError("sweep_L: only FM kinds take a step count");
  std::vector<SweepRow> rows;
  const std::size_t grid[] = {1, 2, 3, 5, 10, 20};
  for (std::size_t gi = 0; gi < std::size(grid); ++gi) {
    ConvertParams prm;
    prm.noise_frac = r;
    prm.steps = grid[gi];
    auto converted = convert_heldout(kind, gen, ae, sched, corpus, prm,
                                     derive_seed(seed, 0x515c, gi), threads);
    ConversionReport rep = eval_conversion(converted, corpus.spec, threads);
    rows.push_back({kind_name(kind), r, grid[gi], rep.similarity_acc, rep.content_acc,
                    rep.mean_margin});
  }
  return rows;
}

// Spearman rank correlation; average ranks on ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

// --- benchmarking ---------------------------------------------------------------

struct BenchRecord {
  std::string kind;
  std::size_t lprime_or_L = 0;
  std::size_t nfe = 0;
  double ms_per_100_frames = 0.0;
  std::size_t param_count = 0;
};

inline void write_bench_csv(const std::vector<BenchRecord>& rows,
                            const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "kind,Lprime_or_L,nfe,ms_per_100_frames,param_count\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.3f,%zu", r.kind.c_str(), r.lprime_or_L, r.nfe,
                  r.ms_per_100_frames, r.param_count);
    f << buf << "\n";
  }
}

// Median wall-clock per kind on one utterance; warm-up run excluded, pinned to
// the calling thread.
inline BenchRecord bench_kind(PipelineKind kind, const GeneratorModel& gen, const Autoencoder* ae,
                              const NoiseSchedule& sched, const Utterance& sample,
                              const ConvertParams& prm, std::size_t repetitions,
                              std::uint64_t seed) {
  BenchRecord rec;
  rec.kind = kind_name(kind);
  rec.lprime_or_L = kind.is_fm() ? prm.steps : prm.lprime;
  rec.param_count = gen.param_count();
  ConvertResult warm = convert(kind, gen, ae, sched, sample, 0, prm, derive_seed(seed, 0xB, 0));
  rec.nfe = warm.nfe;
  std::vector<double> times;
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    convert(kind, gen, ae, sched, sample, 0, prm, derive_seed(seed, 0xB, i + 1));
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const double median = times.empty() ? 0.0 : times[times.size() / 2];
  rec.ms_per_100_frames = median * 100.0 / static_cast<double>(sample.frames());
  return rec;
}

// --- discriminator fooling ---------------------------------------------------------

// Fraction of fake-render windows the given discriminator scores above 1/2.
inline double fooling_rate(const Autoencoder& ae, const Discriminator& disc,
                           const RenderTransform& rt, const std::vector<Utterance>& utts) {
  std::size_t fooled = 0, total = 0;
  for (const auto& u : utts) {
    Tensor2<double> fake = decode(ae, encode(ae, u.features));
    Tensor2<double> scores = forward(disc.net, disc_windows(disc, render(rt, fake)));
    for (double v : scores.data) {
      if (v > 0.5) ++fooled;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(fooled) / static_cast<double>(total);
}

// --- PGM dumps -------------------------------------------------------------------

// 8-bit binary PGM, min-max scaled; constant input maps to mid-gray 127.
inline void dump_pgm(const Tensor2<double>& m, const std::filesystem::path& path) {
  if (!all_finite(m)) throw IoError("dump_pgm: non-finite matrix");
  double lo = m.data[0], hi = m.data[0];
  for (double v : m.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << m.cols << " " << m.rows << "\n255\n";
  std::vector<std::uint8_t> bytes;
  bytes.reserve(m.size());
  if (hi == lo) {
    bytes.assign(m.size(), 127);
  } else {
    for (double v : m.data)
      bytes.push_back(static_cast<std::uint8_t>(std::llround((v - lo) / (hi - lo) * 255.0)));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace lvg
