#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lvg/evalbench.hpp"
#include "test_helpers.hpp"

using namespace lvg;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.speakers = 4;
  s.alphabet = 8;
  s.feat_dim = 24;
  s.train_utterances = 12;
  s.heldout_utterances = 8;
  s.frames_min = 40;
  s.frames_max = 50;
  return s;
}

GeneratorModel zero_field_gen(std::size_t x_dim, std::size_t speakers, std::size_t alphabet) {
  GeneratorModel g;
  g.net = testutil::stub_cond_net(x_dim, 4, alphabet, 0.0, {});
  Rng rng(5);
  g.table = make_speaker_table(speakers, 4, rng);
  return g;
}

}  // namespace

TEST_CASE("self-conversion with a zero field scores near-perfect", "[evalbench]") {
  Corpus c = gen_corpus(small_spec(), 3);
  NoiseSchedule sched = build_schedule(20, 1e-4, 0.06);
  GeneratorModel gen = zero_field_gen(c.spec.feat_dim, c.spec.speakers, c.spec.alphabet);
  ConvertParams prm;
  prm.noise_frac = 0.0;
  prm.steps = 4;
  std::vector<ConvertedUtterance> converted;
  for (const auto& u : c.heldout) {
    ConvertResult res = convert(parse_kind("vg-fm"), gen, nullptr, sched, u, u.speaker_id, prm, 7);
    converted.push_back({std::move(res.features), u.speaker_id, u.codes});
  }
  ConversionReport rep = eval_conversion(converted, c.spec);
  CHECK(rep.similarity_acc == 1.0);
  CHECK(rep.content_acc >= 0.99);

  // aggregates equal a manual recount of the rows
  double sim = 0, content = 0, margin = 0;
  for (const auto& r : rep.rows) {
    sim += r.hit ? 1 : 0;
    content += r.content_acc;
    margin += r.margin;
  }
  const double n = static_cast<double>(rep.rows.size());
  CHECK(rep.similarity_acc == Catch::Approx(sim / n).epsilon(1e-12));
  CHECK(rep.content_acc == Catch::Approx(content / n).epsilon(1e-12));
  CHECK(rep.mean_margin == Catch::Approx(margin / n).epsilon(1e-12));
}

TEST_CASE("random-noise conversions score at chance", "[evalbench]") {
  Corpus c = gen_corpus(small_spec(), 5);
  Rng rng(11);
  std::vector<ConvertedUtterance> converted;
  for (int i = 0; i < 64; ++i) {
    ConvertedUtterance cu;
    cu.features = random_normal<double>(c.spec.feat_dim, 48, rng);
    cu.target_speaker = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(c.spec.speakers) - 1));
    cu.source_codes.resize(48);
    for (auto& v : cu.source_codes)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, static_cast<std::int64_t>(c.spec.alphabet) - 1));
    converted.push_back(std::move(cu));
  }
  ConversionReport rep = eval_conversion(converted, c.spec);
  CHECK(std::abs(rep.similarity_acc - 0.25) < 0.18);
  CHECK(std::abs(rep.content_acc - 0.125) < 0.08);
}

TEST_CASE("parallel evaluation matches single-threaded output", "[evalbench]") {
  Corpus c = gen_corpus(small_spec(), 7);
  std::vector<ConvertedUtterance> converted;
  for (const auto& u : c.heldout) {
    ConvertedUtterance cu{u.features, u.speaker_id, u.codes};
    converted.push_back(std::move(cu));
  }
  ConversionReport a = eval_conversion(converted, c.spec, 1);
  ConversionReport b = eval_conversion(converted, c.spec, 3);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].hit == b.rows[i].hit);
    CHECK(a.rows[i].margin == b.rows[i].margin);
    CHECK(a.rows[i].content_acc == b.rows[i].content_acc);
  }
}

TEST_CASE("sweeps demand FM kinds and keep the paper grids", "[evalbench]") {
  Corpus c = gen_corpus(small_spec(), 9);
  NoiseSchedule sched = build_schedule(20, 1e-4, 0.06);
  GeneratorModel gen = zero_field_gen(c.spec.feat_dim, c.spec.speakers, c.spec.alphabet);
  CHECK_THROWS_AS(sweep_r(parse_kind("vg-dpm"), gen, nullptr, sched, c, 10, 1), ConfigError);
  CHECK_THROWS_AS(sweep_L(parse_kind("lvg-dpm"), gen, nullptr, sched, c, 0.7, 1), ConfigError);

  auto rows = sweep_r(parse_kind("vg-fm"), gen, nullptr, sched, c, 3, 1, 2);
  REQUIRE(rows.size() == 11);
  for (int i = 0; i <= 10; ++i) {
    CHECK(rows[static_cast<std::size_t>(i)].r == Catch::Approx(i / 10.0));
    CHECK(rows[static_cast<std::size_t>(i)].L == 3);
  }
  auto lrows = sweep_L(parse_kind("vg-fm"), gen, nullptr, sched, c, 0.7, 1, 2);
  REQUIRE(lrows.size() == 6);
  const std::size_t grid[] = {1, 2, 3, 5, 10, 20};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(lrows[i].L == grid[i]);
    CHECK(lrows[i].r == Catch::Approx(0.7));
  }
}

TEST_CASE("spearman rank correlation", "[evalbench]") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == Catch::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == Catch::Approx(-1.0));
  CHECK(std::abs(spearman({1, 2, 3, 4, 5, 6}, {3, 1, 4, 1, 5, 9})) < 1.0);
  CHECK(spearman({1, 1, 1}, {2, 5, 9}) == 0.0);  // degenerate x
}

TEST_CASE("bench records expose the sampler contracts", "[evalbench]") {
  Corpus c = gen_corpus(small_spec(), 13);
  NoiseSchedule sched = build_schedule(20, 1e-4, 0.06);
  GeneratorModel gen = zero_field_gen(c.spec.feat_dim, c.spec.speakers, c.spec.alphabet);
  ConvertParams prm;  // defaults L'=18, steps=10
  BenchRecord dpm = bench_kind(parse_kind("vg-dpm"), gen, nullptr, sched, c.heldout[0], prm, 3, 1);
  CHECK(dpm.nfe == 18);
  CHECK(dpm.lprime_or_L == 18);
  CHECK(dpm.param_count == gen.param_count());
  BenchRecord fm = bench_kind(parse_kind("vg-fm"), gen, nullptr, sched, c.heldout[0], prm, 3, 1);
  CHECK(fm.nfe == 10);
  CHECK(fm.lprime_or_L == 10);
  CHECK(fm.ms_per_100_frames >= 0.0);
}

TEST_CASE("fooling rate on constant discriminators", "[evalbench]") {
  Corpus c = gen_corpus(small_spec(), 15);
  Rng rng(2);
  Autoencoder ae = make_autoencoder(c.spec.feat_dim, 6, 16, 1, rng);
  RenderTransform rt = make_render(c.spec.feat_dim);
  Discriminator fooled;
  fooled.window = rt.window;
  fooled.hop = rt.hop;
  DenseLayer<double> l;
  l.w = Tensor2<double>(1, rt.window);
  l.b.assign(1, 1.0);
  l.act = Activation::identity;
  fooled.net.layers.push_back(l);
  CHECK(fooling_rate(ae, fooled, rt, c.heldout) == 1.0);
  fooled.net.layers[0].b[0] = 0.0;
  CHECK(fooling_rate(ae, fooled, rt, c.heldout) == 0.0);
}

TEST_CASE("pgm dumps follow the min-max scaling rules", "[evalbench]") {
  const auto dir = std::filesystem::temp_directory_path() / "lvg_pgm";
  std::filesystem::create_directories(dir);

  SECTION("two-by-two checker") {
    Tensor2<double> m(2, 2);
    m.data = {0, 1, 1, 0};
    dump_pgm(m, dir / "checker.pgm");
    std::ifstream f(dir / "checker.pgm", std::ios::binary);
    std::string magic, dims1, dims2, maxval;
    f >> magic >> dims1 >> dims2 >> maxval;
    CHECK(magic == "P5");
    CHECK(dims1 == "2");
    CHECK(dims2 == "2");
    CHECK(maxval == "255");
    f.get();  // single whitespace after header
    unsigned char px[4];
    f.read(reinterpret_cast<char*>(px), 4);
    CHECK(px[0] == 0);
    CHECK(px[1] == 255);
    CHECK(px[2] == 255);
    CHECK(px[3] == 0);
  }
  SECTION("constant matrix maps to mid gray") {
    Tensor2<double> m(3, 5, 2.7);
    dump_pgm(m, dir / "flat.pgm");
    std::ifstream f(dir / "flat.pgm", std::ios::binary);
    std::string magic, w, h, maxval;
    f >> magic >> w >> h >> maxval;
    CHECK(w == "5");
    CHECK(h == "3");
    f.get();
    for (int i = 0; i < 15; ++i) CHECK(f.get() == 127);
  }
  SECTION("determinism") {
    Rng rng(3);
    Tensor2<double> m = random_normal<double>(4, 6, rng);
    dump_pgm(m, dir / "a.pgm");
    dump_pgm(m, dir / "b.pgm");
    std::ifstream a(dir / "a.pgm", std::ios::binary), b(dir / "b.pgm", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("csv emitters are byte-stable", "[evalbench]") {
  const auto dir = std::filesystem::temp_directory_path() / "lvg_csv";
  std::filesystem::create_directories(dir);
  std::vector<SweepRow> rows = {{"vg-fm", 0.3, 10, 0.91, 0.97, 55.0},
                                {"vg-fm", 0.4, 10, 0.95, 0.96, 60.5}};
  write_sweep_csv(rows, dir / "a.csv");
  write_sweep_csv(rows, dir / "b.csv");
  std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(sa.find("kind,r,L,similarity_acc,content_acc,mean_margin") == 0);
  std::filesystem::remove_all(dir);
}
