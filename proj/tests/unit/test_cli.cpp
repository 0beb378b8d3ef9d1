#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lvg/cli.hpp"

using namespace lvg;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  std::vector<const char*> argv = {"lvg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

const char* kTinyConfig = R"({
  "corpus": {"speakers": 3, "alphabet": 4, "feat_dim": 16,
             "train_utterances": 16, "heldout_utterances": 4,
             "frames_min": 24, "frames_max": 30},
  "model": {"bottleneck": 6, "speaker_dim": 8, "sin_dim": 8, "temb_dim": 8,
            "width_feature": 32, "width_latent": 24, "width_ae": 32,
            "width_disc": 24, "context": 1},
  "train": {"epochs_ae": 3, "epochs_gen": 3, "batch_size": 4,
            "crop_frames": 16, "lr": 0.002},
  "sampler": {"lprime": 6, "steps": 4, "noise_frac": 0.5},
  "schedule": {"L": 8},
  "seed": 7,
  "threads": 2
})";

}  // namespace

TEST_CASE("cli end-to-end workspace", "[cli]") {
  const fs::path ws = fs::temp_directory_path() / "lvg_cli_ws";
  fs::remove_all(ws);
  fs::create_directories(ws);
  const std::string cfg = (ws / "config.json").string();
  std::ofstream(cfg) << kTinyConfig;

  SECTION("help exits zero, bad usage exits one") {
    CHECK(run({"--help"}) == 0);
    CHECK(run({"gen-data", "--help"}) == 0);
    CHECK(run({"definitely-not-a-subcommand"}) == 1);
    CHECK(run({"gen-data", "--nope", "x", "--out", (ws / "c").string()}) == 1);
    CHECK(run({}) == 1);  // a subcommand is required
  }

  SECTION("config validation failures exit one without partial outputs") {
    const std::string bad = (ws / "bad.json").string();
    std::ofstream(bad) << R"({"corpus": {"speakers": 1}})";
    const fs::path out = ws / "never";
    CHECK(run({"gen-data", "--config", bad, "--out", out.string()}) == 1);
    CHECK_FALSE(fs::exists(out));
    const std::string unknown = (ws / "unknown.json").string();
    std::ofstream(unknown) << R"({"corps": {}})";
    CHECK(run({"gen-data", "--config", unknown, "--out", out.string()}) == 1);
    CHECK_FALSE(fs::exists(out));
  }

  SECTION("full workflow") {
    const std::string corpus = (ws / "corpus").string();
    const std::string ckpt = (ws / "ckpt").string();

    REQUIRE(run({"gen-data", "--config", cfg, "--out", corpus}) == 0);
    REQUIRE(fs::exists(fs::path(corpus) / "spec.json"));
    REQUIRE(fs::exists(fs::path(corpus) / "train_00015.lvgu"));

    // gen-data is byte-deterministic
    const std::string corpus2 = (ws / "corpus2").string();
    REQUIRE(run({"gen-data", "--config", cfg, "--out", corpus2}) == 0);
    CHECK(slurp(fs::path(corpus) / "train_00000.lvgu") ==
          slurp(fs::path(corpus2) / "train_00000.lvgu"));
    CHECK(slurp(fs::path(corpus) / "spec.json") == slurp(fs::path(corpus2) / "spec.json"));

    REQUIRE(run({"train-ae", "--config", cfg, "--corpus", corpus, "--out", ckpt}) == 0);
    REQUIRE(fs::exists(fs::path(ckpt) / "ae.lvgc"));
    REQUIRE(fs::exists(fs::path(ckpt) / "disc.lvgc"));
    REQUIRE(fs::exists(fs::path(ckpt) / "ae_loss.csv"));

    for (const char* kind : {"vg-fm", "lvg-fm", "vg-dpm"})
      REQUIRE(run({"train-gen", "--config", cfg, "--corpus", corpus, "--kind", kind, "--ckpt",
                   ckpt, "--out", ckpt}) == 0);
    REQUIRE(fs::exists(fs::path(ckpt) / "gen_vg-fm.lvgc"));
    REQUIRE(fs::exists(fs::path(ckpt) / "spk_lvg-fm.lvgc"));

    // convert one utterance twice with the same seed: byte-identical output
    const std::string src = (fs::path(corpus) / "heldout_00000.lvgu").string();
    const std::string out1 = (ws / "conv1.lvgu").string();
    const std::string out2 = (ws / "conv2.lvgu").string();
    REQUIRE(run({"convert", "--config", cfg, "--input", src, "--kind", "lvg-fm", "--ckpt", ckpt,
                 "--target", "2", "--steps", "4", "--noise-frac", "0.5", "--out", out1}) == 0);
    REQUIRE(run({"convert", "--config", cfg, "--input", src, "--kind", "lvg-fm", "--ckpt", ckpt,
                 "--target", "2", "--steps", "4", "--noise-frac", "0.5", "--out", out2}) == 0);
    CHECK(slurp(out1) == slurp(out2));
    Utterance conv = load_utterance(out1);
    Utterance orig = load_utterance(src);
    CHECK(conv.frames() == orig.frames());
    CHECK(conv.speaker_id == 2);
    CHECK(conv.codes == orig.codes);

    // unknown target speaker is a validation failure
    CHECK(run({"convert", "--config", cfg, "--input", src, "--kind", "vg-fm", "--ckpt", ckpt,
               "--target", "9", "--out", (ws / "bad.lvgu").string()}) == 1);

    // eval over a directory of conversions
    const fs::path conv_dir = ws / "conversions";
    fs::create_directories(conv_dir);
    fs::copy_file(out1, conv_dir / "a.lvgu");
    const std::string report = (ws / "report.csv").string();
    REQUIRE(run({"eval", "--config", cfg, "--corpus", corpus, "--in", conv_dir.string(), "--out",
                 report}) == 0);
    const std::string rep = slurp(report);
    CHECK(rep.find("index,target,hit,margin,content_acc") == 0);

    // sweep on a DPM kind is rejected as a validation error
    CHECK(run({"sweep", "--config", cfg, "--sweep", "r", "--corpus", corpus, "--kind", "vg-dpm",
               "--ckpt", ckpt, "--out", (ws / "no.csv").string()}) == 1);

    // bench two kinds
    const std::string bench_csv = (ws / "bench.csv").string();
    REQUIRE(run({"bench", "--config", cfg, "--corpus", corpus, "--ckpt", ckpt, "--kinds", "vg-fm",
                 "--kinds", "vg-dpm", "--reps", "2", "--out", bench_csv}) == 0);
    const std::string bench = slurp(bench_csv);
    CHECK(bench.find("kind,Lprime_or_L,nfe,ms_per_100_frames,param_count") == 0);
    CHECK(bench.find("vg-fm,4,4,") != std::string::npos);
    CHECK(bench.find("vg-dpm,6,6,") != std::string::npos);

    // snapshot dumps one PGM per sampler step
    const fs::path snap = ws / "snap";
    REQUIRE(run({"snapshot", "--config", cfg, "--input", src, "--kind", "vg-fm", "--ckpt", ckpt,
                 "--target", "1", "--steps", "3", "--out", snap.string()}) == 0);
    CHECK(fs::exists(snap / "source.pgm"));
    CHECK(fs::exists(snap / "step_01.pgm"));
    CHECK(fs::exists(snap / "step_03.pgm"));
    CHECK(fs::exists(snap / "converted.pgm"));
    const fs::path lsnap = ws / "lsnap";
    REQUIRE(run({"snapshot", "--config", cfg, "--input", src, "--kind", "lvg-dpm", "--ckpt",
                 ckpt, "--target", "1", "--out", lsnap.string()}) == 0);
    CHECK(fs::exists(lsnap / "step_00_latent.pgm"));
    CHECK(fs::exists(lsnap / "step_00_decoded.pgm"));
  }

  fs::remove_all(ws);
}
