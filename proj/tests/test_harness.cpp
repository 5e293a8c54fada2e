#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "selffed/harness.hpp"

using namespace selffed;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment(const std::string& outdir, uint64_t seed = 3) {
    ExperimentConfig cfg = default_config();
    cfg.seed = seed;
    cfg.output_dir = outdir;
    cfg.arch.image_side = 8;
    cfg.arch.patch_side = 4;
    cfg.arch.embed_dim = 4;
    cfg.arch.stages = 1;
    cfg.arch.window = 2;
    cfg.arch.heads = 2;
    cfg.arch.proj_dim = 4;
    cfg.arch.proj_hidden = 8;
    cfg.arch.classifier_hidden = 8;
    cfg.data.per_class = 12;
    cfg.data.test_fraction = 0.25;
    cfg.data.calib_per_class = 2;
    cfg.data.delta = 1.0;
    cfg.data.label_fraction = 0.5;
    cfg.fed.num_clients = 2;
    cfg.fed.clients_per_round = 2;
    cfg.fed.rounds_phase1 = 2;
    cfg.fed.rounds_phase2 = 2;
    cfg.fed.batch_size = 8;
    cfg.fed.lr = 0.01;
    cfg.fed.warmup_epochs = 0;
    cfg.contrastive.batch = 2;
    cfg.contrastive.base.queue_capacity = 8;
    cfg.pretrain_aug = AugmentSpec::identity(AugmentPhase::kPretrain);
    cfg.finetune_aug = AugmentSpec::identity(AugmentPhase::kFinetune);
    cfg.arch.num_classes = cfg.data.classes;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("an experiment writes csv, summary and checkpoints") {
    TempDir dir("selffed_harness_run");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    RunResult res = run_experiment(cfg);

    CHECK(res.phase1_rounds == 2);
    CHECK(res.phase2_rounds == 2);
    CHECK(!std::isnan(res.final_accuracy));

    const std::string csv = slurp(res.csv_path);
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header ==
          "phase,round,selected,client_losses,agg_weights,global_loss,eval_accuracy,"
          "eval_recon,contrastive_loss,wall_ms");
    int rows = 0;
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);

    for (const char* name : {"round_1_0.sfwt", "round_1_1.sfwt", "round_2_0.sfwt",
                             "round_2_1.sfwt"}) {
        CHECK(fs::exists(dir.path / name));
    }

    const auto summary = nlohmann::json::parse(slurp(res.summary_path));
    CHECK(summary.at("schema_version") == 1);
    CHECK(summary.at("run_id") == res.run_id);
    CHECK(summary.at("rounds").at("phase1") == 2);
}

TEST_CASE("the summary config echo reproduces the experiment config") {
    TempDir dir("selffed_harness_echo");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    RunResult res = run_experiment(cfg);
    const auto summary = nlohmann::json::parse(slurp(res.summary_path));
    ExperimentConfig back = parse_config_text(summary.at("config_text").get<std::string>());
    CHECK(back == cfg);
}

TEST_CASE("identical seeds reproduce byte-identical outputs, any worker count") {
    TempDir da("selffed_harness_det_a");
    TempDir db("selffed_harness_det_b");
    TempDir dc("selffed_harness_det_c");
    ExperimentConfig a = tiny_experiment(da.str());
    ExperimentConfig b = tiny_experiment(db.str());
    ExperimentConfig c = tiny_experiment(dc.str());
    c.fed.workers = 4;

    RunResult ra = run_experiment(a);
    RunResult rb = run_experiment(b);
    RunResult rc = run_experiment(c);

    CHECK(csv_without_timing(slurp(ra.csv_path)) == csv_without_timing(slurp(rb.csv_path)));
    CHECK(csv_without_timing(slurp(ra.csv_path)) == csv_without_timing(slurp(rc.csv_path)));
    for (const char* name : {"round_1_0.sfwt", "round_2_1.sfwt"}) {
        CHECK(slurp((da.path / name).string()) == slurp((db.path / name).string()));
        CHECK(slurp((da.path / name).string()) == slurp((dc.path / name).string()));
    }

    // a different seed changes the stream
    TempDir dd("selffed_harness_det_d");
    ExperimentConfig d = tiny_experiment(dd.str(), 4);
    RunResult rd = run_experiment(d);
    CHECK(csv_without_timing(slurp(ra.csv_path)) != csv_without_timing(slurp(rd.csv_path)));
}

TEST_CASE("scratch baseline skips the first phase entirely") {
    TempDir dir("selffed_harness_scratch");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    cfg.mode = RunMode::kScratchBaseline;
    RunResult res = run_experiment(cfg);
    CHECK(res.phase1_rounds == 0);
    CHECK(res.phase2_rounds == 2);

    const std::string csv = slurp(res.csv_path);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
        if (!line.empty()) CHECK(line.substr(0, 2) == "2,");
    }
    CHECK(!fs::exists(dir.path / "round_1_0.sfwt"));
}

TEST_CASE("pretrain-only stops after phase one") {
    TempDir dir("selffed_harness_pre");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    cfg.mode = RunMode::kPretrainOnly;
    RunResult res = run_experiment(cfg);
    CHECK(res.phase1_rounds == 2);
    CHECK(res.phase2_rounds == 0);
}

TEST_CASE("comparing a run with itself gives zero deltas") {
    TempDir dir("selffed_harness_cmp");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    RunResult res = run_experiment(cfg);
    const auto rows = compare_runs({res.summary_path, res.summary_path});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].runs == 2);
    CHECK(rows[0].delta_vs_first == 0.0);
    const std::string table = render_comparison(rows);
    CHECK(table.find("full/selffed-normalized") != std::string::npos);
}

TEST_CASE("seed replicates of one condition average into one row") {
    TempDir d1("selffed_harness_avg1");
    TempDir d2("selffed_harness_avg2");
    TempDir d3("selffed_harness_avg3");
    RunResult r1 = run_experiment(tiny_experiment(d1.str(), 3));
    RunResult r2 = run_experiment(tiny_experiment(d2.str(), 4));
    ExperimentConfig other = tiny_experiment(d3.str(), 5);
    other.mode = RunMode::kScratchBaseline;
    RunResult r3 = run_experiment(other);

    const auto rows = compare_runs({r1.summary_path, r2.summary_path, r3.summary_path});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].runs == 2);
    const auto s1 = nlohmann::json::parse(slurp(r1.summary_path));
    const auto s2 = nlohmann::json::parse(slurp(r2.summary_path));
    const double want = (s1.at("final").at("accuracy").get<double>() +
                         s2.at("final").at("accuracy").get<double>()) /
                        2.0;
    CHECK(rows[0].mean_accuracy == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("summaries over different datasets refuse to compare") {
    TempDir d1("selffed_harness_inc1");
    TempDir d2("selffed_harness_inc2");
    RunResult r1 = run_experiment(tiny_experiment(d1.str()));
    ExperimentConfig other = tiny_experiment(d2.str());
    other.data.per_class = 14;
    RunResult r2 = run_experiment(other);
    CHECK_THROWS_AS(compare_runs({r1.summary_path, r2.summary_path}), IncompatibleRuns);
    CHECK_THROWS_AS(compare_runs({r1.summary_path}), IncompatibleRuns);
}

TEST_CASE("a beta sweep emits one summary per value") {
    TempDir dir("selffed_harness_sweep");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    cfg.fed.rounds_phase1 = 1;
    cfg.fed.rounds_phase2 = 1;
    const auto results = run_sweep(cfg, "beta", {0.9, 1.0}, dir.str() + "/sweep");
    REQUIRE(results.size() == 2);
    for (const auto& r : results) CHECK(fs::exists(r.summary_path));
    const auto sweep = nlohmann::json::parse(slurp(dir.str() + "/sweep/sweep_summary.json"));
    REQUIRE(sweep.size() == 2);
    CHECK(sweep[0].at("value") == 0.9);
    CHECK(sweep[1].at("value") == 1.0);
    CHECK_THROWS_AS(run_sweep(cfg, "bogus", {1.0}, dir.str() + "/sweep2"), ValidationError);
}

TEST_CASE("run ids are stable in content and sensitive to it") {
    ExperimentConfig a = tiny_experiment("x");
    ExperimentConfig b = tiny_experiment("x");
    CHECK(config_run_id(a) == config_run_id(b));
    b.fed.beta = 0.75;
    CHECK(config_run_id(a) != config_run_id(b));
}

TEST_CASE("full labels on a near-IID split reach 90% within the round budget") {
    // desk-scaled variant of the all-labels oracle: adaptive local steps on
    // a 16x16 task, every sample labeled, delta 100
    TempDir dir("selffed_harness_full_labels");
    ExperimentConfig cfg = default_config();
    cfg.seed = 9;
    cfg.mode = RunMode::kScratchBaseline;
    cfg.output_dir = dir.str();
    cfg.eval_every = 5;
    cfg.checkpoint_every = 0;
    cfg.arch.image_side = 16;
    cfg.arch.patch_side = 4;
    cfg.arch.embed_dim = 8;
    cfg.arch.stages = 2;
    cfg.arch.window = 2;
    cfg.arch.heads = 2;
    cfg.arch.proj_dim = 8;
    cfg.arch.proj_hidden = 16;
    cfg.arch.classifier_hidden = 16;
    cfg.data.per_class = 150;
    cfg.data.noise = 0.05;
    cfg.data.delta = 100.0;
    cfg.data.label_fraction = 1.0;
    cfg.data.calib_per_class = 15;
    cfg.fed.num_clients = 5;
    cfg.fed.clients_per_round = 5;
    cfg.fed.rounds_phase1 = 0;
    cfg.fed.rounds_phase2 = 80;
    cfg.fed.batch_size = 16;
    cfg.fed.lr_finetune = 3e-3;
    cfg.fed.use_adamw_finetune = true;
    cfg.fed.warmup_epochs = 0;
    cfg.fed.workers = 2;
    cfg.contrastive.server_step = false;
    cfg.pretrain_aug = AugmentSpec::identity(AugmentPhase::kPretrain);
    cfg.finetune_aug = AugmentSpec::identity(AugmentPhase::kFinetune);
    cfg.finetune_aug.flip_prob = 0.5;
    cfg.arch.num_classes = cfg.data.classes;

    RunResult res = run_experiment(cfg);
    // best accuracy along the trajectory counts as "reached"
    double best = 0.0;
    std::istringstream lines(slurp(res.csv_path));
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        std::istringstream fields(line);
        std::string f;
        for (int i = 0; i < 7 && std::getline(fields, f, ','); ++i) {
        }
        if (!f.empty()) best = std::max(best, std::stod(f));
    }
    CHECK(best >= 0.9);
}

TEST_CASE("raw-image views feed the server step without pre-training") {
    TempDir dir("selffed_harness_raw_views");
    ExperimentConfig cfg = tiny_experiment(dir.str());
    cfg.mode = RunMode::kScratchBaseline;
    cfg.contrastive.raw_views = true;
    RunResult res = run_experiment(cfg);
    CHECK(res.phase2_rounds == 2);
    // a contrastive loss was actually recorded
    const std::string csv = slurp(res.csv_path);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    bool saw_loss = false;
    while (std::getline(lines, line)) {
        std::istringstream fields(line);
        std::string f;
        for (int i = 0; i < 9 && std::getline(fields, f, ','); ++i) {
        }
        saw_loss = saw_loss || !f.empty();
    }
    CHECK(saw_loss);
}
