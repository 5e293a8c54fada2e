#include "selffed/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace selffed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCsvHeader =
    "phase,round,selected,client_losses,agg_weights,global_loss,eval_accuracy,eval_recon,"
    "contrastive_loss,wall_ms";

std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename T, typename Fn>
std::string join(const std::vector<T>& vs, Fn fmt) {
    std::string out;
    for (size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ";";
        out += fmt(vs[i]);
    }
    return out;
}

std::string csv_row(const RoundReport& r) {
    std::ostringstream os;
    os << r.phase << "," << r.round << ","
       << join(r.selected, [](int64_t v) { return std::to_string(v); }) << ","
       << join(r.client_losses, fmt_double) << "," << join(r.agg_weights, fmt_double) << ","
       << fmt_double(r.global_loss) << "," << fmt_double(r.eval_accuracy) << ","
       << fmt_double(r.eval_recon) << ","
       << fmt_double(r.contrastive_loss) << "," << fmt_double(r.wall_ms);
    return os.str();
}

json dataset_fingerprint(const ExperimentConfig& cfg) {
    return json{{"source", cfg.data.source},
                {"classes", cfg.data.classes},
                {"per_class", cfg.data.per_class},
                {"noise", cfg.data.noise},
                {"image_side", cfg.arch.image_side},
                {"channels", cfg.arch.channels},
                {"test_fraction", cfg.data.test_fraction}};
}

struct BuiltData {
    Dataset train;   // partitioned among clients
    Dataset calib;   // small labeled server holdout for the probe
    Dataset test;
    PartitionPlan plan;
};

BuiltData build_data(const ExperimentConfig& cfg) {
    Rng data_rng(mix_seed(cfg.seed, {0xda7aULL}));
    Dataset all;
    if (cfg.data.source == "synthetic") {
        SynthSpec spec;
        spec.num_classes = cfg.data.classes;
        spec.per_class = cfg.data.per_class;
        spec.height = cfg.arch.image_side;
        spec.width = cfg.arch.image_side;
        spec.channels = cfg.arch.channels;
        spec.noise = cfg.data.noise;
        all = synth_dataset(spec, data_rng);
    } else {
        all = load_folder(cfg.data.image_folder, cfg.data.image_manifest, cfg.arch.image_side,
                          cfg.arch.image_side, cfg.arch.channels, cfg.data.classes);
    }

    Rng split_rng(mix_seed(cfg.seed, {0x5b117ULL}));
    auto [train_all, test] = split_train_test(all, cfg.data.test_fraction, split_rng);

    // peel the probe calibration set off the training split, stratified
    BuiltData out;
    out.test = std::move(test);
    out.calib.num_classes = out.test.num_classes;
    out.train.num_classes = out.test.num_classes;
    out.calib.split = SplitTag::kTrain;
    std::vector<int64_t> calib_left(static_cast<size_t>(cfg.data.classes),
                                    cfg.data.calib_per_class);
    Rng calib_rng(mix_seed(cfg.seed, {0xca11bULL}));
    std::vector<size_t> order(train_all.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    calib_rng.shuffle(order);
    for (size_t i : order) {
        auto& left = calib_left[static_cast<size_t>(train_all.labels[i])];
        Dataset& dst = left > 0 ? out.calib : out.train;
        if (left > 0) --left;
        dst.images.push_back(train_all.images[i]);
        dst.labels.push_back(train_all.labels[i]);
        dst.ids.push_back(train_all.ids[i]);
    }

    Rng part_rng(mix_seed(cfg.seed, {0xd161ULL}));
    out.plan = dirichlet_partition(out.train, cfg.fed.num_clients, cfg.data.delta, part_rng);
    return out;
}

}  // namespace

std::string config_run_id(const ExperimentConfig& cfg) {
    // FNV-1a over the canonical text
    const std::string text = render_config(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    fs::create_directories(cfg.output_dir);
    BuiltData data = build_data(cfg);
    const SampleStore store(data.train);

    Swin model(cfg.arch);
    Rng init_rng(mix_seed(cfg.seed, {0x111117ULL}));
    ModelParams init = model.init_params(init_rng);
    if (!cfg.init_checkpoint.empty()) {
        init.assign_from(ModelParams::load(cfg.init_checkpoint));
    }

    std::vector<ClientState> clients;
    for (int64_t m = 0; m < cfg.fed.num_clients; ++m) {
        ClientState c;
        c.id = m;
        c.params = init;
        const auto& shard = data.plan.assignment[static_cast<size_t>(m)];
        std::vector<int64_t> shard_labels;
        shard_labels.reserve(shard.size());
        for (uint64_t id : shard) shard_labels.push_back(store.label(id));
        Rng label_rng(mix_seed(cfg.seed, {0x1abe1ULL, static_cast<uint64_t>(m)}));
        LabelSplit split = subsample_labels(shard, shard_labels, cfg.data.label_fraction, label_rng);
        c.labeled_ids = std::move(split.labeled);
        // every sample can drive reconstruction; hidden-label samples only that
        c.unlabeled_ids = shard;
        std::sort(c.unlabeled_ids.begin(), c.unlabeled_ids.end());
        clients.push_back(std::move(c));
    }

    ServerState server = ServerState::make(init, cfg.contrastive.base.target_decay,
                                           cfg.contrastive.base.queue_capacity,
                                           cfg.contrastive.pool_capacity);
    if (cfg.contrastive.raw_views) {
        Rng pool_rng(mix_seed(cfg.seed, {0x9001ULL}));
        const int64_t n = std::min<int64_t>(cfg.contrastive.pool_capacity,
                                            static_cast<int64_t>(data.train.size()));
        for (int64_t i = 0; i < n; ++i) {
            server.pool_push(data.train.images[static_cast<size_t>(
                pool_rng.below(data.train.size()))]);
        }
    }

    EvalContext eval = EvalContext::build(model, data.calib, data.test, cfg.mask_ratio,
                                          /*recon_subset=*/16, cfg.seed);

    ProtocolOptions opt;
    opt.fed = cfg.fed;
    opt.mask_ratio = cfg.mask_ratio;
    opt.mask_per_window = cfg.mask_per_window;
    opt.pretrain_aug = cfg.pretrain_aug;
    opt.finetune_aug = cfg.finetune_aug;
    opt.contrastive = cfg.contrastive.base;
    opt.server_step_enabled = cfg.contrastive.server_step;
    opt.server_step_every = cfg.contrastive.step_every;
    opt.contrastive_batch = cfg.contrastive.batch;
    opt.contrastive_lr = cfg.contrastive.lr;
    opt.eval_every = cfg.eval_every;
    opt.pool_per_client = cfg.contrastive.raw_views ? 0 : cfg.contrastive.pool_per_client;
    opt.seed = cfg.seed;

    RunResult result;
    result.output_dir = cfg.output_dir;
    result.csv_path = (fs::path(cfg.output_dir) / "runs.csv").string();
    result.summary_path = (fs::path(cfg.output_dir) / "summary.json").string();
    result.run_id = config_run_id(cfg);

    std::ofstream csv(result.csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + result.csv_path);
    csv << kCsvHeader << "\n";

    double last_acc = std::numeric_limits<double>::quiet_NaN();
    double last_recon = std::numeric_limits<double>::quiet_NaN();
    RoundCallback on_round = [&](const RoundReport& rep, const ModelParams& global) {
        csv << csv_row(rep) << "\n";
        csv.flush();
        if (!std::isnan(rep.eval_accuracy)) last_acc = rep.eval_accuracy;
        if (!std::isnan(rep.eval_recon)) last_recon = rep.eval_recon;
        if (cfg.checkpoint_every > 0 && rep.round % cfg.checkpoint_every == 0) {
            const std::string name =
                "round_" + std::to_string(rep.phase) + "_" + std::to_string(rep.round) + ".sfwt";
            global.save((fs::path(cfg.output_dir) / name).string());
        }
    };

    const bool do_phase1 =
        cfg.mode == RunMode::kFull || cfg.mode == RunMode::kPretrainOnly;
    const bool do_phase2 = cfg.mode != RunMode::kPretrainOnly;

    if (do_phase1) {
        const auto reports = run_phase1(model, store, opt, clients, server, &eval, on_round);
        result.phase1_rounds = static_cast<int64_t>(reports.size());
    }
    if (do_phase2) {
        const auto reports = run_phase2(model, store, opt, clients, server, &eval, on_round);
        result.phase2_rounds = static_cast<int64_t>(reports.size());
    }
    csv.close();

    result.final_accuracy = last_acc;
    result.final_recon = last_recon;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json summary;
    summary["schema_version"] = 1;
    summary["run_id"] = result.run_id;
    summary["mode"] = run_mode_name(cfg.mode);
    summary["seed"] = cfg.seed;
    summary["dataset"] = dataset_fingerprint(cfg);
    summary["conditions"] = {{"delta", cfg.data.delta},
                             {"label_fraction", cfg.data.label_fraction},
                             {"beta", cfg.fed.beta},
                             {"aggregation", aggregation_name(cfg.fed.aggregation)}};
    summary["rounds"] = {{"phase1", result.phase1_rounds}, {"phase2", result.phase2_rounds}};
    summary["final"] = {{"accuracy", result.final_accuracy}, {"reconstruction", result.final_recon}};
    summary["config_text"] = render_config(cfg);
    summary["wall_seconds"] = result.wall_seconds;

    std::ofstream sf(result.summary_path, std::ios::trunc);
    if (!sf) throw IoError("cannot open " + result.summary_path);
    sf << summary.dump(2) << "\n";
    return result;
}

std::vector<RunResult> run_sweep(const ExperimentConfig& base, const std::string& param,
                                 const std::vector<double>& values, const std::string& out_root) {
    if (values.empty()) throw ValidationError("sweep needs at least one value");
    fs::create_directories(out_root);
    std::vector<RunResult> results;
    json sweep = json::array();
    for (double v : values) {
        ExperimentConfig cfg = base;
        if (param == "beta") cfg.fed.beta = v;
        else if (param == "delta") cfg.data.delta = v;
        else if (param == "label_fraction") cfg.data.label_fraction = v;
        else throw ValidationError("sweep supports beta, delta and label_fraction; got " + param);

        std::string tag = fmt_double(v);
        std::replace(tag.begin(), tag.end(), '.', 'p');
        cfg.output_dir = (fs::path(out_root) / (param + "_" + tag)).string();
        RunResult r = run_experiment(cfg);
        sweep.push_back({{"param", param},
                         {"value", v},
                         {"accuracy", r.final_accuracy},
                         {"summary", r.summary_path}});
        results.push_back(std::move(r));
    }
    std::ofstream f(fs::path(out_root) / "sweep_summary.json", std::ios::trunc);
    f << sweep.dump(2) << "\n";
    return results;
}

std::vector<CompareRow> compare_runs(const std::vector<std::string>& summary_paths) {
    if (summary_paths.size() < 2) throw IncompatibleRuns("compare needs at least two summaries");
    std::vector<json> summaries;
    for (const auto& p : summary_paths) {
        std::ifstream f(p);
        if (!f) throw IoError("cannot open summary: " + p);
        json j;
        f >> j;
        summaries.push_back(std::move(j));
    }
    const json fingerprint = summaries[0].at("dataset");
    for (const auto& s : summaries) {
        if (s.at("dataset") != fingerprint) {
            throw IncompatibleRuns("summaries describe different datasets");
        }
    }

    struct Key {
        std::string method;
        double delta, label_fraction, beta;
        bool operator<(const Key& o) const {
            return std::tie(method, delta, label_fraction, beta) <
                   std::tie(o.method, o.delta, o.label_fraction, o.beta);
        }
    };
    std::map<Key, std::vector<double>> groups;
    std::vector<Key> order;
    for (const auto& s : summaries) {
        const auto& c = s.at("conditions");
        Key k{std::string(s.at("mode")) + "/" + std::string(c.at("aggregation")),
              c.at("delta").get<double>(), c.at("label_fraction").get<double>(),
              c.at("beta").get<double>()};
        if (!groups.contains(k)) order.push_back(k);
        groups[k].push_back(s.at("final").at("accuracy").get<double>());
    }

    std::vector<CompareRow> rows;
    double first_mean = 0.0;
    for (size_t i = 0; i < order.size(); ++i) {
        const auto& k = order[i];
        const auto& accs = groups.at(k);
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        if (i == 0) first_mean = mean;
        rows.push_back({k.method, k.delta, k.label_fraction, k.beta,
                        static_cast<int>(accs.size()), mean, mean - first_mean});
    }
    return rows;
}

std::string render_comparison(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os << "method                          delta   labels  beta    runs  accuracy  delta-vs-first\n";
    for (const auto& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-30s  %-6g  %-6g  %-6g  %-4d  %-8.4f  %+.4f\n",
                      r.method.c_str(), r.delta, r.label_fraction, r.beta, r.runs,
                      r.mean_accuracy, r.delta_vs_first);
        os << line;
    }
    return os.str();
}

std::string csv_without_timing(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        const size_t cut = line.rfind(',');
        out << (cut == std::string::npos ? line : line.substr(0, cut)) << "\n";
    }
    return out.str();
}

}  // namespace selffed
