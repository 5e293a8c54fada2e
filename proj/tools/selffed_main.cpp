#include <cxxabi.h>

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "selffed/harness.hpp"

namespace {

std::string error_kind(const std::exception& e) {
    int status = 0;
    std::unique_ptr<char, void (*)(void*)> demangled(
        abi::__cxa_demangle(typeid(e).name(), nullptr, nullptr, &status), std::free);
    std::string name = (status == 0 && demangled) ? demangled.get() : typeid(e).name();
    const size_t cut = name.rfind("::");
    return cut == std::string::npos ? name : name.substr(cut + 2);
}

int cmd_run(const std::string& config_path, const std::string& out_override, int workers) {
    selffed::ExperimentConfig cfg = selffed::load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (workers > 0) cfg.fed.workers = workers;
    const selffed::RunResult r = selffed::run_experiment(cfg);
    std::cout << "run " << r.run_id << " finished in " << r.wall_seconds << " s\n"
              << "  rounds: phase1=" << r.phase1_rounds << " phase2=" << r.phase2_rounds << "\n"
              << "  final accuracy: " << r.final_accuracy << "\n"
              << "  csv:     " << r.csv_path << "\n"
              << "  summary: " << r.summary_path << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param,
              const std::vector<double>& values, const std::string& out_root, int workers) {
    selffed::ExperimentConfig cfg = selffed::load_config(config_path);
    if (workers > 0) cfg.fed.workers = workers;
    const std::string root = out_root.empty() ? cfg.output_dir + "_sweep" : out_root;
    const auto results = selffed::run_sweep(cfg, param, values, root);
    for (size_t i = 0; i < results.size(); ++i) {
        std::cout << param << "=" << values[i] << "  accuracy=" << results[i].final_accuracy
                  << "\n";
    }
    std::cout << "sweep summary: " << root << "/sweep_summary.json\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& summaries) {
    const auto rows = selffed::compare_runs(summaries);
    std::cout << selffed::render_comparison(rows);
    return 0;
}

int cmd_partition(double delta, int clients, const std::string& manifest_out,
                  const std::string& config_path, uint64_t seed) {
    selffed::ExperimentConfig cfg =
        config_path.empty() ? selffed::default_config() : selffed::load_config(config_path);
    if (config_path.empty()) cfg.seed = seed;
    selffed::Rng rng(selffed::mix_seed(cfg.seed, {0xda7aULL}));
    selffed::SynthSpec spec;
    spec.num_classes = cfg.data.classes;
    spec.per_class = cfg.data.per_class;
    spec.height = cfg.arch.image_side;
    spec.width = cfg.arch.image_side;
    spec.channels = cfg.arch.channels;
    spec.noise = cfg.data.noise;
    const selffed::Dataset data = cfg.data.source == "folder"
                                      ? selffed::load_folder(cfg.data.image_folder,
                                                             cfg.data.image_manifest,
                                                             cfg.arch.image_side,
                                                             cfg.arch.image_side,
                                                             cfg.arch.channels, cfg.data.classes)
                                      : selffed::synth_dataset(spec, rng);
    selffed::Rng part_rng(selffed::mix_seed(cfg.seed, {0xd161ULL}));
    const auto plan = selffed::dirichlet_partition(data, clients, delta, part_rng);
    std::ofstream f(manifest_out, std::ios::trunc);
    if (!f) {
        std::cerr << "cannot open " << manifest_out << "\n";
        return 1;
    }
    f << plan.to_manifest_json() << "\n";
    const auto rep = selffed::heterogeneity_score(plan, data);
    std::cout << "partitioned " << data.size() << " samples across " << clients
              << " clients (delta=" << delta << ")\n"
              << "  mean label entropy: " << rep.mean_entropy << "\n"
              << "  max pairwise TV:    " << rep.max_pairwise_tv << "\n"
              << "  heterogeneity:      " << rep.score << "\n"
              << "  manifest: " << manifest_out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"selffed: two-phase federated self-supervised learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int workers = 0;

    auto* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("config", config_path, "experiment config file")->required();
    run->add_option("--out", out_dir, "override the configured output directory");
    run->add_option("--workers", workers, "parallel client workers");

    std::string sweep_param = "beta";
    std::vector<double> sweep_values;
    std::string sweep_out;
    auto* sweep = app.add_subcommand("sweep", "re-run the experiment over a parameter grid");
    sweep->add_option("config", config_path, "experiment config file")->required();
    sweep->add_option("--param", sweep_param, "beta | delta | label_fraction");
    sweep->add_option("--values", sweep_values, "comma separated values")
        ->required()
        ->delimiter(',');
    sweep->add_option("--out", sweep_out, "sweep output root");
    sweep->add_option("--workers", workers, "parallel client workers");

    std::vector<std::string> summaries;
    auto* compare = app.add_subcommand("compare", "tabulate summary.json files side by side");
    compare->add_option("summaries", summaries, "summary.json paths")->required()->expected(-2);

    double delta = 0.5;
    int clients = 5;
    std::string manifest_out = "partition.json";
    std::string part_config;
    uint64_t part_seed = 0;
    auto* partition = app.add_subcommand("partition", "export a Dirichlet partition manifest");
    partition->add_option("--delta", delta, "Dirichlet concentration")->required();
    partition->add_option("--clients", clients, "number of clients")->required();
    partition->add_option("--manifest-out", manifest_out, "output JSON path")->required();
    partition->add_option("--config", part_config, "dataset config (defaults to synthetic)");
    partition->add_option("--seed", part_seed, "seed when no config is given");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, workers);
        if (sweep->parsed()) return cmd_sweep(config_path, sweep_param, sweep_values, sweep_out, workers);
        if (compare->parsed()) return cmd_compare(summaries);
        if (partition->parsed()) return cmd_partition(delta, clients, manifest_out, part_config, part_seed);
    } catch (const selffed::Error& e) {
        nlohmann::json err{{"error", error_kind(e)}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "{\"error\":\"unexpected\",\"message\":\"" << e.what() << "\"}\n";
        return 1;
    }
    return 0;
}
