#pragma once

#include <string>

#include "selffed/contrastive.hpp"
#include "selffed/federation.hpp"
#include "selffed/swin.hpp"

namespace selffed {

enum class RunMode { kFull, kPretrainOnly, kFinetuneOnly, kScratchBaseline };

const char* run_mode_name(RunMode m);
const char* aggregation_name(AggregationMode m);

struct DataConfig {
    std::string source = "synthetic";  // synthetic | folder
    int64_t classes = 2;
    int64_t per_class = 250;
    double noise = 0.05;
    std::string image_folder;
    std::string image_manifest;
    double test_fraction = 0.2;
    int64_t calib_per_class = 20;  // server-side probe calibration held out of training
    double delta = 0.5;
    double label_fraction = 0.1;
};

struct ContrastiveRuntime {
    ContrastiveConfig base;  // temperature, queue capacity, target decay, denominator mode
    bool server_step = true;
    int64_t step_every = 1;  // consistency step cadence, in fine-tuning rounds
    int64_t batch = 8;
    double lr = 1e-3;
    int64_t pool_capacity = 64;
    int64_t pool_per_client = 2;
    bool raw_views = false;  // view sources: decoder outputs (default) or raw images
};

/// Everything one experiment needs, parsed from a flat sectioned key-value
/// file. The seed is mandatory; every other key has a documented default.
struct ExperimentConfig {
    uint64_t seed = 0;
    RunMode mode = RunMode::kFull;
    std::string output_dir = "selffed_out";
    std::string init_checkpoint;  // optional warm start for finetune-only runs
    int64_t eval_every = 1;
    int64_t checkpoint_every = 1;
    double mask_ratio = 0.6;
    bool mask_per_window = false;

    ArchConfig arch;
    DataConfig data;
    FederationConfig fed;
    ContrastiveRuntime contrastive;
    AugmentSpec pretrain_aug;
    AugmentSpec finetune_aug;

    void validate() const;
};

/// Defaults for everything except the seed.
ExperimentConfig default_config();

/// Strict parse: unknown keys, duplicate keys, bad types and out-of-range
/// values all fail loudly with the offending field named.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical text form; parse_config_text(render_config(c)) reproduces c
/// exactly (doubles rendered shortest-round-trip).
std::string render_config(const ExperimentConfig& cfg);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace selffed
