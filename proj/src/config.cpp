#include "selffed/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace selffed {

const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::kFull: return "full";
        case RunMode::kPretrainOnly: return "pretrain-only";
        case RunMode::kFinetuneOnly: return "finetune-only";
        case RunMode::kScratchBaseline: return "scratch-baseline";
    }
    return "?";
}

const char* aggregation_name(AggregationMode m) {
    switch (m) {
        case AggregationMode::kFedAvg: return "fedavg";
        case AggregationMode::kSelfFedLiteral: return "selffed-literal";
        case AggregationMode::kSelfFedNormalized: return "selffed-normalized";
    }
    return "?";
}

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

struct RawConfig {
    std::map<std::pair<std::string, std::string>, std::string> values;
    mutable std::set<std::pair<std::string, std::string>> consumed;

    const std::string* find(const std::string& section, const std::string& key) const {
        auto it = values.find({section, key});
        if (it == values.end()) return nullptr;
        consumed.insert(it->first);
        return &it->second;
    }
};

RawConfig tokenize(const std::string& text) {
    RawConfig raw;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ParseError("line " + std::to_string(lineno) + ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty section");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
        if (!raw.values.emplace(std::make_pair(section, key), value).second) {
            throw ParseError("duplicate key '" + key + "' in section [" + section + "]");
        }
    }
    return raw;
}

std::string field_name(const std::string& section, const std::string& key) {
    return section.empty() ? key : "[" + section + "] " + key;
}

int64_t to_i64(const std::string& s, const std::string& field) {
    int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ValidationError(field + ": expected an integer, got '" + s + "'");
    }
    return v;
}

uint64_t to_u64(const std::string& s, const std::string& field) {
    uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ValidationError(field + ": expected an unsigned integer, got '" + s + "'");
    }
    return v;
}

double to_f64(const std::string& s, const std::string& field) {
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ValidationError(field + ": expected a number, got '" + s + "'");
    }
    return v;
}

bool to_bool(const std::string& s, const std::string& field) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ValidationError(field + ": expected true or false, got '" + s + "'");
}

std::vector<double> to_list(const std::string& s, const std::string& field) {
    std::vector<double> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_f64(item, field));
    }
    return out;
}

class Loader {
public:
    explicit Loader(const RawConfig& raw) : raw_(raw) {}

    void i64(const std::string& sec, const std::string& key, int64_t& dst) {
        if (const auto* v = raw_.find(sec, key)) dst = to_i64(*v, field_name(sec, key));
    }
    void u64(const std::string& sec, const std::string& key, uint64_t& dst) {
        if (const auto* v = raw_.find(sec, key)) dst = to_u64(*v, field_name(sec, key));
    }
    void f64(const std::string& sec, const std::string& key, double& dst) {
        if (const auto* v = raw_.find(sec, key)) dst = to_f64(*v, field_name(sec, key));
    }
    void boolean(const std::string& sec, const std::string& key, bool& dst) {
        if (const auto* v = raw_.find(sec, key)) dst = to_bool(*v, field_name(sec, key));
    }
    void str(const std::string& sec, const std::string& key, std::string& dst) {
        if (const auto* v = raw_.find(sec, key)) dst = *v;
    }
    void list(const std::string& sec, const std::string& key, std::vector<double>& dst) {
        if (const auto* v = raw_.find(sec, key)) dst = to_list(*v, field_name(sec, key));
    }

private:
    const RawConfig& raw_;
};

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    // masking ratio 0.6 and beta 0.95 are the published operating point;
    // theta and the temperature are artifact defaults
    cfg.mask_ratio = 0.6;
    cfg.fed.beta = 0.95;
    cfg.contrastive.base.target_decay = 0.99;
    cfg.contrastive.base.temperature = 0.2;

    cfg.pretrain_aug = AugmentSpec::identity(AugmentPhase::kPretrain);
    cfg.pretrain_aug.flip_prob = 0.5;
    cfg.pretrain_aug.scale_lo = 1.0;
    cfg.pretrain_aug.scale_hi = 1.5;
    cfg.pretrain_aug.jitter = 0.4;

    cfg.finetune_aug = AugmentSpec::identity(AugmentPhase::kFinetune);
    cfg.finetune_aug.flip_prob = 0.5;
    cfg.finetune_aug.scale_lo = 1.0;
    cfg.finetune_aug.scale_hi = 1.2;
    cfg.finetune_aug.rotation_degrees = 10.0;
    return cfg;
}

void ExperimentConfig::validate() const {
    arch.validate();
    fed.validate();
    contrastive.base.validate();
    if (mask_ratio < 0.0 || mask_ratio > 1.0) {
        throw ValidationError("[mask] ratio outside [0,1]");
    }
    if (data.source != "synthetic" && data.source != "folder") {
        throw ValidationError("[data] source must be 'synthetic' or 'folder'");
    }
    if (data.source == "folder" && (data.image_folder.empty() || data.image_manifest.empty())) {
        throw ValidationError("[data] folder source needs image_folder and image_manifest");
    }
    if (data.classes < 2) throw ValidationError("[data] classes must be >= 2");
    if (data.per_class < 1) throw ValidationError("[data] per_class must be >= 1");
    if (data.noise < 0.0) throw ValidationError("[data] noise must be >= 0");
    if (data.test_fraction < 0.0 || data.test_fraction >= 1.0) {
        throw ValidationError("[data] test_fraction outside [0,1)");
    }
    if (data.calib_per_class < 1) throw ValidationError("[data] calib_per_class must be >= 1");
    if (data.delta <= 0.0) throw ValidationError("[data] delta must be > 0");
    if (data.label_fraction <= 0.0 || data.label_fraction > 1.0) {
        throw ValidationError("[data] label_fraction outside (0,1]");
    }
    if (eval_every < 0 || checkpoint_every < 0) {
        throw ValidationError("eval_every and checkpoint_every must be >= 0");
    }
    if (contrastive.batch < 1) throw ValidationError("[contrastive] batch must be >= 1");
    if (contrastive.step_every < 0) throw ValidationError("[contrastive] step_every must be >= 0");
    if (contrastive.lr <= 0.0) throw ValidationError("[contrastive] lr must be > 0");
    if (contrastive.pool_capacity < 1) throw ValidationError("[contrastive] pool_capacity must be >= 1");
    if (contrastive.pool_per_client < 0) throw ValidationError("[contrastive] pool_per_client must be >= 0");
    pretrain_aug.validate(arch.image_side);
    finetune_aug.validate(arch.image_side);
    if (mode == RunMode::kFinetuneOnly && init_checkpoint.empty()) {
        throw ValidationError("finetune-only runs need init_checkpoint");
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    const RawConfig raw = tokenize(text);
    ExperimentConfig cfg = default_config();
    Loader ld(raw);

    const std::string* seed_str = raw.find("", "seed");
    if (!seed_str) throw ValidationError("seed is required; there is no implicit entropy");
    cfg.seed = to_u64(*seed_str, "seed");

    std::string mode = "full";
    ld.str("", "mode", mode);
    if (mode == "full") cfg.mode = RunMode::kFull;
    else if (mode == "pretrain-only") cfg.mode = RunMode::kPretrainOnly;
    else if (mode == "finetune-only") cfg.mode = RunMode::kFinetuneOnly;
    else if (mode == "scratch-baseline") cfg.mode = RunMode::kScratchBaseline;
    else throw ValidationError("mode: unknown value '" + mode + "'");
    ld.str("", "output_dir", cfg.output_dir);
    ld.str("", "init_checkpoint", cfg.init_checkpoint);
    ld.i64("", "eval_every", cfg.eval_every);
    ld.i64("", "checkpoint_every", cfg.checkpoint_every);

    ld.i64("arch", "image_side", cfg.arch.image_side);
    ld.i64("arch", "channels", cfg.arch.channels);
    ld.i64("arch", "patch_side", cfg.arch.patch_side);
    ld.i64("arch", "embed_dim", cfg.arch.embed_dim);
    ld.i64("arch", "stages", cfg.arch.stages);
    ld.i64("arch", "blocks_per_stage", cfg.arch.blocks_per_stage);
    ld.i64("arch", "decoder_blocks_per_stage", cfg.arch.decoder_blocks_per_stage);
    ld.i64("arch", "window", cfg.arch.window);
    ld.i64("arch", "heads", cfg.arch.heads);
    ld.i64("arch", "mlp_ratio", cfg.arch.mlp_ratio);
    ld.boolean("arch", "use_mask_token", cfg.arch.use_mask_token);
    ld.i64("arch", "proj_dim", cfg.arch.proj_dim);
    ld.i64("arch", "proj_hidden", cfg.arch.proj_hidden);
    ld.i64("arch", "classifier_hidden", cfg.arch.classifier_hidden);

    ld.str("data", "source", cfg.data.source);
    ld.i64("data", "classes", cfg.data.classes);
    ld.i64("data", "per_class", cfg.data.per_class);
    ld.f64("data", "noise", cfg.data.noise);
    ld.str("data", "image_folder", cfg.data.image_folder);
    ld.str("data", "image_manifest", cfg.data.image_manifest);
    ld.f64("data", "test_fraction", cfg.data.test_fraction);
    ld.i64("data", "calib_per_class", cfg.data.calib_per_class);
    ld.f64("data", "delta", cfg.data.delta);
    ld.f64("data", "label_fraction", cfg.data.label_fraction);

    ld.i64("federation", "clients", cfg.fed.num_clients);
    ld.i64("federation", "clients_per_round", cfg.fed.clients_per_round);
    ld.i64("federation", "rounds_phase1", cfg.fed.rounds_phase1);
    ld.i64("federation", "rounds_phase2", cfg.fed.rounds_phase2);
    ld.i64("federation", "local_epochs", cfg.fed.local_epochs);
    ld.i64("federation", "batch_size", cfg.fed.batch_size);
    ld.f64("federation", "lr", cfg.fed.lr);
    ld.f64("federation", "lr_finetune", cfg.fed.lr_finetune);
    if (const auto* v = raw.find("federation", "beta")) {
        cfg.fed.beta = to_f64(*v, "[federation] beta");
        if (cfg.fed.beta <= 0.0 || cfg.fed.beta > 1.0) {
            throw ValidationError("[federation] beta must lie in (0, 1], got " + *v);
        }
    }
    if (const auto* v = raw.find("federation", "aggregation")) {
        if (*v == "fedavg") cfg.fed.aggregation = AggregationMode::kFedAvg;
        else if (*v == "selffed-literal") cfg.fed.aggregation = AggregationMode::kSelfFedLiteral;
        else if (*v == "selffed-normalized") cfg.fed.aggregation = AggregationMode::kSelfFedNormalized;
        else throw ValidationError("[federation] aggregation: unknown value '" + *v + "'");
    }
    if (const auto* v = raw.find("federation", "selection")) {
        if (*v == "uniform") cfg.fed.selection = SelectionSchedule::kUniform;
        else if (*v == "skewed") cfg.fed.selection = SelectionSchedule::kSkewed;
        else throw ValidationError("[federation] selection: unknown value '" + *v + "'");
    }
    ld.list("federation", "selection_weights", cfg.fed.selection_weights);
    if (const auto* v = raw.find("federation", "optimizer")) {
        if (*v == "sgd") cfg.fed.use_adamw = false;
        else if (*v == "adamw") cfg.fed.use_adamw = true;
        else throw ValidationError("[federation] optimizer: unknown value '" + *v + "'");
        cfg.fed.use_adamw_finetune = cfg.fed.use_adamw;
    }
    if (const auto* v = raw.find("federation", "optimizer_finetune")) {
        if (*v == "sgd") cfg.fed.use_adamw_finetune = false;
        else if (*v == "adamw") cfg.fed.use_adamw_finetune = true;
        else throw ValidationError("[federation] optimizer_finetune: unknown value '" + *v + "'");
    }
    ld.i64("federation", "warmup_epochs", cfg.fed.warmup_epochs);
    ld.i64("federation", "workers", cfg.fed.workers);

    ld.f64("mask", "ratio", cfg.mask_ratio);
    ld.boolean("mask", "per_window", cfg.mask_per_window);

    ld.f64("contrastive", "temperature", cfg.contrastive.base.temperature);
    ld.i64("contrastive", "queue_capacity", cfg.contrastive.base.queue_capacity);
    ld.f64("contrastive", "target_decay", cfg.contrastive.base.target_decay);
    ld.boolean("contrastive", "include_positive", cfg.contrastive.base.include_positive);
    ld.boolean("contrastive", "server_step", cfg.contrastive.server_step);
    ld.i64("contrastive", "step_every", cfg.contrastive.step_every);
    ld.i64("contrastive", "batch", cfg.contrastive.batch);
    ld.f64("contrastive", "lr", cfg.contrastive.lr);
    ld.i64("contrastive", "pool_capacity", cfg.contrastive.pool_capacity);
    ld.i64("contrastive", "pool_per_client", cfg.contrastive.pool_per_client);
    ld.boolean("contrastive", "raw_views", cfg.contrastive.raw_views);

    ld.f64("augment.pretrain", "flip_prob", cfg.pretrain_aug.flip_prob);
    ld.i64("augment.pretrain", "crop", cfg.pretrain_aug.crop);
    ld.f64("augment.pretrain", "scale_lo", cfg.pretrain_aug.scale_lo);
    ld.f64("augment.pretrain", "scale_hi", cfg.pretrain_aug.scale_hi);
    ld.f64("augment.pretrain", "jitter", cfg.pretrain_aug.jitter);
    ld.boolean("augment.pretrain", "bilinear", cfg.pretrain_aug.bilinear);

    ld.f64("augment.finetune", "flip_prob", cfg.finetune_aug.flip_prob);
    ld.i64("augment.finetune", "crop", cfg.finetune_aug.crop);
    ld.f64("augment.finetune", "scale_lo", cfg.finetune_aug.scale_lo);
    ld.f64("augment.finetune", "scale_hi", cfg.finetune_aug.scale_hi);
    ld.f64("augment.finetune", "rotation", cfg.finetune_aug.rotation_degrees);
    ld.boolean("augment.finetune", "bilinear", cfg.finetune_aug.bilinear);

    for (const auto& [key, value] : raw.values) {
        if (!raw.consumed.contains(key)) {
            throw ValidationError("unknown key " + field_name(key.first, key.second));
        }
    }

    cfg.arch.num_classes = cfg.data.classes;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string render_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "seed = " << cfg.seed << "\n";
    os << "mode = " << run_mode_name(cfg.mode) << "\n";
    os << "output_dir = " << cfg.output_dir << "\n";
    if (!cfg.init_checkpoint.empty()) os << "init_checkpoint = " << cfg.init_checkpoint << "\n";
    os << "eval_every = " << cfg.eval_every << "\n";
    os << "checkpoint_every = " << cfg.checkpoint_every << "\n";

    os << "\n[arch]\n";
    os << "image_side = " << cfg.arch.image_side << "\n";
    os << "channels = " << cfg.arch.channels << "\n";
    os << "patch_side = " << cfg.arch.patch_side << "\n";
    os << "embed_dim = " << cfg.arch.embed_dim << "\n";
    os << "stages = " << cfg.arch.stages << "\n";
    os << "blocks_per_stage = " << cfg.arch.blocks_per_stage << "\n";
    os << "decoder_blocks_per_stage = " << cfg.arch.decoder_blocks_per_stage << "\n";
    os << "window = " << cfg.arch.window << "\n";
    os << "heads = " << cfg.arch.heads << "\n";
    os << "mlp_ratio = " << cfg.arch.mlp_ratio << "\n";
    os << "use_mask_token = " << (cfg.arch.use_mask_token ? "true" : "false") << "\n";
    os << "proj_dim = " << cfg.arch.proj_dim << "\n";
    os << "proj_hidden = " << cfg.arch.proj_hidden << "\n";
    os << "classifier_hidden = " << cfg.arch.classifier_hidden << "\n";

    os << "\n[data]\n";
    os << "source = " << cfg.data.source << "\n";
    os << "classes = " << cfg.data.classes << "\n";
    os << "per_class = " << cfg.data.per_class << "\n";
    os << "noise = " << fmt_double(cfg.data.noise) << "\n";
    if (!cfg.data.image_folder.empty()) os << "image_folder = " << cfg.data.image_folder << "\n";
    if (!cfg.data.image_manifest.empty()) {
        os << "image_manifest = " << cfg.data.image_manifest << "\n";
    }
    os << "test_fraction = " << fmt_double(cfg.data.test_fraction) << "\n";
    os << "calib_per_class = " << cfg.data.calib_per_class << "\n";
    os << "delta = " << fmt_double(cfg.data.delta) << "\n";
    os << "label_fraction = " << fmt_double(cfg.data.label_fraction) << "\n";

    os << "\n[federation]\n";
    os << "clients = " << cfg.fed.num_clients << "\n";
    os << "clients_per_round = " << cfg.fed.clients_per_round << "\n";
    os << "rounds_phase1 = " << cfg.fed.rounds_phase1 << "\n";
    os << "rounds_phase2 = " << cfg.fed.rounds_phase2 << "\n";
    os << "local_epochs = " << cfg.fed.local_epochs << "\n";
    os << "batch_size = " << cfg.fed.batch_size << "\n";
    os << "lr = " << fmt_double(cfg.fed.lr) << "\n";
    os << "lr_finetune = " << fmt_double(cfg.fed.lr_finetune) << "\n";
    os << "beta = " << fmt_double(cfg.fed.beta) << "\n";
    os << "aggregation = " << aggregation_name(cfg.fed.aggregation) << "\n";
    os << "selection = "
       << (cfg.fed.selection == SelectionSchedule::kUniform ? "uniform" : "skewed") << "\n";
    if (!cfg.fed.selection_weights.empty()) {
        os << "selection_weights = ";
        for (size_t i = 0; i < cfg.fed.selection_weights.size(); ++i) {
            if (i) os << ",";
            os << fmt_double(cfg.fed.selection_weights[i]);
        }
        os << "\n";
    }
    os << "optimizer = " << (cfg.fed.use_adamw ? "adamw" : "sgd") << "\n";
    os << "optimizer_finetune = " << (cfg.fed.use_adamw_finetune ? "adamw" : "sgd") << "\n";
    os << "warmup_epochs = " << cfg.fed.warmup_epochs << "\n";
    os << "workers = " << cfg.fed.workers << "\n";

    os << "\n[mask]\n";
    os << "ratio = " << fmt_double(cfg.mask_ratio) << "\n";
    os << "per_window = " << (cfg.mask_per_window ? "true" : "false") << "\n";

    os << "\n[contrastive]\n";
    os << "temperature = " << fmt_double(cfg.contrastive.base.temperature) << "\n";
    os << "queue_capacity = " << cfg.contrastive.base.queue_capacity << "\n";
    os << "target_decay = " << fmt_double(cfg.contrastive.base.target_decay) << "\n";
    os << "include_positive = " << (cfg.contrastive.base.include_positive ? "true" : "false") << "\n";
    os << "server_step = " << (cfg.contrastive.server_step ? "true" : "false") << "\n";
    os << "step_every = " << cfg.contrastive.step_every << "\n";
    os << "batch = " << cfg.contrastive.batch << "\n";
    os << "lr = " << fmt_double(cfg.contrastive.lr) << "\n";
    os << "pool_capacity = " << cfg.contrastive.pool_capacity << "\n";
    os << "pool_per_client = " << cfg.contrastive.pool_per_client << "\n";
    os << "raw_views = " << (cfg.contrastive.raw_views ? "true" : "false") << "\n";

    os << "\n[augment.pretrain]\n";
    os << "flip_prob = " << fmt_double(cfg.pretrain_aug.flip_prob) << "\n";
    os << "crop = " << cfg.pretrain_aug.crop << "\n";
    os << "scale_lo = " << fmt_double(cfg.pretrain_aug.scale_lo) << "\n";
    os << "scale_hi = " << fmt_double(cfg.pretrain_aug.scale_hi) << "\n";
    os << "jitter = " << fmt_double(cfg.pretrain_aug.jitter) << "\n";
    os << "bilinear = " << (cfg.pretrain_aug.bilinear ? "true" : "false") << "\n";

    os << "\n[augment.finetune]\n";
    os << "flip_prob = " << fmt_double(cfg.finetune_aug.flip_prob) << "\n";
    os << "crop = " << cfg.finetune_aug.crop << "\n";
    os << "scale_lo = " << fmt_double(cfg.finetune_aug.scale_lo) << "\n";
    os << "scale_hi = " << fmt_double(cfg.finetune_aug.scale_hi) << "\n";
    os << "rotation = " << fmt_double(cfg.finetune_aug.rotation_degrees) << "\n";
    os << "bilinear = " << (cfg.finetune_aug.bilinear ? "true" : "false") << "\n";
    return os.str();
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return render_config(a) == render_config(b);
}

}  // namespace selffed
