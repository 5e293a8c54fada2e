// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances and budgets are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "gradcheck_util.hpp"
#include "json.hpp"
#include "selffed/contrastive.hpp"
#include "selffed/harness.hpp"
#include "selffed/losses.hpp"
#include "selffed/probe.hpp"

using namespace selffed;
namespace fs = std::filesystem;

namespace {

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw CheckFailure(what);
}

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- criterion 1

void primitive_gradients() {
    Rng rng(0xACC1);
    const int trials = 100;
    const double tol = 1e-4;
    using gradcheck::probe_scalar;
    using gradcheck::random_tensor;
    using gradcheck::random_tensor_off_kink;

    auto unary = [&](const char* name, auto make_op, bool off_kink, double lo, double hi) {
        for (int t = 0; t < trials; ++t) {
            const int64_t rows = 1 + static_cast<int64_t>(rng.below(8));
            const int64_t cols = 1 + static_cast<int64_t>(rng.below(8));
            Tensor x = off_kink ? random_tensor_off_kink({rows, cols}, rng)
                                : random_tensor({rows, cols}, rng, lo, hi);
            Tensor probe = random_tensor({1, rows * cols}, rng);
            try {
                gradcheck::run(
                    {x},
                    [&](Graph& g, const std::vector<NodeId>& in) {
                        return probe_scalar(g, make_op(g, in[0]), probe);
                    },
                    tol);
            } catch (const std::exception& e) {
                throw CheckFailure(std::string(name) + ": " + e.what());
            }
        }
    };

    unary("relu", [](Graph& g, NodeId a) { return g.relu(a); }, true, 0, 0);
    unary("gelu", [](Graph& g, NodeId a) { return g.gelu(a); }, false, -2, 2);
    unary("softmax", [](Graph& g, NodeId a) { return g.softmax_lastdim(a); }, false, -3, 3);
    unary("layernorm", [](Graph& g, NodeId a) { return g.layernorm_lastdim(a); }, false, -2, 2);
    unary("square", [](Graph& g, NodeId a) { return g.square(a); }, false, -2, 2);
    unary("log", [](Graph& g, NodeId a) { return g.log(a); }, false, 0.2, 3.0);
    unary("exp", [](Graph& g, NodeId a) { return g.exp(a); }, false, -2, 2);
    unary("scale", [](Graph& g, NodeId a) { return g.scale(a, 0.37); }, false, -2, 2);
    unary("transpose", [](Graph& g, NodeId a) { return g.transpose(a); }, false, -2, 2);

    for (int t = 0; t < trials; ++t) {
        const int64_t n = 1 + static_cast<int64_t>(rng.below(5));
        const int64_t k = 1 + static_cast<int64_t>(rng.below(5));
        const int64_t m = 1 + static_cast<int64_t>(rng.below(5));
        Tensor a = random_tensor({n, k}, rng);
        Tensor b = random_tensor({k, m}, rng);
        Tensor probe = random_tensor({1, n * m}, rng);
        gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.matmul(in[0], in[1]), probe);
        }, tol);
    }
    for (int t = 0; t < trials; ++t) {
        Tensor a = random_tensor({5, 3}, rng);
        Tensor b = random_tensor({5, 3}, rng);
        Tensor v = random_tensor({3}, rng);
        Tensor probe = random_tensor({1, 15}, rng);
        gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.add(in[0], in[1]), probe);
        }, tol);
        gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.sub(in[0], in[1]), probe);
        }, tol);
        gradcheck::run({a, v}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.add_rowvec(in[0], in[1]), probe);
        }, tol);
        gradcheck::run({a, v}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.mul_rowvec(in[0], in[1]), probe);
        }, tol);
    }
    for (int t = 0; t < trials; ++t) {
        Tensor a = random_tensor({6, 3}, rng);
        Tensor b = random_tensor({2, 3}, rng);
        std::vector<int64_t> idx = {5, 0, 3, 3, 1};
        Tensor probe_g = random_tensor({1, 15}, rng);
        gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.gather_rows(in[0], idx), probe_g);
        }, tol);
        Tensor probe_c = random_tensor({1, 24}, rng);
        gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
            const NodeId parts[] = {in[0], in[1]};
            return probe_scalar(g, g.concat_rows(parts), probe_c);
        }, tol);
        gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
            return g.mean_all(in[0]);
        }, tol);
        gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
            return g.sum_all(in[0]);
        }, tol);
        Tensor probe_m = random_tensor({1, 3}, rng);
        gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.mean_rows(in[0]), probe_m);
        }, tol);
        Tensor probe_r = random_tensor({1, 18}, rng);
        gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.reshape(in[0], {2, 9}), probe_r);
        }, tol);
    }
    for (int t = 0; t < trials; ++t) {
        Tensor a = random_tensor({6}, rng, 0.2, 1.0);
        Tensor b = random_tensor({6}, rng, 0.2, 1.0);
        gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
            return g.cosine_similarity(in[0], in[1]);
        }, tol);
        Tensor probe = random_tensor({1, 6}, rng);
        gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
            return probe_scalar(g, g.l2_normalize(in[0]), probe);
        }, tol);
        Tensor z = random_tensor({5}, rng, -2.0, 2.0);
        const int64_t label = static_cast<int64_t>(rng.below(5));
        gradcheck::run({z}, [&](Graph& g, const std::vector<NodeId>& in) {
            return g.cross_entropy(in[0], label);
        }, tol);
    }

    // composed forward on the 4-patch toy model at the looser budget
    ArchConfig cfg;
    cfg.image_side = 8;
    cfg.channels = 1;
    cfg.patch_side = 4;
    cfg.embed_dim = 4;
    cfg.stages = 1;
    cfg.blocks_per_stage = 1;
    cfg.window = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    Swin model(cfg);
    Rng init_rng(0xACC2);
    ModelParams params = model.init_params(init_rng);
    Tensor image({8, 8, 1});
    for (auto& v : image.data) v = init_rng.uniform01();
    MaskPlan plan = MaskPlan::from_masked(4, 0.5, {0, 2});
    const PatchGrid grid = cfg.patch_grid();

    std::vector<Tensor> leaves;
    std::vector<std::string> names;
    ModelParams enc_dec = params.section("enc.");
    enc_dec.merge(params.section("dec."));
    for (const auto& it : enc_dec.items()) {
        leaves.push_back(it.tensor);
        names.push_back(it.name);
    }
    leaves.push_back(image);
    gradcheck::run(
        leaves,
        [&](Graph& g, const std::vector<NodeId>& in) {
            BoundParams w;
            for (size_t i = 0; i < names.size(); ++i) w.ids[names[i]] = in[i];
            NodeId patches = patchify_node(g, in.back(), grid);
            NodeId proj = g.add_rowvec(g.matmul(patches, w.at("enc.embed.w")), w.at("enc.embed.b"));
            NodeId with_pos = g.add(proj, w.at("enc.pos"));
            NodeId vis = g.gather_rows(with_pos, plan.visible);
            NodeId mask_block = g.matmul(g.constant(Tensor({2, 1}, 1.0)), w.at("enc.mask"));
            const NodeId parts[] = {vis, mask_block};
            NodeId stacked = g.concat_rows(parts);
            std::vector<int64_t> order(4);
            for (size_t i = 0; i < plan.visible.size(); ++i)
                order[static_cast<size_t>(plan.visible[i])] = static_cast<int64_t>(i);
            for (size_t j = 0; j < plan.masked.size(); ++j)
                order[static_cast<size_t>(plan.masked[j])] =
                    static_cast<int64_t>(plan.visible.size() + j);
            NodeId tokens = g.gather_rows(stacked, order);
            NodeId decoded = model.decode_image(g, model.encode(g, tokens, w), w);
            return masked_mse_node(g, decoded, image, plan, grid);
        },
        1e-3);
}

// ---------------------------------------------------------------- criterion 2

void aggregation_oracle() {
    Rng rng(0xACC3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ClientUpdate> updates;
        const int64_t k = 2 + static_cast<int64_t>(rng.below(5));
        for (int64_t t = 0; t < k; ++t) {
            ModelParams p;
            p.add("enc.w", gradcheck::random_tensor({4, 3}, rng));
            p.add("enc.b", gradcheck::random_tensor({3}, rng));
            updates.push_back({std::move(p), 1 + static_cast<int64_t>(rng.below(64)),
                               static_cast<int64_t>(rng.below(25))});
        }
        const ModelParams avg = aggregate_fedavg(updates);
        for (auto mode : {AggregationMode::kSelfFedNormalized, AggregationMode::kSelfFedLiteral}) {
            const ModelParams decayed = aggregate_selffed(updates, 1.0, mode);
            for (size_t i = 0; i < avg.items().size(); ++i) {
                require(max_abs_diff(avg.items()[i].tensor, decayed.items()[i].tensor) <= 1e-12,
                        "beta=1 aggregation drifted from the sample-weighted mean");
            }
        }
    }

    std::vector<ClientUpdate> two;
    {
        ModelParams a;
        a.add("w", Tensor::from({1}, {2.0}));
        two.push_back({std::move(a), 1, 1});
        ModelParams b;
        b.add("w", Tensor::from({1}, {4.0}));
        two.push_back({std::move(b), 1, 2});
    }
    const double literal =
        aggregate_selffed(two, 0.95, AggregationMode::kSelfFedLiteral).at("w").data[0];
    require(std::fabs(literal - 2.755) <= 1e-12,
            "literal rule missed the hand-computed 2.755");
    const double normalized =
        aggregate_selffed(two, 0.95, AggregationMode::kSelfFedNormalized).at("w").data[0];
    require(std::fabs(normalized - 2.755 / 0.92625) <= 1e-12,
            "normalized rule missed 2.755 / 0.92625");
}

// ---------------------------------------------------------------- criterion 3

void ema_oracle() {
    auto scalars = [](double v) {
        ModelParams p;
        p.add("w", Tensor::from({1}, {v}));
        return p;
    };
    TwinNetworks copy{scalars(0.25), scalars(1.0), 0.0};
    ema_update(copy);
    require(copy.target.at("w").data[0] == 0.25, "decay 0 must copy the online side exactly");

    TwinNetworks frozen{scalars(0.25), scalars(1.0), 1.0};
    ema_update(frozen);
    require(frozen.target.at("w").data[0] == 1.0, "decay 1 must freeze the target exactly");

    const double theta = 0.9, q0 = -0.4, phi = 0.7;
    TwinNetworks twins{scalars(phi), scalars(q0), theta};
    for (int k = 1; k <= 60; ++k) {
        ema_update(twins);
        double want = std::pow(theta, k) * q0;
        for (int i = 0; i < k; ++i) want += (1.0 - theta) * std::pow(theta, k - 1 - i) * phi;
        require(std::fabs(twins.target.at("w").data[0] - want) <= 1e-10,
                "k-step EMA drifted from the geometric recursion at k=" + std::to_string(k));
    }
}

// ---------------------------------------------------------------- criterion 4

void info_nce_oracle() {
    MemoryQueue queue(4);
    queue.push(std::vector<double>{0.0, 1.0, 0.0});
    queue.push(std::vector<double>{0.0, 0.0, 1.0});
    std::vector<double> q_plus = {1.0, 0.0, 0.0};
    const double got = info_nce(q_plus, q_plus, queue, 1.0);
    const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    require(std::fabs(got - want) <= 1e-10, "orthogonal-negatives value missed");

    std::vector<double> negs = {-0.3, 0.2, 0.6};
    double prev = std::numeric_limits<double>::infinity();
    for (double c : {-1.0, 0.0, 0.5, 1.0}) {
        const double loss = info_nce_from_sims(c, negs, 0.2);
        require(loss < prev, "loss must fall strictly as the positive cosine rises");
        prev = loss;
    }

    Rng rng(0xACC4);
    for (int64_t cap = 1; cap <= 16; ++cap) {
        MemoryQueue q(cap);
        std::deque<std::vector<double>> ref;
        for (int push = 0; push < 50; ++push) {
            std::vector<double> e = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
            const double n = std::sqrt(e[0] * e[0] + e[1] * e[1]);
            for (auto& v : e) v /= n;
            q.push(e);
            ref.push_back(e);
            while (static_cast<int64_t>(ref.size()) > cap) ref.pop_front();
            require(q.size() == static_cast<int64_t>(ref.size()), "queue size mismatch");
            for (int64_t i = 0; i < q.size(); ++i) {
                require(q.entry(i) == ref[static_cast<size_t>(i)],
                        "FIFO order diverged from the list reference at capacity " +
                            std::to_string(cap));
            }
        }
    }
}

// ---------------------------------------------------------------- criterion 5

void masking_laws() {
    Rng rng(0xACC5);
    for (int64_t r : {1, 2, 4, 9, 16, 36, 64, 100}) {
        for (double ratio : {0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0}) {
            MaskPlan plan = sample_mask(r, ratio, rng);
            require(plan.patch_count() == r, "masked and visible sets must cover the grid");
            const int64_t want =
                static_cast<int64_t>(std::floor(ratio * static_cast<double>(r) + 1e-9));
            require(static_cast<int64_t>(plan.masked.size()) == want,
                    "masked count must follow the floor rule");
            std::set<int64_t> seen(plan.visible.begin(), plan.visible.end());
            for (int64_t m : plan.masked) {
                require(seen.insert(m).second, "masked and visible sets must be disjoint");
            }
        }
    }

    for (int trial = 0; trial < 20; ++trial) {
        const int64_t side = 8 << rng.below(3);  // 8, 16, 32
        Tensor img({side, side, 1 + static_cast<int64_t>(rng.below(3))});
        for (auto& v : img.data) v = rng.uniform01();
        for (int64_t v = 1; v <= side; v *= 2) {
            PatchGrid grid(side, side, img.shape[2], v);
            require(bit_equal(reassemble(partition_patches(img, v), grid), img),
                    "patch round trip must be bit-exact");
        }
    }

    PatchGrid grid(16, 16, 1, 4);
    Tensor pred({16, 16, 1});
    Tensor target({16, 16, 1});
    for (auto& v : pred.data) v = rng.uniform01();
    for (auto& v : target.data) v = rng.uniform01();
    MaskPlan plan = MaskPlan::from_masked(16, 0.25, {2, 7, 9, 14});
    const double before = masked_mse(pred, target, plan, grid);
    Tensor patches = partition_patches(pred, 4);
    for (int64_t p = 0; p < 16; ++p) {
        if (!plan.is_masked(p)) patches.at(p, 5) += 77.0;
    }
    const double after = masked_mse(reassemble(patches, grid), target, plan, grid);
    require(std::memcmp(&before, &after, sizeof(double)) == 0,
            "unmasked perturbations must leave the loss bit-identical");
}

// ---------------------------------------------------------------- criterion 6

void dirichlet_statistics() {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.per_class = 250;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 1;
    spec.noise = 0.0;
    Rng data_rng(0xACC6);
    Dataset data = synth_dataset(spec, data_rng);

    auto median_score = [&](double delta) {
        std::vector<double> scores;
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(mix_seed(0xACC7 + seed, {static_cast<uint64_t>(delta * 1e6)}));
            PartitionPlan plan = dirichlet_partition(data, 5, delta, rng);
            for (const auto& row : plan.rho) {
                double s = 0.0;
                for (double v : row) s += v;
                require(std::fabs(s - 1.0) <= 1e-9, "rho row must sum to one");
            }
            scores.push_back(heterogeneity_score(plan, data).score);
        }
        std::sort(scores.begin(), scores.end());
        return scores[10];
    };

    const double split3 = median_score(0.5);
    const double split2 = median_score(1.0);
    const double split1 = median_score(100.0);
    require(split3 > split2, "delta 0.5 must be more heterogeneous than delta 1.0");
    require(split2 > split1, "delta 1.0 must be more heterogeneous than delta 100");
}

// ---------------------------------------------------------------- criterion 7

ExperimentConfig trend_config(uint64_t seed, bool scratch, const std::string& outdir) {
    ExperimentConfig cfg = default_config();
    cfg.seed = seed;
    cfg.mode = scratch ? RunMode::kScratchBaseline : RunMode::kFull;
    cfg.output_dir = outdir;
    cfg.eval_every = 5;
    cfg.checkpoint_every = 0;
    cfg.data.per_class = 250;
    cfg.data.noise = 0.05;
    cfg.data.delta = 0.5;
    cfg.data.label_fraction = 0.1;
    cfg.data.calib_per_class = 20;
    cfg.fed.num_clients = 5;
    cfg.fed.clients_per_round = 5;
    cfg.fed.rounds_phase1 = 60;
    cfg.fed.rounds_phase2 = 20;
    cfg.fed.batch_size = 16;
    cfg.fed.lr = 1e-3;
    cfg.fed.lr_finetune = 1e-2;
    cfg.fed.use_adamw = true;           // reconstruction pre-training
    cfg.fed.use_adamw_finetune = false; // plain local updates in both arms
    cfg.fed.beta = 0.95;
    cfg.fed.aggregation = AggregationMode::kSelfFedNormalized;
    cfg.fed.warmup_epochs = 0;
    cfg.fed.workers = 4;
    cfg.pretrain_aug = AugmentSpec::identity(AugmentPhase::kPretrain);
    cfg.pretrain_aug.flip_prob = 0.5;
    cfg.pretrain_aug.jitter = 0.2;
    cfg.finetune_aug = AugmentSpec::identity(AugmentPhase::kFinetune);
    cfg.finetune_aug.flip_prob = 0.5;
    cfg.arch.num_classes = cfg.data.classes;
    return cfg;
}

void label_scarcity_trend(const fs::path& root) {
    const double t0 = now_s();
    double selffed_mean = 0.0, scratch_mean = 0.0;
    std::ostringstream detail;
    for (uint64_t seed : {1, 2, 3}) {
        const auto full = run_experiment(trend_config(
            seed, false, (root / ("trend_full_" + std::to_string(seed))).string()));
        const auto base = run_experiment(trend_config(
            seed, true, (root / ("trend_scratch_" + std::to_string(seed))).string()));
        selffed_mean += full.final_accuracy / 3.0;
        scratch_mean += base.final_accuracy / 3.0;
        detail << " seed" << seed << ": " << full.final_accuracy << " vs "
               << base.final_accuracy;
    }
    const double elapsed = now_s() - t0;
    std::cout << "      accuracy means: selffed " << selffed_mean << ", from-scratch "
              << scratch_mean << " (" << detail.str() << ")\n";
    require(selffed_mean >= scratch_mean + 0.03,
            "pre-training must beat the from-scratch baseline by >= 3 points");
    require(elapsed <= 900.0, "trend experiment exceeded its 15 minute budget");
}

// ---------------------------------------------------------------- criterion 8

ExperimentConfig beta_probe_config(const std::string& outdir) {
    ExperimentConfig cfg = default_config();
    cfg.seed = 77;
    cfg.output_dir = outdir;
    cfg.eval_every = 0;
    cfg.checkpoint_every = 1;
    cfg.arch.image_side = 8;
    cfg.arch.patch_side = 4;
    cfg.arch.embed_dim = 4;
    cfg.arch.stages = 1;
    cfg.arch.window = 2;
    cfg.arch.heads = 2;
    cfg.arch.proj_dim = 4;
    cfg.arch.proj_hidden = 8;
    cfg.arch.classifier_hidden = 8;
    cfg.data.per_class = 20;
    cfg.data.delta = 1.0;
    cfg.data.label_fraction = 0.5;
    cfg.data.calib_per_class = 2;
    cfg.fed.num_clients = 5;
    cfg.fed.clients_per_round = 3;
    cfg.fed.rounds_phase1 = 2;
    cfg.fed.rounds_phase2 = 3;
    cfg.fed.batch_size = 8;
    cfg.fed.lr = 0.01;
    cfg.fed.lr_finetune = 0.01;
    cfg.fed.warmup_epochs = 0;
    cfg.fed.selection = SelectionSchedule::kSkewed;
    cfg.fed.selection_weights = {3.0, 1.0, 1.0, 1.0, 1.0};
    cfg.pretrain_aug = AugmentSpec::identity(AugmentPhase::kPretrain);
    cfg.finetune_aug = AugmentSpec::identity(AugmentPhase::kFinetune);
    cfg.arch.num_classes = cfg.data.classes;
    return cfg;
}

void beta_sensitivity(const fs::path& root) {
    const std::vector<double> betas = {0.6, 0.75, 0.9, 0.95, 0.99, 0.999, 1.0};

    // the frequency-decay mechanism under a 3x-skewed schedule: realized
    // participation counts diverge and every beta < 1 orders the weights
    // strictly against them
    FederationConfig fed;
    fed.num_clients = 5;
    fed.clients_per_round = 2;
    fed.selection = SelectionSchedule::kSkewed;
    fed.selection_weights = {3.0, 1.0, 1.0, 1.0, 1.0};
    std::vector<ClientState> clients(5);
    for (int64_t i = 0; i < 5; ++i) clients[static_cast<size_t>(i)].id = i;
    Rng rng(0xACC8);
    for (int64_t round = 0; round < 200; ++round) select_clients(round, fed, clients, rng);
    require(clients[0].participation > clients[1].participation,
            "the skewed schedule must overselect the heavy client");

    for (double beta : betas) {
        std::vector<std::pair<int64_t, int64_t>> nf;
        for (const auto& c : clients) nf.emplace_back(10, c.participation);
        // order by participation, ascending
        std::sort(nf.begin(), nf.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
        for (auto mode : {AggregationMode::kSelfFedLiteral, AggregationMode::kSelfFedNormalized}) {
            const auto w = aggregation_weights(mode, beta, nf);
            for (size_t i = 1; i < w.size(); ++i) {
                if (nf[i].second == nf[i - 1].second) continue;
                if (beta < 1.0) {
                    require(w[i] < w[i - 1],
                            "weights must fall strictly with participation for beta < 1");
                } else {
                    require(w[i] == w[i - 1], "beta = 1 must not discriminate by frequency");
                }
            }
        }
    }

    // the sweep emits one summary per published beta value
    ExperimentConfig sweep_cfg = beta_probe_config((root / "beta_sweep_base").string());
    const auto results = run_sweep(sweep_cfg, "beta", betas, (root / "beta_sweep").string());
    require(results.size() == betas.size(), "sweep must produce one run per beta");
    const auto sweep_json =
        nlohmann::json::parse(slurp((root / "beta_sweep" / "sweep_summary.json").string()));
    require(sweep_json.size() == betas.size(), "sweep summary must list every beta");
    for (size_t i = 0; i < betas.size(); ++i) {
        require(sweep_json[i].at("value").get<double>() == betas[i],
                "sweep summary order must follow the requested values");
        require(fs::exists(results[i].summary_path), "per-beta summary missing");
    }

    // at beta = 1 the decayed rule and plain sample weighting must produce
    // byte-identical global checkpoints round by round
    ExperimentConfig beta_one = beta_probe_config((root / "beta_one").string());
    beta_one.fed.beta = 1.0;
    beta_one.fed.aggregation = AggregationMode::kSelfFedNormalized;
    ExperimentConfig plain = beta_probe_config((root / "plain_avg").string());
    plain.fed.aggregation = AggregationMode::kFedAvg;
    const auto r1 = run_experiment(beta_one);
    const auto r2 = run_experiment(plain);
    (void)r1;
    (void)r2;
    int compared = 0;
    for (const auto& entry : fs::directory_iterator(root / "beta_one")) {
        if (entry.path().extension() != ".sfwt") continue;
        const auto other = root / "plain_avg" / entry.path().filename();
        require(fs::exists(other), "checkpoint missing from the plain-average run");
        require(slurp(entry.path().string()) == slurp(other.string()),
                "beta=1 checkpoints must match the plain average bit for bit");
        ++compared;
    }
    require(compared == 5, "expected five per-round checkpoints to compare");
}

// ---------------------------------------------------------------- criterion 9

void determinism(const fs::path& root) {
    ExperimentConfig a = beta_probe_config((root / "det_a").string());
    ExperimentConfig b = beta_probe_config((root / "det_b").string());
    ExperimentConfig c = beta_probe_config((root / "det_c").string());
    c.fed.workers = 4;

    const auto ra = run_experiment(a);
    const auto rb = run_experiment(b);
    const auto rc = run_experiment(c);

    const std::string csv_a = csv_without_timing(slurp(ra.csv_path));
    require(csv_a == csv_without_timing(slurp(rb.csv_path)),
            "same seed must reproduce the csv byte for byte");
    require(csv_a == csv_without_timing(slurp(rc.csv_path)),
            "worker count must not change the csv");

    int compared = 0;
    for (const auto& entry : fs::directory_iterator(root / "det_a")) {
        if (entry.path().extension() != ".sfwt") continue;
        const auto name = entry.path().filename();
        require(slurp(entry.path().string()) == slurp((root / "det_b" / name).string()),
                "re-run checkpoint differs");
        require(slurp(entry.path().string()) == slurp((root / "det_c" / name).string()),
                "parallel checkpoint differs");
        ++compared;
    }
    require(compared > 0, "determinism check found no checkpoints");
}

struct Criterion {
    int id;
    std::string name;
    std::function<void()> run;
    double budget_s = 0.0;  // 0 = no runtime bound
};

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "selffed_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    const std::vector<Criterion> criteria = {
        {1, "gradient fidelity (primitives 1e-4, composite 1e-3)", primitive_gradients, 60.0},
        {2, "aggregation oracle (beta=1 equivalence, hand values)", aggregation_oracle, 0.0},
        {3, "EMA oracle (limits, geometric recursion)", ema_oracle, 0.0},
        {4, "InfoNCE oracle (value, monotonicity, FIFO reference)", info_nce_oracle, 0.0},
        {5, "masking and partition laws", masking_laws, 0.0},
        {6, "Dirichlet statistics (rho rows, heterogeneity ordering)", dirichlet_statistics, 30.0},
        {7, "label-scarcity trend (pre-training beats from-scratch by 3 points)",
         [&] { label_scarcity_trend(root); }, 900.0},
        {8, "beta sensitivity (weight monotonicity, sweep, beta=1 bitwise)",
         [&] { beta_sensitivity(root); }, 0.0},
        {9, "determinism (csv and checkpoints, sequential and parallel)",
         [&] { determinism(root); }, 0.0},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const double t0 = now_s();
        std::string error;
        try {
            c.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double elapsed = now_s() - t0;
        if (error.empty() && c.budget_s > 0.0 && elapsed > c.budget_s) {
            error = "runtime " + std::to_string(elapsed) + " s exceeded the budget of " +
                    std::to_string(c.budget_s) + " s";
        }
        if (error.empty()) {
            std::printf("[PASS] criterion %d: %s (%.1f s)\n", c.id, c.name.c_str(), elapsed);
        } else {
            std::printf("[FAIL] criterion %d: %s (%.1f s)\n       %s\n", c.id, c.name.c_str(),
                        elapsed, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    fs::remove_all(root);
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures;
}
