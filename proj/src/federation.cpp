#include "selffed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "selffed/losses.hpp"

namespace selffed {

namespace {

// seed-mixing tags for the protocol's derived streams
constexpr uint64_t kTagSelect = 0x5e1ec7ULL;
constexpr uint64_t kTagLocal = 0x10ca1ULL;
constexpr uint64_t kTagImage = 0x1a63eULL;

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void run_parallel(int64_t workers, int64_t jobs, const std::function<void(int64_t)>& fn) {
    if (workers <= 1 || jobs <= 1) {
        for (int64_t i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    const int64_t n_threads = std::min(workers, jobs);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int64_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= jobs) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

void FederationConfig::validate() const {
    if (num_clients < 1) throw ValidationError("num_clients must be >= 1");
    if (clients_per_round < 1 || clients_per_round > num_clients) {
        throw ValidationError("clients_per_round must lie in [1, num_clients]");
    }
    if (rounds_phase1 < 0 || rounds_phase2 < 0) throw ValidationError("round counts must be >= 0");
    if (local_epochs < 1 || batch_size < 1) throw ValidationError("epochs and batch_size must be >= 1");
    if (lr <= 0.0 || lr_finetune <= 0.0) throw ValidationError("lr must be > 0");
    if (beta <= 0.0 || beta > 1.0) throw BetaOutOfRange("beta must lie in (0, 1]");
    if (selection == SelectionSchedule::kSkewed &&
        selection_weights.size() != static_cast<size_t>(num_clients)) {
        throw ValidationError("skewed selection needs one weight per client");
    }
    if (workers < 1) throw ValidationError("workers must be >= 1");
    if (warmup_epochs < 0) throw ValidationError("warmup_epochs must be >= 0");
}

SampleStore::SampleStore(const Dataset& data) : data_(&data) {
    for (size_t i = 0; i < data.size(); ++i) index_[data.ids[i]] = i;
}

const Tensor& SampleStore::image(uint64_t id) const {
    return data_->images[index_.at(id)];
}

int64_t SampleStore::label(uint64_t id) const { return data_->labels[index_.at(id)]; }

std::vector<int64_t> select_clients(int64_t round, const FederationConfig& cfg,
                                    std::vector<ClientState>& clients, Rng& rng) {
    std::vector<int64_t> everyone(clients.size());
    for (size_t i = 0; i < clients.size(); ++i) everyone[i] = static_cast<int64_t>(i);
    return select_clients(round, cfg, clients, rng, everyone);
}

std::vector<int64_t> select_clients(int64_t round, const FederationConfig& cfg,
                                    std::vector<ClientState>& clients, Rng& rng,
                                    const std::vector<int64_t>& eligible) {
    if (clients.size() != static_cast<size_t>(cfg.num_clients)) {
        throw ValidationError("client list does not match num_clients");
    }
    if (eligible.empty()) throw EmptyUpdateSet("no eligible clients to select from");
    const int64_t n = static_cast<int64_t>(eligible.size());
    const int64_t want = std::min(cfg.clients_per_round, n);
    std::vector<int64_t> picked;
    if (want == n) {
        picked = eligible;
    } else if (cfg.selection == SelectionSchedule::kUniform) {
        auto idx = rng.sample_without_replacement(static_cast<int>(n), static_cast<int>(want));
        for (int i : idx) picked.push_back(eligible[static_cast<size_t>(i)]);
    } else {
        // sequential weighted draws without replacement
        std::vector<int64_t> alive = eligible;
        for (int64_t k = 0; k < want; ++k) {
            double total = 0.0;
            for (int64_t id : alive) total += cfg.selection_weights[static_cast<size_t>(id)];
            double r = rng.uniform01() * total;
            size_t chosen = alive.size() - 1;
            for (size_t i = 0; i < alive.size(); ++i) {
                r -= cfg.selection_weights[static_cast<size_t>(alive[i])];
                if (r < 0.0) {
                    chosen = i;
                    break;
                }
            }
            picked.push_back(alive[chosen]);
            alive.erase(alive.begin() + static_cast<ptrdiff_t>(chosen));
        }
    }
    std::sort(picked.begin(), picked.end());
    for (int64_t id : picked) ++clients[static_cast<size_t>(id)].participation;
    (void)round;
    return picked;
}

std::vector<double> aggregation_weights(AggregationMode mode, double beta,
                                        std::span<const std::pair<int64_t, int64_t>> n_and_f) {
    if (n_and_f.empty()) throw EmptyUpdateSet("aggregation over zero updates");
    if (beta <= 0.0 || beta > 1.0) throw BetaOutOfRange("beta must lie in (0, 1]");
    std::vector<double> w(n_and_f.size());
    if (mode == AggregationMode::kSelfFedLiteral) {
        double n_total = 0.0;
        for (const auto& [n, f] : n_and_f) n_total += static_cast<double>(n);
        for (size_t t = 0; t < n_and_f.size(); ++t) {
            w[t] = (static_cast<double>(n_and_f[t].first) / n_total) *
                   std::pow(beta, static_cast<double>(n_and_f[t].second));
        }
        return w;
    }
    // fedavg is the beta == 1 special case of the normalized rule; both go
    // through the same arithmetic so the equality is bit-exact
    double total = 0.0;
    for (size_t t = 0; t < n_and_f.size(); ++t) {
        const double decay = mode == AggregationMode::kFedAvg
                                 ? 1.0
                                 : std::pow(beta, static_cast<double>(n_and_f[t].second));
        w[t] = static_cast<double>(n_and_f[t].first) * decay;
        total += w[t];
    }
    for (auto& v : w) v /= total;
    return w;
}

ModelParams aggregate_updates(std::span<const ClientUpdate> updates, AggregationMode mode,
                              double beta) {
    if (updates.empty()) throw EmptyUpdateSet("aggregation over zero updates");
    std::vector<std::pair<int64_t, int64_t>> nf;
    nf.reserve(updates.size());
    for (const auto& u : updates) nf.emplace_back(u.sample_count, u.frequency);
    const auto weights = aggregation_weights(mode, beta, nf);

    ModelParams out = updates[0].params;
    for (auto& item : out.items()) {
        std::fill(item.tensor.data.begin(), item.tensor.data.end(), 0.0);
    }
    for (size_t t = 0; t < updates.size(); ++t) {
        if (!out.same_layout(updates[t].params)) {
            throw ShapeMismatch("aggregation with mismatched parameter layouts");
        }
        const double wt = weights[t];
        for (size_t i = 0; i < out.items().size(); ++i) {
            auto& dst = out.items()[i].tensor.data;
            const auto& src = updates[t].params.items()[i].tensor.data;
            for (size_t k = 0; k < dst.size(); ++k) dst[k] += wt * src[k];
        }
    }
    return out;
}

ModelParams aggregate_fedavg(std::span<const ClientUpdate> updates) {
    return aggregate_updates(updates, AggregationMode::kFedAvg, 1.0);
}

ModelParams aggregate_selffed(std::span<const ClientUpdate> updates, double beta,
                              AggregationMode mode) {
    if (mode == AggregationMode::kFedAvg) {
        throw ValidationError("aggregate_selffed called with the fedavg mode");
    }
    return aggregate_updates(updates, mode, beta);
}

namespace {

double warmup_factor(int64_t global_step, int64_t warmup_steps) {
    if (warmup_steps <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(global_step + 1) / static_cast<double>(warmup_steps));
}

}  // namespace

LocalTrainResult local_pretrain(ClientState& client, const ModelParams& global_encoder,
                                const Swin& model, const SampleStore& store,
                                const LocalTrainOptions& opt) {
    if (client.unlabeled_ids.empty()) throw EmptyShard("client has no unlabeled data");
    client.params.assign_from(global_encoder);

    ModelParams trained = client.params.section("enc.");
    trained.merge(client.params.section("dec."));
    Optimizer optim = opt.use_adamw ? Optimizer::adamw() : Optimizer::sgd();

    const PatchGrid grid = model.cfg().patch_grid();
    const int64_t n = static_cast<int64_t>(client.unlabeled_ids.size());
    const int64_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;

    Rng order_rng(mix_seed(opt.seed, {kTagLocal, 1, static_cast<uint64_t>(opt.round),
                                      static_cast<uint64_t>(client.id)}));
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    LocalTrainResult res;

    for (int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::vector<uint64_t> order = client.unlabeled_ids;
        order_rng.shuffle(order);
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            const int64_t lo = step * opt.batch_size;
            const int64_t hi = std::min(n, lo + opt.batch_size);
            Graph g;
            BoundParams w = bind_params(g, trained, true);
            NodeId total = -1;
            std::vector<NodeId> recon_nodes;
            for (int64_t k = lo; k < hi; ++k) {
                const uint64_t id = order[static_cast<size_t>(k)];
                Rng img_rng(mix_seed(opt.seed, {kTagImage, 1, static_cast<uint64_t>(opt.round),
                                                static_cast<uint64_t>(epoch), id}));
                const Tensor aug = augment(store.image(id), opt.augment_spec, img_rng);
                const MaskPlan plan =
                    opt.mask_per_window
                        ? sample_mask_per_window(model.cfg().grid_side(), model.cfg().window,
                                                 opt.mask_ratio, img_rng)
                        : sample_mask(grid.patch_count(), opt.mask_ratio, img_rng);
                const Tensor patches = partition_patches(aug, grid.patch_side);
                NodeId tokens = model.embed(g, patches, plan, w);
                NodeId image = model.decode_image(g, model.encode(g, tokens, w), w);
                recon_nodes.push_back(image);
                NodeId loss = masked_mse_node(g, image, aug, plan, grid);
                total = (total < 0) ? loss : g.add(total, loss);
            }
            NodeId loss = g.scale(total, 1.0 / static_cast<double>(hi - lo));
            g.backward(loss);
            loss_sum += g.val(loss).data[0];
            ++loss_count;

            const int64_t global_step = opt.round * opt.epochs * steps_per_epoch +
                                        epoch * steps_per_epoch + step;
            const double lr = opt.lr * warmup_factor(global_step, opt.warmup_steps);
            GradMap grads = collect_grads(g, w);
            optim.step(trained, grads, lr);

            const bool last = (epoch == opt.epochs - 1) && (step == steps_per_epoch - 1);
            if (last && opt.keep_reconstructions > 0) {
                const int64_t keep = std::min<int64_t>(opt.keep_reconstructions,
                                                       static_cast<int64_t>(recon_nodes.size()));
                for (int64_t k = 0; k < keep; ++k) {
                    Tensor img = g.val(recon_nodes[static_cast<size_t>(k)]);
                    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
                    res.reconstructions.push_back(std::move(img));
                }
            }
        }
    }
    client.params.assign_from(trained);
    res.encoder = client.params.section("enc.");
    res.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    return res;
}

LocalTrainResult local_finetune(ClientState& client, const ModelParams& global_encoder,
                                const Swin& model, const SampleStore& store,
                                const LocalTrainOptions& opt) {
    if (client.labeled_ids.empty()) throw EmptyLabeledShard("client has no labeled data");
    client.params.assign_from(global_encoder);

    ModelParams trained = client.params.section("enc.");
    trained.merge(client.params.section("cls."));
    Optimizer optim = opt.use_adamw ? Optimizer::adamw() : Optimizer::sgd();

    const int64_t n = static_cast<int64_t>(client.labeled_ids.size());
    const int64_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
    const MaskPlan no_mask = MaskPlan::from_masked(model.cfg().token_count(), 0.0, {});

    Rng order_rng(mix_seed(opt.seed, {kTagLocal, 2, static_cast<uint64_t>(opt.round),
                                      static_cast<uint64_t>(client.id)}));
    double loss_sum = 0.0;
    int64_t loss_count = 0;

    for (int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::vector<uint64_t> order = client.labeled_ids;
        order_rng.shuffle(order);
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            const int64_t lo = step * opt.batch_size;
            const int64_t hi = std::min(n, lo + opt.batch_size);
            Graph g;
            BoundParams w = bind_params(g, trained, true);
            NodeId total = -1;
            for (int64_t k = lo; k < hi; ++k) {
                const uint64_t id = order[static_cast<size_t>(k)];
                Rng img_rng(mix_seed(opt.seed, {kTagImage, 2, static_cast<uint64_t>(opt.round),
                                                static_cast<uint64_t>(epoch), id}));
                const Tensor aug = augment(store.image(id), opt.augment_spec, img_rng);
                const Tensor patches = partition_patches(aug, model.cfg().patch_side);
                NodeId pooled = model.pool(g, model.encode(g, model.embed(g, patches, no_mask, w), w));
                NodeId logits = model.classify(g, pooled, w);
                NodeId loss = g.cross_entropy(logits, store.label(id));
                total = (total < 0) ? loss : g.add(total, loss);
            }
            NodeId loss = g.scale(total, 1.0 / static_cast<double>(hi - lo));
            g.backward(loss);
            loss_sum += g.val(loss).data[0];
            ++loss_count;

            const int64_t global_step = opt.round * opt.epochs * steps_per_epoch +
                                        epoch * steps_per_epoch + step;
            const double lr = opt.lr * warmup_factor(global_step, opt.warmup_steps);
            GradMap grads = collect_grads(g, w);
            optim.step(trained, grads, lr);
        }
    }
    client.params.assign_from(trained);

    // local train accuracy on the clean labeled shard
    int64_t correct = 0;
    {
        Graph g;
        BoundParams w = bind_params(g, trained, false);
        for (uint64_t id : client.labeled_ids) {
            const Tensor patches = partition_patches(store.image(id), model.cfg().patch_side);
            NodeId pooled = model.pool(g, model.encode(g, model.embed(g, patches, no_mask, w), w));
            const Tensor& logits = g.val(model.classify(g, pooled, w));
            int64_t best = 0;
            for (int64_t c = 1; c < model.cfg().num_classes; ++c) {
                if (logits.data[static_cast<size_t>(c)] > logits.data[static_cast<size_t>(best)]) best = c;
            }
            if (best == store.label(id)) ++correct;
        }
    }

    LocalTrainResult res;
    res.encoder = client.params.section("enc.");
    res.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return res;
}

ServerState ServerState::make(const ModelParams& init, double target_decay,
                              int64_t queue_capacity, int64_t pool_capacity) {
    ModelParams online = init.section("enc.");
    online.merge(init.section("proj."));
    online.merge(init.section("pred."));
    ServerState s{TwinNetworks::from_online(online, target_decay), init.section("dec."),
                  MemoryQueue(queue_capacity), {}, pool_capacity, 0};
    return s;
}

void ServerState::pool_push(const Tensor& image) {
    if (static_cast<int64_t>(recon_pool.size()) < pool_capacity) {
        recon_pool.push_back(image);
    } else {
        recon_pool[static_cast<size_t>(pool_cursor % pool_capacity)] = image;
    }
    ++pool_cursor;
}

EvalContext EvalContext::build(const Swin& model, const Dataset& calib, const Dataset& test,
                               double mask_ratio, int64_t recon_subset, uint64_t seed) {
    EvalContext ctx;
    ctx.calib_images = calib.images;
    ctx.calib_labels = calib.labels;
    ctx.test_images = test.images;
    ctx.test_labels = test.labels;
    const int64_t n = std::min<int64_t>(recon_subset, static_cast<int64_t>(test.images.size()));
    for (int64_t i = 0; i < n; ++i) {
        ctx.recon_images.push_back(test.images[static_cast<size_t>(i)]);
        Rng mask_rng(mix_seed(seed, {0xe7a1ULL, static_cast<uint64_t>(i)}));
        ctx.recon_masks.push_back(
            sample_mask(model.cfg().token_count(), mask_ratio, mask_rng));
    }
    return ctx;
}

double evaluate_probe_accuracy(const Swin& model, const ModelParams& encoder,
                               const EvalContext& eval) {
    const auto calib_feats = model.features_batch(encoder, eval.calib_images);
    const LinearProbe probe =
        fit_linear_probe(calib_feats, eval.calib_labels, model.cfg().num_classes);
    const auto test_feats = model.features_batch(encoder, eval.test_images);
    return probe_accuracy(probe, test_feats, eval.test_labels);
}

double evaluate_reconstruction(const Swin& model, const ModelParams& encoder,
                               const ModelParams& decoder, const EvalContext& eval) {
    if (eval.recon_images.empty()) return std::numeric_limits<double>::quiet_NaN();
    ModelParams both = encoder.section("enc.");
    both.merge(decoder.section("dec."));
    double total = 0.0;
    for (size_t i = 0; i < eval.recon_images.size(); ++i) {
        total += model.reconstruction_loss(both, eval.recon_images[i], eval.recon_masks[i]);
    }
    return total / static_cast<double>(eval.recon_images.size());
}

namespace {

int64_t shard_steps(int64_t samples, int64_t batch) { return (samples + batch - 1) / batch; }

}  // namespace

std::vector<RoundReport> run_phase1(const Swin& model, const SampleStore& store,
                                    const ProtocolOptions& opt,
                                    std::vector<ClientState>& clients, ServerState& server,
                                    const EvalContext* eval, const RoundCallback& on_round) {
    opt.fed.validate();
    std::vector<int64_t> eligible;
    for (const auto& c : clients) {
        if (!c.unlabeled_ids.empty()) eligible.push_back(c.id);
    }
    if (eligible.empty() && opt.fed.rounds_phase1 > 0) {
        throw EmptyShard("no client holds unlabeled data");
    }
    std::vector<RoundReport> reports;
    for (int64_t round = 0; round < opt.fed.rounds_phase1; ++round) {
        const double t0 = now_ms();
        Rng select_rng(mix_seed(opt.seed, {kTagSelect, 1, static_cast<uint64_t>(round)}));
        const auto selected = select_clients(round, opt.fed, clients, select_rng, eligible);
        const ModelParams global_enc = server.twins.online.section("enc.");

        std::vector<LocalTrainResult> results(selected.size());
        run_parallel(opt.fed.workers, static_cast<int64_t>(selected.size()), [&](int64_t i) {
            ClientState& c = clients[static_cast<size_t>(selected[static_cast<size_t>(i)])];
            LocalTrainOptions lo;
            lo.epochs = opt.fed.local_epochs;
            lo.batch_size = opt.fed.batch_size;
            lo.lr = opt.fed.lr;
            lo.mask_ratio = opt.mask_ratio;
            lo.mask_per_window = opt.mask_per_window;
            lo.warmup_steps = opt.fed.warmup_epochs *
                              shard_steps(static_cast<int64_t>(c.unlabeled_ids.size()),
                                          opt.fed.batch_size);
            lo.use_adamw = opt.fed.use_adamw;
            lo.augment_spec = opt.pretrain_aug;
            lo.seed = opt.seed;
            lo.round = round;
            lo.keep_reconstructions = opt.pool_per_client;
            results[static_cast<size_t>(i)] = local_pretrain(c, global_enc, model, store, lo);
        });

        std::vector<ClientUpdate> enc_updates, dec_updates;
        RoundReport rep;
        rep.round = round;
        rep.phase = 1;
        rep.selected = selected;
        for (size_t i = 0; i < selected.size(); ++i) {
            const ClientState& c = clients[static_cast<size_t>(selected[i])];
            enc_updates.push_back({results[i].encoder,
                                   static_cast<int64_t>(c.unlabeled_ids.size()),
                                   c.participation});
            dec_updates.push_back({c.params.section("dec."),
                                   static_cast<int64_t>(c.unlabeled_ids.size()),
                                   c.participation});
            rep.client_losses.push_back(results[i].mean_loss);
        }
        {
            // shard-size weighted mean of the local objectives
            double n_total = 0.0, acc = 0.0;
            for (const auto& u : enc_updates) n_total += static_cast<double>(u.sample_count);
            for (size_t i = 0; i < enc_updates.size(); ++i) {
                acc += static_cast<double>(enc_updates[i].sample_count) / n_total *
                       rep.client_losses[i];
            }
            rep.global_loss = acc;
        }
        {
            std::vector<std::pair<int64_t, int64_t>> nf;
            for (const auto& u : enc_updates) nf.emplace_back(u.sample_count, u.frequency);
            rep.agg_weights = aggregation_weights(opt.fed.aggregation, opt.fed.beta, nf);
        }
        server.twins.online.assign_from(
            aggregate_updates(enc_updates, opt.fed.aggregation, opt.fed.beta));
        ema_update(server.twins);
        server.eval_decoder.assign_from(
            aggregate_updates(dec_updates, opt.fed.aggregation, opt.fed.beta));

        for (const auto& r : results) {
            for (const auto& img : r.reconstructions) server.pool_push(img);
        }

        if (eval && opt.eval_every > 0 &&
            (round % opt.eval_every == opt.eval_every - 1 || round + 1 == opt.fed.rounds_phase1)) {
            rep.eval_accuracy = evaluate_probe_accuracy(model, server.twins.online, *eval);
            rep.eval_recon =
                evaluate_reconstruction(model, server.twins.online, server.eval_decoder, *eval);
        }
        rep.wall_ms = now_ms() - t0;
        if (on_round) on_round(rep, server.global_snapshot());
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::vector<RoundReport> run_phase2(const Swin& model, const SampleStore& store,
                                    const ProtocolOptions& opt,
                                    std::vector<ClientState>& clients, ServerState& server,
                                    const EvalContext* eval, const RoundCallback& on_round) {
    opt.fed.validate();
    std::vector<int64_t> eligible;
    for (const auto& c : clients) {
        if (!c.labeled_ids.empty()) eligible.push_back(c.id);
    }
    if (eligible.empty()) throw EmptyLabeledShard("no client holds labeled data");
    std::vector<RoundReport> reports;
    Optimizer server_optim =
        opt.fed.use_adamw_finetune ? Optimizer::adamw() : Optimizer::sgd();

    for (int64_t round = 0; round < opt.fed.rounds_phase2; ++round) {
        const double t0 = now_ms();
        Rng select_rng(mix_seed(opt.seed, {kTagSelect, 2, static_cast<uint64_t>(round)}));
        const auto selected = select_clients(round, opt.fed, clients, select_rng, eligible);
        const ModelParams global_enc = server.twins.online.section("enc.");

        std::vector<LocalTrainResult> results(selected.size());
        run_parallel(opt.fed.workers, static_cast<int64_t>(selected.size()), [&](int64_t i) {
            ClientState& c = clients[static_cast<size_t>(selected[static_cast<size_t>(i)])];
            LocalTrainOptions lo;
            lo.epochs = opt.fed.local_epochs;
            lo.batch_size = opt.fed.batch_size;
            lo.lr = opt.fed.lr_finetune;
            lo.warmup_steps = opt.fed.warmup_epochs *
                              shard_steps(static_cast<int64_t>(c.labeled_ids.size()),
                                          opt.fed.batch_size);
            lo.use_adamw = opt.fed.use_adamw_finetune;
            lo.augment_spec = opt.finetune_aug;
            lo.seed = opt.seed;
            lo.round = round;
            results[static_cast<size_t>(i)] = local_finetune(c, global_enc, model, store, lo);
        });

        std::vector<ClientUpdate> enc_updates;
        RoundReport rep;
        rep.round = round;
        rep.phase = 2;
        rep.selected = selected;
        for (size_t i = 0; i < selected.size(); ++i) {
            const ClientState& c = clients[static_cast<size_t>(selected[i])];
            enc_updates.push_back({results[i].encoder,
                                   static_cast<int64_t>(c.labeled_ids.size()),
                                   c.participation});
            rep.client_losses.push_back(results[i].mean_loss);
        }
        {
            double n_total = 0.0, acc = 0.0;
            for (const auto& u : enc_updates) n_total += static_cast<double>(u.sample_count);
            for (size_t i = 0; i < enc_updates.size(); ++i) {
                acc += static_cast<double>(enc_updates[i].sample_count) / n_total *
                       rep.client_losses[i];
            }
            rep.global_loss = acc;
        }
        {
            std::vector<std::pair<int64_t, int64_t>> nf;
            for (const auto& u : enc_updates) nf.emplace_back(u.sample_count, u.frequency);
            rep.agg_weights = aggregation_weights(opt.fed.aggregation, opt.fed.beta, nf);
        }
        server.twins.online.assign_from(
            aggregate_updates(enc_updates, opt.fed.aggregation, opt.fed.beta));
        ema_update(server.twins);

        const bool step_due = opt.server_step_every > 0 &&
                              (round % opt.server_step_every == opt.server_step_every - 1);
        if (opt.server_step_enabled && step_due && !server.recon_pool.empty()) {
            if (server.queue.empty()) {
                const int64_t warm = std::min<int64_t>(
                    static_cast<int64_t>(server.recon_pool.size()), opt.contrastive_batch);
                warm_fill_queue(server.queue, model, server.twins.target,
                                std::span<const Tensor>(server.recon_pool.data(),
                                                        static_cast<size_t>(warm)));
            }
            Rng pick_rng(mix_seed(opt.seed, {0xc057ULL, static_cast<uint64_t>(round)}));
            const int64_t batch_n = std::min<int64_t>(
                opt.contrastive_batch, static_cast<int64_t>(server.recon_pool.size()));
            std::vector<ViewPair> batch;
            for (int64_t k = 0; k < batch_n; ++k) {
                const auto idx = pick_rng.below(server.recon_pool.size());
                Rng view_rng(mix_seed(opt.seed, {0x71e3ULL, static_cast<uint64_t>(round),
                                                 static_cast<uint64_t>(k)}));
                batch.push_back(make_views(server.recon_pool[idx], opt.pretrain_aug, view_rng));
            }
            const auto step = server_contrastive_step(server.twins, model, batch, server.queue,
                                                      opt.contrastive, server_optim,
                                                      opt.contrastive_lr);
            rep.contrastive_loss = step.loss;
        }

        if (eval && opt.eval_every > 0 &&
            (round % opt.eval_every == opt.eval_every - 1 || round + 1 == opt.fed.rounds_phase2)) {
            rep.eval_accuracy = evaluate_probe_accuracy(model, server.twins.online, *eval);
            rep.eval_recon =
                evaluate_reconstruction(model, server.twins.online, server.eval_decoder, *eval);
        }
        rep.wall_ms = now_ms() - t0;
        if (on_round) on_round(rep, server.global_snapshot());
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace selffed
