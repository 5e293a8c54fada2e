#include "selffed/contrastive.hpp"

namespace selffed {

TwinNetworks TwinNetworks::from_online(const ModelParams& online, double decay) {
    TwinNetworks t;
    t.online = online;
    t.target = online;
    t.decay = decay;
    return t;
}

void ema_update(TwinNetworks& twins) {
    if (!twins.online.same_layout(twins.target)) {
        throw ShapeMismatch("ema_update: online and target layouts differ");
    }
    const double theta = twins.decay;
    for (size_t i = 0; i < twins.target.items().size(); ++i) {
        auto& q = twins.target.items()[i].tensor.data;
        const auto& phi = twins.online.items()[i].tensor.data;
        for (size_t k = 0; k < q.size(); ++k) {
            q[k] = theta * q[k] + (1.0 - theta) * phi[k];
        }
    }
}

ViewPair make_views(const Tensor& source, const AugmentSpec& spec, Rng& rng) {
    ViewPair pair;
    Rng first_rng = rng.child(1);
    Rng second_rng = rng.child(2);
    pair.first = augment(source, spec, first_rng);
    pair.second = augment(source, spec, second_rng);
    return pair;
}

void warm_fill_queue(MemoryQueue& queue, const Swin& model, const ModelParams& target,
                     std::span<const Tensor> images) {
    for (const Tensor& img : images) {
        const Tensor emb = model.embedding(target, img, /*with_predictor=*/false);
        queue.push(emb.data);
    }
}

ServerStepResult server_contrastive_step(TwinNetworks& twins, const Swin& model,
                                         std::span<const ViewPair> batch, MemoryQueue& queue,
                                         const ContrastiveConfig& cfg, Optimizer& opt,
                                         double lr) {
    cfg.validate();
    if (batch.empty()) throw EmptyBatch("contrastive step with an empty batch");
    if (queue.empty()) throw EmptyQueue("contrastive step before queue warm-up");

    // target embeddings first; no gradient ever flows into them
    std::vector<std::vector<double>> target_embeddings;
    target_embeddings.reserve(batch.size());
    for (const ViewPair& pair : batch) {
        target_embeddings.push_back(
            model.embedding(twins.target, pair.second, /*with_predictor=*/false).data);
    }

    const Tensor negatives = queue.snapshot();

    Graph g;
    ModelParams online_sections = twins.online.section("enc.");
    online_sections.merge(twins.online.section("proj."));
    online_sections.merge(twins.online.section("pred."));
    BoundParams w = bind_params(g, online_sections, true);

    MaskPlan none = MaskPlan::from_masked(model.cfg().token_count(), 0.0, {});
    NodeId total = -1;
    for (size_t i = 0; i < batch.size(); ++i) {
        const Tensor patches = partition_patches(batch[i].first, model.cfg().patch_side);
        NodeId pooled = model.pool(g, model.encode(g, model.embed(g, patches, none, w), w));
        NodeId q_plus = model.predict_embed(g, model.project(g, pooled, w), w);
        Tensor q_pp = Tensor::from({static_cast<int64_t>(target_embeddings[i].size())},
                                   target_embeddings[i]);
        NodeId loss_i = info_nce_node(g, q_plus, q_pp, negatives, cfg.temperature,
                                      cfg.include_positive);
        total = (total < 0) ? loss_i : g.add(total, loss_i);
    }
    NodeId loss = g.scale(total, 1.0 / static_cast<double>(batch.size()));
    g.backward(loss);

    GradMap grads = collect_grads(g, w);
    opt.step(online_sections, grads, lr);
    twins.online.assign_from(online_sections);

    ema_update(twins);
    queue.push_batch(target_embeddings);

    ServerStepResult res;
    res.loss = g.val(loss).data[0];
    res.pairs = static_cast<int64_t>(batch.size());
    return res;
}

}  // namespace selffed
