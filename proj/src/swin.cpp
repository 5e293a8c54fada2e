#include "selffed/swin.hpp"

#include <algorithm>
#include <cmath>

#include "selffed/losses.hpp"

namespace selffed {

namespace {
constexpr double kMaskedAttention = -1e9;
constexpr double kInitStd = 0.02;
}  // namespace

void ArchConfig::validate() const {
    if (image_side <= 0 || channels <= 0 || patch_side <= 0) {
        throw ValidationError("arch: extents must be positive");
    }
    if (image_side % patch_side != 0) {
        throw ValidationError("arch: patch_side must divide image_side");
    }
    if (stages < 1 || blocks_per_stage < 1 || decoder_blocks_per_stage < 1) {
        throw ValidationError("arch: stages and blocks must be >= 1");
    }
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
        throw ValidationError("arch: embed_dim must be a positive multiple of heads");
    }
    if (mlp_ratio < 1) throw ValidationError("arch: mlp_ratio must be >= 1");
    if (window < 1) throw ValidationError("arch: window must be >= 1");
    for (int64_t s = 0; s < stages; ++s) {
        const int64_t grid = stage_grid(s);
        if (grid < 1) throw ValidationError("arch: too many stages for this grid");
        if (grid % window != 0) {
            throw ValidationError("arch: window must divide the token grid at stage " +
                                  std::to_string(s));
        }
    }
    if (proj_dim < 1 || proj_hidden < 1 || classifier_hidden < 1 || num_classes < 2) {
        throw ValidationError("arch: head widths must be positive, classes >= 2");
    }
}

Swin::Swin(ArchConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int64_t w = cfg_.window;

    // relative position index per ordered token pair inside one window
    rel_index_.reserve(static_cast<size_t>(w * w * w * w));
    for (int64_t a = 0; a < w * w; ++a) {
        const int64_t ay = a / w, ax = a % w;
        for (int64_t b = 0; b < w * w; ++b) {
            const int64_t by = b / w, bx = b % w;
            rel_index_.push_back((ay - by + w - 1) * (2 * w - 1) + (ax - bx + w - 1));
        }
    }

    auto build_plan = [&](int64_t grid, bool shifted) {
        const int64_t shift = shifted ? w / 2 : 0;
        const int64_t nw = grid / w;
        WindowPlan plan;
        plan.window_rows.resize(static_cast<size_t>(nw * nw));
        std::vector<int64_t> gather_order;
        gather_order.reserve(static_cast<size_t>(grid * grid));
        // band(x): which shift region a source coordinate falls into
        auto band = [&](int64_t x) -> int64_t {
            if (x < grid - w) return 0;
            if (x < grid - shift) return 1;
            return 2;
        };
        for (int64_t wi = 0; wi < nw; ++wi) {
            for (int64_t wj = 0; wj < nw; ++wj) {
                auto& rows = plan.window_rows[static_cast<size_t>(wi * nw + wj)];
                rows.reserve(static_cast<size_t>(w * w));
                std::vector<int64_t> region;
                region.reserve(static_cast<size_t>(w * w));
                for (int64_t oi = 0; oi < w; ++oi) {
                    for (int64_t oj = 0; oj < w; ++oj) {
                        const int64_t si = (wi * w + oi + shift) % grid;
                        const int64_t sj = (wj * w + oj + shift) % grid;
                        rows.push_back(si * grid + sj);
                        region.push_back(band(si) * 3 + band(sj));
                    }
                }
                gather_order.insert(gather_order.end(), rows.begin(), rows.end());
                if (shift > 0) {
                    Tensor mask({w * w, w * w});
                    bool any = false;
                    for (int64_t a = 0; a < w * w; ++a) {
                        for (int64_t b = 0; b < w * w; ++b) {
                            if (region[static_cast<size_t>(a)] != region[static_cast<size_t>(b)]) {
                                mask.at(a, b) = kMaskedAttention;
                                any = true;
                            }
                        }
                    }
                    plan.masks.push_back(any ? std::move(mask) : Tensor({w * w, w * w}));
                }
            }
        }
        plan.scatter = invert_permutation(gather_order);
        plans_.emplace(std::make_pair(grid, shifted), std::move(plan));
    };

    for (int64_t s = 0; s < cfg_.stages; ++s) {
        const int64_t grid = cfg_.stage_grid(s);
        build_plan(grid, false);
        if (w < grid) build_plan(grid, true);
        if (s + 1 < cfg_.stages) {
            std::vector<int64_t> order;
            order.reserve(static_cast<size_t>(grid * grid));
            for (int64_t i = 0; i < grid / 2; ++i) {
                for (int64_t j = 0; j < grid / 2; ++j) {
                    for (int64_t k = 0; k < 4; ++k) {
                        order.push_back((2 * i + k / 2) * grid + (2 * j + k % 2));
                    }
                }
            }
            merge_orders_[grid] = std::move(order);
        }
    }
}

const Swin::WindowPlan& Swin::plan_for(int64_t grid, bool shifted) const {
    return plans_.at({grid, shifted});
}

ModelParams Swin::init_params(Rng& rng) const {
    ModelParams p;
    auto mat = [&](std::vector<int64_t> shape) {
        Tensor t(shape);
        for (auto& v : t.data) v = rng.normal(0.0, kInitStd);
        return t;
    };
    auto zeros = [](std::vector<int64_t> shape) { return Tensor(std::move(shape)); };
    auto ones = [](std::vector<int64_t> shape) { return Tensor(std::move(shape), 1.0); };

    const int64_t e = cfg_.embed_dim;
    const int64_t px = cfg_.patch_pixels();
    const int64_t tbl = (2 * cfg_.window - 1) * (2 * cfg_.window - 1);

    p.add("enc.embed.w", mat({px, e}));
    p.add("enc.embed.b", zeros({e}));
    p.add("enc.pos", mat({cfg_.token_count(), e}));
    p.add("enc.mask", mat({1, e}));

    auto add_block = [&](const std::string& prefix, int64_t c, int64_t n_heads) {
        const int64_t d = c / n_heads;
        p.add(prefix + "ln1.g", ones({c}));
        p.add(prefix + "ln1.b", zeros({c}));
        for (int64_t h = 0; h < n_heads; ++h) {
            const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
            p.add(hp + "wq", mat({c, d}));
            p.add(hp + "bq", zeros({d}));
            p.add(hp + "wk", mat({c, d}));
            p.add(hp + "bk", zeros({d}));
            p.add(hp + "wv", mat({c, d}));
            p.add(hp + "bv", zeros({d}));
            p.add(hp + "wo", mat({d, c}));
            p.add(hp + "rel", zeros({tbl, 1}));
        }
        p.add(prefix + "attn.bo", zeros({c}));
        p.add(prefix + "ln2.g", ones({c}));
        p.add(prefix + "ln2.b", zeros({c}));
        p.add(prefix + "mlp.w1", mat({c, c * cfg_.mlp_ratio}));
        p.add(prefix + "mlp.b1", zeros({c * cfg_.mlp_ratio}));
        p.add(prefix + "mlp.w2", mat({c * cfg_.mlp_ratio, c}));
        p.add(prefix + "mlp.b2", zeros({c}));
    };

    for (int64_t s = 0; s < cfg_.stages; ++s) {
        const int64_t c = cfg_.stage_channels(s);
        for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b) {
            add_block("enc.s" + std::to_string(s) + ".b" + std::to_string(b) + ".", c,
                      cfg_.stage_heads(s));
        }
        if (s + 1 < cfg_.stages) {
            const std::string mp = "enc.merge" + std::to_string(s) + ".";
            p.add(mp + "ln.g", ones({4 * c}));
            p.add(mp + "ln.b", zeros({4 * c}));
            p.add(mp + "w", mat({4 * c, 2 * c}));
            p.add(mp + "b", zeros({2 * c}));
        }
    }

    for (int64_t k = 0; k + 1 < cfg_.stages; ++k) {
        const int64_t cs = cfg_.stage_channels(cfg_.stages - 1 - k);
        const std::string sp = "dec.split" + std::to_string(k) + ".";
        p.add(sp + "w", mat({cs, 2 * cs}));
        p.add(sp + "b", zeros({2 * cs}));
        const int64_t c_out = cs / 2;
        for (int64_t b = 0; b < cfg_.decoder_blocks_per_stage; ++b) {
            add_block("dec.s" + std::to_string(k) + ".b" + std::to_string(b) + ".", c_out,
                      cfg_.stage_heads(cfg_.stages - 2 - k));
        }
    }
    p.add("dec.ln.g", ones({e}));
    p.add("dec.ln.b", zeros({e}));
    p.add("dec.pred.w", mat({e, px}));
    p.add("dec.pred.b", zeros({px}));

    const int64_t f = cfg_.feature_dim();
    p.add("proj.w1", mat({f, cfg_.proj_hidden}));
    p.add("proj.b1", zeros({cfg_.proj_hidden}));
    p.add("proj.w2", mat({cfg_.proj_hidden, cfg_.proj_dim}));
    p.add("proj.b2", zeros({cfg_.proj_dim}));
    p.add("pred.w", mat({cfg_.proj_dim, cfg_.proj_dim}));
    p.add("pred.b", zeros({cfg_.proj_dim}));

    p.add("cls.w1", mat({f, cfg_.classifier_hidden}));
    p.add("cls.b1", zeros({cfg_.classifier_hidden}));
    p.add("cls.w2", mat({cfg_.classifier_hidden, cfg_.num_classes}));
    p.add("cls.b2", zeros({cfg_.num_classes}));
    return p;
}

NodeId Swin::embed(Graph& g, const Tensor& patches, const MaskPlan& plan,
                   const BoundParams& w) const {
    if (patches.rank() != 2 || patches.shape[0] != cfg_.token_count() ||
        patches.shape[1] != cfg_.patch_pixels()) {
        throw ShapeMismatch("embed: patches " + shape_str(patches.shape) +
                            " do not match the configured grid");
    }
    if (plan.patch_count() != cfg_.token_count()) {
        throw ShapeMismatch("embed: mask plan patch count mismatch");
    }
    NodeId proj = g.add_rowvec(g.matmul(g.constant(patches), w.at("enc.embed.w")),
                               w.at("enc.embed.b"));
    NodeId with_pos = g.add(proj, w.at("enc.pos"));
    if (plan.masked.empty()) return with_pos;

    const int64_t n_masked = static_cast<int64_t>(plan.masked.size());
    NodeId mask_block;
    if (cfg_.use_mask_token) {
        NodeId ones_col = g.constant(Tensor({n_masked, 1}, 1.0));
        mask_block = g.matmul(ones_col, w.at("enc.mask"));
    } else {
        mask_block = g.constant(Tensor({n_masked, cfg_.embed_dim}));
    }
    if (plan.visible.empty()) return mask_block;

    NodeId vis = g.gather_rows(with_pos, plan.visible);
    const NodeId parts[] = {vis, mask_block};
    NodeId stacked = g.concat_rows(parts);
    // stacked = [visible..., masked...]; route each token back to its slot
    std::vector<int64_t> order(static_cast<size_t>(cfg_.token_count()));
    for (size_t i = 0; i < plan.visible.size(); ++i) {
        order[static_cast<size_t>(plan.visible[i])] = static_cast<int64_t>(i);
    }
    for (size_t j = 0; j < plan.masked.size(); ++j) {
        order[static_cast<size_t>(plan.masked[j])] =
            static_cast<int64_t>(plan.visible.size() + j);
    }
    return g.gather_rows(stacked, std::move(order));
}

NodeId Swin::attention_block(Graph& g, NodeId tokens, int64_t grid, int64_t channels,
                             int64_t n_heads, bool shifted, const std::string& prefix,
                             const BoundParams& w) const {
    const int64_t d = channels / n_heads;
    const WindowPlan& plan = plan_for(grid, shifted);

    NodeId normed = g.add_rowvec(
        g.mul_rowvec(g.layernorm_lastdim(tokens), w.at(prefix + "ln1.g")),
        w.at(prefix + "ln1.b"));

    // per-head relative position bias, shared across windows
    std::vector<NodeId> rel_bias(static_cast<size_t>(n_heads));
    for (int64_t h = 0; h < n_heads; ++h) {
        NodeId table = w.at(prefix + "attn.h" + std::to_string(h) + ".rel");
        rel_bias[static_cast<size_t>(h)] = g.reshape(
            g.gather_rows(table, rel_index_),
            {cfg_.window * cfg_.window, cfg_.window * cfg_.window});
    }

    std::vector<NodeId> window_out;
    window_out.reserve(plan.window_rows.size());
    for (size_t wi = 0; wi < plan.window_rows.size(); ++wi) {
        NodeId xw = g.gather_rows(normed, plan.window_rows[wi]);
        NodeId mask = -1;
        if (!plan.masks.empty()) mask = g.constant(plan.masks[wi]);
        NodeId merged = -1;
        for (int64_t h = 0; h < n_heads; ++h) {
            const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
            NodeId q = g.add_rowvec(g.matmul(xw, w.at(hp + "wq")), w.at(hp + "bq"));
            NodeId k = g.add_rowvec(g.matmul(xw, w.at(hp + "wk")), w.at(hp + "bk"));
            NodeId v = g.add_rowvec(g.matmul(xw, w.at(hp + "wv")), w.at(hp + "bv"));
            NodeId scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
            scores = g.add(scores, rel_bias[static_cast<size_t>(h)]);
            if (mask >= 0) scores = g.add(scores, mask);
            NodeId attn = g.softmax_lastdim(scores);
            NodeId head = g.matmul(g.matmul(attn, v), w.at(hp + "wo"));
            merged = (merged < 0) ? head : g.add(merged, head);
        }
        window_out.push_back(g.add_rowvec(merged, w.at(prefix + "attn.bo")));
    }
    NodeId stacked = g.concat_rows(window_out);
    NodeId attn_out = g.gather_rows(stacked, plan.scatter);
    NodeId x = g.add(tokens, attn_out);

    NodeId normed2 = g.add_rowvec(
        g.mul_rowvec(g.layernorm_lastdim(x), w.at(prefix + "ln2.g")),
        w.at(prefix + "ln2.b"));
    NodeId hidden = g.gelu(g.add_rowvec(g.matmul(normed2, w.at(prefix + "mlp.w1")),
                                        w.at(prefix + "mlp.b1")));
    NodeId mlp = g.add_rowvec(g.matmul(hidden, w.at(prefix + "mlp.w2")),
                              w.at(prefix + "mlp.b2"));
    return g.add(x, mlp);
}

NodeId Swin::merge_tokens(Graph& g, NodeId tokens, int64_t grid, const std::string& prefix,
                          const BoundParams& w) const {
    const int64_t c = g.val(tokens).shape[1];
    NodeId reordered = g.gather_rows(tokens, merge_orders_.at(grid));
    NodeId grouped = g.reshape(reordered, {grid * grid / 4, 4 * c});
    NodeId normed = g.add_rowvec(
        g.mul_rowvec(g.layernorm_lastdim(grouped), w.at(prefix + "ln.g")),
        w.at(prefix + "ln.b"));
    return g.add_rowvec(g.matmul(normed, w.at(prefix + "w")), w.at(prefix + "b"));
}

NodeId Swin::split_tokens(Graph& g, NodeId tokens, int64_t grid, int64_t channels,
                          const std::string& prefix, const BoundParams& w) const {
    NodeId expanded = g.add_rowvec(g.matmul(tokens, w.at(prefix + "w")), w.at(prefix + "b"));
    NodeId regrouped = g.reshape(expanded, {grid * grid * 4, channels / 2});
    return g.gather_rows(regrouped, invert_permutation(merge_orders_.at(grid * 2)));
}

NodeId Swin::encode(Graph& g, NodeId tokens, const BoundParams& w) const {
    NodeId x = tokens;
    for (int64_t s = 0; s < cfg_.stages; ++s) {
        const int64_t grid = cfg_.stage_grid(s);
        for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b) {
            const bool shifted = (b % 2 == 1) && cfg_.window < grid;
            x = attention_block(g, x, grid, cfg_.stage_channels(s), cfg_.stage_heads(s),
                                shifted,
                                "enc.s" + std::to_string(s) + ".b" + std::to_string(b) + ".", w);
        }
        if (s + 1 < cfg_.stages) {
            x = merge_tokens(g, x, grid, "enc.merge" + std::to_string(s) + ".", w);
        }
    }
    return x;
}

std::vector<std::pair<int64_t, int64_t>> Swin::stage_dims() const {
    std::vector<std::pair<int64_t, int64_t>> dims;
    for (int64_t s = 0; s < cfg_.stages; ++s) {
        dims.emplace_back(cfg_.stage_grid(s), cfg_.stage_channels(s));
    }
    return dims;
}

NodeId Swin::decode_patches(Graph& g, NodeId encoded, const BoundParams& w) const {
    NodeId x = encoded;
    for (int64_t k = 0; k + 1 < cfg_.stages; ++k) {
        const int64_t grid = cfg_.stage_grid(cfg_.stages - 1 - k);
        const int64_t c = cfg_.stage_channels(cfg_.stages - 1 - k);
        x = split_tokens(g, x, grid, c, "dec.split" + std::to_string(k) + ".", w);
        const int64_t out_grid = grid * 2;
        for (int64_t b = 0; b < cfg_.decoder_blocks_per_stage; ++b) {
            const bool shifted = (b % 2 == 1) && cfg_.window < out_grid;
            x = attention_block(g, x, out_grid, c / 2, cfg_.stage_heads(cfg_.stages - 2 - k),
                                shifted,
                                "dec.s" + std::to_string(k) + ".b" + std::to_string(b) + ".", w);
        }
    }
    NodeId normed = g.add_rowvec(g.mul_rowvec(g.layernorm_lastdim(x), w.at("dec.ln.g")),
                                 w.at("dec.ln.b"));
    return g.add_rowvec(g.matmul(normed, w.at("dec.pred.w")), w.at("dec.pred.b"));
}

NodeId Swin::decode_image(Graph& g, NodeId encoded, const BoundParams& w) const {
    return reassemble_node(g, decode_patches(g, encoded, w), cfg_.patch_grid());
}

NodeId Swin::pool(Graph& g, NodeId tokens) const { return g.mean_rows(tokens); }

NodeId Swin::project(Graph& g, NodeId pooled, const BoundParams& w) const {
    NodeId row = g.reshape(pooled, {1, cfg_.feature_dim()});
    NodeId h = g.relu(g.add_rowvec(g.matmul(row, w.at("proj.w1")), w.at("proj.b1")));
    NodeId out = g.add_rowvec(g.matmul(h, w.at("proj.w2")), w.at("proj.b2"));
    return g.l2_normalize(g.reshape(out, {cfg_.proj_dim}));
}

NodeId Swin::predict_embed(Graph& g, NodeId embedding, const BoundParams& w) const {
    NodeId row = g.reshape(embedding, {1, cfg_.proj_dim});
    NodeId out = g.add_rowvec(g.matmul(row, w.at("pred.w")), w.at("pred.b"));
    return g.l2_normalize(g.reshape(out, {cfg_.proj_dim}));
}

NodeId Swin::classify(Graph& g, NodeId pooled, const BoundParams& w) const {
    NodeId row = g.reshape(pooled, {1, cfg_.feature_dim()});
    NodeId h = g.relu(g.add_rowvec(g.matmul(row, w.at("cls.w1")), w.at("cls.b1")));
    NodeId out = g.add_rowvec(g.matmul(h, w.at("cls.w2")), w.at("cls.b2"));
    return g.reshape(out, {cfg_.num_classes});
}

Tensor Swin::features(const ModelParams& params, const Tensor& image) const {
    std::vector<Tensor> one = features_batch(params, std::span<const Tensor>(&image, 1));
    return one[0];
}

std::vector<Tensor> Swin::features_batch(const ModelParams& params,
                                         std::span<const Tensor> images) const {
    Graph g;
    BoundParams w = bind_params(g, params.section("enc."), false);
    MaskPlan none = MaskPlan::from_masked(cfg_.token_count(), 0.0, {});
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const Tensor& image : images) {
        const Tensor patches = partition_patches(image, cfg_.patch_side);
        NodeId tokens = embed(g, patches, none, w);
        NodeId pooled = pool(g, encode(g, tokens, w));
        out.push_back(g.val(pooled));
    }
    return out;
}

Tensor Swin::reconstruct(const ModelParams& params, const Tensor& image,
                         const MaskPlan& plan) const {
    Graph g;
    ModelParams enc_dec = params.section("enc.");
    enc_dec.merge(params.section("dec."));
    BoundParams w = bind_params(g, enc_dec, false);
    const Tensor patches = partition_patches(image, cfg_.patch_side);
    NodeId tokens = embed(g, patches, plan, w);
    NodeId img = decode_image(g, encode(g, tokens, w), w);
    return g.val(img);
}

double Swin::reconstruction_loss(const ModelParams& params, const Tensor& image,
                                 const MaskPlan& plan) const {
    return masked_mse(reconstruct(params, image, plan), image, plan, cfg_.patch_grid());
}

Tensor Swin::embedding(const ModelParams& params, const Tensor& image,
                       bool with_predictor) const {
    Graph g;
    ModelParams sect = params.section("enc.");
    sect.merge(params.section("proj."));
    if (with_predictor) sect.merge(params.section("pred."));
    BoundParams w = bind_params(g, sect, false);
    MaskPlan none = MaskPlan::from_masked(cfg_.token_count(), 0.0, {});
    const Tensor patches = partition_patches(image, cfg_.patch_side);
    NodeId pooled = pool(g, encode(g, embed(g, patches, none, w), w));
    NodeId emb = project(g, pooled, w);
    if (with_predictor) emb = predict_embed(g, emb, w);
    return g.val(emb);
}

}  // namespace selffed
