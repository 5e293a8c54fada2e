#include "selffed/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace selffed {

void ModelParams::add(std::string name, Tensor t, bool trainable) {
    if (index_.contains(name)) throw Error("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.push_back(NamedTensor{std::move(name), std::move(t), trainable});
}

bool ModelParams::has(std::string_view name) const {
    return index_.contains(std::string(name));
}

Tensor& ModelParams::at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error("unknown parameter: " + std::string(name));
    return items_[it->second].tensor;
}

const Tensor& ModelParams::at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error("unknown parameter: " + std::string(name));
    return items_[it->second].tensor;
}

int64_t ModelParams::numel() const {
    int64_t n = 0;
    for (const auto& it : items_) n += it.tensor.numel();
    return n;
}

ModelParams ModelParams::section(std::string_view prefix) const {
    ModelParams out;
    for (const auto& it : items_) {
        if (it.name.starts_with(prefix)) out.add(it.name, it.tensor, it.trainable);
    }
    return out;
}

void ModelParams::assign_from(const ModelParams& src) {
    for (const auto& it : src.items_) {
        auto dst = index_.find(it.name);
        if (dst == index_.end()) throw Error("assign_from: unknown parameter " + it.name);
        Tensor& t = items_[dst->second].tensor;
        if (t.shape != it.tensor.shape) {
            throw ShapeMismatch("assign_from " + it.name + ": " + shape_str(t.shape) + " vs " +
                                shape_str(it.tensor.shape));
        }
        t.data = it.tensor.data;
    }
}

void ModelParams::merge(const ModelParams& other) {
    for (const auto& it : other.items_) add(it.name, it.tensor, it.trainable);
}

bool ModelParams::same_layout(const ModelParams& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].name != other.items_[i].name) return false;
        if (items_[i].tensor.shape != other.items_[i].tensor.shape) return false;
    }
    return true;
}

namespace {

constexpr char kMagic[4] = {'S', 'F', 'W', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& b, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(b, u);
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size()) throw IoError("truncated weight container");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(&b[pos]), n);
        pos += n;
        return s;
    }
    bool done() const { return pos == b.size(); }
};

}  // namespace

std::vector<uint8_t> ModelParams::serialize() const {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    for (const auto& it : items_) {
        put_u32(out, static_cast<uint32_t>(it.name.size()));
        out.insert(out.end(), it.name.begin(), it.name.end());
        put_u32(out, static_cast<uint32_t>(it.tensor.shape.size()));
        for (int64_t e : it.tensor.shape) put_u64(out, static_cast<uint64_t>(e));
        for (double v : it.tensor.data) put_f64(out, v);
    }
    return out;
}

ModelParams ModelParams::deserialize(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(4) != std::string(kMagic, 4)) throw IoError("bad magic, not a weight container");
    const uint32_t version = r.u32();
    if (version != kVersion) throw IoError("unsupported container version " + std::to_string(version));
    ModelParams out;
    while (!r.done()) {
        const uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const uint32_t rank = r.u32();
        std::vector<int64_t> shape(rank);
        for (auto& e : shape) e = static_cast<int64_t>(r.u64());
        Tensor t(shape);
        for (auto& v : t.data) v = r.f64();
        out.add(std::move(name), std::move(t));
    }
    return out;
}

void ModelParams::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

ModelParams ModelParams::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

void sgd_step(ModelParams& params, const GradMap& grads, double lr) {
    for (auto& it : params.items()) {
        if (!it.trainable) continue;
        auto g = grads.by_name.find(it.name);
        if (g == grads.by_name.end()) {
            throw MissingGradient("no gradient for trainable parameter " + it.name);
        }
        if (g->second.size() != it.tensor.data.size()) {
            throw ShapeMismatch("gradient extent mismatch for " + it.name);
        }
        for (size_t i = 0; i < it.tensor.data.size(); ++i) {
            it.tensor.data[i] -= lr * g->second[i];
        }
        require_finite(it.tensor, "sgd_step(" + it.name + ")");
    }
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(ModelParams& params, const GradMap& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& it : params.items()) {
        if (!it.trainable) continue;
        auto g = grads.by_name.find(it.name);
        if (g == grads.by_name.end()) {
            throw MissingGradient("no gradient for trainable parameter " + it.name);
        }
        Slot& s = slots_[it.name];
        if (s.m.size() != it.tensor.data.size()) {
            s.m.assign(it.tensor.data.size(), 0.0);
            s.v.assign(it.tensor.data.size(), 0.0);
        }
        for (size_t i = 0; i < it.tensor.data.size(); ++i) {
            const double gi = g->second[i];
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            it.tensor.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) +
                                       weight_decay_ * it.tensor.data[i]);
        }
        require_finite(it.tensor, "adamw_step(" + it.name + ")");
    }
}

Optimizer Optimizer::sgd() { return Optimizer{}; }

Optimizer Optimizer::adamw(double weight_decay) {
    Optimizer o;
    o.use_adamw_ = true;
    o.adamw_ = AdamW(0.9, 0.999, 1e-8, weight_decay);
    return o;
}

void Optimizer::step(ModelParams& params, const GradMap& grads, double lr) {
    if (use_adamw_) {
        adamw_.step(params, grads, lr);
    } else {
        sgd_step(params, grads, lr);
    }
}

NodeId BoundParams::at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw Error("parameter not bound: " + name);
    return it->second;
}

BoundParams bind_params(Graph& g, const ModelParams& params, bool trainable) {
    BoundParams out;
    for (const auto& it : params.items()) {
        out.ids[it.name] = g.leaf(it.tensor, trainable && it.trainable);
    }
    return out;
}

GradMap collect_grads(const Graph& g, const BoundParams& bound) {
    GradMap out;
    for (const auto& [name, id] : bound.ids) {
        const auto& grad = g.grad(id);
        if (grad.empty()) throw MissingGradient("backward left no gradient for " + name);
        out.by_name[name] = grad;
    }
    return out;
}

}  // namespace selffed
