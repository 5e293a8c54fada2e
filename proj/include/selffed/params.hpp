#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "selffed/graph.hpp"
#include "selffed/tensor.hpp"

namespace selffed {

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// Named, ordered, flat collection of tensors. Sections are addressed by
/// name prefix ("enc.", "dec.", "proj.", "pred.", "cls.").
class ModelParams {
public:
    void add(std::string name, Tensor t, bool trainable = true);
    bool has(std::string_view name) const;
    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;

    size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    int64_t numel() const;

    const std::vector<NamedTensor>& items() const { return items_; }
    std::vector<NamedTensor>& items() { return items_; }

    /// Copy of all entries whose name starts with prefix (names kept intact).
    ModelParams section(std::string_view prefix) const;
    /// Overwrite entries that exist in src by name; shapes must match.
    void assign_from(const ModelParams& src);
    /// Append all entries of other; duplicate names rejected.
    void merge(const ModelParams& other);

    bool same_layout(const ModelParams& other) const;

    // flat binary container: "SFWT" magic, u32 version, then per tensor:
    // u32 name length, UTF-8 name, u32 rank, u64 extents, f64 data
    // (all integers and floats little-endian). Round-trips bit-exactly.
    std::vector<uint8_t> serialize() const;
    static ModelParams deserialize(const std::vector<uint8_t>& bytes);
    void save(const std::string& path) const;
    static ModelParams load(const std::string& path);

private:
    std::vector<NamedTensor> items_;
    std::unordered_map<std::string, size_t> index_;
};

/// Gradients keyed by parameter name.
struct GradMap {
    std::unordered_map<std::string, std::vector<double>> by_name;
};

/// Plain SGD update: w <- w - lr * g for every trainable entry.
/// Non-trainable entries are left untouched.
void sgd_step(ModelParams& params, const GradMap& grads, double lr);

/// Decoupled-weight-decay Adam, kept behind the same step interface as SGD.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
          double weight_decay = 0.01);
    void step(ModelParams& params, const GradMap& grads, double lr);

private:
    struct Slot {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
    std::unordered_map<std::string, Slot> slots_;
};

/// Uniform optimizer handle used by the training loops.
class Optimizer {
public:
    static Optimizer sgd();
    static Optimizer adamw(double weight_decay = 0.01);
    void step(ModelParams& params, const GradMap& grads, double lr);

private:
    bool use_adamw_ = false;
    AdamW adamw_;
};

/// Leaves created in a graph for a set of parameters, looked up by name.
struct BoundParams {
    std::unordered_map<std::string, NodeId> ids;
    NodeId at(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ModelParams& params, bool trainable);
/// Read back gradients after backward(); every bound leaf gets an entry.
GradMap collect_grads(const Graph& g, const BoundParams& bound);

}  // namespace selffed
