#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "selffed/rng.hpp"
#include "selffed/tensor.hpp"

namespace selffed {

enum class SplitTag { kTrain, kTest };

/// Image collection with labels and stable sample ids.
struct Dataset {
    std::vector<Tensor> images;  // H x W x C in [0,1]
    std::vector<int64_t> labels;
    std::vector<uint64_t> ids;
    int64_t num_classes = 0;
    SplitTag split = SplitTag::kTrain;

    size_t size() const { return images.size(); }
    void validate() const;
};

struct SynthSpec {
    int64_t num_classes = 2;
    int64_t per_class = 250;
    int64_t height = 32;
    int64_t width = 32;
    int64_t channels = 1;
    double noise = 0.05;
};

/// Procedurally rendered two-shape task: even classes are filled discs,
/// odd classes are crosses, at random position and scale, plus optional
/// additive noise. Cheap to generate and separable by a shallow model.
Dataset synth_dataset(const SynthSpec& spec, Rng& rng);

/// Stratified train/test split (deterministic per seed); test_fraction of
/// each class goes to the test set.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction, Rng& rng);

/// Class-to-client proportions and the realized assignment.
struct PartitionPlan {
    int64_t num_clients = 0;
    double delta = 0.0;
    std::vector<std::vector<double>> rho;        // [class][client], each row sums to 1
    std::vector<std::vector<uint64_t>> assignment;  // [client] -> sample ids

    void validate(const Dataset& data) const;
    std::string to_manifest_json() const;
};

/// Per-class Dirichlet(delta) proportions realized with largest-remainder
/// rounding; every sample lands on exactly one client.
PartitionPlan dirichlet_partition(const Dataset& data, int64_t num_clients, double delta,
                                  Rng& rng);

struct HeterogeneityReport {
    double mean_entropy = 0.0;    // mean over clients of label-histogram entropy
    double max_pairwise_tv = 0.0; // max total-variation distance between client label dists
    double score = 0.0;           // ln(classes) - mean_entropy; larger = more skewed
};

HeterogeneityReport heterogeneity_score(const PartitionPlan& plan, const Dataset& data);

/// Class-stratified labeled/unlabeled split of a shard. Keeps
/// ceil(fraction * n) samples labeled, proportions preserved within one
/// sample per class.
struct LabelSplit {
    std::vector<uint64_t> labeled;
    std::vector<uint64_t> unlabeled;
};

LabelSplit subsample_labels(const std::vector<uint64_t>& shard_ids,
                            const std::vector<int64_t>& shard_labels, double fraction, Rng& rng);

// ---- binary PGM (P5) / PPM (P6) ingestion and export ----

Tensor load_pnm(const std::string& path);                   // -> H x W x C in [0,1]
void save_pnm(const std::string& path, const Tensor& image);  // 8-bit quantization

/// Manifest: one "relative-path<space>label" pair per line, '#' comments.
Dataset load_folder(const std::string& dir, const std::string& manifest_path,
                    int64_t expect_h, int64_t expect_w, int64_t expect_c,
                    int64_t num_classes);

}  // namespace selffed
