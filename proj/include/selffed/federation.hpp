#pragma once

#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "selffed/contrastive.hpp"
#include "selffed/datalab.hpp"
#include "selffed/probe.hpp"
#include "selffed/swin.hpp"

namespace selffed {

enum class AggregationMode { kFedAvg, kSelfFedLiteral, kSelfFedNormalized };
enum class SelectionSchedule { kUniform, kSkewed };

struct FederationConfig {
    int64_t num_clients = 5;
    int64_t clients_per_round = 5;
    int64_t rounds_phase1 = 200;
    int64_t rounds_phase2 = 100;
    int64_t local_epochs = 1;
    int64_t batch_size = 32;
    double lr = 1e-3;
    double lr_finetune = 3e-3;   // phase-2 local steps use their own rate
    double beta = 0.95;
    AggregationMode aggregation = AggregationMode::kSelfFedNormalized;
    SelectionSchedule selection = SelectionSchedule::kUniform;
    std::vector<double> selection_weights;  // per client, used by the skewed schedule
    bool use_adamw = false;
    bool use_adamw_finetune = false;
    int64_t warmup_epochs = 5;
    int64_t workers = 1;

    void validate() const;
};

/// One client: its data shard (ids into the shared store), its private
/// model copy, and how often its update has been aggregated.
struct ClientState {
    int64_t id = 0;
    std::vector<uint64_t> unlabeled_ids;
    std::vector<uint64_t> labeled_ids;
    ModelParams params;          // enc + dec + cls sections
    int64_t participation = 0;   // rounds in which this client's update was aggregated
};

/// Images/labels addressed by stable sample id.
struct SampleStore {
    explicit SampleStore(const Dataset& data);
    const Tensor& image(uint64_t id) const;
    int64_t label(uint64_t id) const;
    int64_t num_classes() const { return data_->num_classes; }

private:
    const Dataset* data_;
    std::unordered_map<uint64_t, size_t> index_;
};

struct RoundReport {
    int64_t round = 0;
    int phase = 0;
    std::vector<int64_t> selected;
    std::vector<double> client_losses;  // aligned with selected
    std::vector<double> agg_weights;    // aligned with selected
    double global_loss = std::numeric_limits<double>::quiet_NaN();  // shard-size weighted
    double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    double eval_recon = std::numeric_limits<double>::quiet_NaN();
    double contrastive_loss = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

// ---- client selection ----

/// Uniform (or weighted, without replacement) subset of clients_per_round
/// clients; bumps the participation counter of everyone selected. Returned
/// ids are sorted ascending.
std::vector<int64_t> select_clients(int64_t round, const FederationConfig& cfg,
                                    std::vector<ClientState>& clients, Rng& rng);

/// Same schedule restricted to an eligible subset (clients whose shard for
/// the current phase is non-empty); the per-round count clamps to the
/// eligible population.
std::vector<int64_t> select_clients(int64_t round, const FederationConfig& cfg,
                                    std::vector<ClientState>& clients, Rng& rng,
                                    const std::vector<int64_t>& eligible);

// ---- aggregation ----

struct ClientUpdate {
    ModelParams params;
    int64_t sample_count = 0;
    int64_t frequency = 0;
};

/// Per-update coefficients. fedavg: n_t / n. selffed-normalized:
/// n_t b^{F_t} / sum(n_t b^{F_t}). selffed-literal: (n_t / n) b^{F_t} with
/// no normalizer, exactly the stated recursion. At beta == 1 all three are
/// bit-identical.
std::vector<double> aggregation_weights(AggregationMode mode, double beta,
                                        std::span<const std::pair<int64_t, int64_t>> n_and_f);

ModelParams aggregate_updates(std::span<const ClientUpdate> updates, AggregationMode mode,
                              double beta);
ModelParams aggregate_fedavg(std::span<const ClientUpdate> updates);
ModelParams aggregate_selffed(std::span<const ClientUpdate> updates, double beta,
                              AggregationMode mode);

// ---- local training ----

struct LocalTrainOptions {
    int64_t epochs = 1;
    int64_t batch_size = 32;
    double lr = 1e-3;
    double mask_ratio = 0.6;
    bool mask_per_window = false;
    int64_t warmup_steps = 0;  // linear lr ramp measured in optimizer steps
    bool use_adamw = false;
    AugmentSpec augment_spec;
    uint64_t seed = 0;
    int64_t round = 0;
    int64_t keep_reconstructions = 0;  // phase 1: decoder outputs kept for the server pool
};

struct LocalTrainResult {
    ModelParams encoder;  // "enc." section only; heads and decoder stay local
    double mean_loss = 0.0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<Tensor> reconstructions;
};

/// Masked-reconstruction training on the unlabeled shard. The broadcast
/// encoder overwrites the client encoder first; the decoder is the
/// client's own and persists across rounds.
LocalTrainResult local_pretrain(ClientState& client, const ModelParams& global_encoder,
                                const Swin& model, const SampleStore& store,
                                const LocalTrainOptions& opt);

/// Supervised cross-entropy training of encoder + private classifier on
/// the labeled shard. Only the encoder section is returned for
/// aggregation.
LocalTrainResult local_finetune(ClientState& client, const ModelParams& global_encoder,
                                const Swin& model, const SampleStore& store,
                                const LocalTrainOptions& opt);

// ---- server state and the two protocol phases ----

struct ServerState {
    TwinNetworks twins;        // enc + proj + pred sections on both sides
    ModelParams eval_decoder;  // "dec." aggregate, kept only to score reconstructions
    MemoryQueue queue;
    std::vector<Tensor> recon_pool;  // ring of sources for server-side view pairs
    int64_t pool_capacity = 64;
    int64_t pool_cursor = 0;

    static ServerState make(const ModelParams& init, double target_decay,
                            int64_t queue_capacity, int64_t pool_capacity);
    const ModelParams& global_snapshot() const { return twins.online; }
    void pool_push(const Tensor& image);
};

struct EvalContext {
    std::vector<Tensor> calib_images;
    std::vector<int64_t> calib_labels;
    std::vector<Tensor> test_images;
    std::vector<int64_t> test_labels;
    std::vector<Tensor> recon_images;   // fixed subset for the reconstruction score
    std::vector<MaskPlan> recon_masks;  // fixed seeded masks, one per image

    static EvalContext build(const Swin& model, const Dataset& calib, const Dataset& test,
                             double mask_ratio, int64_t recon_subset, uint64_t seed);
};

/// Linear probe refit on the calibration features, scored on the test set.
double evaluate_probe_accuracy(const Swin& model, const ModelParams& encoder,
                               const EvalContext& eval);
/// Mean masked reconstruction error over the fixed eval subset.
double evaluate_reconstruction(const Swin& model, const ModelParams& encoder,
                               const ModelParams& decoder, const EvalContext& eval);

struct ProtocolOptions {
    FederationConfig fed;
    double mask_ratio = 0.6;
    bool mask_per_window = false;
    AugmentSpec pretrain_aug;
    AugmentSpec finetune_aug;
    ContrastiveConfig contrastive;
    bool server_step_enabled = true;
    int64_t server_step_every = 1;
    int64_t contrastive_batch = 8;
    double contrastive_lr = 1e-3;
    int64_t eval_every = 1;
    int64_t pool_per_client = 2;
    uint64_t seed = 0;
};

using RoundCallback = std::function<void(const RoundReport&, const ModelParams& global)>;

/// Pre-training rounds: select, masked-reconstruction training on each
/// selected client, aggregate encoder uploads into the online network,
/// EMA the target, broadcast. The callback sees every finished round and
/// the post-aggregation global parameters.
std::vector<RoundReport> run_phase1(const Swin& model, const SampleStore& store,
                                    const ProtocolOptions& opt,
                                    std::vector<ClientState>& clients, ServerState& server,
                                    const EvalContext* eval, const RoundCallback& on_round);

/// Fine-tuning rounds: select, supervised local training, frequency-decayed
/// aggregation into the online network, optional server contrastive step,
/// broadcast, evaluate with a freshly fit linear probe.
std::vector<RoundReport> run_phase2(const Swin& model, const SampleStore& store,
                                    const ProtocolOptions& opt,
                                    std::vector<ClientState>& clients, ServerState& server,
                                    const EvalContext* eval, const RoundCallback& on_round);

}  // namespace selffed
