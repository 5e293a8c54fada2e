#pragma once

#include <span>
#include <vector>

#include "selffed/losses.hpp"
#include "selffed/params.hpp"
#include "selffed/patching.hpp"
#include "selffed/swin.hpp"

namespace selffed {

/// Online / target parameter pair. The online side trains by gradient; the
/// target side only ever moves by exponential moving average:
///   q <- decay * q + (1 - decay) * phi
struct TwinNetworks {
    ModelParams online;
    ModelParams target;
    double decay = 0.99;

    static TwinNetworks from_online(const ModelParams& online, double decay);
};

void ema_update(TwinNetworks& twins);

/// Two independently augmented views of one source image.
struct ViewPair {
    Tensor first;
    Tensor second;
    uint64_t source_id = 0;
};

ViewPair make_views(const Tensor& source, const AugmentSpec& spec, Rng& rng);

/// Fill the queue from target-network embeddings of a seeded image batch;
/// the contrastive loss is undefined on an empty queue.
void warm_fill_queue(MemoryQueue& queue, const Swin& model, const ModelParams& target,
                     std::span<const Tensor> images);

struct ServerStepResult {
    double loss = 0.0;
    int64_t pairs = 0;
};

/// One server-side consistency step: online embeds the first views (through
/// the prediction layer), target embeds the second views without gradient,
/// the mean InfoNCE over the batch drives one optimizer step on the online
/// encoder + projection + prediction sections, the target follows by EMA,
/// and the target embeddings are queued as future negatives.
ServerStepResult server_contrastive_step(TwinNetworks& twins, const Swin& model,
                                         std::span<const ViewPair> batch, MemoryQueue& queue,
                                         const ContrastiveConfig& cfg, Optimizer& opt,
                                         double lr);

}  // namespace selffed
