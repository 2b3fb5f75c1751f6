#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mixsign/backbone/stem.h"
#include "mixsign/head/head.h"
#include "mixsign/mp/message_passing.h"

namespace mixsign {

// Full recognition network: stem, graph stages separated by patch merges,
// node pooling and the temporal head. The translation decoder is optional.
struct ModelConfig {
    std::size_t dim = 32;  // stem output channels; the stem uses D/4, D/2, D
    std::size_t hidden = 64;
    std::size_t stages = 2;
    std::vector<std::size_t> k_l{4, 4};
    std::vector<std::size_t> k_t{16, 16};
    DistanceKind distance = DistanceKind::euclidean;
    Aggregation aggregation = Aggregation::edgeconv_max;
    std::vector<GraphModule> order{GraphModule::hsg, GraphModule::tsg, GraphModule::lsg};
    double drop_rate = 0.0;
    std::size_t embed_dim = 32;
    std::size_t decoder_hidden = 64;

    void validate() const;
    StemConfig stem() const;
    StageConfig stage(std::size_t i) const;
    std::size_t stage_dim(std::size_t i) const { return dim << i; }  // patch merges double the width
    HeadConfig head() const { return HeadConfig{hidden, 5, 2}; }
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);  // unknown keys rejected
};

struct ModelWeights {
    StemWeights stem;
    std::vector<StageWeights> stages;
    std::vector<ConvWeights> merges;  // merges[i] sits before stage i + 1
    HeadWeights head;
    std::optional<DecoderWeights> decoder;
};

ModelWeights init_model(const ModelConfig& cfg, std::size_t classes, Rng& rng);
void add_decoder(ModelWeights& w, const ModelConfig& cfg, std::size_t text_vocab, Rng& rng);

// Only parameters that the configured order actually uses are listed, so
// ablated modules neither train nor decay.
ParamList model_parameters(const ModelConfig& cfg, const ModelWeights& w);

struct ModelForward {
    HeadOutput head;
    std::vector<StageGraphs> graphs;  // one entry per stage
};

// frames [T, H, W, 3]. drop_seed enables edge dropout when drop_rate > 0.
ModelForward model_forward(const Tensor& frames, const ModelConfig& cfg, const ModelWeights& w,
                           std::optional<std::uint64_t> drop_seed = std::nullopt);

}  // namespace mixsign
