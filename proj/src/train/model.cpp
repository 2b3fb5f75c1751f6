#include "mixsign/train/model.h"

#include <stdexcept>

namespace mixsign {

void ModelConfig::validate() const {
    if (dim < 4 || dim % 4 != 0) throw std::invalid_argument("model dim must be a positive multiple of 4");
    if (hidden < 1 || embed_dim < 1 || decoder_hidden < 1) throw std::invalid_argument("model widths must be >= 1");
    if (stages < 1) throw std::invalid_argument("model needs at least one stage");
    if (k_l.size() != stages || k_t.size() != stages) {
        throw std::invalid_argument("k_l and k_t need one entry per stage (" + std::to_string(stages) + ")");
    }
    for (std::size_t i = 0; i < stages; ++i) stage(i).validate();
}

StemConfig ModelConfig::stem() const { return StemConfig{{dim / 4, dim / 2, dim}, {2, 2, 2}, 3, 1}; }

StageConfig ModelConfig::stage(std::size_t i) const {
    StageConfig s;
    s.order = order;
    s.aggregation = aggregation;
    s.k_l = k_l.at(i);
    s.k_t = k_t.at(i);
    s.distance = distance;
    s.drop_rate = drop_rate;
    s.hsg_stride = 2;
    return s;
}

nlohmann::json ModelConfig::to_json() const {
    std::vector<std::string> names;
    for (auto m : order) names.emplace_back(to_string(m));
    return {{"dim", dim},
            {"hidden", hidden},
            {"stages", stages},
            {"k_l", k_l},
            {"k_t", k_t},
            {"distance", std::string(to_string(distance))},
            {"aggregation", std::string(to_string(aggregation))},
            {"order", names},
            {"drop_rate", drop_rate},
            {"embed_dim", embed_dim},
            {"decoder_hidden", decoder_hidden}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto known = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw std::invalid_argument("unknown model config key '" + it.key() + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("dim", c.dim);
    get("hidden", c.hidden);
    get("stages", c.stages);
    if (j.contains("stages") && !j.contains("k_l")) c.k_l.assign(c.stages, 4);
    if (j.contains("stages") && !j.contains("k_t")) c.k_t.assign(c.stages, 16);
    get("k_l", c.k_l);
    get("k_t", c.k_t);
    if (j.contains("distance")) c.distance = parse_distance(j.at("distance").get<std::string>());
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    if (j.contains("order")) {
        c.order.clear();
        for (const auto& m : j.at("order")) c.order.push_back(parse_graph_module(m.get<std::string>()));
    }
    get("drop_rate", c.drop_rate);
    get("embed_dim", c.embed_dim);
    get("decoder_hidden", c.decoder_hidden);
    c.validate();
    return c;
}

ModelWeights init_model(const ModelConfig& cfg, std::size_t classes, Rng& rng) {
    cfg.validate();
    ModelWeights w;
    const StemConfig sc = cfg.stem();
    w.stem = init_stem(sc, rng);
    for (std::size_t i = 0; i < cfg.stages; ++i) {
        if (i > 0) w.merges.push_back(init_patch_merge(cfg.stage_dim(i - 1), rng));
        const std::size_t tap_dim = i == 0 ? sc.channels[static_cast<std::size_t>(sc.tap_block)] : cfg.stage_dim(i - 1);
        w.stages.push_back(init_stage(cfg.stage_dim(i), tap_dim, 2, rng));
    }
    w.head = init_head(cfg.stage_dim(cfg.stages - 1), classes, cfg.head(), rng);
    return w;
}

void add_decoder(ModelWeights& w, const ModelConfig& cfg, std::size_t text_vocab, Rng& rng) {
    w.decoder = init_decoder(text_vocab, 2 * cfg.hidden, cfg.embed_dim, cfg.decoder_hidden, rng);
}

ParamList model_parameters(const ModelConfig& cfg, const ModelWeights& w) {
    ParamList ps;
    collect(ps, "stem", w.stem);
    for (std::size_t i = 0; i < w.stages.size(); ++i) {
        const std::string p = "stage" + std::to_string(i + 1);
        if (i > 0) collect(ps, "merge" + std::to_string(i), w.merges[i - 1]);
        for (GraphModule m : cfg.order) {
            switch (m) {
                case GraphModule::hsg: collect(ps, p + ".hsg", w.stages[i].hsg); break;
                case GraphModule::tsg: collect(ps, p + ".tsg", w.stages[i].tsg); break;
                case GraphModule::lsg: collect(ps, p + ".lsg", w.stages[i].lsg); break;
            }
        }
    }
    collect(ps, "head", w.head);
    if (w.decoder) collect(ps, "decoder", *w.decoder);
    return ps;
}

ModelForward model_forward(const Tensor& frames, const ModelConfig& cfg, const ModelWeights& w,
                           std::optional<std::uint64_t> drop_seed) {
    StemOutput st = patchify_stem(frames, cfg.stem(), w.stem);
    GridSeq cur = std::move(st.grids);
    std::optional<GridSeq> tap = std::move(st.taps);
    ModelForward out;
    for (std::size_t i = 0; i < cfg.stages; ++i) {
        if (i > 0) {
            GridSeq merged = patch_merge(cur, w.merges[i - 1]);
            tap = std::move(cur);
            cur = std::move(merged);
        }
        std::optional<std::uint64_t> seed;
        if (drop_seed) seed = splitmix64(*drop_seed + i);
        StageResult r = mix_stage(cur, tap, cfg.stage(i), w.stages[i], nullptr, seed);
        cur = std::move(r.grids);
        out.graphs.push_back(std::move(r.graphs));
    }
    out.head = temporal_head(pool_nodes(cur), w.head);
    return out;
}

}  // namespace mixsign
