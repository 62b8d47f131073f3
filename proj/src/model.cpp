#include "evmf/model.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace evmf {

std::string fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::full: return "full";
        case FusionMode::simple_mean: return "simple_mean";
        case FusionMode::simple_concat: return "simple_concat";
        case FusionMode::naf_only: return "naf_only";
        case FusionMode::cma_only: return "cma_only";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (n_paths() < 1) throw UsageError("at least one feature path must be enabled");
    if (num_classes < 2) throw UsageError("num_classes must be >= 2");
    if (image_channels != 1 && image_channels != 3)
        throw UsageError("image_channels must be 1 or 3");
    if (d_model_fusion < 1) throw UsageError("d_model_fusion must be positive");
}

std::vector<std::string> variant_names() {
    return {"DUHF", "DHF", "DU", "UHF", "Simple-Mean", "Simple-Concat", "NAF-Only",
            "CMA-Only"};
}

ModelConfig build_variant(const std::string& name, ModelConfig base) {
    base.use_dense = base.use_unet = base.use_trad = true;
    base.fusion_mode = FusionMode::full;
    if (name == "DUHF") {
    } else if (name == "DHF") {
        base.use_unet = false;
    } else if (name == "DU") {
        base.use_trad = false;
    } else if (name == "UHF") {
        base.use_dense = false;
    } else if (name == "Simple-Mean") {
        base.fusion_mode = FusionMode::simple_mean;
    } else if (name == "Simple-Concat") {
        base.fusion_mode = FusionMode::simple_concat;
    } else if (name == "NAF-Only") {
        base.fusion_mode = FusionMode::naf_only;
    } else if (name == "CMA-Only") {
        base.fusion_mode = FusionMode::cma_only;
    } else {
        std::string valid;
        for (const auto& v : variant_names()) valid += (valid.empty() ? "" : ", ") + v;
        throw UsageError("unknown variant '" + name + "' (valid: " + valid + ")");
    }
    return base;
}

Model::Model(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int d = cfg.d_model_fusion;

    if (cfg.use_dense) {
        dense = DenseBackboneParams::make(params, rng, "dense", cfg.image_channels,
                                          cfg.dense);
        VimConfig vc = cfg.vim_dense;
        vc.d_out = d;
        vim_dense = VimParams::make(params, rng, "vim_dense",
                                    dense_output_channels(cfg.dense), vc);
        spat_dense = SpatialAttnParams::make(params, rng, "spat_dense", cfg.spatial_kernel);
    }
    if (cfg.use_unet) {
        unet = UNetBackboneParams::make(params, rng, "unet", cfg.image_channels, cfg.unet);
        VimConfig vc = cfg.vim_unet;
        vc.d_out = d;
        vim_unet = VimParams::make(params, rng, "vim_unet", cfg.unet.base_channels, vc);
        spat_unet = SpatialAttnParams::make(params, rng, "spat_unet", cfg.spatial_kernel);
    }
    if (cfg.use_trad) {
        const int d_raw = cfg.features.dimension();
        const int token_dim = cfg.trad_mha_mode == TradMhaMode::scalar_tokens ? 1 : d_raw;
        // one head: scalar tokens have width 1, and the vector-token reading
        // is a single learned re-projection anyway
        trad_mha = MhaParams::make(params, rng, "trad_mha", token_dim, 1);
        trad_se = SeParams::make(params, rng, "trad_se", d_raw, cfg.trad_se_reduction);
        trad_fc = LinearLayer::make(params, rng, "trad_fc", d_raw, d);
    }

    const int n = cfg.n_paths();
    switch (cfg.fusion_mode) {
        case FusionMode::full:
            cma = CrossModalParams::make(params, rng, "cma", d, cfg.cma_heads);
            naf = NafParams::make(params, rng, "naf", n * d, d, cfg.naf);
            break;
        case FusionMode::cma_only:
            cma = CrossModalParams::make(params, rng, "cma", d, cfg.cma_heads);
            break;
        case FusionMode::naf_only:
            naf = NafParams::make(params, rng, "naf", n * d, d, cfg.naf);
            break;
        case FusionMode::simple_concat:
            concat_fc = LinearLayer::make(params, rng, "concat_fc", n * d, d);
            break;
        case FusionMode::simple_mean:
            break;
    }
    head = LinearLayer::make(params, rng, "head", d, cfg.num_classes);
}

static HeatMap to_heatmap(const std::vector<double>& v, int rows, int cols) {
    HeatMap h;
    h.rows = rows;
    h.cols = cols;
    h.v = v;
    return h;
}

static HeatMap map_from_tensor(const Tensor& m) {  // [1,1,H,W]
    HeatMap h;
    h.rows = m.dim(2);
    h.cols = m.dim(3);
    h.v = m.values();
    return h;
}

Tensor Model::fuse(const std::vector<Tensor>& path_vectors, XaiBundle* bundle) {
    if (path_vectors.empty()) throw UsageError("fuse: no path vectors");
    const int n = static_cast<int>(path_vectors.size());
    switch (cfg.fusion_mode) {
        case FusionMode::full: {
            ContextualMatrix ctx = cross_modal_encode(stack_rows(path_vectors), *cma);
            if (bundle) bundle->cma_weights = ctx.w_cma;
            NafOut out = naf_fuse(ctx.v_contextual, *naf);
            if (bundle) bundle->alpha_trace = out.alpha_trace;
            return out.v_naf;
        }
        case FusionMode::simple_mean: {
            Tensor acc = path_vectors[0];
            for (int i = 1; i < n; ++i) acc = add(acc, path_vectors[static_cast<size_t>(i)]);
            return scale(acc, 1.0 / n);
        }
        case FusionMode::simple_concat:
            return (*concat_fc)(concat(path_vectors, 0));
        case FusionMode::naf_only: {
            NafOut out = naf_fuse(stack_rows(path_vectors), *naf);
            if (bundle) bundle->alpha_trace = out.alpha_trace;
            return out.v_naf;
        }
        case FusionMode::cma_only: {
            ContextualMatrix ctx = cross_modal_encode(stack_rows(path_vectors), *cma);
            if (bundle) bundle->cma_weights = ctx.w_cma;
            return mean_rows(ctx.v_contextual);
        }
    }
    throw UsageError("fuse: unhandled fusion mode");
}

ForwardOut Model::forward_single(const Sample& sample, bool capture) {
    if (sample.height != cfg.image_size || sample.width != cfg.image_size ||
        sample.channels != cfg.image_channels)
        throw std::invalid_argument("forward: sample extents do not match the config");
    ForwardOut out;
    XaiBundle* bundle = capture ? &out.xai : nullptr;

    Tensor image = Tensor::from({1, cfg.image_channels, cfg.image_size, cfg.image_size},
                                sample.chw);
    std::vector<Tensor> path_vectors;
    std::vector<PathId> path_ids;

    if (cfg.use_dense) {
        Tensor fmap = dense_forward(image, *dense);
        VimOut vim = vim_forward(fmap, *vim_dense);
        SpatialAttnOut sp = spatial_attention(vim.map, *spat_dense);
        path_vectors.push_back(sp.pooled);
        path_ids.push_back(PathId::dense);
        if (bundle) {
            bundle->dense_delta_fwd = to_heatmap(vim.delta_fwd, vim.grid.rows, vim.grid.cols);
            bundle->dense_delta_bwd = to_heatmap(vim.delta_bwd, vim.grid.rows, vim.grid.cols);
            bundle->dense_spatial = map_from_tensor(sp.map);
        }
    }
    if (cfg.use_unet) {
        Tensor fmap = unet_forward(image, *unet);
        VimOut vim = vim_forward(fmap, *vim_unet);
        SpatialAttnOut sp = spatial_attention(vim.map, *spat_unet);
        path_vectors.push_back(sp.pooled);
        path_ids.push_back(PathId::unet);
        if (bundle) {
            bundle->unet_delta_fwd = to_heatmap(vim.delta_fwd, vim.grid.rows, vim.grid.cols);
            bundle->unet_delta_bwd = to_heatmap(vim.delta_bwd, vim.grid.rows, vim.grid.cols);
            bundle->unet_spatial = map_from_tensor(sp.map);
        }
    }
    if (cfg.use_trad) {
        const int d_raw = cfg.features.dimension();
        if (static_cast<int>(sample.f_raw.size()) != d_raw)
            throw std::invalid_argument("forward: handcrafted feature length mismatch");
        Tensor f_raw = Tensor::from({d_raw}, sample.f_raw);
        Tensor tokens = cfg.trad_mha_mode == TradMhaMode::scalar_tokens
                            ? reshape(f_raw, {d_raw, 1})
                            : reshape(f_raw, {1, d_raw});
        MhaOut attended = mha(tokens, tokens, tokens, *trad_mha);
        Tensor f_trad = flatten(attended.out);  // [d_raw] either way
        SeOut se = se_recalibrate(f_trad, *trad_se);
        path_vectors.push_back((*trad_fc)(se.out));
        path_ids.push_back(PathId::trad);
        if (bundle) {
            bundle->se_scores = se.gates.values();
            RawFeatureVector probe = extract_raw_features(sample.gray, cfg.features);
            bundle->se_slot_names = probe.layout;
        }
    }

    Tensor fused = fuse(path_vectors, bundle);
    out.logits = reshape(head(fused), {1, cfg.num_classes});

    if (bundle) {
        for (PathId id : path_ids) bundle->cma_path_names.push_back(path_name(id));
        // prediction from a softmax over the logits
        const auto& lv = out.logits.values();
        int best = 0;
        for (int k = 1; k < cfg.num_classes; ++k)
            if (lv[static_cast<size_t>(k)] > lv[static_cast<size_t>(best)]) best = k;
        double mx = lv[static_cast<size_t>(best)], denom = 0;
        for (int k = 0; k < cfg.num_classes; ++k) denom += std::exp(lv[static_cast<size_t>(k)] - mx);
        bundle->predicted_class = best;
        bundle->predicted_prob = 1.0 / denom;
        bundle->predicted_label = best < static_cast<int>(cfg.class_names.size())
                                      ? cfg.class_names[static_cast<size_t>(best)]
                                      : "class" + std::to_string(best);
    }
    return out;
}

Tensor Model::forward_batch_logits(const std::vector<const Sample*>& batch) {
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const Sample* s : batch)
        rows.push_back(flatten(forward_single(*s).logits));
    return stack_rows(rows);
}

EvalResult evaluate(Model& model, const Dataset& ds, int threads) {
    EvalResult res;
    const size_t n = ds.samples.size();
    res.predictions.assign(n, -1);
    res.labels.resize(n);
    for (size_t i = 0; i < n; ++i) res.labels[i] = ds.samples[i].label;

    auto run_range = [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            ForwardOut out = model.forward_single(ds.samples[i]);
            const auto& lv = out.logits.values();
            int best = 0;
            for (int k = 1; k < model.cfg.num_classes; ++k)
                if (lv[static_cast<size_t>(k)] > lv[static_cast<size_t>(best)]) best = k;
            res.predictions[i] = best;
        }
    };

    const int workers = std::max(1, threads);
    if (workers == 1 || n < 2) {
        run_range(0, n);
    } else {
        // forward passes only read parameter values, so the model is shared
        std::vector<std::thread> pool;
        const size_t chunk = (n + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const size_t lo = static_cast<size_t>(w) * chunk;
            const size_t hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }
    res.metrics = Metrics::from_pairs(res.labels, res.predictions, model.cfg.num_classes);
    return res;
}

}  // namespace evmf
