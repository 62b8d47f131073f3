#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evmf/attention.hpp"
#include "evmf/backbones.hpp"
#include "evmf/classical.hpp"
#include "evmf/dataset.hpp"
#include "evmf/fusion.hpp"
#include "evmf/metrics.hpp"
#include "evmf/vim.hpp"
#include "evmf/xai.hpp"

namespace evmf {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class FusionMode { full, simple_mean, simple_concat, naf_only, cma_only };
enum class TradMhaMode { vector_token, scalar_tokens };

std::string fusion_mode_name(FusionMode m);

struct ModelConfig {
    int image_size = 32;
    int image_channels = 1;
    int num_classes = 3;
    uint64_t seed = 7;
    int d_model_fusion = 64;

    bool use_dense = true, use_unet = true, use_trad = true;
    FusionMode fusion_mode = FusionMode::full;

    DenseBackboneConfig dense;
    UNetBackboneConfig unet;
    VimConfig vim_dense;  // d_out is forced to d_model_fusion at build time
    VimConfig vim_unet;
    int spatial_kernel = 7;

    FeatureConfig features;
    TradMhaMode trad_mha_mode = TradMhaMode::scalar_tokens;
    int trad_se_reduction = 2;

    int cma_heads = 4;
    NafConfig naf;

    std::vector<std::string> class_names;  // informational, set from data

    int n_paths() const {
        return (use_dense ? 1 : 0) + (use_unet ? 1 : 0) + (use_trad ? 1 : 0);
    }
    void validate() const;
};

// The eight ablation variants: letters pick feature paths (D dense backbone,
// U encoder-decoder backbone, H handcrafted features, F full two-stage
// fusion); the named modes swap the fusion rule while keeping all paths.
ModelConfig build_variant(const std::string& name, ModelConfig base = ModelConfig());
std::vector<std::string> variant_names();

struct ForwardOut {
    Tensor logits;  // [1, num_classes]
    XaiBundle xai;  // filled when capture was requested
};

class Model {
public:
    explicit Model(const ModelConfig& config);

    ModelConfig cfg;
    ParamRegistry params;

    // per-path parameter groups, present only when the path is enabled
    std::optional<DenseBackboneParams> dense;
    std::optional<VimParams> vim_dense;
    std::optional<SpatialAttnParams> spat_dense;
    std::optional<UNetBackboneParams> unet;
    std::optional<VimParams> vim_unet;
    std::optional<SpatialAttnParams> spat_unet;
    std::optional<MhaParams> trad_mha;
    std::optional<SeParams> trad_se;
    std::optional<LinearLayer> trad_fc;

    std::optional<CrossModalParams> cma;
    std::optional<NafParams> naf;
    std::optional<LinearLayer> concat_fc;
    LinearLayer head;

    ForwardOut forward_single(const Sample& sample, bool capture = false);

    // fusion over the ordered enabled-path vectors; bundle may be null
    Tensor fuse(const std::vector<Tensor>& path_vectors, XaiBundle* bundle);

    // batched convenience: stacks per-sample logits into [B, num_classes]
    Tensor forward_batch_logits(const std::vector<const Sample*>& batch);
};

struct EvalResult {
    Metrics metrics;
    std::vector<int> predictions;
    std::vector<int> labels;
};

EvalResult evaluate(Model& model, const Dataset& ds, int threads = 1);

}  // namespace evmf
