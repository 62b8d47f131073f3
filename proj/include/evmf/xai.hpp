#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evmf {

struct HeatMap {
    int rows = 0, cols = 0;
    std::vector<double> v;  // row-major
    bool present() const { return !v.empty(); }
};

// Per-image explainability bundle: four scan-gate maps, two spatial attention
// maps, the feature-gate scores with their slot names, the cross-modal weight
// matrix with path labels, the fusion mixing-weight trace, and the prediction.
// Fields for disabled paths stay empty. All values are copies, never views
// into live graph state.
struct XaiBundle {
    HeatMap dense_delta_fwd, dense_delta_bwd;
    HeatMap unet_delta_fwd, unet_delta_bwd;
    HeatMap dense_spatial, unet_spatial;
    std::vector<double> se_scores;
    std::vector<std::string> se_slot_names;
    std::vector<double> cma_weights;          // [n_paths * n_paths], row-stochastic
    std::vector<std::string> cma_path_names;  // row/column labels
    std::vector<std::vector<double>> alpha_trace;
    int predicted_class = -1;
    double predicted_prob = 0.0;
    std::string predicted_label;
};

// (x-min)/(max-min) scaled to 0..255, rounded half up; a constant map renders
// as all zeros. Throws on non-finite input.
std::vector<uint8_t> render_heatmap(const std::vector<double>& m);

// Writes each present heatmap as P5 PGM plus raw CSV, the gate scores and
// cross-modal weights as labeled CSVs, the mixing trace, and a manifest with
// one "artifact: relative_path" line per file plus the prediction.
void export_bundle(const XaiBundle& bundle, const std::string& directory);

// full-precision CSV helpers (round-trip is bit-exact)
std::string matrix_csv(const std::vector<double>& v, int rows, int cols);
std::vector<double> parse_csv_matrix(const std::string& text, int& rows, int& cols);

}  // namespace evmf
