#include "evmf/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace evmf {

Metrics Metrics::from_pairs(const std::vector<int>& labels,
                            const std::vector<int>& predictions, int num_classes) {
    if (labels.size() != predictions.size())
        throw std::invalid_argument("metrics: label/prediction count mismatch");
    Metrics m;
    m.num_classes = num_classes;
    m.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 ||
            predictions[i] >= num_classes)
            throw std::invalid_argument("metrics: class index out of range");
        m.confusion[static_cast<size_t>(labels[i]) * num_classes + predictions[i]] += 1;
    }
    return m;
}

int64_t Metrics::total() const {
    int64_t t = 0;
    for (int64_t v : confusion) t += v;
    return t;
}

int64_t Metrics::support(int c) const {
    int64_t s = 0;
    for (int j = 0; j < num_classes; ++j)
        s += confusion[static_cast<size_t>(c) * num_classes + j];
    return s;
}

double Metrics::accuracy() const {
    int64_t diag = 0;
    for (int c = 0; c < num_classes; ++c)
        diag += confusion[static_cast<size_t>(c) * num_classes + c];
    return static_cast<double>(diag) / static_cast<double>(total());
}

double Metrics::precision(int c) const {
    int64_t col = 0;
    for (int j = 0; j < num_classes; ++j)
        col += confusion[static_cast<size_t>(j) * num_classes + c];
    if (col == 0) return 0.0;
    return static_cast<double>(confusion[static_cast<size_t>(c) * num_classes + c]) /
           static_cast<double>(col);
}

double Metrics::recall(int c) const {
    const int64_t row = support(c);
    if (row == 0) return 0.0;
    return static_cast<double>(confusion[static_cast<size_t>(c) * num_classes + c]) /
           static_cast<double>(row);
}

double Metrics::f1(int c) const {
    const double p = precision(c), r = recall(c);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

double Metrics::macro_precision() const {
    double acc = 0;
    for (int c = 0; c < num_classes; ++c) acc += precision(c) / num_classes;
    return acc;
}

double Metrics::macro_recall() const {
    double acc = 0;
    for (int c = 0; c < num_classes; ++c) acc += recall(c) / num_classes;
    return acc;
}

double Metrics::macro_f1() const {
    double acc = 0;
    for (int c = 0; c < num_classes; ++c) acc += f1(c) / num_classes;
    return acc;
}

double Metrics::weighted_precision() const {
    double acc = 0;
    for (int c = 0; c < num_classes; ++c)
        acc += static_cast<double>(support(c)) * precision(c);
    return acc / static_cast<double>(total());
}

double Metrics::weighted_recall() const {
    // sum_c support_c * (TP_c / support_c) / total collapses to sum(TP)/total;
    // computing it that way keeps the identity with accuracy exact
    int64_t tp = 0;
    for (int c = 0; c < num_classes; ++c)
        if (support(c) > 0) tp += confusion[static_cast<size_t>(c) * num_classes + c];
    return static_cast<double>(tp) / static_cast<double>(total());
}

double Metrics::weighted_f1() const {
    double acc = 0;
    for (int c = 0; c < num_classes; ++c)
        acc += static_cast<double>(support(c)) * f1(c);
    return acc / static_cast<double>(total());
}

static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_csv_header(const std::vector<std::string>& class_names) {
    std::string h = "tag,acc,p_macro,r_macro,f1_macro,p_weighted,r_weighted,f1_weighted";
    for (const auto& n : class_names) h += ",p_" + n + ",r_" + n + ",f1_" + n;
    return h;
}

std::string metrics_csv_row(const std::string& tag, const Metrics& m) {
    std::string row = tag;
    row += "," + fmt(m.accuracy());
    row += "," + fmt(m.macro_precision());
    row += "," + fmt(m.macro_recall());
    row += "," + fmt(m.macro_f1());
    row += "," + fmt(m.weighted_precision());
    row += "," + fmt(m.weighted_recall());
    row += "," + fmt(m.weighted_f1());
    for (int c = 0; c < m.num_classes; ++c) {
        row += "," + fmt(m.precision(c));
        row += "," + fmt(m.recall(c));
        row += "," + fmt(m.f1(c));
    }
    return row;
}

}  // namespace evmf
