#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evmf {

// Confusion-matrix metrics. Rows are true labels, columns predictions.
// Weighted recall is computed as sum(TP)/total, the exact algebraic form of
// the support-weighted average, so the recall==accuracy identity holds
// bit-for-bit.
struct Metrics {
    int num_classes = 0;
    std::vector<int64_t> confusion;  // [K*K]

    static Metrics from_pairs(const std::vector<int>& labels,
                              const std::vector<int>& predictions, int num_classes);

    int64_t total() const;
    int64_t support(int c) const;
    double accuracy() const;
    double precision(int c) const;  // 0 when the class is never predicted
    double recall(int c) const;     // 0 when the class has no support
    double f1(int c) const;         // 0 when P+R == 0
    double macro_precision() const;
    double macro_recall() const;
    double macro_f1() const;
    double weighted_precision() const;
    double weighted_recall() const;
    double weighted_f1() const;
};

std::string metrics_csv_header(const std::vector<std::string>& class_names);
std::string metrics_csv_row(const std::string& tag, const Metrics& m);

}  // namespace evmf
