#pragma once

#include <span>
#include <vector>

#include <json.hpp>

namespace haemsa {

struct RegressionMetrics {
    double mae = 0.0;
    double acc7 = 0.0;  // percent
    double acc5 = 0.0;
    double acc2 = 0.0;
};

struct F1Metrics {
    std::vector<double> per_class_f1;  // in [0, 1]
    double weighted_f1 = 0.0;          // percent
    std::vector<std::vector<long>> confusion;  // confusion[label][pred]
};

struct MetricsReport {
    double acc7 = 0.0;
    double acc5 = 0.0;
    double acc2 = 0.0;
    double mae = 0.0;
    std::vector<double> per_class_f1;
    double weighted_f1 = 0.0;
    std::vector<std::vector<long>> confusion;
    std::size_t n = 0;

    nlohmann::ordered_json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

/// Bins a sentiment score in [-3, 3]. 7 bins: round(clamp(s,-3,3)) + 3;
/// 5 bins: round(clamp(s,-2,2)) + 2; 2 bins: 1 iff s >= 0.
int bin_sentiment(double score, int bins);

RegressionMetrics regression_metrics(std::span<const double> preds, std::span<const double> labels);

F1Metrics f1_metrics(std::span<const int> preds, std::span<const int> labels, int num_classes);

/// Regression metrics on sentiment scores plus F1 metrics on a classification task.
MetricsReport evaluate_metrics(std::span<const double> score_preds, std::span<const double> score_labels,
                               std::span<const int> class_preds, std::span<const int> class_labels,
                               int num_classes);

}  // namespace haemsa
