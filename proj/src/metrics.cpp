#include "haemsa/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "haemsa/error.hpp"

namespace haemsa {

int bin_sentiment(double score, int bins) {
    if (std::isnan(score)) throw ValueError("cannot bin a NaN sentiment score");
    switch (bins) {
        case 7:
            return static_cast<int>(std::round(std::clamp(score, -3.0, 3.0))) + 3;
        case 5:
            return static_cast<int>(std::round(std::clamp(score, -2.0, 2.0))) + 2;
        case 2:
            return score >= 0.0 ? 1 : 0;
        default:
            throw ValueError("bins must be 7, 5 or 2");
    }
}

RegressionMetrics regression_metrics(std::span<const double> preds, std::span<const double> labels) {
    if (preds.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
    if (preds.empty()) throw ShapeError("no predictions");
    RegressionMetrics m;
    std::size_t hit7 = 0, hit5 = 0, hit2 = 0;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        abs_sum += std::abs(preds[i] - labels[i]);
        hit7 += bin_sentiment(preds[i], 7) == bin_sentiment(labels[i], 7);
        hit5 += bin_sentiment(preds[i], 5) == bin_sentiment(labels[i], 5);
        hit2 += bin_sentiment(preds[i], 2) == bin_sentiment(labels[i], 2);
    }
    const double n = static_cast<double>(preds.size());
    m.mae = abs_sum / n;
    m.acc7 = 100.0 * static_cast<double>(hit7) / n;
    m.acc5 = 100.0 * static_cast<double>(hit5) / n;
    m.acc2 = 100.0 * static_cast<double>(hit2) / n;
    return m;
}

F1Metrics f1_metrics(std::span<const int> preds, std::span<const int> labels, int num_classes) {
    if (preds.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
    if (num_classes < 1) throw ValueError("num_classes must be >= 1");
    const auto k = static_cast<std::size_t>(num_classes);
    F1Metrics m;
    m.confusion.assign(k, std::vector<long>(k, 0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= num_classes || labels[i] < 0 || labels[i] >= num_classes) {
            throw LabelError("class index out of range at position " + std::to_string(i));
        }
        ++m.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    }
    m.per_class_f1.assign(k, 0.0);
    double weighted = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        long tp = m.confusion[c][c];
        long support = 0, predicted = 0;
        for (std::size_t j = 0; j < k; ++j) {
            support += m.confusion[c][j];
            predicted += m.confusion[j][c];
        }
        const double p = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        const double r = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        m.per_class_f1[c] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        weighted += static_cast<double>(support) * m.per_class_f1[c];
    }
    m.weighted_f1 = preds.empty() ? 0.0 : 100.0 * weighted / static_cast<double>(preds.size());
    return m;
}

MetricsReport evaluate_metrics(std::span<const double> score_preds, std::span<const double> score_labels,
                               std::span<const int> class_preds, std::span<const int> class_labels,
                               int num_classes) {
    const auto reg = regression_metrics(score_preds, score_labels);
    auto f1 = f1_metrics(class_preds, class_labels, num_classes);
    MetricsReport r;
    r.acc7 = reg.acc7;
    r.acc5 = reg.acc5;
    r.acc2 = reg.acc2;
    r.mae = reg.mae;
    r.per_class_f1 = std::move(f1.per_class_f1);
    r.weighted_f1 = f1.weighted_f1;
    r.confusion = std::move(f1.confusion);
    r.n = score_preds.size();
    return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
    return {{"n", n},
            {"acc7", acc7},
            {"acc5", acc5},
            {"acc2", acc2},
            {"mae", mae},
            {"weighted_f1", weighted_f1},
            {"per_class_f1", per_class_f1},
            {"confusion", confusion}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.n = j.at("n").get<std::size_t>();
    r.acc7 = j.at("acc7").get<double>();
    r.acc5 = j.at("acc5").get<double>();
    r.acc2 = j.at("acc2").get<double>();
    r.mae = j.at("mae").get<double>();
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<long>>>();
    return r;
}

}  // namespace haemsa
