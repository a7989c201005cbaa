#include "haemsa/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "haemsa/error.hpp"

namespace haemsa {

void TaskDescriptor::validate() const {
    if (kind == TaskKind::Classification) {
        if (num_classes < 2) throw ConfigError("task '" + id + "': num_classes must be >= 2");
        if (loss_fn != LossFn::CrossEntropy) {
            throw ConfigError("task '" + id + "': classification tasks use cross-entropy");
        }
    } else if (loss_fn != LossFn::Mse) {
        throw ConfigError("task '" + id + "': regression tasks use mse");
    }
}

LabelBundle LabelBundle::from_sentiment(double sentiment, int emotion) {
    LabelBundle b;
    b.sentiment = sentiment;
    b.class7 = static_cast<int>(std::clamp(std::round(sentiment) + 3.0, 0.0, 6.0));
    b.class2 = sentiment >= 0.0 ? 1 : 0;
    b.emotion = emotion;
    return b;
}

void LabelBundle::validate() const {
    if (!std::isfinite(sentiment)) throw LabelError("sentiment is not finite");
    if (sentiment < -3.0 || sentiment > 3.0) throw LabelError("sentiment outside [-3, 3]");
    const auto expected = from_sentiment(sentiment, emotion);
    if (class7 != expected.class7) throw LabelError("class7 inconsistent with sentiment");
    if (class2 != expected.class2) throw LabelError("class2 inconsistent with sentiment");
    if (emotion < 0 || emotion > 5) throw LabelError("emotion outside 0..5");
}

double label_value(const TaskDescriptor& task, const LabelBundle& labels) {
    switch (task.field) {
        case LabelField::Sentiment:
            return labels.sentiment;
        case LabelField::Class7:
            return labels.class7;
        case LabelField::Class2:
            return labels.class2;
        case LabelField::Emotion:
            return labels.emotion;
    }
    return 0.0;
}

std::vector<TaskDescriptor> default_tasks() {
    return {
        {"sentiment", TaskKind::Regression, 0, LossFn::Mse, LabelField::Sentiment},
        {"class7", TaskKind::Classification, 7, LossFn::CrossEntropy, LabelField::Class7},
        {"class2", TaskKind::Classification, 2, LossFn::CrossEntropy, LabelField::Class2},
        {"emotion", TaskKind::Classification, 6, LossFn::CrossEntropy, LabelField::Emotion},
    };
}

}  // namespace haemsa
