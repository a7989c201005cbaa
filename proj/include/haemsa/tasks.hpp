#pragma once

#include <string>
#include <vector>

namespace haemsa {

enum class TaskKind { Regression, Classification };
enum class LossFn { Mse, CrossEntropy };

/// Which ground-truth field a task is supervised by.
enum class LabelField { Sentiment, Class7, Class2, Emotion };

struct TaskDescriptor {
    std::string id;
    TaskKind kind = TaskKind::Regression;
    int num_classes = 0;  // classification only
    LossFn loss_fn = LossFn::Mse;
    LabelField field = LabelField::Sentiment;

    /// Width of the task head: 1 for regression, num_classes otherwise.
    int output_dim() const { return kind == TaskKind::Regression ? 1 : num_classes; }
    void validate() const;
    bool operator==(const TaskDescriptor&) const = default;
};

/// Ground truth for one sample.
struct LabelBundle {
    double sentiment = 0.0;  // [-3, 3]
    int class7 = 3;          // 0..6
    int class2 = 1;          // 0..1
    int emotion = 0;         // 0..5

    /// Builds a consistent bundle from a sentiment score and emotion class.
    static LabelBundle from_sentiment(double sentiment, int emotion);
    /// Throws LabelError if class7/class2 are not derivable from sentiment.
    void validate() const;
    bool operator==(const LabelBundle&) const = default;
};

/// The label value a task is trained against (class index as a double for
/// classification tasks).
double label_value(const TaskDescriptor& task, const LabelBundle& labels);

/// The four-task set: sentiment intensity regression, 7-class sentiment,
/// binary sentiment, 6-class emotion.
std::vector<TaskDescriptor> default_tasks();

/// Index of the 7-class sentiment task in default_tasks().
inline constexpr std::size_t kClass7Task = 1;
inline constexpr std::size_t kSentimentTask = 0;
inline constexpr std::size_t kEmotionTask = 3;

}  // namespace haemsa
