#pragma once

// Least-confidence active learning over a MultiTaskModel.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "anno/model.hpp"

namespace anno {

enum class ConfidenceAgg { Mean, Min };

std::string_view to_string(ConfidenceAgg agg);
ConfidenceAgg confidence_agg_from_string(std::string_view name);

struct ALConfig {
    std::map<std::string, double> alphas;  // task -> weight; tasks absent here get 1.0 via alpha_for
    std::size_t query_batch_k = 10;
    std::size_t retrain_every = 10;
    double learning_rate = 0.5;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    ConfidenceAgg confidence_agg = ConfidenceAgg::Mean;

    // Alphas for every head of `model`, defaulting to 1.0. Throws InvalidParams on alpha <= 0.
    template <typename Scalar>
    std::map<std::string, double> alphas_for(const BasicMultiTaskModel<Scalar>& model) const;
};

// Instance ids are indices into the caller's instance array.
struct PoolState {
    std::set<std::size_t> labeled;
    std::set<std::size_t> unlabeled;
    std::vector<std::size_t> queried;  // in query order

    static PoolState all_unlabeled(std::size_t n);
    // Moves queried ids into the labeled set once their labels are in.
    void mark_labeled(const std::vector<std::size_t>& ids);
};

// Max probability for a classification task; the per-token max aggregated
// over word tokens for a sequence task.
template <typename Scalar>
double instance_confidence(const BasicMultiTaskModel<Scalar>& model, const Instance& inst, const std::string& task_id,
                           ConfidenceAgg agg);

// Same, from already-computed hidden vectors.
template <typename Scalar>
double instance_confidence(const BasicTaskHead<Scalar>& head, const Matrix<Scalar>& hidden, std::size_t prefix_len,
                           ConfidenceAgg agg);

// Mean of per-task confidences over every head, one encoder pass.
template <typename Scalar>
double multi_task_confidence(const BasicMultiTaskModel<Scalar>& model, const Instance& inst, ConfidenceAgg agg);

// The min(k, |unlabeled|) least confident ids, ties by ascending id, given
// one confidence per instance id. Moves them from unlabeled to queried.
std::vector<std::size_t> select_by_confidence(const std::vector<double>& confidence, PoolState& pool, std::size_t k);

template <typename Scalar>
std::vector<std::size_t> select_queries(const BasicMultiTaskModel<Scalar>& model, const std::vector<Instance>& instances,
                                        PoolState& pool, const ALConfig& cfg);

// L = sum_i alpha_i * L_i. Throws MissingAlpha.
double joint_loss(const std::map<std::string, double>& losses, const std::map<std::string, double>& alphas);

struct TrainStats {
    std::map<std::string, std::vector<double>> loss_curve;  // per task, one entry per epoch
    std::vector<double> joint_loss_curve;
    std::size_t forward_passes = 0;
    double wall_ms = 0;
};

// Mini-batch gradient descent on the joint loss, warm-starting from `model`.
// Deterministic for a given cfg.seed. Throws NoLabeledData.
template <typename Scalar>
TrainStats train(BasicMultiTaskModel<Scalar>& model, const std::vector<const Instance*>& labeled, const ALConfig& cfg);

struct TaskSuggestion {
    std::vector<std::string> labels;  // one per word token, or a single label
    double confidence = 0;
};

// Argmax labels per task. Throws UntrainedModel.
template <typename Scalar>
std::map<std::string, TaskSuggestion> suggest(const BasicMultiTaskModel<Scalar>& model, const Instance& inst,
                                              ConfidenceAgg agg = ConfidenceAgg::Mean);

}  // namespace anno
