#include "anno/active.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

namespace anno {

std::string_view to_string(ConfidenceAgg agg) { return agg == ConfidenceAgg::Mean ? "mean" : "min"; }

ConfidenceAgg confidence_agg_from_string(std::string_view name) {
    if (name == "mean") return ConfidenceAgg::Mean;
    if (name == "min") return ConfidenceAgg::Min;
    throw Error(ErrorCode::InvalidParams, "unknown confidence aggregation `" + std::string(name) + "`");
}

template <typename Scalar>
std::map<std::string, double> ALConfig::alphas_for(const BasicMultiTaskModel<Scalar>& model) const {
    std::map<std::string, double> out;
    for (const auto& [id, _] : model.heads) {
        auto it = alphas.find(id);
        const double a = it == alphas.end() ? 1.0 : it->second;
        if (!(a > 0)) throw Error(ErrorCode::InvalidParams, "alpha for `" + id + "` must be positive");
        out[id] = a;
    }
    return out;
}

PoolState PoolState::all_unlabeled(std::size_t n) {
    PoolState pool;
    for (std::size_t i = 0; i < n; ++i) pool.unlabeled.insert(pool.unlabeled.end(), i);
    return pool;
}

void PoolState::mark_labeled(const std::vector<std::size_t>& ids) {
    for (auto id : ids) {
        unlabeled.erase(id);
        labeled.insert(id);
    }
}

template <typename Scalar>
double instance_confidence(const BasicTaskHead<Scalar>& head, const Matrix<Scalar>& hidden, std::size_t prefix_len,
                           ConfidenceAgg agg) {
    const Matrix<Scalar> probs = head_probabilities(head, hidden, prefix_len);
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> best = probs.colwise().maxCoeff();
    if (agg == ConfidenceAgg::Min) return static_cast<double>(best.minCoeff());
    return static_cast<double>(best.mean());
}

template <typename Scalar>
double instance_confidence(const BasicMultiTaskModel<Scalar>& model, const Instance& inst, const std::string& task_id,
                           ConfidenceAgg agg) {
    auto it = model.heads.find(task_id);
    if (it == model.heads.end()) throw Error(ErrorCode::UnknownTask, "no head for task `" + task_id + "`");
    return instance_confidence(it->second, encode(model, inst.tokens).hidden, inst.prefix_len, agg);
}

template <typename Scalar>
double multi_task_confidence(const BasicMultiTaskModel<Scalar>& model, const Instance& inst, ConfidenceAgg agg) {
    const Matrix<Scalar> hidden = encode(model, inst.tokens).hidden;
    double sum = 0;
    for (const auto& [_, head] : model.heads) sum += instance_confidence(head, hidden, inst.prefix_len, agg);
    return model.heads.empty() ? 1.0 : sum / static_cast<double>(model.heads.size());
}

std::vector<std::size_t> select_by_confidence(const std::vector<double>& confidence, PoolState& pool, std::size_t k) {
    if (pool.unlabeled.empty()) throw Error(ErrorCode::EmptyPool, "no unlabeled instances left");
    std::vector<std::size_t> ids(pool.unlabeled.begin(), pool.unlabeled.end());
    const std::size_t take = std::min(k, ids.size());
    auto less_confident = [&](std::size_t a, std::size_t b) {
        if (confidence[a] != confidence[b]) return confidence[a] < confidence[b];
        return a < b;
    };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), less_confident);
    ids.resize(take);
    for (auto id : ids) {
        pool.unlabeled.erase(id);
        pool.queried.push_back(id);
    }
    return ids;
}

template <typename Scalar>
std::vector<std::size_t> select_queries(const BasicMultiTaskModel<Scalar>& model, const std::vector<Instance>& instances,
                                        PoolState& pool, const ALConfig& cfg) {
    if (pool.unlabeled.empty()) throw Error(ErrorCode::EmptyPool, "no unlabeled instances left");
    std::vector<double> confidence(instances.size(), 1.0);
    for (auto id : pool.unlabeled) confidence[id] = multi_task_confidence(model, instances[id], cfg.confidence_agg);
    return select_by_confidence(confidence, pool, cfg.query_batch_k);
}

double joint_loss(const std::map<std::string, double>& losses, const std::map<std::string, double>& alphas) {
    double total = 0;
    for (const auto& [task, loss] : losses) {
        auto it = alphas.find(task);
        if (it == alphas.end()) throw Error(ErrorCode::MissingAlpha, "no alpha for task `" + task + "`");
        total += it->second * loss;
    }
    return total;
}

template <typename Scalar>
TrainStats train(BasicMultiTaskModel<Scalar>& model, const std::vector<const Instance*>& labeled, const ALConfig& cfg) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<const Instance*> usable;
    for (const Instance* inst : labeled) {
        const bool any = std::any_of(inst->labels.begin(), inst->labels.end(),
                                     [&](const auto& kv) { return model.heads.count(kv.first) > 0; });
        if (any) usable.push_back(inst);
    }
    if (usable.empty()) throw Error(ErrorCode::NoLabeledData, "no instance carries a label for this model");
    const auto alphas = cfg.alphas_for(model);
    const std::size_t batch_size = std::max<std::size_t>(1, cfg.batch_size);
    const auto lr = static_cast<Scalar>(cfg.learning_rate);

    TrainStats stats;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);
    BasicGradient<Scalar> gradient;
    std::vector<const Instance*> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        std::map<std::string, double> epoch_loss;
        double epoch_joint = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            batch.clear();
            for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k)
                batch.push_back(usable[order[k]]);
            const LossBreakdown loss = loss_and_gradient(model, batch, alphas, &gradient);
            stats.forward_passes += loss.forward_passes;
            const double share = static_cast<double>(batch.size()) / static_cast<double>(usable.size());
            for (const auto& [task, value] : loss.tasks) epoch_loss[task] += value * share;
            epoch_joint += loss.total * share;
            apply_gradient(model, gradient, lr);
        }
        for (const auto& [task, value] : epoch_loss) stats.loss_curve[task].push_back(value);
        stats.joint_loss_curve.push_back(epoch_joint);
    }
    model.trained = true;
    stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return stats;
}

template <typename Scalar>
std::map<std::string, TaskSuggestion> suggest(const BasicMultiTaskModel<Scalar>& model, const Instance& inst,
                                              ConfidenceAgg agg) {
    if (!model.trained) throw Error(ErrorCode::UntrainedModel, "model has not been trained");
    const Matrix<Scalar> hidden = encode(model, inst.tokens).hidden;
    std::map<std::string, TaskSuggestion> out;
    for (const auto& [id, head] : model.heads) {
        const Matrix<Scalar> probs = head_probabilities(head, hidden, inst.prefix_len);
        TaskSuggestion s;
        for (Eigen::Index t = 0; t < probs.cols(); ++t)
            s.labels.push_back(head.label_set[static_cast<std::size_t>(argmax(probs.col(t)))]);
        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> best = probs.colwise().maxCoeff();
        s.confidence = static_cast<double>(agg == ConfidenceAgg::Min ? best.minCoeff() : best.mean());
        out.emplace(id, std::move(s));
    }
    return out;
}

#define ANNO_INSTANTIATE_ACTIVE(S)                                                                                    \
    template std::map<std::string, double> ALConfig::alphas_for<S>(const BasicMultiTaskModel<S>&) const;             \
    template double instance_confidence<S>(const BasicMultiTaskModel<S>&, const Instance&, const std::string&,        \
                                           ConfidenceAgg);                                                            \
    template double instance_confidence<S>(const BasicTaskHead<S>&, const Matrix<S>&, std::size_t, ConfidenceAgg);    \
    template double multi_task_confidence<S>(const BasicMultiTaskModel<S>&, const Instance&, ConfidenceAgg);          \
    template std::vector<std::size_t> select_queries<S>(const BasicMultiTaskModel<S>&, const std::vector<Instance>&, \
                                                        PoolState&, const ALConfig&);                                 \
    template TrainStats train<S>(BasicMultiTaskModel<S>&, const std::vector<const Instance*>&, const ALConfig&);      \
    template std::map<std::string, TaskSuggestion> suggest<S>(const BasicMultiTaskModel<S>&, const Instance&,        \
                                                              ConfidenceAgg);

ANNO_INSTANTIATE_ACTIVE(double)
ANNO_INSTANTIATE_ACTIVE(float)

}  // namespace anno
