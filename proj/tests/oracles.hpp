#pragma once

// Slow, obviously-correct reference implementations used to check the fast
// code paths. Nothing here calls the code under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "anno/model.hpp"

namespace anno::test {

// softmax written straight from its definition, in long double.
inline std::vector<long double> naive_softmax(const std::vector<double>& h) {
    long double m = h[0];
    for (double x : h) m = std::max<long double>(m, x);
    std::vector<long double> e;
    long double z = 0;
    for (double x : h) {
        e.push_back(std::exp(static_cast<long double>(x) - m));
        z += e.back();
    }
    for (auto& x : e) x /= z;
    return e;
}

// k smallest by full sort with (value, id) ordering.
inline std::vector<std::size_t> k_smallest(const std::vector<double>& values, const std::set<std::size_t>& ids,
                                           std::size_t k) {
    std::vector<std::pair<double, std::size_t>> all;
    for (auto id : ids) all.emplace_back(values[id], id);
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
    return out;
}

// Every scalar parameter of a model, addressed for perturbation.
template <typename Scalar>
std::vector<Scalar*> parameters(BasicMultiTaskModel<Scalar>& model, const std::set<std::uint32_t>& buckets) {
    std::vector<Scalar*> out;
    if (auto* hashed = std::get_if<BasicHashedExtractor<Scalar>>(&model.extractor)) {
        for (auto b : buckets)
            for (Eigen::Index d = 0; d < hashed->embedding.rows(); ++d) out.push_back(&hashed->embedding(d, b));
        for (Eigen::Index d = 0; d < hashed->bias.size(); ++d) out.push_back(&hashed->bias(d));
    }
    for (auto& [_, head] : model.heads) {
        for (Eigen::Index k = 0; k < head.weights.size(); ++k) out.push_back(head.weights.data() + k);
        for (Eigen::Index k = 0; k < head.bias.size(); ++k) out.push_back(head.bias.data() + k);
    }
    return out;
}

// The analytic gradient entry matching `parameters(model, buckets)[index]`.
template <typename Scalar>
std::vector<Scalar> flatten_gradient(const BasicMultiTaskModel<Scalar>& model, const BasicGradient<Scalar>& g,
                                     const std::set<std::uint32_t>& buckets) {
    std::vector<Scalar> out;
    if (const auto* hashed = std::get_if<BasicHashedExtractor<Scalar>>(&model.extractor)) {
        for (auto b : buckets) {
            auto it = g.embedding.find(b);
            for (Eigen::Index d = 0; d < hashed->embedding.rows(); ++d)
                out.push_back(it == g.embedding.end() ? Scalar(0) : it->second(d));
        }
        for (Eigen::Index d = 0; d < g.bias.size(); ++d) out.push_back(g.bias(d));
    }
    for (const auto& [id, head] : model.heads) {
        const auto& [gW, gb] = g.heads.at(id);
        for (Eigen::Index k = 0; k < gW.size(); ++k) out.push_back(gW.data()[k]);
        for (Eigen::Index k = 0; k < gb.size(); ++k) out.push_back(gb.data()[k]);
    }
    return out;
}

// Joint loss recomputed independently of loss_and_gradient: per-token
// -log softmax from the definition, averaged as documented.
inline double reference_loss(const MultiTaskModel& model, const std::vector<const Instance*>& batch,
                             const std::map<std::string, double>& alphas) {
    const auto& hashed = std::get<HashedExtractor>(model.extractor);
    double total = 0;
    for (const Instance* inst : batch) {
        const std::size_t T = inst->tokens.size();
        std::vector<VectorXd> hidden;
        for (std::size_t t = 0; t < T; ++t) {
            VectorXd z = hashed.bias;
            for (auto b : hashed_features(inst->tokens, t, hashed.buckets, hashed.seed)) z += hashed.embedding.col(b);
            hidden.push_back(z.array().tanh().matrix());
        }
        for (const auto& [task, label] : inst->labels) {
            const auto& head = model.heads.at(task);
            auto nll = [&](const VectorXd& h, const std::string& gold) {
                VectorXd logits = head.weights * h + head.bias;
                std::vector<double> v(logits.data(), logits.data() + logits.size());
                auto p = naive_softmax(v);
                const auto y = std::find(head.label_set.begin(), head.label_set.end(), gold) - head.label_set.begin();
                return -static_cast<double>(std::log(p[static_cast<std::size_t>(y)]));
            };
            double loss = 0;
            if (head.kind == TaskKind::Sequence) {
                const auto& tags = std::get<std::vector<std::string>>(label);
                for (std::size_t t = inst->prefix_len; t < T; ++t) loss += nll(hidden[t], tags[t - inst->prefix_len]);
                loss /= static_cast<double>(T - inst->prefix_len);
            } else {
                VectorXd pooled = VectorXd::Zero(hashed.bias.size());
                for (const auto& h : hidden) pooled += h;
                pooled /= static_cast<double>(T);
                loss = nll(pooled, std::get<std::string>(label));
            }
            total += alphas.at(task) * loss / static_cast<double>(batch.size());
        }
    }
    return total;
}

// Random small two-head model and batch for gradient checks.
struct RandomProblem {
    MultiTaskModel model;
    std::vector<Instance> instances;
    std::map<std::string, double> alphas;

    std::vector<const Instance*> batch() const {
        std::vector<const Instance*> out;
        for (const auto& i : instances) out.push_back(&i);
        return out;
    }
    std::set<std::uint32_t> touched_buckets() const {
        const auto& hashed = std::get<HashedExtractor>(model.extractor);
        std::set<std::uint32_t> out;
        for (const auto& inst : instances)
            for (std::size_t t = 0; t < inst.tokens.size(); ++t)
                for (auto b : hashed_features(inst.tokens, t, hashed.buckets, hashed.seed)) out.insert(b);
        return out;
    }
};

inline RandomProblem random_problem(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dim_dist(2, 5), len_dist(1, 5), word_dist(0, 7), coin(0, 1), label3(0, 2);
    std::uniform_real_distribution<double> alpha_dist(0.25, 3.0);
    const std::vector<std::string> words{"the", "cat", "Sat", "on", "mat", "in", "Paris", "x"};
    const std::vector<std::string> seq_labels{"O", "B-X", "I-X"};
    const std::vector<std::string> cls_labels{"neg", "pos"};

    RandomProblem p;
    ExtractorConfig cfg;
    cfg.dim = static_cast<std::size_t>(dim_dist(rng));
    cfg.buckets = 97;
    cfg.hash_seed = rng();
    p.model = make_model<double>({{"seq", TaskKind::Sequence, seq_labels}, {"cls", TaskKind::Classification, cls_labels}},
                                 cfg, rng());
    // Larger weights than the default init so tanh is exercised off its linear region.
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto random_vector = [&](Eigen::Index n) {
        VectorXd v(n);
        for (Eigen::Index k = 0; k < n; ++k) v(k) = unit(rng);
        return v;
    };
    auto& hashed = std::get<HashedExtractor>(p.model.extractor);
    hashed.embedding *= 4.0;
    hashed.bias = random_vector(hashed.bias.size());
    for (auto& [_, head] : p.model.heads) {
        head.weights *= 5.0;
        head.bias = random_vector(head.bias.size());
    }
    p.alphas = {{"seq", alpha_dist(rng)}, {"cls", alpha_dist(rng)}};

    const int n = len_dist(rng);
    for (int i = 0; i < n; ++i) {
        Instance inst;
        inst.instance_id = std::to_string(i);
        inst.prefix_len = static_cast<std::size_t>(coin(rng));
        if (inst.prefix_len) inst.tokens.push_back("age=" + std::to_string(20 + 10 * coin(rng)));
        const int len = len_dist(rng);
        std::vector<std::string> tags;
        for (int t = 0; t < len; ++t) {
            inst.tokens.push_back(words[static_cast<std::size_t>(word_dist(rng))]);
            tags.push_back(seq_labels[static_cast<std::size_t>(label3(rng))]);
        }
        if (coin(rng) || i == 0) inst.labels["seq"] = tags;
        if (coin(rng)) inst.labels["cls"] = cls_labels[static_cast<std::size_t>(coin(rng))];
        p.instances.push_back(std::move(inst));
    }
    return p;
}

struct GradientCheck {
    double worst_relative = 0;
    std::size_t checked = 0;
};

// Central finite differences against the analytic gradient. Relative error uses
// max(|analytic|, |numeric|, floor) as denominator.
inline GradientCheck check_gradient(RandomProblem& p, double eps = 1e-4, double floor = 1e-6) {
    const auto buckets = p.touched_buckets();
    Gradient g;
    loss_and_gradient(p.model, p.batch(), p.alphas, &g);
    const auto analytic = flatten_gradient(p.model, g, buckets);
    auto params = parameters(p.model, buckets);
    GradientCheck out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double saved = *params[k];
        auto at = [&](double delta) {
            *params[k] = saved + delta;
            return reference_loss(p.model, p.batch(), p.alphas);
        };
        // Five-point central stencil.
        const double numeric = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps);
        *params[k] = saved;
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
        out.worst_relative = std::max(out.worst_relative, std::abs(analytic[k] - numeric) / denom);
        ++out.checked;
    }
    return out;
}

// Entity spans by enumerating every [i, j] and checking the BIO conditions
// directly: the span opens a chunk, every later token continues it, and the
// token after it does not.
struct SpanOracle {
    std::size_t gold = 0;
    std::size_t predicted = 0;
    std::size_t matched = 0;
    std::size_t tokens = 0;
    std::size_t correct = 0;
};

inline std::set<std::tuple<std::size_t, std::size_t, std::string>> brute_force_spans(
    const std::vector<std::string>& tags) {
    auto prefix = [](const std::string& t) { return t.size() > 2 && t[1] == '-' ? t[0] : 'O'; };
    auto type = [](const std::string& t) { return t.substr(2); };
    auto continues = [&](std::size_t i, const std::string& x) {
        return prefix(tags[i]) == 'I' && type(tags[i]) == x;
    };
    std::set<std::tuple<std::size_t, std::size_t, std::string>> out;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const char p = prefix(tags[i]);
        if (p != 'B' && p != 'I') continue;
        const std::string x = type(tags[i]);
        const bool opens = p == 'B' || i == 0 || !((prefix(tags[i - 1]) == 'B' || prefix(tags[i - 1]) == 'I') &&
                                                    type(tags[i - 1]) == x);
        if (!opens) continue;
        for (std::size_t j = i; j < tags.size(); ++j) {
            bool inner = true;
            for (std::size_t m = i + 1; m <= j; ++m) inner = inner && continues(m, x);
            const bool closed = j + 1 == tags.size() || !continues(j + 1, x);
            if (inner && closed) out.emplace(i, j + 1, x);
        }
    }
    return out;
}

inline SpanOracle span_oracle(const std::vector<std::vector<std::string>>& preds,
                              const std::vector<std::vector<std::string>>& golds) {
    SpanOracle o;
    for (std::size_t s = 0; s < golds.size(); ++s) {
        const auto g = brute_force_spans(golds[s]);
        const auto p = brute_force_spans(preds[s]);
        o.gold += g.size();
        o.predicted += p.size();
        for (const auto& span : p) o.matched += g.count(span);
        o.tokens += golds[s].size();
        for (std::size_t i = 0; i < golds[s].size(); ++i) o.correct += preds[s][i] == golds[s][i];
    }
    return o;
}

}  // namespace anno::test
