#pragma once

// The suggestion model: a shared token encoder feeding one linear head per
// task. The native encoder hashes windowed token features into a trainable
// embedding table followed by tanh; an external encoder can stand in for it
// and is then frozen.

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "anno/kernels.hpp"

namespace anno {

// A gold label: one tag per word token for sequence tasks, one string otherwise.
using Label = std::variant<std::string, std::vector<std::string>>;

struct Instance {
    std::string instance_id;
    std::vector<std::string> tokens;
    std::map<std::string, Label> labels;
    // Leading pseudo-tokens (demographics) that carry no sequence labels.
    std::size_t prefix_len = 0;

    std::size_t word_count() const { return tokens.size() - prefix_len; }
};

enum class TaskKind { Sequence, Classification };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);

template <typename Scalar>
struct BasicTaskHead {
    std::string task_id;
    TaskKind kind = TaskKind::Sequence;
    std::vector<std::string> label_set;
    Matrix<Scalar> weights;  // label_set.size() x feature_dim
    Vector<Scalar> bias;

    // Throws ValidationFailed for labels outside the fixed label set.
    std::size_t label_index(const std::string& label) const;
};

// Window features for position `i`, hashed into [0, buckets).
std::vector<std::uint32_t> hashed_features(const std::vector<std::string>& tokens, std::size_t i,
                                           std::uint32_t buckets, std::uint64_t seed);

template <typename Scalar>
struct BasicHashedExtractor {
    std::uint32_t buckets = 1u << 14;
    std::uint64_t seed = 0;
    Matrix<Scalar> embedding;  // dim x buckets, one column per feature bucket
    Vector<Scalar> bias;

    std::size_t dim() const { return static_cast<std::size_t>(embedding.rows()); }
};

// Client for an external encoder reached over HTTP: POST {"tokens": [...]}
// answered by {"vectors": [[...], ...]}, one vector per token.
class EncoderClient {
public:
    EncoderClient(std::string url, std::size_t dim, std::chrono::milliseconds timeout = std::chrono::seconds(30));

    const std::string& url() const { return url_; }
    std::size_t dim() const { return dim_; }
    // dim x tokens.size(); throws EmbedderUnavailable or DimMismatch.
    MatrixXd encode(const std::vector<std::string>& tokens) const;

private:
    struct Cache {
        std::mutex mutex;
        std::map<std::vector<std::string>, MatrixXd> vectors;
    };
    std::string url_;
    std::size_t dim_;
    std::chrono::milliseconds timeout_;
    std::shared_ptr<Cache> cache_;
};

template <typename Scalar>
using BasicExtractor = std::variant<BasicHashedExtractor<Scalar>, EncoderClient>;

template <typename Scalar>
struct BasicMultiTaskModel {
    BasicExtractor<Scalar> extractor;
    std::map<std::string, BasicTaskHead<Scalar>> heads;
    bool trained = false;

    std::size_t feature_dim() const;
    const BasicTaskHead<Scalar>& head(const std::string& task_id) const;
};

struct HeadSpec {
    std::string task_id;
    TaskKind kind = TaskKind::Sequence;
    std::vector<std::string> labels;
};

struct ExtractorConfig {
    std::size_t dim = 48;
    std::uint32_t buckets = 1u << 14;
    std::uint64_t hash_seed = 0x5eed;
    std::optional<std::string> encoder_url;  // external encoder instead of hashing
};

template <typename Scalar>
BasicMultiTaskModel<Scalar> make_model(const std::vector<HeadSpec>& heads, const ExtractorConfig& config,
                                       std::uint64_t init_seed);

// Hidden vectors for one instance plus what the backward pass needs.
template <typename Scalar>
struct Encoded {
    Matrix<Scalar> hidden;                              // dim x tokens
    std::vector<std::vector<std::uint32_t>> features;   // empty for external encoders
};

template <typename Scalar>
Encoded<Scalar> encode(const BasicMultiTaskModel<Scalar>& model, const std::vector<std::string>& tokens);

// Per-position label probabilities (labels x positions) under one head. For
// sequence heads the positions are the word tokens; classification heads
// mean-pool every position, prefix included, and yield a single column.
template <typename Scalar>
Matrix<Scalar> head_probabilities(const BasicTaskHead<Scalar>& head, const Matrix<Scalar>& hidden,
                                  std::size_t prefix_len);

template <typename Scalar>
struct BasicGradient {
    std::unordered_map<std::uint32_t, Vector<Scalar>> embedding;  // sparse columns
    Vector<Scalar> bias;
    std::map<std::string, std::pair<Matrix<Scalar>, Vector<Scalar>>> heads;
};

struct LossBreakdown {
    double total = 0;                     // sum of alpha_i * L_i
    std::map<std::string, double> tasks;  // unweighted L_i
    std::size_t forward_passes = 0;
};

// Joint cross-entropy over `batch`: per-token CE averaged over a sequence's
// word tokens, then averaged over the batch; instances without a label for a
// task contribute zero. Fills `gradient` when given.
template <typename Scalar>
LossBreakdown loss_and_gradient(const BasicMultiTaskModel<Scalar>& model, const std::vector<const Instance*>& batch,
                                const std::map<std::string, double>& alphas, BasicGradient<Scalar>* gradient);

template <typename Scalar>
void apply_gradient(BasicMultiTaskModel<Scalar>& model, const BasicGradient<Scalar>& gradient, Scalar learning_rate);

// Versioned binary snapshot: magic, format version, JSON header, raw scalars.
template <typename Scalar>
void save_snapshot(const BasicMultiTaskModel<Scalar>& model, const std::string& path);
template <typename Scalar>
BasicMultiTaskModel<Scalar> load_snapshot(const std::string& path);

using TaskHead = BasicTaskHead<double>;
using HashedExtractor = BasicHashedExtractor<double>;
using Extractor = BasicExtractor<double>;
using MultiTaskModel = BasicMultiTaskModel<double>;
using Gradient = BasicGradient<double>;

}  // namespace anno
