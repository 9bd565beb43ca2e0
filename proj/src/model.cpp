#include "anno/model.hpp"

#include <httplib.h>

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <random>

#include "anno/text.hpp"

namespace anno {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'N', 'N', 'O', 'S', 'N', 'A', 'P'};
constexpr std::uint32_t kSnapshotVersion = 1;

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Code points of `text`, each as its own UTF-8 substring.
std::vector<std::string_view> code_points(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
        len = std::min(len, text.size() - i);
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

std::string affix(const std::vector<std::string_view>& cps, std::size_t n, bool prefix) {
    std::string out;
    const std::size_t take = std::min(n, cps.size());
    const std::size_t from = prefix ? 0 : cps.size() - take;
    for (std::size_t k = from; k < from + take; ++k) out += cps[k];
    return out;
}

std::string neighbor(const std::vector<std::string>& tokens, std::size_t i, int offset) {
    const auto j = static_cast<std::ptrdiff_t>(i) + offset;
    if (j < 0) return "<s>";
    if (j >= static_cast<std::ptrdiff_t>(tokens.size())) return "</s>";
    return to_lower(tokens[static_cast<std::size_t>(j)]);
}

const std::vector<std::string>& sequence_label(const Label& label, const std::string& task_id) {
    if (const auto* seq = std::get_if<std::vector<std::string>>(&label)) return *seq;
    throw Error(ErrorCode::ValidationFailed, "task `" + task_id + "` expects a tag sequence");
}

const std::string& single_label(const Label& label, const std::string& task_id) {
    if (const auto* one = std::get_if<std::string>(&label)) return *one;
    throw Error(ErrorCode::ValidationFailed, "task `" + task_id + "` expects a single label");
}

template <typename M>
void write_raw(std::ostream& out, const M& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(typename M::Scalar)));
}

template <typename M>
void read_raw(std::istream& in, M& m) {
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(typename M::Scalar)));
    if (!in) throw Error(ErrorCode::InvalidModel, "snapshot truncated");
}

}  // namespace

std::string_view to_string(TaskKind kind) { return kind == TaskKind::Sequence ? "sequence" : "classification"; }

TaskKind task_kind_from_string(std::string_view name) {
    if (name == "sequence") return TaskKind::Sequence;
    if (name == "classification") return TaskKind::Classification;
    throw Error(ErrorCode::InvalidParams, "unknown task kind `" + std::string(name) + "`");
}

template <typename Scalar>
std::size_t BasicTaskHead<Scalar>::label_index(const std::string& label) const {
    for (std::size_t i = 0; i < label_set.size(); ++i)
        if (label_set[i] == label) return i;
    throw Error(ErrorCode::ValidationFailed, "label `" + label + "` is not in the label set of `" + task_id + "`");
}

std::vector<std::uint32_t> hashed_features(const std::vector<std::string>& tokens, std::size_t i,
                                           std::uint32_t buckets, std::uint64_t seed) {
    const std::string& word = tokens[i];
    const std::string lower = to_lower(word);
    const auto cps = code_points(lower);
    std::vector<std::string> names{"bias", "w=" + word, "lw=" + lower};
    for (std::size_t n = 1; n <= 3; ++n) {
        if (cps.size() < n) break;
        names.push_back("p" + std::to_string(n) + "=" + affix(cps, n, true));
        names.push_back("s" + std::to_string(n) + "=" + affix(cps, n, false));
    }
    for (int off : {-2, -1, 1, 2}) names.push_back("w" + std::to_string(off) + "=" + neighbor(tokens, i, off));

    std::vector<std::uint32_t> out;
    out.reserve(names.size());
    for (const auto& name : names) out.push_back(static_cast<std::uint32_t>(fnv1a(name, seed) % buckets));
    return out;
}

EncoderClient::EncoderClient(std::string url, std::size_t dim, std::chrono::milliseconds timeout)
    : url_(std::move(url)), dim_(dim), timeout_(timeout), cache_(std::make_shared<Cache>()) {}

MatrixXd EncoderClient::encode(const std::vector<std::string>& tokens) const {
    {
        std::lock_guard lock(cache_->mutex);
        if (auto it = cache_->vectors.find(tokens); it != cache_->vectors.end()) return it->second;
    }
    const auto scheme_end = url_.find("://");
    const auto path_start = url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    auto res = client.Post(path, json{{"tokens", tokens}}.dump(), "application/json");
    if (!res) throw Error(ErrorCode::EmbedderUnavailable, "encoder at " + url_ + " unreachable");
    if (res->status != 200)
        throw Error(ErrorCode::EmbedderUnavailable, "encoder returned HTTP " + std::to_string(res->status));

    const json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("vectors") || !body["vectors"].is_array())
        throw Error(ErrorCode::EmbedderUnavailable, "encoder response lacks `vectors`");
    const auto& vectors = body["vectors"];
    if (vectors.size() != tokens.size())
        throw Error(ErrorCode::DimMismatch, "encoder returned " + std::to_string(vectors.size()) +
                                                " vectors for " + std::to_string(tokens.size()) + " tokens");
    MatrixXd out(dim_, tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (!vectors[t].is_array() || vectors[t].size() != dim_)
            throw Error(ErrorCode::DimMismatch, "encoder vector has the wrong dimension");
        for (std::size_t d = 0; d < dim_; ++d) out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t)) = vectors[t][d].get<double>();
    }
    std::lock_guard lock(cache_->mutex);
    cache_->vectors.emplace(tokens, out);
    return out;
}

template <typename Scalar>
std::size_t BasicMultiTaskModel<Scalar>::feature_dim() const {
    return std::visit([](const auto& e) -> std::size_t { return e.dim(); }, extractor);
}

template <typename Scalar>
const BasicTaskHead<Scalar>& BasicMultiTaskModel<Scalar>::head(const std::string& task_id) const {
    auto it = heads.find(task_id);
    if (it == heads.end()) throw Error(ErrorCode::UnknownTaskHead, "no head for task `" + task_id + "`");
    return it->second;
}

template <typename Scalar>
BasicMultiTaskModel<Scalar> make_model(const std::vector<HeadSpec>& heads, const ExtractorConfig& config,
                                       std::uint64_t init_seed) {
    if (config.dim == 0) throw Error(ErrorCode::InvalidParams, "feature dim must be positive");
    std::mt19937_64 rng(init_seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    auto fill = [&](auto& m) {
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Scalar>(normal(rng));
    };

    BasicMultiTaskModel<Scalar> model;
    const auto dim = static_cast<Eigen::Index>(config.dim);
    if (config.encoder_url) {
        model.extractor = EncoderClient(*config.encoder_url, config.dim);
    } else {
        if (config.buckets == 0) throw Error(ErrorCode::InvalidParams, "bucket count must be positive");
        BasicHashedExtractor<Scalar> hashed;
        hashed.buckets = config.buckets;
        hashed.seed = config.hash_seed;
        hashed.embedding.resize(dim, config.buckets);
        fill(hashed.embedding);
        hashed.bias = Vector<Scalar>::Zero(dim);
        model.extractor = std::move(hashed);
    }
    for (const auto& spec : heads) {
        if (spec.labels.size() < 2)
            throw Error(ErrorCode::InvalidParams, "task `" + spec.task_id + "` needs at least two labels");
        BasicTaskHead<Scalar> head;
        head.task_id = spec.task_id;
        head.kind = spec.kind;
        head.label_set = spec.labels;
        head.weights.resize(static_cast<Eigen::Index>(spec.labels.size()), dim);
        fill(head.weights);
        head.bias = Vector<Scalar>::Zero(static_cast<Eigen::Index>(spec.labels.size()));
        model.heads.emplace(spec.task_id, std::move(head));
    }
    return model;
}

template <typename Scalar>
Encoded<Scalar> encode(const BasicMultiTaskModel<Scalar>& model, const std::vector<std::string>& tokens) {
    Encoded<Scalar> out;
    if (tokens.empty()) throw Error(ErrorCode::InvalidParams, "cannot encode an empty token list");
    if (const auto* client = std::get_if<EncoderClient>(&model.extractor)) {
        out.hidden = client->encode(tokens).template cast<Scalar>();
        return out;
    }
    const auto& hashed = std::get<BasicHashedExtractor<Scalar>>(model.extractor);
    const auto T = static_cast<Eigen::Index>(tokens.size());
    out.hidden.resize(static_cast<Eigen::Index>(hashed.dim()), T);
    out.features.reserve(tokens.size());
    for (Eigen::Index t = 0; t < T; ++t) {
        out.features.push_back(hashed_features(tokens, static_cast<std::size_t>(t), hashed.buckets, hashed.seed));
        Vector<Scalar> z = hashed.bias;
        for (auto b : out.features.back()) z += hashed.embedding.col(b);
        out.hidden.col(t) = z.array().tanh().matrix();
    }
    return out;
}

template <typename Scalar>
Matrix<Scalar> head_probabilities(const BasicTaskHead<Scalar>& head, const Matrix<Scalar>& hidden,
                                  std::size_t prefix_len) {
    if (head.kind == TaskKind::Sequence) {
        const auto words = hidden.cols() - static_cast<Eigen::Index>(prefix_len);
        Matrix<Scalar> logits = (head.weights * hidden.rightCols(words)).colwise() + head.bias;
        return softmax_columns(logits);
    }
    const Vector<Scalar> pooled = hidden.rowwise().mean();
    Matrix<Scalar> probs = softmax(head.weights * pooled + head.bias);
    return probs;
}

template <typename Scalar>
LossBreakdown loss_and_gradient(const BasicMultiTaskModel<Scalar>& model, const std::vector<const Instance*>& batch,
                                const std::map<std::string, double>& alphas, BasicGradient<Scalar>* gradient) {
    LossBreakdown out;
    if (batch.empty()) return out;
    const auto N = static_cast<Scalar>(batch.size());
    const auto dim = static_cast<Eigen::Index>(model.feature_dim());
    const auto* hashed = std::get_if<BasicHashedExtractor<Scalar>>(&model.extractor);

    if (gradient) {
        gradient->embedding.clear();
        gradient->bias = Vector<Scalar>::Zero(dim);
        gradient->heads.clear();
        for (const auto& [id, head] : model.heads)
            gradient->heads[id] = {Matrix<Scalar>::Zero(head.weights.rows(), dim),
                                   Vector<Scalar>::Zero(head.bias.size())};
    }
    for (const auto& [id, _] : model.heads) out.tasks[id] = 0.0;

    for (const Instance* inst : batch) {
        if (inst->prefix_len >= inst->tokens.size())
            throw Error(ErrorCode::InvalidParams, "instance `" + inst->instance_id + "` has no word tokens");
        const Encoded<Scalar> enc = encode(model, inst->tokens);
        ++out.forward_passes;
        const auto T = enc.hidden.cols();
        const auto W = static_cast<Eigen::Index>(inst->word_count());
        Matrix<Scalar> dH;
        if (gradient) dH = Matrix<Scalar>::Zero(dim, T);

        for (const auto& [task_id, label] : inst->labels) {
            auto head_it = model.heads.find(task_id);
            if (head_it == model.heads.end()) continue;
            const auto& head = head_it->second;
            auto alpha_it = alphas.find(task_id);
            if (alpha_it == alphas.end()) throw Error(ErrorCode::MissingAlpha, "no alpha for task `" + task_id + "`");
            const auto alpha = static_cast<Scalar>(alpha_it->second);
            const auto n = head.weights.rows();

            if (head.kind == TaskKind::Sequence) {
                const auto& tags = sequence_label(label, task_id);
                if (static_cast<Eigen::Index>(tags.size()) != W)
                    throw Error(ErrorCode::LengthMismatch, "instance `" + inst->instance_id + "` has " +
                                                               std::to_string(tags.size()) + " tags for " +
                                                               std::to_string(W) + " tokens");
                const auto H = enc.hidden.rightCols(W);
                const Matrix<Scalar> P = head_probabilities(head, enc.hidden, inst->prefix_len);
                Matrix<Scalar> Y = Matrix<Scalar>::Zero(n, W);
                double loss = 0;
                for (Eigen::Index t = 0; t < W; ++t) {
                    const auto y = static_cast<Eigen::Index>(head.label_index(tags[static_cast<std::size_t>(t)]));
                    Y(y, t) = 1;
                    loss -= std::log(static_cast<double>(std::max(P(y, t), std::numeric_limits<Scalar>::min())));
                }
                out.tasks[task_id] += loss / static_cast<double>(W) / static_cast<double>(batch.size());
                if (gradient) {
                    const Matrix<Scalar> dlogits = (P - Y) * (alpha / (N * static_cast<Scalar>(W)));
                    auto& [gW, gb] = gradient->heads[task_id];
                    gW.noalias() += dlogits * H.transpose();
                    gb += dlogits.rowwise().sum();
                    dH.rightCols(W).noalias() += head.weights.transpose() * dlogits;
                }
            } else {
                const auto y = static_cast<Eigen::Index>(head.label_index(single_label(label, task_id)));
                const Vector<Scalar> pooled = enc.hidden.rowwise().mean();
                const Vector<Scalar> p = softmax(head.weights * pooled + head.bias);
                out.tasks[task_id] -= std::log(static_cast<double>(std::max(p(y), std::numeric_limits<Scalar>::min()))) /
                                      static_cast<double>(batch.size());
                if (gradient) {
                    Vector<Scalar> dlogits = p;
                    dlogits(y) -= 1;
                    dlogits *= alpha / N;
                    auto& [gW, gb] = gradient->heads[task_id];
                    gW.noalias() += dlogits * pooled.transpose();
                    gb += dlogits;
                    const Vector<Scalar> dpooled = head.weights.transpose() * dlogits / static_cast<Scalar>(T);
                    dH.colwise() += dpooled;
                }
            }
        }

        if (gradient && hashed) {
            const Matrix<Scalar> dZ = (dH.array() * (Scalar(1) - enc.hidden.array().square())).matrix();
            gradient->bias += dZ.rowwise().sum();
            for (Eigen::Index t = 0; t < T; ++t) {
                for (auto b : enc.features[static_cast<std::size_t>(t)]) {
                    auto [it, fresh] = gradient->embedding.try_emplace(b, dZ.col(t));
                    if (!fresh) it->second += dZ.col(t);
                }
            }
        }
    }
    for (const auto& [task_id, loss] : out.tasks) {
        if (auto it = alphas.find(task_id); it != alphas.end()) out.total += it->second * loss;
    }
    return out;
}

template <typename Scalar>
void apply_gradient(BasicMultiTaskModel<Scalar>& model, const BasicGradient<Scalar>& gradient, Scalar learning_rate) {
    if (auto* hashed = std::get_if<BasicHashedExtractor<Scalar>>(&model.extractor)) {
        for (const auto& [b, g] : gradient.embedding) hashed->embedding.col(b) -= learning_rate * g;
        if (gradient.bias.size() == hashed->bias.size()) hashed->bias -= learning_rate * gradient.bias;
    }
    for (const auto& [id, g] : gradient.heads) {
        auto& head = model.heads.at(id);
        head.weights -= learning_rate * g.first;
        head.bias -= learning_rate * g.second;
    }
}

template <typename Scalar>
void save_snapshot(const BasicMultiTaskModel<Scalar>& model, const std::string& path) {
    json header;
    header["scalar_bytes"] = sizeof(Scalar);
    header["trained"] = model.trained;
    if (const auto* client = std::get_if<EncoderClient>(&model.extractor)) {
        header["extractor"] = {{"kind", "encoder"}, {"url", client->url()}, {"dim", client->dim()}};
    } else {
        const auto& hashed = std::get<BasicHashedExtractor<Scalar>>(model.extractor);
        header["extractor"] = {
            {"kind", "hashed"}, {"dim", hashed.dim()}, {"buckets", hashed.buckets}, {"seed", hashed.seed}};
    }
    header["heads"] = json::array();
    for (const auto& [id, head] : model.heads)
        header["heads"].push_back({{"task_id", id}, {"kind", to_string(head.kind)}, {"labels", head.label_set}});

    const std::string text = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::StorageError, "cannot write snapshot " + path);
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&kSnapshotVersion), sizeof kSnapshotVersion);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (const auto* hashed = std::get_if<BasicHashedExtractor<Scalar>>(&model.extractor)) {
            write_raw(out, hashed->embedding);
            write_raw(out, hashed->bias);
        }
        for (const auto& [id, head] : model.heads) {
            write_raw(out, head.weights);
            write_raw(out, head.bias);
        }
        if (!out) throw Error(ErrorCode::StorageError, "failed writing snapshot " + path);
    }
    std::rename(tmp.c_str(), path.c_str());
}

template <typename Scalar>
BasicMultiTaskModel<Scalar> load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidModel, "cannot open snapshot " + path);
    char magic[sizeof kMagic];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(ErrorCode::InvalidModel, "not a model snapshot");
    if (version != kSnapshotVersion)
        throw Error(ErrorCode::InvalidModel, "unsupported snapshot version " + std::to_string(version));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const json header = json::parse(text, nullptr, false);
    if (!in || header.is_discarded()) throw Error(ErrorCode::InvalidModel, "corrupt snapshot header");
    if (header.at("scalar_bytes").get<std::size_t>() != sizeof(Scalar))
        throw Error(ErrorCode::InvalidModel, "snapshot scalar type differs");

    BasicMultiTaskModel<Scalar> model;
    model.trained = header.at("trained").get<bool>();
    const auto& ex = header.at("extractor");
    const auto dim = ex.at("dim").get<Eigen::Index>();
    if (ex.at("kind") == "encoder") {
        model.extractor = EncoderClient(ex.at("url").get<std::string>(), static_cast<std::size_t>(dim));
    } else {
        BasicHashedExtractor<Scalar> hashed;
        hashed.buckets = ex.at("buckets").get<std::uint32_t>();
        hashed.seed = ex.at("seed").get<std::uint64_t>();
        hashed.embedding.resize(dim, hashed.buckets);
        hashed.bias.resize(dim);
        read_raw(in, hashed.embedding);
        read_raw(in, hashed.bias);
        model.extractor = std::move(hashed);
    }
    for (const auto& h : header.at("heads")) {
        BasicTaskHead<Scalar> head;
        head.task_id = h.at("task_id").get<std::string>();
        head.kind = task_kind_from_string(h.at("kind").get<std::string>());
        head.label_set = h.at("labels").get<std::vector<std::string>>();
        head.weights.resize(static_cast<Eigen::Index>(head.label_set.size()), dim);
        head.bias.resize(static_cast<Eigen::Index>(head.label_set.size()));
        read_raw(in, head.weights);
        read_raw(in, head.bias);
        model.heads.emplace(head.task_id, std::move(head));
    }
    return model;
}

#define ANNO_INSTANTIATE_MODEL(S)                                                                                 \
    template struct BasicTaskHead<S>;                                                                             \
    template struct BasicMultiTaskModel<S>;                                                                       \
    template BasicMultiTaskModel<S> make_model<S>(const std::vector<HeadSpec>&, const ExtractorConfig&,            \
                                                  std::uint64_t);                                                 \
    template Encoded<S> encode<S>(const BasicMultiTaskModel<S>&, const std::vector<std::string>&);                \
    template Matrix<S> head_probabilities<S>(const BasicTaskHead<S>&, const Matrix<S>&, std::size_t);             \
    template LossBreakdown loss_and_gradient<S>(const BasicMultiTaskModel<S>&, const std::vector<const Instance*>&, \
                                                const std::map<std::string, double>&, BasicGradient<S>*);         \
    template void apply_gradient<S>(BasicMultiTaskModel<S>&, const BasicGradient<S>&, S);                         \
    template void save_snapshot<S>(const BasicMultiTaskModel<S>&, const std::string&);                            \
    template BasicMultiTaskModel<S> load_snapshot<S>(const std::string&);

ANNO_INSTANTIATE_MODEL(double)
ANNO_INSTANTIATE_MODEL(float)

}  // namespace anno
