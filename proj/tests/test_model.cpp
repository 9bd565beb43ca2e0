#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "anno/active.hpp"
#include "anno/model.hpp"
#include "oracles.hpp"

// after Eigen: resolv.h, pulled in by httplib, defines `_res`
#include <httplib.h>
#include <json.hpp>

using namespace anno;

namespace {

std::vector<HeadSpec> two_heads() {
    return {{"cp", TaskKind::Sequence, {"B-NP", "I-NP", "B-VP", "O"}}, {"ner", TaskKind::Sequence, {"O", "B-PER", "I-PER"}}};
}

Instance make_instance(std::string id, std::vector<std::string> tokens) {
    Instance inst;
    inst.instance_id = std::move(id);
    inst.tokens = std::move(tokens);
    return inst;
}

std::vector<const Instance*> pointers(const std::vector<Instance>& xs) {
    std::vector<const Instance*> out;
    for (const auto& x : xs) out.push_back(&x);
    return out;
}

}  // namespace

TEST_CASE("hashed features are deterministic and window-shaped") {
    const std::vector<std::string> tokens{"The", "cat", "sat"};
    const auto a = hashed_features(tokens, 1, 1u << 14, 42);
    CHECK(a == hashed_features(tokens, 1, 1u << 14, 42));
    CHECK(a.size() == 13);
    CHECK(a != hashed_features(tokens, 1, 1u << 14, 43));
    for (auto b : hashed_features({"x"}, 0, 7, 1)) CHECK(b < 7u);
}

TEST_CASE("encoder output shape and determinism") {
    auto model = make_model<double>(two_heads(), {}, 1);
    CHECK(model.feature_dim() == 48);
    auto one = encode(model, {"Paris"});
    CHECK(one.hidden.rows() == 48);
    CHECK(one.hidden.cols() == 1);
    std::vector<std::string> long_tokens(100, "w");
    CHECK(encode(model, long_tokens).hidden.cols() == 100);

    // same token, same context -> identical vector
    auto twice = encode(model, {"a", "b", "c", "a", "b", "c"});
    auto again = encode(model, {"a", "b", "c", "a", "b", "c"});
    CHECK(twice.hidden == again.hidden);
    CHECK((twice.hidden.col(1) - again.hidden.col(1)).norm() == 0.0);
}

TEST_CASE("property: analytic gradients match finite differences") {
    std::mt19937_64 rng(2024);
    double worst = 0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        auto problem = test::random_problem(rng);
        auto result = test::check_gradient(problem);
        worst = std::max(worst, result.worst_relative);
        checked += result.checked;
    }
    INFO("worst relative error " << worst << " over " << checked << " coordinates");
    CHECK(worst <= 1e-5);
}

TEST_CASE("loss_and_gradient agrees with the reference loss") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        auto p = test::random_problem(rng);
        const auto got = loss_and_gradient<double>(p.model, p.batch(), p.alphas, nullptr);
        CHECK(got.total == doctest::Approx(test::reference_loss(p.model, p.batch(), p.alphas)).epsilon(1e-12));
        CHECK(got.forward_passes == p.instances.size());
        CHECK(got.total == doctest::Approx(joint_loss(got.tasks, p.alphas)).epsilon(1e-12));
    }
}

TEST_CASE("one encoder pass per instance serves every head") {
    auto model = make_model<double>(two_heads(), {}, 3);
    std::vector<Instance> data{make_instance("0", {"John", "runs"}), make_instance("1", {"Mary", "sleeps"})};
    data[0].labels = {{"cp", std::vector<std::string>{"B-NP", "B-VP"}}, {"ner", std::vector<std::string>{"B-PER", "O"}}};
    data[1].labels = {{"cp", std::vector<std::string>{"B-NP", "B-VP"}}, {"ner", std::vector<std::string>{"B-PER", "O"}}};
    ALConfig cfg;
    cfg.epochs = 1;
    auto stats = train(model, pointers(data), cfg);
    CHECK(stats.forward_passes == 2);

    std::size_t separate = 0;
    for (const auto& head : two_heads()) {
        auto single = make_model<double>({head}, {}, 3);
        separate += train(single, pointers(data), cfg).forward_passes;
    }
    CHECK(separate == 4);
}

TEST_CASE("linearly separable toy data trains below 0.01 loss") {
    auto model = make_model<double>({{"sent", TaskKind::Classification, {"neg", "pos"}}}, {}, 11);
    std::vector<Instance> data;
    const std::vector<std::string> good{"great", "lovely", "fine"}, bad{"awful", "dire", "poor"};
    for (int i = 0; i < 12; ++i) {
        const bool pos = i % 2 == 0;
        auto inst = make_instance(std::to_string(i), {"the", "film", "was", pos ? good[i % 3] : bad[i % 3]});
        inst.labels["sent"] = std::string(pos ? "pos" : "neg");
        data.push_back(inst);
    }
    ALConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.5;
    auto stats = train(model, pointers(data), cfg);
    CHECK(stats.loss_curve["sent"].back() < 0.01);
    CHECK(stats.joint_loss_curve.front() > stats.joint_loss_curve.back());
}

TEST_CASE("doubling alpha and halving the learning rate gives the same trajectory") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = test::random_problem(rng);
        auto a = p.model;
        auto b = p.model;
        ALConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 2;
        cfg.learning_rate = 0.2;
        cfg.seed = static_cast<std::uint64_t>(trial);
        cfg.alphas = p.alphas;
        train(a, p.batch(), cfg);
        for (auto& [_, alpha] : cfg.alphas) alpha *= 2;
        cfg.learning_rate /= 2;
        train(b, p.batch(), cfg);
        CHECK(std::get<HashedExtractor>(a.extractor).embedding == std::get<HashedExtractor>(b.extractor).embedding);
        for (const auto& [id, head] : a.heads) {
            CHECK(head.weights == b.heads.at(id).weights);
            CHECK(head.bias == b.heads.at(id).bias);
        }
    }
}

TEST_CASE("training touches only the heads it has labels for") {
    const auto start = make_model<double>(two_heads(), {}, 9);
    std::vector<Instance> cp_only{make_instance("0", {"dogs", "bark"})}, ner_only{make_instance("1", {"Ann", "left"})};
    cp_only[0].labels["cp"] = std::vector<std::string>{"B-NP", "B-VP"};
    ner_only[0].labels["ner"] = std::vector<std::string>{"B-PER", "O"};
    ALConfig cfg;
    cfg.epochs = 2;

    auto a = start;
    train(a, pointers(cp_only), cfg);
    auto b = start;
    train(b, pointers(ner_only), cfg);
    CHECK(a.heads.at("cp").weights != start.heads.at("cp").weights);
    CHECK(a.heads.at("ner").weights == start.heads.at("ner").weights);
    CHECK(b.heads.at("ner").weights != start.heads.at("ner").weights);
    CHECK(b.heads.at("cp").weights == start.heads.at("cp").weights);

    // joint training moves the shared extractor columns reached from both tasks
    std::vector<Instance> both{cp_only[0], ner_only[0]};
    auto j = start;
    train(j, pointers(both), cfg);
    const auto& e0 = std::get<HashedExtractor>(start.extractor);
    const auto& ej = std::get<HashedExtractor>(j.extractor);
    for (const auto* inst : {&cp_only[0], &ner_only[0]}) {
        for (auto b : hashed_features(inst->tokens, 0, e0.buckets, e0.seed))
            CHECK(ej.embedding.col(b) != e0.embedding.col(b));
    }
    CHECK(j.heads.at("cp").weights != start.heads.at("cp").weights);
    CHECK(j.heads.at("ner").weights != start.heads.at("ner").weights);
}

TEST_CASE("unknown labels and malformed instances are rejected") {
    auto model = make_model<double>(two_heads(), {}, 1);
    std::vector<Instance> data{make_instance("0", {"a", "b"})};
    data[0].labels["cp"] = std::vector<std::string>{"B-NP", "B-ADJP"};
    ALConfig cfg;
    CHECK_THROWS_AS(train(model, pointers(data), cfg), Error);
    data[0].labels["cp"] = std::vector<std::string>{"B-NP"};
    CHECK_THROWS_AS(train(model, pointers(data), cfg), Error);
    data[0].labels.clear();
    try {
        train(model, pointers(data), cfg);
        FAIL("expected NoLabeledData");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoLabeledData);
    }
    CHECK_THROWS_AS(make_model<double>({{"x", TaskKind::Sequence, {"O"}}}, {}, 1), Error);
}

TEST_CASE("snapshots round trip bit for bit") {
    auto model = make_model<double>(two_heads(), {16, 512, 3, std::nullopt}, 4);
    model.trained = true;
    const auto path = (std::filesystem::temp_directory_path() / "anno_model_test.bin").string();
    save_snapshot(model, path);
    auto back = load_snapshot<double>(path);
    CHECK(back.trained);
    CHECK(std::get<HashedExtractor>(back.extractor).embedding == std::get<HashedExtractor>(model.extractor).embedding);
    CHECK(std::get<HashedExtractor>(back.extractor).seed == 3u);
    for (const auto& [id, head] : model.heads) {
        CHECK(back.heads.at(id).label_set == head.label_set);
        CHECK(back.heads.at(id).weights == head.weights);
    }
    CHECK_THROWS_AS(load_snapshot<float>(path), Error);
    {
        std::ofstream junk(path, std::ios::binary | std::ios::trunc);
        junk << "not a model";
    }
    CHECK_THROWS_AS(load_snapshot<double>(path), Error);
    std::filesystem::remove(path);
}

TEST_CASE("single precision instantiation trains too") {
    auto model = make_model<float>({{"sent", TaskKind::Classification, {"neg", "pos"}}}, {8, 256, 1, std::nullopt}, 2);
    std::vector<Instance> data{make_instance("0", {"good"}), make_instance("1", {"bad"})};
    data[0].labels["sent"] = std::string("pos");
    data[1].labels["sent"] = std::string("neg");
    ALConfig cfg;
    cfg.epochs = 100;
    auto stats = train(model, pointers(data), cfg);
    CHECK(stats.loss_curve["sent"].back() < stats.loss_curve["sent"].front());
    CHECK(suggest(model, data[0]).at("sent").labels == std::vector<std::string>{"pos"});
}

TEST_CASE("external encoder stands in for the hashed extractor") {
    httplib::Server stub;
    std::atomic<int> calls{0};
    stub.Post("/encode", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        auto body = nlohmann::json::parse(req.body);
        nlohmann::json vectors = nlohmann::json::array();
        for (const auto& tok : body["tokens"]) {
            const auto s = tok.get<std::string>();
            std::vector<double> v(6, 0.0);
            for (std::size_t i = 0; i < s.size(); ++i) v[i % 6] += (static_cast<unsigned char>(s[i]) % 13) / 13.0;
            vectors.push_back(v);
        }
        res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
    });
    const int port = stub.bind_to_any_port("127.0.0.1");
    std::thread server([&] { stub.listen_after_bind(); });
    stub.wait_until_ready();

    ExtractorConfig cfg;
    cfg.dim = 6;
    cfg.encoder_url = "http://127.0.0.1:" + std::to_string(port) + "/encode";
    auto model = make_model<double>(two_heads(), cfg, 1);
    CHECK(model.feature_dim() == 6);
    auto enc = encode(model, {"Ann", "left", "Rome"});
    CHECK(enc.hidden.rows() == 6);
    CHECK(enc.hidden.cols() == 3);
    CHECK(enc.features.empty());

    std::vector<Instance> data{make_instance("0", {"Ann", "left"})};
    data[0].labels["ner"] = std::vector<std::string>{"B-PER", "O"};
    ALConfig al;
    al.epochs = 50;
    auto before = model.heads.at("ner").weights;
    train(model, pointers(data), al);
    CHECK(model.heads.at("ner").weights != before);
    CHECK(suggest(model, data[0]).at("ner").labels == std::vector<std::string>{"B-PER", "O"});

    // wrong dimension from the service is reported, not silently reshaped
    ExtractorConfig wrong = cfg;
    wrong.dim = 5;
    auto bad = make_model<double>(two_heads(), wrong, 1);
    try {
        encode(bad, {"x"});
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
    stub.stop();
    server.join();

    ExtractorConfig gone = cfg;
    gone.encoder_url = "http://127.0.0.1:" + std::to_string(port) + "/encode";
    auto orphan = make_model<double>(two_heads(), gone, 1);
    try {
        encode(orphan, {"never", "seen"});
        FAIL("expected EmbedderUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmbedderUnavailable);
    }
}
