// anno: experiment scenarios and the annotation server.
//
//   anno al_vs_random  --seeds 1,2,3,4,5 --budget 500 --out runs/al
//   anno mtal_vs_single --corpus train.conll --columns cp=2,ner=3
//   anno demographic --seeds 1,2,3
//   anno prompt_eval --mock-llm gold --n-examples 1,5,10 --strategy random,similar
//   anno serve --db anno.sqlite --port 8080

#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "anno/harness.hpp"
#include "anno/service.hpp"

namespace {

using namespace anno;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string part;
    for (char c : s + ",") {
        if (c == ',') {
            if (!part.empty()) out.push_back(part);
            part.clear();
        } else if (c != ' ') {
            part += c;
        }
    }
    return out;
}

std::uint64_t to_u64(const std::string& s) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw Error(ErrorCode::InvalidParams, "not an integer: " + s);
    return v;
}

struct ScenarioFlags {
    std::string corpus;
    std::string columns = "cp=2,ner=3";
    std::size_t synthetic = 0;
    std::string seeds = "1,2,3,4,5";
    std::size_t budget = 500;
    std::size_t k = 10;
    std::vector<std::string> alpha;
    std::string agg = "mean";
    std::string strategy;
    std::string n_examples = "1,5,10";
    std::string mock_llm = "gold";
    std::string prompt_task = "ner";
    std::size_t epochs = 3;
    std::size_t test_size = 400;
    double noise = 0;
    std::string out;
};

void add_scenario_flags(CLI::App* sub, ScenarioFlags& f) {
    auto* corpus = sub->add_option("--corpus", f.corpus, "CoNLL-format corpus file")->check(CLI::ExistingFile);
    sub->add_option("--columns", f.columns, "task=column pairs for --corpus");
    sub->add_option("--synthetic", f.synthetic, "size of the generated corpus in sentences")->excludes(corpus);
    sub->add_option("--seeds", f.seeds, "comma-separated seeds");
    sub->add_option("--budget", f.budget, "labeling budget");
    sub->add_option("--k", f.k, "query batch size and retrain interval");
    sub->add_option("--alpha", f.alpha, "task=weight, or one weight for every task")->take_all();
    sub->add_option("--agg", f.agg, "confidence aggregation: mean or min");
    sub->add_option("--strategy", f.strategy, "lc,random for AL runs; random,similar for prompt_eval");
    sub->add_option("--n-examples", f.n_examples, "comma-separated exemplar counts");
    sub->add_option("--mock-llm", f.mock_llm, "gold, all-o or api");
    sub->add_option("--prompt-task", f.prompt_task, "task scored by prompt_eval");
    sub->add_option("--epochs", f.epochs, "epochs per retrain");
    sub->add_option("--test-size", f.test_size, "held-out sentences");
    sub->add_option("--noise", f.noise, "simulated annotator error rate");
    sub->add_option("--out", f.out, "directory for results.csv, summary.json and curves.svg");
}

SimConfig to_config(Scenario scenario, const ScenarioFlags& f) {
    SimConfig cfg;
    cfg.scenario = scenario;
    cfg.seeds.clear();
    for (const auto& s : split_list(f.seeds)) cfg.seeds.push_back(to_u64(s));
    if (!f.corpus.empty()) {
        cfg.corpus_path = f.corpus;
        cfg.corpus_columns.clear();
        for (const auto& pair : split_list(f.columns)) {
            const auto eq = pair.find('=');
            if (eq == std::string::npos) throw Error(ErrorCode::InvalidParams, "expected task=column, got " + pair);
            cfg.corpus_columns[pair.substr(0, eq)] = to_u64(pair.substr(eq + 1));
        }
    }
    if (f.synthetic) cfg.synthetic.sentences = f.synthetic;
    cfg.budget = f.budget;
    cfg.test_size = f.test_size;
    cfg.noise = f.noise;
    cfg.al.query_batch_k = f.k;
    cfg.al.retrain_every = f.k;
    cfg.al.epochs = f.epochs;
    cfg.al.confidence_agg = confidence_agg_from_string(f.agg);
    for (const auto& a : f.alpha) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) {
            for (const auto& [task, column] : cfg.corpus_columns) cfg.al.alphas[task] = std::stod(a);
        } else {
            cfg.al.alphas[a.substr(0, eq)] = std::stod(a.substr(eq + 1));
        }
    }
    if (!f.strategy.empty()) {
        if (scenario == Scenario::PromptEval) {
            cfg.prompt_strategies.clear();
            for (const auto& s : split_list(f.strategy)) cfg.prompt_strategies.push_back(selection_strategy_from_string(s));
        } else {
            cfg.strategies.clear();
            for (const auto& s : split_list(f.strategy)) cfg.strategies.push_back(query_strategy_from_string(s));
        }
    }
    cfg.prompt_n.clear();
    for (const auto& n : split_list(f.n_examples)) cfg.prompt_n.push_back(to_u64(n));
    cfg.mock_llm = f.mock_llm;
    cfg.prompt_task = f.prompt_task;
    cfg.out_dir = f.out;
    cfg.validate();
    return cfg;
}

int run_scenario_command(Scenario scenario, const ScenarioFlags& f) {
    const SimConfig cfg = to_config(scenario, f);
    const ScenarioReport report = run_scenario(cfg);  // writes the report when --out is set
    std::cout << report.summary.dump(2) << "\n";
    return 0;
}

struct ServeFlags {
    std::string db = "anno.sqlite";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string admin = "admin";
    std::string password_env = "ANNO_ADMIN_PASSWORD";
};

HttpServer* running_server = nullptr;

int serve(const ServeFlags& f) {
    AnnotationStore store(open_sqlite_storage(f.db));
    if (!store.find_user_by_name(f.admin)) {
        const char* password = std::getenv(f.password_env.c_str());
        if (!password || !*password) {
            std::cerr << "no administrator `" << f.admin << "`; set " << f.password_env << " to create one\n";
            return 2;
        }
        User admin;
        admin.user_id = f.admin;
        admin.name = f.admin;
        admin.role = Role::Administrator;
        store.register_user(std::move(admin), password);
    }
    ApiService api(store);
    HttpServer server(api);
    const int port = server.bind(f.host, f.port);
    std::cerr << "listening on " << f.host << ":" << port << "\n";
    running_server = &server;
    std::signal(SIGINT, [](int) {
        if (running_server) running_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (running_server) running_server->stop();
    });
    server.listen();
    running_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Annotation server and active-learning experiments"};
    app.require_subcommand(1);

    ScenarioFlags flags;
    std::vector<std::pair<CLI::App*, Scenario>> scenarios;
    for (Scenario s : {Scenario::MtalVsSingle, Scenario::AlVsRandom, Scenario::Demographic, Scenario::PromptEval}) {
        auto* sub = app.add_subcommand(std::string(to_string(s)), "run the " + std::string(to_string(s)) + " scenario");
        add_scenario_flags(sub, flags);
        scenarios.emplace_back(sub, s);
    }

    ServeFlags serve_flags;
    auto* serve_cmd = app.add_subcommand("serve", "serve the REST API");
    serve_cmd->add_option("--db", serve_flags.db, "SQLite database path");
    serve_cmd->add_option("--host", serve_flags.host);
    serve_cmd->add_option("--port", serve_flags.port, "0 picks a free port");
    serve_cmd->add_option("--admin", serve_flags.admin, "administrator created on first start");
    serve_cmd->add_option("--password-env", serve_flags.password_env, "variable holding the first administrator's password");

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve_cmd->parsed()) return serve(serve_flags);
        for (const auto& [sub, scenario] : scenarios)
            if (sub->parsed()) return run_scenario_command(scenario, flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
