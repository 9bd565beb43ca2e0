#include "anno/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "anno/llm_client.hpp"
#include "anno/plot.hpp"
#include "anno/text.hpp"

namespace anno {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

json metrics_json(const SequenceMetrics& m) {
    return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

// ---- simulated annotator ----

SimulatedAnnotator::SimulatedAnnotator(double epsilon, std::uint64_t seed) : epsilon_(epsilon), rng_(seed) {
    if (epsilon < 0 || epsilon > 1) throw Error(ErrorCode::InvalidParams, "noise rate must lie in [0, 1]");
}

std::string SimulatedAnnotator::label(const std::string& gold, const std::vector<std::string>& label_set) {
    if (epsilon_ == 0 || label_set.size() < 2) return gold;
    if (std::uniform_real_distribution<double>(0, 1)(rng_) >= epsilon_) return gold;
    std::vector<std::string> others;
    for (const auto& l : label_set)
        if (l != gold) others.push_back(l);
    return others[rng_() % others.size()];
}

std::vector<std::string> SimulatedAnnotator::tags(const std::vector<std::string>& gold,
                                                  const std::vector<std::string>& label_set) {
    std::vector<std::string> out;
    out.reserve(gold.size());
    for (const auto& g : gold) out.push_back(label(g, label_set));
    return out;
}

std::vector<ResultValue> SimulatedAnnotator::answer(const ServedInstance& served, const TaskFile& gold) {
    const std::size_t i = served.instance_index;
    if (i >= gold.document.result.size())
        throw Error(ErrorCode::MissingGold, "no gold row for instance " + std::to_string(i));
    std::vector<ResultValue> out = gold.document.result[i];
    if (out.size() != gold.interface.size())
        throw Error(ErrorCode::MissingGold, "gold row " + std::to_string(i) + " does not match the interface");
    for (std::size_t c = 0; c < out.size(); ++c) {
        const auto& comp = gold.interface.components[c];
        if (!comp.collects_result()) continue;
        if (std::holds_alternative<NoResult>(out[c]))
            throw Error(ErrorCode::MissingGold,
                        "gold row " + std::to_string(i) + " has no value for component " + std::to_string(c));
        if (auto* choice = std::get_if<ChoiceAnswer>(&out[c]); choice && !comp.contents.empty()) {
            const auto& options = comp.contents;
            const auto idx = static_cast<std::size_t>(choice->index);
            if (idx < options.size())
                choice->index = static_cast<std::int64_t>(
                    std::find(options.begin(), options.end(), label(options[idx], options)) - options.begin());
        }
    }
    return out;
}

std::size_t SimulatedAnnotator::annotate_all(AnnotationStore& store, const std::string& task_id,
                                             const std::string& annotator_id, const TaskFile& gold) {
    std::size_t n = 0;
    while (auto served = store.next_instance(task_id, annotator_id)) {
        store.submit_annotation(task_id, annotator_id, served->instance_index, answer(*served, gold));
        ++n;
    }
    return n;
}

// ---- corpus conversion and evaluation ----

Instance to_instance(const TaggedSentence& sentence, std::size_t index, const std::vector<std::string>& tasks) {
    Instance inst;
    inst.instance_id = std::to_string(index);
    inst.tokens = sentence.tokens;
    for (const auto& [task, tags] : sentence.tags)
        if (tasks.empty() || std::find(tasks.begin(), tasks.end(), task) != tasks.end()) inst.labels[task] = tags;
    return inst;
}

std::vector<Instance> to_instances(const SequenceCorpus& corpus, std::size_t begin, std::size_t end,
                                   const std::vector<std::string>& tasks) {
    std::vector<Instance> out;
    for (std::size_t i = begin; i < std::min(end, corpus.sentences.size()); ++i)
        out.push_back(to_instance(corpus.sentences[i], i, tasks));
    return out;
}

template <typename Scalar>
std::map<std::string, SequenceMetrics> evaluate_model(const BasicMultiTaskModel<Scalar>& model,
                                                      const std::vector<Instance>& test) {
    std::map<std::string, std::vector<std::vector<std::string>>> preds, golds;
    for (const auto& inst : test) {
        const auto suggestion = suggest(model, inst);
        for (const auto& [task, s] : suggestion) {
            auto it = inst.labels.find(task);
            if (it == inst.labels.end()) continue;
            if (const auto* seq = std::get_if<std::vector<std::string>>(&it->second)) {
                golds[task].push_back(*seq);
                preds[task].push_back(s.labels);
            } else {
                golds[task].push_back({std::get<std::string>(it->second)});
                preds[task].push_back(s.labels);
            }
        }
    }
    std::map<std::string, SequenceMetrics> out;
    for (const auto& [task, head] : model.heads) {
        if (!golds.count(task)) continue;
        if (head.kind == TaskKind::Sequence) {
            out[task] = evaluate_sequence_labeling(preds[task], golds[task]);
            continue;
        }
        // Classification: accuracy plus macro-averaged precision/recall/F1.
        SequenceMetrics m;
        std::map<std::string, std::array<std::size_t, 3>> counts;  // tp, predicted, gold
        for (std::size_t i = 0; i < golds[task].size(); ++i) {
            const auto& g = golds[task][i][0];
            const auto& p = preds[task][i][0];
            ++m.tokens;
            m.correct_tokens += g == p;
            ++counts[g][2];
            ++counts[p][1];
            if (g == p) ++counts[g][0];
        }
        m.accuracy = m.tokens ? static_cast<double>(m.correct_tokens) / static_cast<double>(m.tokens) : 1.0;
        std::vector<double> ps, rs, fs;
        for (const auto& label : head.label_set) {
            const auto c = counts[label];
            if (c[2] == 0 && c[1] == 0) continue;
            const double p = c[1] ? static_cast<double>(c[0]) / static_cast<double>(c[1]) : 0.0;
            const double r = c[2] ? static_cast<double>(c[0]) / static_cast<double>(c[2]) : 0.0;
            ps.push_back(p);
            rs.push_back(r);
            fs.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
        }
        m.precision = mean(ps);
        m.recall = mean(rs);
        m.f1 = mean(fs);
        out[task] = m;
    }
    return out;
}

template std::map<std::string, SequenceMetrics> evaluate_model<double>(const BasicMultiTaskModel<double>&,
                                                                      const std::vector<Instance>&);
template std::map<std::string, SequenceMetrics> evaluate_model<float>(const BasicMultiTaskModel<float>&,
                                                                     const std::vector<Instance>&);

// ---- AL loop ----

std::string_view to_string(QueryStrategy s) { return s == QueryStrategy::Random ? "random" : "least-confidence"; }

QueryStrategy query_strategy_from_string(std::string_view name) {
    if (name == "least-confidence" || name == "lc") return QueryStrategy::LeastConfidence;
    if (name == "random") return QueryStrategy::Random;
    throw Error(ErrorCode::InvalidParams, "unknown query strategy `" + std::string(name) + "`");
}

double area_under_curve(const std::vector<RoundRow>& rows) {
    if (rows.empty()) return 0;
    if (rows.size() == 1) return rows[0].mean_f1;
    double area = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        area += 0.5 * (rows[i].mean_f1 + rows[i - 1].mean_f1) *
                static_cast<double>(rows[i].labeled - rows[i - 1].labeled);
    return area / static_cast<double>(rows.back().labeled - rows.front().labeled);
}

RunResult run_al_loop(const std::vector<Instance>& pool, const std::vector<Instance>& test,
                      const std::map<std::string, std::vector<std::string>>& label_sets, const LoopConfig& cfg,
                      std::uint64_t seed, const std::string& setting) {
    if (cfg.tasks.empty()) throw Error(ErrorCode::InvalidParams, "loop needs at least one task");
    if (pool.empty()) throw Error(ErrorCode::EmptyPool, "empty pool");
    std::vector<HeadSpec> heads;
    for (const auto& task : cfg.tasks) {
        auto it = label_sets.find(task);
        if (it == label_sets.end()) throw Error(ErrorCode::UnknownTask, "no label set for task `" + task + "`");
        const bool classification =
            !pool.front().labels.count(task) || std::holds_alternative<std::string>(pool.front().labels.at(task));
        heads.push_back({task, classification ? TaskKind::Classification : TaskKind::Sequence, it->second});
    }
    auto model = make_model<double>(heads, cfg.extractor, seed);
    SimulatedAnnotator annotator(cfg.noise, seed ^ 0x5157u);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    PoolState state = PoolState::all_unlabeled(pool.size());

    const std::size_t budget = std::min(cfg.budget, pool.size());
    std::vector<Instance> labeled;
    labeled.reserve(budget);
    std::vector<const Instance*> batch;

    RunResult run;
    run.setting = setting;
    run.seed = seed;
    std::size_t train_passes = 0, passes = 0;
    const auto t0 = Clock::now();
    ALConfig al = cfg.al;

    for (std::size_t round = 0; labeled.size() < budget; ++round) {
        const std::size_t k = std::min(al.query_batch_k, budget - labeled.size());
        std::vector<std::size_t> ids;
        if (round == 0 || cfg.strategy == QueryStrategy::Random) {
            std::vector<std::size_t> open(state.unlabeled.begin(), state.unlabeled.end());
            for (std::size_t i = 0; i < k; ++i) {
                std::swap(open[i], open[i + rng() % (open.size() - i)]);
                ids.push_back(open[i]);
                state.unlabeled.erase(open[i]);
                state.queried.push_back(open[i]);
            }
        } else {
            passes += state.unlabeled.size();
            al.query_batch_k = k;
            ids = select_queries(model, pool, state, al);
        }
        for (auto id : ids) {
            Instance inst = pool[id];
            inst.labels.clear();
            for (const auto& task : cfg.tasks) {
                auto it = pool[id].labels.find(task);
                if (it == pool[id].labels.end())
                    throw Error(ErrorCode::MissingGold, "instance " + pool[id].instance_id + " lacks gold for " + task);
                const auto& set = label_sets.at(task);
                if (const auto* seq = std::get_if<std::vector<std::string>>(&it->second))
                    inst.labels[task] = annotator.tags(*seq, set);
                else
                    inst.labels[task] = annotator.label(std::get<std::string>(it->second), set);
            }
            labeled.push_back(std::move(inst));
            batch.push_back(&labeled.back());
        }
        state.mark_labeled(ids);

        al.seed = seed * 1000003u + round;
        const auto stats = train(model, batch, al);
        train_passes += stats.forward_passes;
        passes += stats.forward_passes;

        RoundRow row;
        row.round = round;
        row.labeled = labeled.size();
        row.metrics = evaluate_model(model, test);
        std::vector<double> f1s;
        for (const auto& [task, m] : row.metrics) f1s.push_back(m.f1);
        row.mean_f1 = mean(f1s);
        row.wall_ms = ms_since(t0);
        row.train_passes = train_passes;
        row.forward_passes = passes;
        run.rows.push_back(std::move(row));
    }
    run.queried = state.queried;
    run.aulc = area_under_curve(run.rows);
    return run;
}

// ---- scenarios ----

std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::MtalVsSingle: return "mtal_vs_single";
        case Scenario::AlVsRandom: return "al_vs_random";
        case Scenario::Demographic: return "demographic";
        case Scenario::PromptEval: return "prompt_eval";
    }
    return "?";
}

Scenario scenario_from_string(std::string_view name) {
    for (auto s : {Scenario::MtalVsSingle, Scenario::AlVsRandom, Scenario::Demographic, Scenario::PromptEval})
        if (to_string(s) == name) return s;
    throw Error(ErrorCode::InvalidParams, "unknown scenario `" + std::string(name) + "`");
}

void SimConfig::validate() const {
    if (seeds.empty()) throw Error(ErrorCode::InvalidParams, "seeds must be non-empty");
    if (budget == 0) throw Error(ErrorCode::InvalidParams, "budget must be positive");
    if (al.query_batch_k == 0) throw Error(ErrorCode::InvalidParams, "k must be positive");
    if (noise < 0 || noise > 1) throw Error(ErrorCode::InvalidParams, "noise must lie in [0, 1]");
    if (scenario == Scenario::Demographic) {
        if (budget > demographic.train_items)
            throw Error(ErrorCode::InvalidParams, "budget exceeds the demographic training pool");
        return;
    }
    if (scenario == Scenario::PromptEval) {
        if (prompt_n.empty() || prompt_strategies.empty())
            throw Error(ErrorCode::InvalidParams, "prompt_eval needs example counts and strategies");
        if (mock_llm != "gold" && mock_llm != "all-o" && mock_llm != "api")
            throw Error(ErrorCode::InvalidParams, "mock LLM must be gold, all-o or api");
    }
    if (!corpus_path) {
        if (test_size >= synthetic.sentences)
            throw Error(ErrorCode::InvalidParams, "test split leaves no pool");
        if (scenario != Scenario::PromptEval && budget > synthetic.sentences - test_size)
            throw Error(ErrorCode::InvalidParams, "budget exceeds the pool size");
    }
}

namespace {

struct Split {
    SequenceCorpus corpus;
    std::size_t pool_end = 0;
};

Split load_split(const SimConfig& cfg, std::uint64_t seed) {
    Split s;
    s.corpus = cfg.corpus_path ? read_conll(*cfg.corpus_path, cfg.corpus_columns)
                               : generate_two_task_corpus(cfg.synthetic, seed);
    if (s.corpus.sentences.size() <= cfg.test_size)
        throw Error(ErrorCode::InvalidParams, "corpus has no sentences left after the test split");
    s.pool_end = s.corpus.sentences.size() - cfg.test_size;
    if (cfg.scenario != Scenario::PromptEval && cfg.budget > s.pool_end)
        throw Error(ErrorCode::InvalidParams, "budget exceeds the pool size");
    return s;
}

LoopConfig loop_config(const SimConfig& cfg, std::vector<std::string> tasks, QueryStrategy strategy) {
    LoopConfig lc;
    lc.tasks = std::move(tasks);
    lc.strategy = strategy;
    lc.budget = cfg.budget;
    lc.al = cfg.al;
    lc.extractor = cfg.extractor;
    lc.noise = cfg.noise;
    return lc;
}

std::map<std::string, double> final_f1(const RunResult& run) {
    std::map<std::string, double> out;
    if (run.rows.empty()) return out;
    for (const auto& [task, m] : run.rows.back().metrics) out[task] = m.f1;
    return out;
}

ScenarioReport mtal_vs_single(const SimConfig& cfg) {
    ScenarioReport report;
    report.scenario = Scenario::MtalVsSingle;
    json per_seed = json::array();
    std::map<std::string, std::vector<double>> gaps;
    std::vector<double> train_ratio, total_ratio;
    for (auto seed : cfg.seeds) {
        auto split = load_split(cfg, seed);
        const auto& tasks = split.corpus.task_ids;
        const auto pool = to_instances(split.corpus, 0, split.pool_end);
        const auto test = to_instances(split.corpus, split.pool_end, split.corpus.sentences.size());
        auto joint = run_al_loop(pool, test, split.corpus.label_sets,
                                 loop_config(cfg, tasks, QueryStrategy::LeastConfidence), seed, "multi-task");
        json entry{{"seed", seed}};
        const auto jf = final_f1(joint);
        std::size_t st_train = 0, st_total = 0;
        for (const auto& task : tasks) {
            auto single = run_al_loop(pool, test, split.corpus.label_sets,
                                      loop_config(cfg, {task}, QueryStrategy::LeastConfidence), seed,
                                      "single-task:" + task);
            const double sf = final_f1(single).at(task);
            st_train += single.rows.back().train_passes;
            st_total += single.rows.back().forward_passes;
            entry["f1"][task] = {{"multi_task", jf.at(task)}, {"single_task", sf}};
            gaps[task].push_back(jf.at(task) - sf);
            report.runs.push_back(std::move(single));
        }
        const auto& last = joint.rows.back();
        entry["train_passes"] = {{"multi_task", last.train_passes}, {"single_task_sum", st_train}};
        entry["forward_passes"] = {{"multi_task", last.forward_passes}, {"single_task_sum", st_total}};
        train_ratio.push_back(static_cast<double>(last.train_passes) / static_cast<double>(st_train));
        total_ratio.push_back(static_cast<double>(last.forward_passes) / static_cast<double>(st_total));
        entry["train_pass_ratio"] = train_ratio.back();
        entry["forward_pass_ratio"] = total_ratio.back();
        per_seed.push_back(entry);
        report.runs.push_back(std::move(joint));
    }
    json mean_gap = json::object();
    for (const auto& [task, g] : gaps) mean_gap[task] = mean(g);
    report.summary = {{"per_seed", per_seed},
                      {"mean_f1_gap_multi_minus_single", mean_gap},
                      {"mean_train_pass_ratio", mean(train_ratio)},
                      {"mean_forward_pass_ratio", mean(total_ratio)}};
    return report;
}

ScenarioReport al_vs_random(const SimConfig& cfg) {
    ScenarioReport report;
    report.scenario = Scenario::AlVsRandom;
    json per_seed = json::array();
    std::size_t wins = 0;
    for (auto seed : cfg.seeds) {
        auto split = load_split(cfg, seed);
        const auto pool = to_instances(split.corpus, 0, split.pool_end);
        const auto test = to_instances(split.corpus, split.pool_end, split.corpus.sentences.size());
        json entry{{"seed", seed}};
        std::map<QueryStrategy, double> area;
        for (auto strategy : cfg.strategies) {
            auto run = run_al_loop(pool, test, split.corpus.label_sets,
                                   loop_config(cfg, split.corpus.task_ids, strategy), seed,
                                   std::string(to_string(strategy)));
            area[strategy] = run.aulc;
            entry["aulc"][std::string(to_string(strategy))] = run.aulc;
            entry["final_mean_f1"][std::string(to_string(strategy))] = run.rows.back().mean_f1;
            report.runs.push_back(std::move(run));
        }
        if (area.count(QueryStrategy::LeastConfidence) && area.count(QueryStrategy::Random)) {
            const bool win = area[QueryStrategy::LeastConfidence] > area[QueryStrategy::Random];
            wins += win;
            entry["least_confidence_wins"] = win;
        }
        per_seed.push_back(entry);
    }
    report.summary = {{"per_seed", per_seed}, {"least_confidence_wins", wins}, {"seeds", cfg.seeds.size()}};
    return report;
}

std::vector<Instance> demographic_instances(const std::vector<DemographicItem>& items, bool with_profile,
                                            const DemographicConfig& features) {
    std::vector<Instance> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        Instance inst;
        inst.instance_id = std::to_string(i);
        inst.tokens = items[i].tokens;
        inst.labels["sentiment"] = items[i].label;
        out.push_back(with_profile ? augment(inst, items[i].profile, features) : inst);
    }
    return out;
}

}  // namespace

json run_demographic_seed(const SimConfig& cfg, std::uint64_t seed) {
    const auto corpus = generate_demographic_corpus(cfg.demographic, seed);
    const std::map<std::string, std::vector<std::string>> label_sets{{"sentiment", corpus.labels}};
    json out{{"seed", seed}};
    std::size_t age_dependent = 0;
    for (bool b : corpus.age_dependent) age_dependent += b;
    const double f = static_cast<double>(age_dependent) / static_cast<double>(corpus.age_dependent.size());
    std::size_t old = 0;
    for (const auto& it : corpus.test) old += it.age >= cfg.demographic.old_threshold;
    const double q = static_cast<double>(old) / static_cast<double>(corpus.test.size());
    out["bayes_text_only"] = text_only_bayes_accuracy(corpus.test);
    out["bayes_text_only_closed_form"] = (1 - f) + f * std::max(q, 1 - q);
    std::vector<RunResult> runs;
    for (bool with_profile : {false, true}) {
        const auto pool = demographic_instances(corpus.train, with_profile, cfg.demographic_features);
        const auto test = demographic_instances(corpus.test, with_profile, cfg.demographic_features);
        const std::string setting = with_profile ? "with-demographics" : "statement-only";
        auto run = run_al_loop(pool, test, label_sets, loop_config(cfg, {"sentiment"}, cfg.strategies.front()), seed,
                               setting);
        out["accuracy"][setting] = run.rows.back().metrics.at("sentiment").accuracy;
        out["runs"].push_back({{"setting", setting}, {"aulc", run.aulc}});
        out["rows"][setting] = json::array();
        for (const auto& row : run.rows)
            out["rows"][setting].push_back({{"labeled", row.labeled},
                                            {"metrics", metrics_json(row.metrics.at("sentiment"))},
                                            {"train_passes", row.train_passes},
                                            {"forward_passes", row.forward_passes},
                                            {"wall_ms", row.wall_ms}});
    }
    return out;
}

json run_prompt_eval_seed(const SimConfig& cfg, std::uint64_t seed) {
    auto split = load_split(cfg, seed);
    const auto& corpus = split.corpus;
    if (std::find(corpus.task_ids.begin(), corpus.task_ids.end(), cfg.prompt_task) == corpus.task_ids.end())
        throw Error(ErrorCode::UnknownTask, "corpus has no task `" + cfg.prompt_task + "`");
    std::vector<FewShotExample> train;
    for (std::size_t i = 0; i < split.pool_end; ++i) {
        const auto& s = corpus.sentences[i];
        train.push_back({join(s.tokens, " "), cfg.prompt.task_name, join(s.tags.at(cfg.prompt_task), " ")});
    }
    const std::size_t eval_end = std::min(corpus.sentences.size(), split.pool_end + cfg.prompt_eval_size);

    std::unique_ptr<EmbeddingProvider> embedder;
    if (cfg.extractor.encoder_url)
        embedder = std::make_unique<EncoderEmbedder>(EncoderClient(*cfg.extractor.encoder_url, cfg.extractor.dim));
    else
        embedder = std::make_unique<HashedBowEmbedder>();
    std::unique_ptr<LlmClient> client;
    if (cfg.mock_llm == "api") client = std::make_unique<LlmClient>(cfg.prompt.api);

    json out{{"seed", seed}, {"mock_llm", cfg.mock_llm}, {"settings", json::array()}};
    for (auto strategy : cfg.prompt_strategies) {
        for (auto n : cfg.prompt_n) {
            PromptConfig pc = cfg.prompt;
            pc.strategy = strategy;
            pc.n_examples = n;
            std::vector<std::vector<std::string>> preds, golds;
            std::size_t mismatches = 0, over_limit = 0, prompt_tokens = 0;
            for (std::size_t i = split.pool_end; i < eval_end; ++i) {
                const auto& s = corpus.sentences[i];
                const auto& gold = s.tags.at(cfg.prompt_task);
                const std::string target = join(s.tokens, " ");
                pc.seed = seed * 7919u + i;
                const auto examples = select_examples(train, target, pc, embedder.get());
                const auto prompt = build_prompt(examples, target, pc.task_name);
                prompt_tokens += approx_token_count(prompt);
                std::string completion;
                if (cfg.mock_llm == "gold") {
                    completion = " `` " + join(gold, " ") + " ''";
                } else if (cfg.mock_llm == "all-o") {
                    completion = " `` " + join(std::vector<std::string>(gold.size(), "O"), " ") + " ''";
                } else {
                    try {
                        completion = client->complete(prompt).text;
                    } catch (const Error& e) {
                        if (e.code() != ErrorCode::ContextLengthExceeded) throw;
                        ++over_limit;
                    }
                }
                auto parsed = parse_tags(completion, gold.size());
                mismatches += parsed.mismatch;
                preds.push_back(std::move(parsed.tags));
                golds.push_back(gold);
            }
            const auto m = evaluate_sequence_labeling(preds, golds);
            const std::size_t count = eval_end - split.pool_end;
            out["settings"].push_back({{"strategy", std::string(to_string(strategy))},
                                       {"n_examples", n},
                                       {"metrics", metrics_json(m)},
                                       {"length_mismatches", mismatches},
                                       {"context_exceeded", over_limit},
                                       {"mean_prompt_tokens", count ? static_cast<double>(prompt_tokens) /
                                                                          static_cast<double>(count)
                                                                    : 0.0}});
        }
    }
    return out;
}

namespace {

ScenarioReport demographic(const SimConfig& cfg) {
    ScenarioReport report;
    report.scenario = Scenario::Demographic;
    json per_seed = json::array();
    std::vector<double> margin, bayes_gap;
    for (auto seed : cfg.seeds) {
        auto entry = run_demographic_seed(cfg, seed);
        for (const auto& [setting, rows] : entry["rows"].items()) {
            RunResult run;
            run.setting = setting;
            run.seed = seed;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                RoundRow row;
                row.round = r;
                row.labeled = rows[r]["labeled"];
                const auto& mj = rows[r]["metrics"];
                SequenceMetrics m;
                m.accuracy = mj["accuracy"];
                m.precision = mj["precision"];
                m.recall = mj["recall"];
                m.f1 = mj["f1"];
                row.metrics["sentiment"] = m;
                row.mean_f1 = m.f1;
                row.train_passes = rows[r]["train_passes"];
                row.forward_passes = rows[r]["forward_passes"];
                row.wall_ms = rows[r]["wall_ms"];
                run.rows.push_back(std::move(row));
            }
            run.aulc = area_under_curve(run.rows);
            report.runs.push_back(std::move(run));
        }
        entry.erase("rows");
        const double so = entry["accuracy"]["statement-only"];
        const double wd = entry["accuracy"]["with-demographics"];
        margin.push_back(wd - so);
        bayes_gap.push_back(std::abs(so - entry["bayes_text_only"].get<double>()));
        per_seed.push_back(entry);
    }
    report.summary = {{"per_seed", per_seed},
                      {"mean_accuracy_margin", mean(margin)},
                      {"min_accuracy_margin", *std::min_element(margin.begin(), margin.end())},
                      {"max_statement_only_bayes_gap", *std::max_element(bayes_gap.begin(), bayes_gap.end())}};
    return report;
}

ScenarioReport prompt_eval(const SimConfig& cfg) {
    ScenarioReport report;
    report.scenario = Scenario::PromptEval;
    json per_seed = json::array();
    for (auto seed : cfg.seeds) {
        auto entry = run_prompt_eval_seed(cfg, seed);
        std::map<std::string, RunResult> by_strategy;
        for (const auto& s : entry["settings"]) {
            auto& run = by_strategy[s["strategy"].get<std::string>()];
            run.setting = s["strategy"];
            run.seed = seed;
            RoundRow row;
            row.round = run.rows.size();
            row.labeled = s["n_examples"];
            SequenceMetrics m;
            m.accuracy = s["metrics"]["accuracy"];
            m.precision = s["metrics"]["precision"];
            m.recall = s["metrics"]["recall"];
            m.f1 = s["metrics"]["f1"];
            row.metrics[cfg.prompt_task] = m;
            row.mean_f1 = m.f1;
            run.rows.push_back(std::move(row));
        }
        for (auto& [name, run] : by_strategy) {
            run.aulc = area_under_curve(run.rows);
            report.runs.push_back(std::move(run));
        }
        per_seed.push_back(entry);
    }
    report.summary = {{"per_seed", per_seed}};
    return report;
}

}  // namespace

ScenarioReport run_scenario(const SimConfig& cfg) {
    cfg.validate();
    ScenarioReport report;
    switch (cfg.scenario) {
        case Scenario::MtalVsSingle: report = mtal_vs_single(cfg); break;
        case Scenario::AlVsRandom: report = al_vs_random(cfg); break;
        case Scenario::Demographic: report = demographic(cfg); break;
        case Scenario::PromptEval: report = prompt_eval(cfg); break;
    }
    report.summary["scenario"] = std::string(to_string(cfg.scenario));
    if (!cfg.out_dir.empty()) write_report(report, cfg.out_dir);
    return report;
}

// ---- reports ----

std::string report_csv(const ScenarioReport& report) {
    std::ostringstream o;
    o << "scenario,setting,seed,round,labeled_count,task,accuracy,precision,recall,f1,mean_f1,train_passes,"
         "forward_passes\n";
    for (const auto& run : report.runs)
        for (const auto& row : run.rows)
            for (const auto& [task, m] : row.metrics)
                o << to_string(report.scenario) << ',' << run.setting << ',' << run.seed << ',' << row.round << ','
                  << row.labeled << ',' << task << ',' << fmt(m.accuracy) << ',' << fmt(m.precision) << ','
                  << fmt(m.recall) << ',' << fmt(m.f1) << ',' << fmt(row.mean_f1) << ',' << row.train_passes << ','
                  << row.forward_passes << '\n';
    return o.str();
}

void write_report(const ScenarioReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream(fs::path(dir) / "results.csv") << report_csv(report);
    std::ofstream(fs::path(dir) / "summary.json") << report.summary.dump(2) << '\n';

    // Wall clock varies between runs, so it lives apart from the reproducible files.
    std::ofstream timing(fs::path(dir) / "timing.csv");
    timing << "setting,seed,round,labeled_count,wall_ms\n";
    for (const auto& run : report.runs)
        for (const auto& row : run.rows)
            timing << run.setting << ',' << run.seed << ',' << row.round << ',' << row.labeled << ','
                   << fmt(row.wall_ms) << '\n';

    // Mean over seeds of mean F1 per labeled count, one series per setting.
    std::map<std::string, std::map<std::size_t, std::vector<double>>> curves;
    for (const auto& run : report.runs)
        for (const auto& row : run.rows) curves[run.setting][row.labeled].push_back(row.mean_f1);
    std::vector<Series> series;
    for (const auto& [setting, points] : curves) {
        Series s{setting, {}, {}};
        for (const auto& [x, ys] : points) {
            s.x.push_back(static_cast<double>(x));
            s.y.push_back(mean(ys));
        }
        series.push_back(std::move(s));
    }
    PlotSpec spec;
    spec.title = std::string(to_string(report.scenario));
    spec.x_label = report.scenario == Scenario::PromptEval ? "few-shot examples" : "labeled instances";
    spec.y_label = report.scenario == Scenario::Demographic ? "macro F1" : "mean F1";
    std::ofstream(fs::path(dir) / "curves.svg") << line_chart_svg(series, spec);
}

}  // namespace anno
