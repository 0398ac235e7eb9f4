#pragma once

// Training and evaluation: pointwise MSE for the two retrieval tasks,
// cross-entropy for similarity, Adam updates over shuffled batches, k-fold
// cross validation (retrieval folds split by query id, similarity folds by
// pair), JSON reports and checkpoints. Everything is single-threaded and
// seeded, so a fixed seed reproduces checkpoints and reports byte for byte.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tabmatch/checkpoint.hpp"
#include "tabmatch/matcher.hpp"
#include "tabmatch/metrics.hpp"

namespace tabmatch {

// ---- losses -----------------------------------------------------------------

// mean squared error against fixed targets
template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const std::vector<double>& target) {
    if (pred.numel() != static_cast<std::int64_t>(target.size()) || target.empty())
        throw ShapeError("mse_loss: prediction/target length mismatch");
    Tape<S>& tape = *pred.tape();
    Tensor<S> diff = sub(reshape(pred, {static_cast<int>(target.size())}),
                         tape.constant_of({static_cast<int>(target.size())}, target));
    return scale(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(target.size()));
}

// mean negative log softmax probability of the true class
template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits, const std::vector<int>& labels) {
    for (int y : labels)
        if (y != 0 && y != 1) throw UsageError("cross_entropy_loss: labels must be 0 or 1");
    return cross_entropy_with_logits(logits, labels);
}

// ---- config -------------------------------------------------------------------

enum class TaskKind { KeywordRetrieval, ContentRetrieval, Similarity };

inline std::string task_name(TaskKind t) {
    switch (t) {
        case TaskKind::KeywordRetrieval: return "keyword";
        case TaskKind::ContentRetrieval: return "content";
        case TaskKind::Similarity: return "similarity";
    }
    return "?";
}

inline TaskKind task_from_name(const std::string& name) {
    if (name == "keyword" || name == "keyword_retrieval") return TaskKind::KeywordRetrieval;
    if (name == "content" || name == "content_retrieval") return TaskKind::ContentRetrieval;
    if (name == "similarity") return TaskKind::Similarity;
    throw ConfigError("unknown task: " + name);
}

struct TrainConfig {
    TaskKind task = TaskKind::Similarity;
    int epochs = 20;
    int batch_size = 8;
    int folds = 5;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double head_lr = -1.0;      // task-head learning rate; < 0 follows lr
    double clip_norm = 1.0;     // global gradient-norm cap; <= 0 disables
    double warmup_frac = 0.1;   // linear warmup over this fraction of steps,
                                // then linear decay to zero
    std::uint64_t seed = 42;
    int min_freq = 1;
    int ndcg_k = 5;
    ModelConfig model;

    void validate() const {
        if (folds < 2) throw ConfigError("fold count must be at least 2");
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch size must be >= 1");
        model.validate();
    }

    json to_json() const {
        return json{{"task", task_name(task)}, {"epochs", epochs},   {"batch_size", batch_size},
                    {"folds", folds},          {"lr", lr},           {"beta1", beta1},
                    {"beta2", beta2},          {"adam_eps", adam_eps}, {"head_lr", head_lr},
                    {"clip_norm", clip_norm},
                    {"warmup_frac", warmup_frac},                     {"seed", seed},
                    {"min_freq", min_freq},    {"ndcg_k", ndcg_k},   {"model", model.to_json()}};
    }
    static TrainConfig from_json(const json& j) {
        TrainConfig c;
        c.task = task_from_name(j.at("task").get<std::string>());
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.folds = j.value("folds", c.folds);
        c.lr = j.value("lr", c.lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.head_lr = j.value("head_lr", c.head_lr);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
        c.seed = j.value("seed", c.seed);
        c.min_freq = j.value("min_freq", c.min_freq);
        c.ndcg_k = j.value("ndcg_k", c.ndcg_k);
        if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
        return c;
    }
};

inline std::string config_hash(const json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- folds --------------------------------------------------------------------

// Deterministic k-fold assignment of group indices [0, n): a seeded shuffle
// dealt round-robin, so fold sizes differ by at most one.
inline std::vector<std::vector<int>> kfold_split(int n_groups, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold_split: k must be at least 2");
    if (n_groups < k)
        throw ConfigError("kfold_split: " + std::to_string(n_groups) + " groups cannot fill " +
                          std::to_string(k) + " folds");
    std::vector<int> order(static_cast<size_t>(n_groups));
    for (int i = 0; i < n_groups; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(mix_seed(seed, 0xf01d));
    for (int i = n_groups - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    std::vector<std::vector<int>> folds(static_cast<size_t>(k));
    for (int i = 0; i < n_groups; ++i)
        folds[static_cast<size_t>(i % k)].push_back(order[static_cast<size_t>(i)]);
    return folds;
}

// ---- task items -----------------------------------------------------------------

struct RetrievalItem {
    int query_idx = 0;  // into corpus.queries
    std::string table_id;
    int grade = 0;
};

// grades {0,1,2} train as targets {0, 0.5, 1}
inline double grade_target(int grade) { return static_cast<double>(grade) / 2.0; }

inline std::vector<RetrievalItem> retrieval_items(const Corpus& corpus) {
    std::vector<RetrievalItem> items;
    items.reserve(corpus.judgments.size());
    for (const Judgment& j : corpus.judgments) {
        auto it = corpus.query_index.find(j.query_id);
        items.push_back({it->second, j.table_id, j.grade});
    }
    return items;
}

// ---- training -------------------------------------------------------------------

struct FoldOutcome {
    json epochs = json::array();
    json metrics;
    double initial_loss = 0.0;
};

namespace detail {

// linear warmup then linear decay to zero over the full step budget
inline double schedule_factor(const TrainConfig& cfg, int step, int total_steps) {
    if (total_steps <= 1) return 1.0;
    const int warmup = std::max(1, static_cast<int>(cfg.warmup_frac * total_steps));
    if (step < warmup) return static_cast<double>(step + 1) / warmup;
    if (warmup >= total_steps) return 1.0;
    return static_cast<double>(total_steps - step) / (total_steps - warmup);
}

template <typename S>
double run_epoch(MatchModel<S>& model, const Corpus& corpus, TaskKind task,
                 const std::vector<RetrievalItem>& r_items, const std::vector<TablePair>& p_items,
                 const std::vector<int>& order, int batch_size, bool update, const TrainConfig& cfg,
                 int* global_step, int total_steps) {
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        Tape<S> tape;
        Tensor<S> loss;
        try {
            if (task == TaskKind::Similarity) {
                std::vector<Tensor<S>> logits;
                std::vector<int> labels;
                for (size_t i = start; i < end; ++i) {
                    const TablePair& p = p_items[static_cast<size_t>(order[i])];
                    logits.push_back(model.pair_logits(tape, corpus.table(p.a), corpus.table(p.b)));
                    labels.push_back(p.label);
                }
                loss = cross_entropy_loss(logits.size() == 1 ? logits[0] : concat0(logits), labels);
            } else {
                std::vector<Tensor<S>> preds;
                std::vector<double> targets;
                for (size_t i = start; i < end; ++i) {
                    const RetrievalItem& item = r_items[static_cast<size_t>(order[i])];
                    const Query& q = corpus.queries[static_cast<size_t>(item.query_idx)];
                    const Table& t = corpus.table(item.table_id);
                    preds.push_back(task == TaskKind::KeywordRetrieval
                                        ? model.score_query_table(tape, q.text, t)
                                        : model.score_table_pair(tape, corpus.table(q.table_id), t));
                    targets.push_back(grade_target(item.grade));
                }
                loss = mse_loss(preds.size() == 1 ? preds[0] : concat0(preds), targets);
            }
            if (update) {
                backward(loss, model.params());
                if (cfg.clip_norm > 0) model.params().clip_grad_norm(cfg.clip_norm);
                const double factor = detail::schedule_factor(cfg, *global_step, total_steps);
                model.params().adam_step(cfg.lr * factor, cfg.beta1, cfg.beta2, cfg.adam_eps,
                                         cfg.head_lr >= 0 ? cfg.head_lr * factor : -1.0);
                ++*global_step;
            }
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " +
                               std::to_string(global_step ? *global_step : batches) + ": " +
                               e.what());
        }
        loss_sum += static_cast<double>(loss.scalar());
        ++batches;
    }
    return batches > 0 ? loss_sum / batches : 0.0;
}

}  // namespace detail

inline json retrieval_metrics_json(const RetrievalMetrics& m, int k) {
    return json{{"ndcg@" + std::to_string(k), m.ndcg},
                {"mrr", m.mrr},
                {"map", m.map},
                {"evaluated_queries", m.evaluated_queries},
                {"skipped_queries", m.skipped_queries}};
}

inline json classification_metrics_json(const ClassificationMetrics& m, int count) {
    return json{{"macro_p", m.macro_p}, {"macro_r", m.macro_r}, {"macro_f", m.macro_f},
                {"accuracy", m.accuracy}, {"count", count}};
}

// Scores one retrieval query's judged tables and returns grades in ranked
// order (ties broken by table id).
template <typename S>
std::vector<int> rank_query(MatchModel<S>& model, const Corpus& corpus, TaskKind task,
                            const Query& q, const std::vector<const Judgment*>& judged) {
    std::vector<ScoredTable> scored;
    scored.reserve(judged.size());
    for (const Judgment* j : judged) {
        Tape<S> tape;
        const Table& t = corpus.table(j->table_id);
        Tensor<S> s = task == TaskKind::KeywordRetrieval
                          ? model.score_query_table(tape, q.text, t)
                          : model.score_table_pair(tape, corpus.table(q.table_id), t);
        scored.push_back({j->table_id, static_cast<double>(s.scalar()), j->grade});
    }
    return ranked_grades(std::move(scored));
}

template <typename S>
json evaluate_retrieval(MatchModel<S>& model, const Corpus& corpus, TaskKind task,
                        const std::vector<int>& query_indices, int k) {
    std::vector<std::vector<const Judgment*>> judged_by_query(corpus.queries.size());
    for (const Judgment& j : corpus.judgments)
        judged_by_query[static_cast<size_t>(corpus.query_index.at(j.query_id))].push_back(&j);
    std::vector<std::vector<int>> grade_lists;
    for (int qi : query_indices) {
        const auto& judged = judged_by_query[static_cast<size_t>(qi)];
        if (judged.empty()) continue;
        grade_lists.push_back(
            rank_query(model, corpus, task, corpus.queries[static_cast<size_t>(qi)], judged));
    }
    return retrieval_metrics_json(retrieval_metrics(grade_lists, k), k);
}

template <typename S>
json evaluate_similarity(MatchModel<S>& model, const Corpus& corpus,
                         const std::vector<TablePair>& pairs, const std::vector<int>& indices) {
    std::vector<int> preds, labels;
    preds.reserve(indices.size());
    for (int i : indices) {
        const TablePair& p = pairs[static_cast<size_t>(i)];
        preds.push_back(model.classify_pair(corpus.table(p.a), corpus.table(p.b)).similar ? 1 : 0);
        labels.push_back(p.label);
    }
    return classification_metrics_json(classification_metrics(preds, labels),
                                       static_cast<int>(indices.size()));
}

struct TrainResult {
    json report;
    std::vector<std::string> checkpoint_paths;
};

// Five-fold (by default) cross validation: per fold, train with Adam over
// shuffled batches, evaluate the held-out split after every epoch, and save
// a checkpoint whose embedded config lets `evaluate` reproduce the fold's
// test metrics exactly.
inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const std::string& out_dir,
                         bool stable_output = false, std::ostream* log = nullptr) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(out_dir);

    Vocabulary vocab = build_vocab(corpus, cfg.min_freq);
    const std::string hash = config_hash(cfg.to_json());

    std::vector<RetrievalItem> r_items;
    std::vector<TablePair> p_items;
    std::vector<std::vector<int>> group_items;  // group -> item indices
    if (cfg.task == TaskKind::Similarity) {
        p_items = similarity_pairs_from_qrels(corpus);
        group_items.resize(p_items.size());
        for (size_t i = 0; i < p_items.size(); ++i) group_items[i] = {static_cast<int>(i)};
    } else {
        r_items = retrieval_items(corpus);
        group_items.resize(corpus.queries.size());
        for (size_t i = 0; i < r_items.size(); ++i)
            group_items[static_cast<size_t>(r_items[i].query_idx)].push_back(static_cast<int>(i));
    }
    // retrieval folds group by query so all of a query's pairs stay together
    std::vector<int> groups_with_items;
    for (size_t g = 0; g < group_items.size(); ++g)
        if (!group_items[g].empty()) groups_with_items.push_back(static_cast<int>(g));
    const auto folds =
        kfold_split(static_cast<int>(groups_with_items.size()), cfg.folds, cfg.seed);

    TrainResult result;
    json fold_reports = json::array();
    std::vector<json> fold_metrics;
    for (int f = 0; f < cfg.folds; ++f) {
        std::vector<char> in_test(group_items.size(), 0);
        for (int gi : folds[static_cast<size_t>(f)])
            in_test[static_cast<size_t>(groups_with_items[static_cast<size_t>(gi)])] = 1;
        std::vector<int> train_items, test_groups;
        for (size_t g = 0; g < group_items.size(); ++g) {
            if (in_test[g]) {
                test_groups.push_back(static_cast<int>(g));
            } else {
                train_items.insert(train_items.end(), group_items[g].begin(), group_items[g].end());
            }
        }

        MatchModel<float> model(cfg.model, vocab, mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(f)));

        auto eval_fold = [&]() -> json {
            if (cfg.task == TaskKind::Similarity) {
                std::vector<int> test_items;
                for (int g : test_groups)
                    for (int i : group_items[static_cast<size_t>(g)]) test_items.push_back(i);
                return evaluate_similarity(model, corpus, p_items, test_items);
            }
            return evaluate_retrieval(model, corpus, cfg.task, test_groups, cfg.ndcg_k);
        };

        FoldOutcome outcome;
        const int batches_per_epoch =
            (static_cast<int>(train_items.size()) + cfg.batch_size - 1) / cfg.batch_size;
        const int total_steps = batches_per_epoch * cfg.epochs;
        int global_step = 0;
        try {
            outcome.initial_loss =
                detail::run_epoch(model, corpus, cfg.task, r_items, p_items, train_items,
                                  cfg.batch_size, false, cfg, nullptr, total_steps);
            if (log)
                *log << "fold " << f << ": " << train_items.size() << " train items, initial loss "
                     << outcome.initial_loss << "\n";
            for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
                std::vector<int> order = train_items;
                Rng shuffle_rng(mix_seed(cfg.seed,
                                         7000000ULL + static_cast<std::uint64_t>(f) * 10000ULL +
                                             static_cast<std::uint64_t>(epoch)));
                for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
                    std::swap(order[static_cast<size_t>(i)],
                              order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);
                const double train_loss =
                    detail::run_epoch(model, corpus, cfg.task, r_items, p_items, order,
                                      cfg.batch_size, true, cfg, &global_step, total_steps);
                json epoch_report = {{"epoch", epoch + 1}, {"train_loss", train_loss},
                                     {"metrics", eval_fold()}};
                if (log)
                    *log << "fold " << f << " epoch " << epoch + 1 << ": train loss " << train_loss
                         << "\n";
                outcome.epochs.push_back(std::move(epoch_report));
            }
            outcome.metrics = outcome.epochs.empty() ? eval_fold()
                                                     : outcome.epochs.back().at("metrics");
        } catch (const NumericError& e) {
            throw NumericError("training diverged (fold " + std::to_string(f) + "): " + e.what());
        }

        const std::string ck_path =
            (std::filesystem::path(out_dir) / ("fold" + std::to_string(f) + ".strb")).string();
        json ck_config = {{"format", "tabmatch-checkpoint"},
                          {"train", cfg.to_json()},
                          {"config_hash", hash},
                          {"fold", f},
                          {"vocab", vocab.to_json()},
                          {"vocab_size", vocab.size()}};
        save_checkpoint(ck_path, model.params(), ck_config);
        result.checkpoint_paths.push_back(ck_path);

        fold_metrics.push_back(outcome.metrics);
        fold_reports.push_back(json{{"fold", f},
                                    {"train_items", static_cast<int>(train_items.size())},
                                    {"test_groups", static_cast<int>(test_groups.size())},
                                    {"initial_loss", outcome.initial_loss},
                                    {"epochs", outcome.epochs},
                                    {"metrics", outcome.metrics},
                                    {"checkpoint", "fold" + std::to_string(f) + ".strb"}});
    }

    // fold means over every numeric metric
    json mean = json::object();
    if (!fold_metrics.empty()) {
        for (auto& [key, value] : fold_metrics[0].items()) {
            if (!value.is_number()) continue;
            double acc = 0.0;
            for (const json& m : fold_metrics) acc += m.at(key).get<double>();
            mean[key] = acc / static_cast<double>(fold_metrics.size());
        }
    }

    result.report = json{{"task", task_name(cfg.task)},
                         {"seed", cfg.seed},
                         {"config", cfg.to_json()},
                         {"config_hash", hash},
                         {"folds", std::move(fold_reports)},
                         {"mean", std::move(mean)}};
    if (!stable_output) {
        const auto t_end = std::chrono::steady_clock::now();
        result.report["runtime_seconds"] =
            std::chrono::duration<double>(t_end - t_start).count();
    }
    return result;
}

// Rebuilds a model from a checkpoint (architecture from the embedded config,
// values overwritten from the tensor records).
inline MatchModel<float> model_from_checkpoint(const LoadedCheckpoint& ck) {
    const TrainConfig cfg = TrainConfig::from_json(ck.config.at("train"));
    Vocabulary vocab = Vocabulary::from_json(ck.config.at("vocab"));
    MatchModel<float> model(cfg.model, std::move(vocab), 0);
    apply_checkpoint(model.params(), ck);
    return model;
}

// Recomputes the checkpoint's fold split and re-evaluates its held-out
// split; with unchanged corpus this reproduces the training-time metrics
// bit for bit.
inline json evaluate_checkpoint(const LoadedCheckpoint& ck, const Corpus& corpus,
                                bool stable_output = false) {
    const auto t_start = std::chrono::steady_clock::now();
    const TrainConfig cfg = TrainConfig::from_json(ck.config.at("train"));
    const int fold = ck.config.at("fold").get<int>();
    MatchModel<float> model = model_from_checkpoint(ck);

    json metrics;
    if (cfg.task == TaskKind::Similarity) {
        std::vector<TablePair> pairs = similarity_pairs_from_qrels(corpus);
        const auto folds = kfold_split(static_cast<int>(pairs.size()), cfg.folds, cfg.seed);
        metrics = evaluate_similarity(model, corpus, pairs, folds[static_cast<size_t>(fold)]);
    } else {
        std::vector<RetrievalItem> items = retrieval_items(corpus);
        std::vector<std::vector<int>> group_items(corpus.queries.size());
        for (size_t i = 0; i < items.size(); ++i)
            group_items[static_cast<size_t>(items[i].query_idx)].push_back(static_cast<int>(i));
        std::vector<int> groups_with_items;
        for (size_t g = 0; g < group_items.size(); ++g)
            if (!group_items[g].empty()) groups_with_items.push_back(static_cast<int>(g));
        const auto folds =
            kfold_split(static_cast<int>(groups_with_items.size()), cfg.folds, cfg.seed);
        std::vector<int> test_groups;
        for (int gi : folds[static_cast<size_t>(fold)])
            test_groups.push_back(groups_with_items[static_cast<size_t>(gi)]);
        metrics = evaluate_retrieval(model, corpus, cfg.task, test_groups, cfg.ndcg_k);
    }

    json out = {{"task", task_name(cfg.task)},
                {"fold", fold},
                {"seed", cfg.seed},
                {"config_hash", ck.config.at("config_hash")},
                {"metrics", std::move(metrics)}};
    if (!stable_output) {
        const auto t_end = std::chrono::steady_clock::now();
        out["runtime_seconds"] = std::chrono::duration<double>(t_end - t_start).count();
    }
    return out;
}

}  // namespace tabmatch
