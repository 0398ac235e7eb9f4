#pragma once

// Command-line surface:
//   build-vocab     tokenize a corpus and emit the vocabulary
//   gen-synthetic   write synthetic corpora (similarity/keyword/content/fig2)
//   train           k-fold cross-validated training; checkpoints + report
//   evaluate        re-evaluate a checkpoint's held-out fold
//   search          rank a corpus against a keyword query or --by-table
//   linearize       debug dump of column/row sequence strings
//   dump-attention  per-head miniBERT attention matrices as JSON
// Options can come from a config file (--config, INI with [subcommand]
// sections); command-line flags override file values.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tabmatch/cli_version.hpp"
#include "tabmatch/synthetic.hpp"
#include "tabmatch/train.hpp"

namespace tabmatch {

namespace cli {

struct CorpusPaths {
    std::string tables;
    std::string queries;
    std::string qrels;
};

inline void add_corpus_flags(CLI::App* sub, CorpusPaths& paths, bool tables_required = true) {
    auto* t = sub->add_option("--tables", paths.tables, "tables JSONL file");
    if (tables_required) t->required();
    sub->add_option("--queries", paths.queries, "queries JSONL file");
    sub->add_option("--qrels", paths.qrels, "qrels TSV file (query_id<TAB>table_id<TAB>grade)");
}

// Sentinel-defaulted model flags; a preset fills the gaps afterwards.
struct ModelFlags {
    std::string preset = "desk";
    int d = -1, layers = -1, heads = -1, ffn = -1, max_len = -1;
    int hor_layers = -1, ver_layers = -1;
    int mb_ffn = -1, mb_max_pos = -1;
    int max_rows = -1, max_cols = -1, max_seq_len = -1;
    double dropout = -1.0;
    double emb_scale = -1.0;
    bool no_positions = false;

    ModelConfig resolve() const {
        ModelConfig cfg;  // desk-scale defaults
        if (preset == "bert-base") {
            cfg.encoder.d = 768;
            cfg.encoder.layers = 12;
            cfg.encoder.heads = 12;
            cfg.encoder.ffn = 3072;
            cfg.encoder.emb_scale = 1.0;  // published-checkpoint convention
            cfg.minibert.d = 768;
            cfg.minibert.ffn = 1536;
        } else if (preset != "desk") {
            throw ConfigError("unknown preset: " + preset);
        }
        if (d > 0) {
            cfg.encoder.d = d;
            cfg.minibert.d = d;
        }
        if (layers > 0) cfg.encoder.layers = layers;
        if (heads > 0) cfg.encoder.heads = heads;
        if (ffn > 0) cfg.encoder.ffn = ffn;
        if (max_len > 0) cfg.encoder.max_len = max_len;
        if (hor_layers > 0) cfg.structure.horizontal_layers = hor_layers;
        if (ver_layers > 0) cfg.structure.vertical_layers = ver_layers;
        if (mb_ffn > 0) cfg.minibert.ffn = mb_ffn;
        if (mb_max_pos > 0) cfg.minibert.max_pos = mb_max_pos;
        if (max_rows > 0) cfg.pipeline.max_rows = max_rows;
        if (max_cols > 0) cfg.pipeline.max_cols = max_cols;
        if (max_seq_len > 0) cfg.pipeline.max_seq_len = max_seq_len;
        if (dropout >= 0.0) cfg.encoder.dropout = dropout;
        if (emb_scale >= 0.0) cfg.encoder.emb_scale = emb_scale;
        if (no_positions) cfg.encoder.positions = false;
        if (cfg.encoder.max_len < cfg.pipeline.max_seq_len)
            cfg.encoder.max_len = cfg.pipeline.max_seq_len;
        return cfg;
    }
};

inline void add_model_flags(CLI::App* sub, ModelFlags& f) {
    sub->add_option("--preset", f.preset, "model preset: desk (default) or bert-base");
    sub->add_option("--d", f.d, "hidden size");
    sub->add_option("--layers", f.layers, "encoder transformer layers");
    sub->add_option("--heads", f.heads, "encoder attention heads");
    sub->add_option("--ffn", f.ffn, "encoder feed-forward size");
    sub->add_option("--max-len", f.max_len, "encoder position table size");
    sub->add_option("--hor-layers", f.hor_layers, "horizontal self-attention layers");
    sub->add_option("--ver-layers", f.ver_layers, "vertical self-attention layers");
    sub->add_option("--mb-ffn", f.mb_ffn, "miniBERT feed-forward size");
    sub->add_option("--mb-max-pos", f.mb_max_pos, "miniBERT position table size");
    sub->add_option("--max-rows", f.max_rows, "data rows kept per table");
    sub->add_option("--max-cols", f.max_cols, "columns kept per table");
    sub->add_option("--max-seq-len", f.max_seq_len, "token cap per sequence");
    sub->add_option("--dropout", f.dropout, "dropout probability (training)");
    sub->add_option("--emb-scale", f.emb_scale,
                    "token-embedding init spread, as a multiple of 0.02");
    sub->add_flag("--no-positions", f.no_positions, "disable encoder position embeddings");
}

inline void emit(const json& payload, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << payload.dump(2) << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot write " + out_path);
        out << payload.dump(2) << "\n";
    }
}

}  // namespace cli

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"structure-aware table retrieval and matching"};
    app.set_version_flag("--version", std::string(kVersion));
    app.set_config("--config", "", "INI config file with [subcommand] sections");
    app.require_subcommand(1);

    // build-vocab
    auto* sub_vocab = app.add_subcommand("build-vocab", "build a vocabulary from a corpus");
    cli::CorpusPaths vocab_paths;
    int vocab_min_freq = 1;
    std::string vocab_out;
    cli::add_corpus_flags(sub_vocab, vocab_paths);
    sub_vocab->add_option("--min-freq", vocab_min_freq, "minimum token frequency");
    sub_vocab->add_option("--out", vocab_out, "output path (default stdout)");

    // gen-synthetic
    auto* sub_gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus");
    std::string gen_mode = "similarity", gen_out_dir;
    std::uint64_t gen_seed = 7;
    SimilaritySpec sim_spec;
    KeywordSpec kw_spec;
    ContentSpec ct_spec;
    sub_gen->add_option("--mode", gen_mode, "similarity | keyword | content | fig2")->required();
    sub_gen->add_option("--out-dir", gen_out_dir, "output directory")->required();
    sub_gen->add_option("--seed", gen_seed, "generator seed");
    sub_gen->add_option("--pairs", sim_spec.pairs, "similarity: total pairs");
    sub_gen->add_option("--positives", sim_spec.positives, "similarity: similar pairs");
    sub_gen->add_option("--topics", sim_spec.topics, "topic count (similarity mode)");
    sub_gen->add_option("--tables", kw_spec.tables, "keyword/content: corpus size");
    sub_gen->add_option("--queries", kw_spec.queries, "keyword/content: query count");
    sub_gen->add_option("--judged-per-query", kw_spec.judged_per_query,
                        "keyword: judged tables per query");

    // train
    auto* sub_train = app.add_subcommand("train", "cross-validated training");
    cli::CorpusPaths train_paths;
    cli::ModelFlags train_model;
    TrainConfig train_cfg;
    std::string train_out_dir = "out", train_task = "similarity", train_report_out;
    bool train_stable = false;
    cli::add_corpus_flags(sub_train, train_paths);
    cli::add_model_flags(sub_train, train_model);
    sub_train->add_option("--task", train_task, "keyword | content | similarity")->required();
    sub_train->add_option("--out-dir", train_out_dir, "checkpoint/report directory");
    sub_train->add_option("--epochs", train_cfg.epochs, "training epochs per fold");
    sub_train->add_option("--batch", train_cfg.batch_size, "batch size");
    sub_train->add_option("--folds", train_cfg.folds, "cross-validation folds");
    sub_train->add_option("--lr", train_cfg.lr, "Adam learning rate");
    sub_train->add_option("--head-lr", train_cfg.head_lr,
                          "task-head learning rate (default: follow --lr)");
    sub_train->add_option("--clip-norm", train_cfg.clip_norm,
                          "global gradient-norm cap (<= 0 disables)");
    sub_train->add_option("--warmup-frac", train_cfg.warmup_frac,
                          "fraction of steps spent in linear warmup");
    sub_train->add_option("--seed", train_cfg.seed, "training seed");
    sub_train->add_option("--min-freq", train_cfg.min_freq, "vocabulary frequency threshold");
    sub_train->add_option("--ndcg-k", train_cfg.ndcg_k, "NDCG cutoff");
    sub_train->add_option("--out", train_report_out, "report path (default stdout)");
    sub_train->add_flag("--stable-output", train_stable,
                        "omit runtime so outputs are byte-reproducible");
    sub_train->add_flag("--quiet", "suppress progress logging");

    // evaluate
    auto* sub_eval = app.add_subcommand("evaluate", "evaluate a checkpoint's held-out fold");
    cli::CorpusPaths eval_paths;
    std::string eval_checkpoint, eval_out;
    bool eval_stable = false;
    cli::add_corpus_flags(sub_eval, eval_paths);
    sub_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    sub_eval->add_option("--out", eval_out, "report path (default stdout)");
    sub_eval->add_flag("--stable-output", eval_stable,
                       "omit runtime so outputs are byte-reproducible");

    // search
    auto* sub_search = app.add_subcommand("search", "rank the corpus for a query");
    cli::CorpusPaths search_paths;
    std::string search_checkpoint, search_query, search_by_table;
    int search_top_k = 10;
    cli::add_corpus_flags(sub_search, search_paths);
    sub_search->add_option("--checkpoint", search_checkpoint, "checkpoint file")->required();
    sub_search->add_option("--query", search_query, "keyword query text");
    sub_search->add_option("--by-table", search_by_table, "query by table id");
    sub_search->add_option("--top-k", search_top_k, "result count");

    // linearize
    auto* sub_lin = app.add_subcommand("linearize", "dump column/row sequence strings");
    cli::CorpusPaths lin_paths;
    std::string lin_table_id, lin_view = "both", lin_query;
    int lin_index = 0;
    bool lin_context = false;
    cli::add_corpus_flags(sub_lin, lin_paths);
    sub_lin->add_option("--table-id", lin_table_id, "table id (default: sole table)");
    sub_lin->add_option("--view", lin_view, "column | row | both");
    sub_lin->add_option("--index", lin_index, "1-based column/row index (default: all)");
    sub_lin->add_flag("--context", lin_context, "also dump tokenized context sequences");
    sub_lin->add_option("--query", lin_query, "inject a query as the leading context field");

    // dump-attention
    auto* sub_dump = app.add_subcommand("dump-attention", "miniBERT attention heads as JSON");
    cli::CorpusPaths dump_paths;
    cli::ModelFlags dump_model;
    std::string dump_checkpoint, dump_table_a, dump_table_b, dump_query, dump_table, dump_out;
    std::string dump_path_axis = "column";
    std::uint64_t dump_seed = 42;
    cli::add_corpus_flags(sub_dump, dump_paths);
    cli::add_model_flags(sub_dump, dump_model);
    sub_dump->add_option("--checkpoint", dump_checkpoint,
                         "checkpoint file (omit for a seeded random model)");
    sub_dump->add_option("--seed", dump_seed, "model seed when no checkpoint is given");
    sub_dump->add_option("--table-a", dump_table_a, "first table of a pair");
    sub_dump->add_option("--table-b", dump_table_b, "second table of a pair");
    sub_dump->add_option("--query", dump_query, "keyword query (with --table)");
    sub_dump->add_option("--table", dump_table, "table for the query-table case");
    sub_dump->add_option("--path", dump_path_axis, "row | column miniBERT path");
    sub_dump->add_option("--out", dump_out, "output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sub_vocab->parsed()) {
            Corpus corpus = parse_corpus(vocab_paths.tables, vocab_paths.queries, vocab_paths.qrels);
            Vocabulary vocab = build_vocab(corpus, vocab_min_freq);
            json payload = vocab.to_json();
            payload["min_freq"] = vocab_min_freq;
            payload["size"] = vocab.size();
            payload["config_hash"] = config_hash(json{{"min_freq", vocab_min_freq}});
            cli::emit(payload, vocab_out);
        } else if (sub_gen->parsed()) {
            Corpus corpus;
            json spec;
            if (gen_mode == "similarity") {
                corpus = gen_similarity_corpus(sim_spec, gen_seed);
                spec = {{"mode", "similarity"}, {"pairs", sim_spec.pairs},
                        {"positives", sim_spec.positives}, {"topics", sim_spec.topics}};
            } else if (gen_mode == "keyword") {
                corpus = gen_keyword_corpus(kw_spec, gen_seed);
                spec = {{"mode", "keyword"}, {"tables", kw_spec.tables},
                        {"queries", kw_spec.queries},
                        {"judged_per_query", kw_spec.judged_per_query}};
            } else if (gen_mode == "content") {
                ct_spec.tables = kw_spec.tables == 200 ? ct_spec.tables : kw_spec.tables;
                ct_spec.queries = kw_spec.queries == 50 ? ct_spec.queries : kw_spec.queries;
                corpus = gen_content_corpus(ct_spec, gen_seed);
                spec = {{"mode", "content"}, {"tables", ct_spec.tables},
                        {"queries", ct_spec.queries}};
            } else if (gen_mode == "fig2") {
                corpus = fig2_corpus();
                spec = {{"mode", "fig2"}};
            } else {
                throw ConfigError("unknown mode: " + gen_mode);
            }
            write_corpus(corpus, gen_out_dir);
            spec["seed"] = gen_seed;
            std::cout << json{{"out_dir", gen_out_dir},
                              {"tables", corpus.tables.size()},
                              {"queries", corpus.queries.size()},
                              {"judgments", corpus.judgments.size()},
                              {"seed", gen_seed},
                              {"config_hash", config_hash(spec)}}
                             .dump(2)
                      << "\n";
        } else if (sub_train->parsed()) {
            Corpus corpus = parse_corpus(train_paths.tables, train_paths.queries, train_paths.qrels);
            train_cfg.task = task_from_name(train_task);
            train_cfg.model = train_model.resolve();
            const bool quiet = sub_train->count("--quiet") > 0;
            TrainResult result =
                train(train_cfg, corpus, train_out_dir, train_stable, quiet ? nullptr : &std::cerr);
            cli::emit(result.report, train_report_out);
        } else if (sub_eval->parsed()) {
            Corpus corpus = parse_corpus(eval_paths.tables, eval_paths.queries, eval_paths.qrels);
            LoadedCheckpoint ck = load_checkpoint(eval_checkpoint);
            cli::emit(evaluate_checkpoint(ck, corpus, eval_stable), eval_out);
        } else if (sub_search->parsed()) {
            if (search_query.empty() == search_by_table.empty())
                throw UsageError("search: give exactly one of --query or --by-table");
            Corpus corpus = parse_corpus(search_paths.tables, search_paths.queries,
                                         search_paths.qrels);
            LoadedCheckpoint ck = load_checkpoint(search_checkpoint);
            MatchModel<float> model = model_from_checkpoint(ck);
            std::vector<ScoredTable> scored;
            for (const Table& t : corpus.tables) {
                if (!search_by_table.empty() && t.id == search_by_table) continue;
                Tape<float> tape;
                Tensor<float> s = search_by_table.empty()
                                      ? model.score_query_table(tape, search_query, t)
                                      : model.score_table_pair(
                                            tape, corpus.table(search_by_table), t);
                scored.push_back({t.id, static_cast<double>(s.scalar()), 0});
            }
            std::sort(scored.begin(), scored.end(), [](const ScoredTable& a, const ScoredTable& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.table_id < b.table_id;
            });
            std::cout << "# seed=" << ck.config.at("train").at("seed")
                      << " config_hash=" << ck.config.at("config_hash").get<std::string>() << "\n";
            const int k = std::min<int>(search_top_k, static_cast<int>(scored.size()));
            for (int r = 0; r < k; ++r) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", scored[static_cast<size_t>(r)].score);
                std::cout << r + 1 << "\t" << scored[static_cast<size_t>(r)].table_id << "\t" << buf
                          << "\n";
            }
        } else if (sub_lin->parsed()) {
            Corpus corpus = parse_corpus(lin_paths.tables, lin_paths.queries, lin_paths.qrels);
            if (lin_table_id.empty()) {
                if (corpus.tables.size() != 1)
                    throw UsageError("linearize: --table-id required for multi-table corpora");
                lin_table_id = corpus.tables[0].id;
            }
            const Table& t = corpus.table(lin_table_id);
            const bool want_cols = lin_view == "column" || lin_view == "both";
            const bool want_rows = lin_view == "row" || lin_view == "both";
            if (!want_cols && !want_rows) throw UsageError("linearize: bad --view " + lin_view);
            auto in_range = [&](int i, int n) { return lin_index == 0 || lin_index == i + 1; };
            if (want_cols)
                for (int j = 0; j < t.n_cols(); ++j)
                    if (in_range(j, t.n_cols()))
                        std::cout << "column\t" << j + 1 << "\t" << linearize_column(t, j) << "\n";
            if (want_rows)
                for (int k = 0; k < t.n_rows(); ++k)
                    if (in_range(k, t.n_rows()))
                        std::cout << "row\t" << k + 1 << "\t" << linearize_row(t, k) << "\n";
            if (lin_context) {
                Vocabulary vocab = build_vocab(corpus, 1);
                PipelineConfig pipeline;
                const std::string* q = lin_query.empty() ? nullptr : &lin_query;
                const TruncationPlan plan = plan_truncation(t, vocab, pipeline, q);
                auto dump_seq = [&](ViewAxis axis, const char* label, int count) {
                    for (int i = 0; i < count; ++i) {
                        if (!in_range(i, count)) continue;
                        LinearizedSequence seq = build_context_sequence(plan, axis, i);
                        std::cout << "context\t" << label << "\t" << i + 1 << "\t";
                        for (size_t p = 0; p < seq.token_ids.size(); ++p)
                            std::cout << (p ? " " : "") << vocab.token(seq.token_ids[p]);
                        std::cout << "\n";
                    }
                };
                if (want_cols) dump_seq(ViewAxis::Column, "column", plan.cols_kept);
                if (want_rows) dump_seq(ViewAxis::Row, "row", plan.rows_kept);
            }
        } else if (sub_dump->parsed()) {
            Corpus corpus = parse_corpus(dump_paths.tables, dump_paths.queries, dump_paths.qrels);
            const RepKind path = dump_path_axis == "row" ? RepKind::Row : RepKind::Column;
            json payload;
            std::string hash;
            auto with_model = [&](MatchModel<float>& model) {
                MiniBertAttention attn;
                if (!dump_table_a.empty() && !dump_table_b.empty()) {
                    attn = model.dump_pair_attention(corpus.table(dump_table_a),
                                                     corpus.table(dump_table_b), path);
                } else if (!dump_query.empty() && !dump_table.empty()) {
                    attn = model.dump_query_attention(dump_query, corpus.table(dump_table), path);
                } else {
                    throw UsageError(
                        "dump-attention: give --table-a/--table-b or --query/--table");
                }
                payload = attn.to_json();
            };
            if (!dump_checkpoint.empty()) {
                LoadedCheckpoint ck = load_checkpoint(dump_checkpoint);
                MatchModel<float> model = model_from_checkpoint(ck);
                payload = json();
                with_model(model);
                payload["seed"] = ck.config.at("train").at("seed");
                hash = ck.config.at("config_hash").get<std::string>();
            } else {
                ModelConfig mc = dump_model.resolve();
                Vocabulary vocab = build_vocab(corpus, 1);
                MatchModel<float> model(mc, vocab, dump_seed);
                with_model(model);
                payload["seed"] = dump_seed;
                hash = config_hash(mc.to_json());
            }
            payload["config_hash"] = hash;
            cli::emit(payload, dump_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace tabmatch
