#include <doctest.h>

#include <fstream>

#include "tabmatch/linearize.hpp"
#include "tabmatch/synthetic.hpp"
#include "testutil.hpp"

using namespace tabmatch;

namespace {

Table simple_table(std::vector<std::string> headers, std::vector<std::vector<std::string>> rows,
                   std::vector<std::pair<std::string, std::string>> metadata = {}) {
    Table t;
    t.id = "t";
    t.headers = std::move(headers);
    t.cells = std::move(rows);
    t.metadata = std::move(metadata);
    t.infer_types();
    t.validate();
    return t;
}

Table random_table(Rng& rng, int max_rows = 5, int max_cols = 5) {
    const int rows = 1 + rng.uniform_int(max_rows);
    const int cols = 1 + rng.uniform_int(max_cols);
    std::vector<std::string> headers;
    for (int c = 0; c < cols; ++c) headers.push_back("col" + std::to_string(c) + " name");
    std::vector<std::vector<std::string>> cells;
    for (int r = 0; r < rows; ++r) {
        std::vector<std::string> row;
        for (int c = 0; c < cols; ++c) {
            if (c % 3 == 2) {
                row.push_back(std::to_string(rng.uniform_int(1000)));
            } else {
                std::string v = synth::word_bank()[static_cast<size_t>(rng.uniform_int(40))];
                if (rng.uniform_int(2)) v += " " + synth::word_bank()[static_cast<size_t>(rng.uniform_int(40))];
                row.push_back(v);
            }
        }
        cells.push_back(std::move(row));
    }
    std::vector<std::pair<std::string, std::string>> metadata;
    if (rng.uniform_int(2)) metadata.emplace_back("caption", "a caption about things");
    return simple_table(std::move(headers), std::move(cells), std::move(metadata));
}

}  // namespace

TEST_CASE("column type inference") {
    CHECK(infer_column_type({"Ronaldo", "Messi"}) == ColumnType::Text);
    CHECK(infer_column_type({"1", "2.5", "-3"}) == ColumnType::Real);
    CHECK(infer_column_type({"7", "abc"}) == ColumnType::Real);  // exactly 50%: tie goes to real
    CHECK(infer_column_type({"", "  "}) == ColumnType::Text);
    CHECK(infer_column_type({"1,234", "+2.5", "99"}) == ColumnType::Real);
    CHECK(infer_column_type({"1.2.3", "12a", "x"}) == ColumnType::Text);
}

TEST_CASE("column linearization strings") {
    const Table fig2 = fig2_table();
    CHECK(linearize_column(fig2, 0) == "player text Ronaldo [SEP] player text Messi [SEP]");
    CHECK(linearize_row(fig2, 0) ==
          "player text Ronaldo [SEP] team text Manchester United [SEP] goals real 84 [SEP]");

    const Table one = simple_table({"h"}, {{"v"}});
    CHECK(linearize_column(one, 0) == "h text v [SEP]");
    CHECK(linearize_row(one, 0) == linearize_column(one, 0));  // l=1 degenerate

    const Table nums = simple_table({"score"}, {{"12"}, {"30"}});
    CHECK(linearize_column(nums, 0) == "score real 12 [SEP] score real 30 [SEP]");

    const Table two = simple_table({"a", "b"}, {{"1", "2"}, {"3", "4"}});
    for (int k = 0; k < 2; ++k) {
        const std::string s = linearize_row(two, k);
        size_t seps = 0, pos = 0;
        while ((pos = s.find("[SEP]", pos)) != std::string::npos) {
            ++seps;
            pos += 5;
        }
        CHECK(seps == 2);
    }
    CHECK_THROWS_AS(linearize_column(two, 2), UsageError);
    CHECK_THROWS_AS(linearize_row(two, -1), UsageError);
}

TEST_CASE("tokenizer basics") {
    CHECK(tokenize("Manchester United") == std::vector<std::string>{"manchester", "united"});
    CHECK(tokenize("[SEP]") == std::vector<std::string>{"sep"});  // never the special id
    CHECK(tokenize("City/Town") == std::vector<std::string>{"city", "town"});
    CHECK(tokenize("  ") == std::vector<std::string>{});
    CHECK(tokenize("x1 2.5") == std::vector<std::string>{"x1", "2", "5"});
}

TEST_CASE("vocabulary construction and thresholds") {
    // corpus text amounts to {"a a b"}: header+cell contribute a twice, caption b once
    Corpus corpus;
    corpus.tables.push_back(simple_table({"a"}, {{"a"}}, {{"caption", "b"}}));
    corpus.rebuild_indexes();
    Vocabulary v = build_vocab(corpus, 2);
    CHECK(v.size() == 5);  // four specials + "a"
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == Vocabulary::unk_id);
    CHECK(v.id("text") == Vocabulary::unk_id);  // below threshold here

    Vocabulary all = build_vocab(corpus, 1);
    CHECK(all.id("b") != Vocabulary::unk_id);
    CHECK(all.id("text") != Vocabulary::unk_id);

    // ids dense from 0; specials present and distinct
    CHECK(all.token(Vocabulary::pad_id) == "[PAD]");
    CHECK(all.token(Vocabulary::unk_id) == "[UNK]");
    CHECK(all.token(Vocabulary::cls_id) == "[CLS]");
    CHECK(all.token(Vocabulary::sep_id) == "[SEP]");
}

TEST_CASE("context sequence layout") {
    PipelineConfig cfg;
    const Table with_meta = simple_table({"h"}, {{"v"}}, {{"caption", "hello world"}});
    Corpus corpus;
    corpus.tables.push_back(with_meta);
    corpus.rebuild_indexes();
    Vocabulary vocab = build_vocab(corpus, 1);

    LinearizedSequence seq = build_context_sequence(with_meta, vocab, cfg, ViewAxis::Column, 0);
    // [CLS] hello world [SEP] h text v [SEP]
    REQUIRE(seq.length() == 8);
    CHECK(seq.token_ids[0] == Vocabulary::cls_id);
    CHECK(seq.token_ids[3] == Vocabulary::sep_id);
    CHECK(seq.token_ids.back() == Vocabulary::sep_id);
    REQUIRE(seq.spans.size() == 5);
    CHECK(seq.spans[0].kind == SpanKind::Cls);
    CHECK(seq.spans[1].kind == SpanKind::TextField);
    CHECK(seq.spans[2].kind == SpanKind::Sep);
    CHECK(seq.spans[3].kind == SpanKind::Cell);
    CHECK(seq.spans[3].row == 0);
    CHECK(seq.spans[3].col == 0);
    CHECK(seq.spans[4].kind == SpanKind::Sep);

    // p=0 collapses to a bare separator after [CLS]
    const Table bare = simple_table({"h"}, {{"v"}});
    LinearizedSequence seq0 = build_context_sequence(bare, vocab, cfg, ViewAxis::Column, 0);
    CHECK(seq0.token_ids[0] == Vocabulary::cls_id);
    CHECK(seq0.token_ids[1] == Vocabulary::sep_id);
    CHECK(seq0.spans[1].kind == SpanKind::Sep);

    // query becomes the leading field
    const std::string query = "find goals";
    LinearizedSequence seqq = build_context_sequence(bare, vocab, cfg, ViewAxis::Column, 0, &query);
    CHECK(seqq.spans[1].kind == SpanKind::TextField);
    CHECK(seqq.spans[1].end - seqq.spans[1].start == 2);
}

TEST_CASE("spans are disjoint ordered and covering, and round-trip their cells") {
    Rng rng(404);
    PipelineConfig cfg;
    for (int trial = 0; trial < 25; ++trial) {
        Table t = random_table(rng);
        Corpus corpus;
        corpus.tables.push_back(t);
        corpus.rebuild_indexes();
        Vocabulary vocab = build_vocab(corpus, 1);
        const TruncationPlan plan = plan_truncation(t, vocab, cfg);
        for (int j = 0; j < plan.cols_kept; ++j) {
            LinearizedSequence seq = build_context_sequence(plan, ViewAxis::Column, j);
            int expected_start = 0;
            for (const TokenSpan& span : seq.spans) {
                CHECK(span.start == expected_start);
                CHECK(span.end > span.start);
                expected_start = span.end;
                if (span.kind == SpanKind::Cell) {
                    REQUIRE(span.row >= 0);
                    REQUIRE(span.col == j);
                    // detokenized cell equals normalized "header type value"
                    std::vector<std::string> expected =
                        tokenize(t.headers[static_cast<size_t>(span.col)]);
                    expected.push_back(column_type_word(t.col_types[static_cast<size_t>(span.col)]));
                    for (const std::string& tok :
                         tokenize(t.cells[static_cast<size_t>(span.row)][static_cast<size_t>(span.col)]))
                        expected.push_back(tok);
                    REQUIRE(span.end - span.start == static_cast<int>(expected.size()));
                    for (int p = span.start; p < span.end; ++p)
                        CHECK(vocab.token(seq.token_ids[static_cast<size_t>(p)]) ==
                              expected[static_cast<size_t>(p - span.start)]);
                }
            }
            CHECK(expected_start == seq.length());
        }
    }
}

TEST_CASE("same-view sequences share one span layout") {
    Rng rng(77);
    PipelineConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        Table t = random_table(rng);
        Corpus corpus;
        corpus.tables.push_back(t);
        corpus.rebuild_indexes();
        Vocabulary vocab = build_vocab(corpus, 1);
        const TruncationPlan plan = plan_truncation(t, vocab, cfg);
        std::vector<SpanKind> reference;
        for (int j = 0; j < plan.cols_kept; ++j) {
            LinearizedSequence seq = build_context_sequence(plan, ViewAxis::Column, j);
            std::vector<SpanKind> kinds;
            for (const TokenSpan& s : seq.spans) kinds.push_back(s.kind);
            if (j == 0)
                reference = kinds;
            else
                CHECK(kinds == reference);
        }
    }
}

TEST_CASE("truncation keeps [CLS], final [SEP], and whole cells") {
    PipelineConfig cfg;
    cfg.max_seq_len = 48;
    std::vector<std::vector<std::string>> rows;
    for (int r = 0; r < 30; ++r)
        rows.push_back({"some words here to fill space " + std::to_string(r), "b" + std::to_string(r)});
    Table t = simple_table({"first header", "second"}, rows,
                           {{"caption", "a long caption with several tokens inside"}});
    Corpus corpus;
    corpus.tables.push_back(t);
    corpus.rebuild_indexes();
    Vocabulary vocab = build_vocab(corpus, 1);
    const TruncationPlan plan = plan_truncation(t, vocab, cfg);
    CHECK(plan.rows_kept < 30);
    CHECK(plan.rows_kept >= 1);
    for (int j = 0; j < plan.cols_kept; ++j) {
        LinearizedSequence seq = build_context_sequence(plan, ViewAxis::Column, j);
        CHECK(seq.length() <= cfg.max_seq_len);
        CHECK(seq.token_ids.front() == Vocabulary::cls_id);
        CHECK(seq.token_ids.back() == Vocabulary::sep_id);
        // cells stay whole: every kept cell span detokenizes fully
        for (const TokenSpan& span : seq.spans) {
            if (span.kind != SpanKind::Cell) continue;
            std::vector<std::string> expected = tokenize(t.headers[static_cast<size_t>(span.col)]);
            expected.push_back(column_type_word(t.col_types[static_cast<size_t>(span.col)]));
            for (const std::string& tok :
                 tokenize(t.cells[static_cast<size_t>(span.row)][static_cast<size_t>(span.col)]))
                expected.push_back(tok);
            CHECK(span.end - span.start == static_cast<int>(expected.size()));
        }
    }
}

TEST_CASE("corpus parsing with counts, errors, and dangling references") {
    namespace fs = std::filesystem;
    const fs::path dir = testutil::fresh_dir("corpus");

    {
        // WikiTables-shaped counts: 60 queries, 3117 qrel lines
        std::ofstream tables(dir / "tables.jsonl");
        for (int i = 0; i < 120; ++i) {
            Table t = simple_table({"h"}, {{"v" + std::to_string(i)}});
            t.id = "t" + std::to_string(i);
            tables << table_to_json(t).dump() << "\n";
        }
        std::ofstream queries(dir / "queries.jsonl");
        for (int q = 0; q < 60; ++q)
            queries << json{{"id", "q" + std::to_string(q)}, {"text", "query " + std::to_string(q)}}
                           .dump()
                    << "\n";
        std::ofstream qrels(dir / "qrels.tsv");
        int written = 0;
        for (int q = 0; q < 60 && written < 3117; ++q)
            for (int t = 0; t < 120 && written < 3117; ++t) {
                qrels << "q" << q << "\tt" << t << "\t" << (t % 3 == 0 ? 1 : 0) << "\n";
                ++written;
            }
    }
    Corpus corpus = parse_corpus((dir / "tables.jsonl").string(), (dir / "queries.jsonl").string(),
                                 (dir / "qrels.tsv").string());
    CHECK(corpus.queries.size() == 60);
    CHECK(corpus.judgments.size() == 3117);

    {
        std::ofstream empty(dir / "empty.tsv");
    }
    CHECK(parse_qrels((dir / "empty.tsv").string()).empty());

    {
        std::ofstream bad(dir / "bad.tsv");
        bad << "q0\tt0\t1\n";
        bad << "q0 only-two-fields\n";
    }
    CHECK_THROWS_WITH_AS(static_cast<void>(parse_qrels((dir / "bad.tsv").string())),
                         doctest::Contains("bad.tsv:2"), ParseError);

    {
        std::ofstream dangling(dir / "dangling.tsv");
        dangling << "q0\tnope\t1\n";
    }
    CHECK_THROWS_AS(static_cast<void>(parse_corpus((dir / "tables.jsonl").string(),
                                                   (dir / "queries.jsonl").string(),
                                                   (dir / "dangling.tsv").string())),
                    ReferenceError);
}

TEST_CASE("similarity pairs from graded qrels") {
    Corpus corpus;
    for (const char* id : {"A", "B", "C", "D"}) {
        Table t = simple_table({"h"}, {{"v"}});
        t.id = id;
        corpus.tables.push_back(std::move(t));
    }
    corpus.queries.push_back({"q1", "text query", ""});
    corpus.judgments = {{"q1", "A", 2}, {"q1", "B", 1}, {"q1", "C", 0}};
    corpus.rebuild_indexes();
    corpus.validate_references();

    std::vector<TablePair> pairs = similarity_pairs_from_qrels(corpus);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].a == "A");
    CHECK(pairs[0].b == "B");
    CHECK(pairs[0].label == 1);
    CHECK(pairs[1].a == "A");
    CHECK(pairs[1].b == "C");
    CHECK(pairs[1].label == 0);
    CHECK(pairs[2].a == "B");
    CHECK(pairs[2].b == "C");
    CHECK(pairs[2].label == 0);

    // one relevant table: no positive pairs, only (irrelevant, relevant)
    corpus.judgments = {{"q1", "A", 2}, {"q1", "C", 0}, {"q1", "D", 0}};
    std::vector<TablePair> single = similarity_pairs_from_qrels(corpus);
    REQUIRE(single.size() == 2);
    for (const TablePair& p : single) CHECK(p.label == 0);

    // swapped judgment order yields the same canonicalized pairs
    corpus.judgments = {{"q1", "C", 0}, {"q1", "A", 2}, {"q1", "D", 0}};
    CHECK(similarity_pairs_from_qrels(corpus).size() == single.size());
}

TEST_CASE("PMC-shaped binary pair counts") {
    SimilaritySpec spec;
    spec.pairs = 1391;
    spec.positives = 542;
    Corpus corpus = gen_similarity_corpus(spec, 3);
    std::vector<TablePair> pairs = similarity_pairs_from_qrels(corpus);
    CHECK(pairs.size() == 1391);
    int pos = 0;
    for (const TablePair& p : pairs) pos += p.label;
    CHECK(pos == 542);
    CHECK(static_cast<int>(pairs.size()) - pos == 849);
}
