#pragma once

// Column- and row-based table views. A column view repeats
// "header type value [SEP]" down one column; a row view walks one data row
// across all columns. Context sequences prepend [CLS] and the metadata
// fields (query first, when present), each field closed by [SEP]. Token runs
// are annotated with spans that link cell tokens back to (row, col).

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "tabmatch/table.hpp"
#include "tabmatch/vocab.hpp"

namespace tabmatch {

enum class ViewAxis { Column, Row };
enum class SpanKind { Cls, TextField, Sep, Cell };

struct TokenSpan {
    int start = 0;
    int end = 0;  // exclusive
    SpanKind kind = SpanKind::Cls;
    int row = -1;  // cell coordinate, absolute table indices
    int col = -1;
};

struct LinearizedSequence {
    std::vector<int> token_ids;
    std::vector<TokenSpan> spans;  // disjoint, ordered, covering all positions
    ViewAxis view = ViewAxis::Column;
    int index = 0;  // which column / data row

    int length() const { return static_cast<int>(token_ids.size()); }
};

struct PipelineConfig {
    int max_rows = 8;         // data rows kept (first rows win)
    int max_cols = 8;         // columns kept (first columns win)
    int field_token_cap = 32; // tokens per metadata field
    int header_token_cap = 16;
    int value_token_cap = 32;
    int max_seq_len = 256;    // whole cells are dropped from the tail to fit

    json to_json() const {
        return json{{"max_rows", max_rows},     {"max_cols", max_cols},
                    {"field_token_cap", field_token_cap}, {"header_token_cap", header_token_cap},
                    {"value_token_cap", value_token_cap}, {"max_seq_len", max_seq_len}};
    }
    static PipelineConfig from_json(const json& j) {
        PipelineConfig c;
        c.max_rows = j.value("max_rows", c.max_rows);
        c.max_cols = j.value("max_cols", c.max_cols);
        c.field_token_cap = j.value("field_token_cap", c.field_token_cap);
        c.header_token_cap = j.value("header_token_cap", c.header_token_cap);
        c.value_token_cap = j.value("value_token_cap", c.value_token_cap);
        c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
        return c;
    }
};

inline std::string normalize_ws(const std::string& text) {
    std::string out;
    bool in_space = true;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!out.empty()) in_space = true;
        } else {
            if (in_space && !out.empty()) out.push_back(' ');
            out.push_back(c);
            in_space = false;
        }
    }
    return out;
}

// ---- debug string forms (Eqs. 1-2 shape, original casing) ------------------

inline std::string cell_triple(const Table& t, int row, int col) {
    std::string s = normalize_ws(t.headers[static_cast<size_t>(col)]);
    s += s.empty() ? "" : " ";
    s += column_type_word(t.col_types[static_cast<size_t>(col)]);
    const std::string v = normalize_ws(t.cells[static_cast<size_t>(row)][static_cast<size_t>(col)]);
    if (!v.empty()) s += " " + v;
    return s;
}

inline std::string linearize_column(const Table& t, int col) {
    if (col < 0 || col >= t.n_cols()) throw UsageError("linearize_column: index out of range");
    std::string out;
    for (int k = 0; k < t.n_rows(); ++k) {
        if (!out.empty()) out += " ";
        out += cell_triple(t, k, col) + " [SEP]";
    }
    return out;
}

inline std::string linearize_row(const Table& t, int row) {
    if (row < 0 || row >= t.n_rows()) throw UsageError("linearize_row: index out of range");
    std::string out;
    for (int j = 0; j < t.n_cols(); ++j) {
        if (!out.empty()) out += " ";
        out += cell_triple(t, row, j) + " [SEP]";
    }
    return out;
}

// ---- tokenized context sequences -------------------------------------------

namespace detail {

inline void cap_tokens(std::vector<std::string>& toks, int cap) {
    if (static_cast<int>(toks.size()) > cap) toks.resize(static_cast<size_t>(cap));
}

}  // namespace detail

// Table-wide truncation decisions, shared by every view of one table so the
// views stay mutually consistent: the same rows/columns are kept everywhere.
struct TruncationPlan {
    int rows_kept = 0;
    int cols_kept = 0;
    std::vector<std::vector<int>> field_tokens;             // query first when present
    std::vector<std::vector<std::vector<int>>> cell_tokens; // [row][col]
    int fixed_len = 0;                                      // [CLS] + fields + their [SEP]s
};

inline TruncationPlan plan_truncation(const Table& t, const Vocabulary& vocab,
                                      const PipelineConfig& cfg,
                                      const std::string* query = nullptr) {
    if (cfg.max_seq_len < 32) throw ConfigError("max_seq_len must be at least 32");
    int field_cap = cfg.field_token_cap;
    int header_cap = cfg.header_token_cap;
    int value_cap = cfg.value_token_cap;

    for (int attempt = 0;; ++attempt) {
        TruncationPlan plan;
        plan.rows_kept = std::min(t.n_rows(), cfg.max_rows);
        plan.cols_kept = std::min(t.n_cols(), cfg.max_cols);

        auto add_field = [&](const std::string& text) {
            std::vector<std::string> toks = tokenize(text);
            detail::cap_tokens(toks, field_cap);
            if (!toks.empty()) plan.field_tokens.push_back(vocab.ids(toks));
        };
        if (query) add_field(*query);
        for (const auto& [name, text] : t.metadata) add_field(text);

        plan.fixed_len = 1;  // [CLS]
        for (const auto& f : plan.field_tokens) plan.fixed_len += static_cast<int>(f.size()) + 1;
        if (plan.field_tokens.empty()) plan.fixed_len += 1;  // bare [SEP] keeps layout uniform

        plan.cell_tokens.resize(static_cast<size_t>(plan.rows_kept));
        for (int k = 0; k < plan.rows_kept; ++k) {
            plan.cell_tokens[static_cast<size_t>(k)].resize(static_cast<size_t>(plan.cols_kept));
            for (int j = 0; j < plan.cols_kept; ++j) {
                std::vector<std::string> toks = tokenize(t.headers[static_cast<size_t>(j)]);
                detail::cap_tokens(toks, header_cap);
                toks.push_back(column_type_word(t.col_types[static_cast<size_t>(j)]));
                std::vector<std::string> vtoks =
                    tokenize(t.cells[static_cast<size_t>(k)][static_cast<size_t>(j)]);
                detail::cap_tokens(vtoks, value_cap);
                toks.insert(toks.end(), vtoks.begin(), vtoks.end());
                plan.cell_tokens[static_cast<size_t>(k)][static_cast<size_t>(j)] = vocab.ids(toks);
            }
        }

        auto column_view_len = [&plan](int col) {
            int len = plan.fixed_len;
            for (int k = 0; k < plan.rows_kept; ++k)
                len += static_cast<int>(plan.cell_tokens[static_cast<size_t>(k)][static_cast<size_t>(col)].size()) + 1;
            return len;
        };
        auto row_view_len = [&plan](int row) {
            int len = plan.fixed_len;
            for (int j = 0; j < plan.cols_kept; ++j)
                len += static_cast<int>(plan.cell_tokens[static_cast<size_t>(row)][static_cast<size_t>(j)].size()) + 1;
            return len;
        };
        auto longest_column_view = [&] {
            int mx = 0;
            for (int j = 0; j < plan.cols_kept; ++j) mx = std::max(mx, column_view_len(j));
            return mx;
        };
        auto longest_row_view = [&] {
            int mx = 0;
            for (int k = 0; k < plan.rows_kept; ++k) mx = std::max(mx, row_view_len(k));
            return mx;
        };

        // drop trailing data rows until every column view fits, then trailing
        // columns until every row view fits; cells are only dropped whole
        while (plan.rows_kept > 1 && longest_column_view() > cfg.max_seq_len) {
            plan.rows_kept -= 1;
            plan.cell_tokens.pop_back();
        }
        while (plan.cols_kept > 1 && longest_row_view() > cfg.max_seq_len) {
            plan.cols_kept -= 1;
            for (auto& row : plan.cell_tokens) row.pop_back();
        }
        if (longest_column_view() <= cfg.max_seq_len && longest_row_view() <= cfg.max_seq_len)
            return plan;

        // pathological single cells or metadata; tighten caps and retry
        if (attempt >= 8)
            throw ConfigError("table " + t.id + " cannot fit max_seq_len " +
                              std::to_string(cfg.max_seq_len));
        field_cap = std::max(1, field_cap / 2);
        header_cap = std::max(1, header_cap / 2);
        value_cap = std::max(1, value_cap / 2);
    }
}

// One structure- and context-aware sequence:
//   [CLS] f_1 [SEP] ... f_p [SEP] cell [SEP] cell [SEP] ...
// For a column view the cells run down column `index`; for a row view they
// run across data row `index`. Indices refer to the kept grid.
inline LinearizedSequence build_context_sequence(const TruncationPlan& plan, ViewAxis axis,
                                                 int index) {
    const int n_cells = axis == ViewAxis::Column ? plan.rows_kept : plan.cols_kept;
    const int limit = axis == ViewAxis::Column ? plan.cols_kept : plan.rows_kept;
    if (index < 0 || index >= limit)
        throw UsageError("build_context_sequence: view index out of range");

    LinearizedSequence seq;
    seq.view = axis;
    seq.index = index;
    auto push_span = [&seq](SpanKind kind, int count, int row = -1, int col = -1) {
        const int start = seq.length() - count;
        seq.spans.push_back({start, seq.length(), kind, row, col});
    };

    seq.token_ids.push_back(Vocabulary::cls_id);
    push_span(SpanKind::Cls, 1);
    for (const auto& field : plan.field_tokens) {
        seq.token_ids.insert(seq.token_ids.end(), field.begin(), field.end());
        push_span(SpanKind::TextField, static_cast<int>(field.size()));
        seq.token_ids.push_back(Vocabulary::sep_id);
        push_span(SpanKind::Sep, 1);
    }
    if (plan.field_tokens.empty()) {
        seq.token_ids.push_back(Vocabulary::sep_id);
        push_span(SpanKind::Sep, 1);
    }
    for (int c = 0; c < n_cells; ++c) {
        const int r = axis == ViewAxis::Column ? c : index;
        const int j = axis == ViewAxis::Column ? index : c;
        const std::vector<int>& toks = plan.cell_tokens[static_cast<size_t>(r)][static_cast<size_t>(j)];
        seq.token_ids.insert(seq.token_ids.end(), toks.begin(), toks.end());
        push_span(SpanKind::Cell, static_cast<int>(toks.size()), r, j);
        seq.token_ids.push_back(Vocabulary::sep_id);
        push_span(SpanKind::Sep, 1);
    }
    if (seq.token_ids.empty()) throw UsageError("build_context_sequence: empty sequence");
    return seq;
}

inline LinearizedSequence build_context_sequence(const Table& t, const Vocabulary& vocab,
                                                 const PipelineConfig& cfg, ViewAxis axis,
                                                 int index, const std::string* query = nullptr) {
    return build_context_sequence(plan_truncation(t, vocab, cfg, query), axis, index);
}

// ---- similarity pairs -------------------------------------------------------

struct TablePair {
    std::string a;
    std::string b;
    int label = 0;  // 1 similar, 0 dissimilar
};

// Derives labeled table pairs from graded qrels: per query, every unordered
// pair of relevant tables (grade >= 1) is similar, and every
// (irrelevant, relevant) pair is dissimilar. Pairs are canonicalized with
// a < b, deduplicated across queries, and a conflict keeps label 1.
// When every query is itself a table and grades are binary, judgments are
// read directly as labeled pairs instead.
inline std::vector<TablePair> similarity_pairs_from_qrels(const Corpus& corpus) {
    bool direct = !corpus.queries.empty();
    for (const Query& q : corpus.queries)
        if (!q.is_table()) direct = false;
    if (direct)
        for (const Judgment& j : corpus.judgments)
            if (j.grade > 1) direct = false;

    std::map<std::pair<std::string, std::string>, int> labeled;
    auto note = [&labeled](const std::string& x, const std::string& y, int label) {
        if (x == y) return;
        auto key = x < y ? std::make_pair(x, y) : std::make_pair(y, x);
        auto [it, inserted] = labeled.emplace(key, label);
        if (!inserted && label == 1) it->second = 1;
    };

    if (direct) {
        for (const Judgment& j : corpus.judgments)
            note(corpus.query(j.query_id).table_id, j.table_id, j.grade > 0 ? 1 : 0);
    } else {
        std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> by_query;
        for (const Judgment& j : corpus.judgments) {
            auto& [relevant, irrelevant] = by_query[j.query_id];
            (j.grade >= 1 ? relevant : irrelevant).push_back(j.table_id);
        }
        for (const auto& [qid, sets] : by_query) {
            const auto& [relevant, irrelevant] = sets;
            for (size_t i = 0; i < relevant.size(); ++i)
                for (size_t j = i + 1; j < relevant.size(); ++j) note(relevant[i], relevant[j], 1);
            for (const std::string& ir : irrelevant)
                for (const std::string& re : relevant) note(ir, re, 0);
        }
    }

    std::vector<TablePair> out;
    out.reserve(labeled.size());
    for (const auto& [key, label] : labeled) out.push_back({key.first, key.second, label});
    return out;
}

}  // namespace tabmatch
