#pragma once

// Corpus model: tables (rectangular cell grid + typed headers + ordered
// metadata fields), queries (keyword text or query-by-table), and graded
// relevance judgments. Loaded from JSONL / TSV files.

#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tabmatch/tensor.hpp"

namespace tabmatch {

using nlohmann::json;

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};
struct ReferenceError : std::runtime_error {
    explicit ReferenceError(const std::string& msg)
        : std::runtime_error("reference error: " + msg) {}
};

enum class ColumnType { Real, Text };

inline const char* column_type_word(ColumnType t) {
    return t == ColumnType::Real ? "real" : "text";
}

// A column is `real` when at least half of its non-empty cells parse as
// numbers (optional sign, one decimal point, thousands separators allowed);
// an all-empty column is `text`. Ties go to `real`.
inline bool cell_is_numeric(const std::string& cell) {
    size_t b = cell.find_first_not_of(" \t");
    if (b == std::string::npos) return false;
    size_t e = cell.find_last_not_of(" \t");
    bool digit_seen = false, dot_seen = false;
    for (size_t i = b; i <= e; ++i) {
        const char c = cell[i];
        if (c == '+' || c == '-') {
            if (i != b) return false;
        } else if (c == '.') {
            if (dot_seen) return false;
            dot_seen = true;
        } else if (c == ',') {
            if (!digit_seen) return false;  // separator only between digits
        } else if (c >= '0' && c <= '9') {
            digit_seen = true;
        } else {
            return false;
        }
    }
    return digit_seen;
}

inline ColumnType infer_column_type(const std::vector<std::string>& cells) {
    if (cells.empty()) throw UsageError("infer_column_type: empty column");
    int nonempty = 0, numeric = 0;
    for (const std::string& c : cells) {
        if (c.find_first_not_of(" \t") == std::string::npos) continue;
        ++nonempty;
        if (cell_is_numeric(c)) ++numeric;
    }
    if (nonempty == 0) return ColumnType::Text;
    return 2 * numeric >= nonempty ? ColumnType::Real : ColumnType::Text;
}

struct Table {
    std::string id;
    std::vector<std::string> headers;
    std::vector<ColumnType> col_types;
    std::vector<std::vector<std::string>> cells;  // data rows x columns
    // ordered, non-empty metadata fields as (name, text)
    std::vector<std::pair<std::string, std::string>> metadata;

    int n_cols() const { return static_cast<int>(headers.size()); }
    int n_rows() const { return static_cast<int>(cells.size()); }

    void validate() const {
        if (id.empty()) throw ParseError("table with empty id");
        if (headers.empty()) throw ParseError("table " + id + ": no columns");
        if (cells.empty()) throw ParseError("table " + id + ": no data rows");
        if (col_types.size() != headers.size())
            throw ParseError("table " + id + ": column type count mismatch");
        for (const auto& r : cells)
            if (r.size() != headers.size())
                throw ParseError("table " + id + ": ragged row");
    }

    void infer_types() {
        col_types.resize(headers.size());
        for (size_t c = 0; c < headers.size(); ++c) {
            std::vector<std::string> col;
            col.reserve(cells.size());
            for (const auto& r : cells) col.push_back(r[c]);
            col_types[c] = infer_column_type(col);
        }
    }
};

struct Query {
    std::string id;
    std::string text;      // keyword query
    std::string table_id;  // query-by-table
    bool is_table() const { return !table_id.empty(); }
};

struct Judgment {
    std::string query_id;
    std::string table_id;
    int grade = 0;
};

struct Corpus {
    std::vector<Table> tables;
    std::vector<Query> queries;
    std::vector<Judgment> judgments;
    std::unordered_map<std::string, int> table_index;
    std::unordered_map<std::string, int> query_index;

    const Table& table(const std::string& id) const {
        auto it = table_index.find(id);
        if (it == table_index.end()) throw ReferenceError("unknown table id: " + id);
        return tables[static_cast<size_t>(it->second)];
    }
    const Query& query(const std::string& id) const {
        auto it = query_index.find(id);
        if (it == query_index.end()) throw ReferenceError("unknown query id: " + id);
        return queries[static_cast<size_t>(it->second)];
    }

    void rebuild_indexes() {
        table_index.clear();
        query_index.clear();
        for (size_t i = 0; i < tables.size(); ++i) {
            if (!table_index.emplace(tables[i].id, static_cast<int>(i)).second)
                throw ParseError("duplicate table id: " + tables[i].id);
        }
        for (size_t i = 0; i < queries.size(); ++i) {
            if (!query_index.emplace(queries[i].id, static_cast<int>(i)).second)
                throw ParseError("duplicate query id: " + queries[i].id);
        }
    }

    // judgments must reference known queries and tables; query-by-table
    // queries must reference known tables
    void validate_references() const {
        for (const Query& q : queries)
            if (q.is_table() && !table_index.count(q.table_id))
                throw ReferenceError("query " + q.id + " references unknown table " + q.table_id);
        for (const Judgment& j : judgments) {
            if (!query_index.count(j.query_id))
                throw ReferenceError("qrel references unknown query id: " + j.query_id);
            if (!table_index.count(j.table_id))
                throw ReferenceError("qrel references unknown table id: " + j.table_id);
            if (j.grade < 0 || j.grade > 2)
                throw ParseError("qrel grade out of range for query " + j.query_id);
        }
    }
};

// metadata fields recognized in table JSON, in emission order
inline const std::vector<std::string>& metadata_field_order() {
    static const std::vector<std::string> order = {"caption", "page_title", "section_title"};
    return order;
}

inline Table table_from_json(const json& j, const std::string& where) {
    Table t;
    try {
        t.id = j.at("id").get<std::string>();
        t.headers = j.at("headers").get<std::vector<std::string>>();
        for (const auto& row : j.at("rows")) t.cells.push_back(row.get<std::vector<std::string>>());
        if (j.contains("metadata")) {
            const json& m = j["metadata"];
            for (const std::string& field : metadata_field_order()) {
                if (m.contains(field)) {
                    std::string text = m[field].get<std::string>();
                    if (!text.empty()) t.metadata.emplace_back(field, std::move(text));
                }
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(where + ": " + e.what());
    }
    t.infer_types();
    t.validate();
    return t;
}

inline json table_to_json(const Table& t) {
    json j;
    j["id"] = t.id;
    j["headers"] = t.headers;
    j["rows"] = t.cells;
    json m = json::object();
    for (const auto& [name, text] : t.metadata) m[name] = text;
    j["metadata"] = m;
    return j;
}

inline std::vector<Table> parse_tables_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open tables file: " + path);
    std::vector<Table> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(table_from_json(j, path + ":" + std::to_string(lineno)));
    }
    return out;
}

inline std::vector<Query> parse_queries_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open queries file: " + path);
    std::vector<Query> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Query q;
        try {
            json j = json::parse(line);
            q.id = j.at("id").get<std::string>();
            if (j.contains("table_id")) q.table_id = j["table_id"].get<std::string>();
            if (j.contains("text")) q.text = j["text"].get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (q.text.empty() && q.table_id.empty())
            throw ParseError(path + ":" + std::to_string(lineno) + ": query needs text or table_id");
        out.push_back(std::move(q));
    }
    return out;
}

// TSV: query_id <TAB> table_id <TAB> grade
inline std::vector<Judgment> parse_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open qrels file: " + path);
    std::vector<Judgment> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
        Judgment j;
        j.query_id = line.substr(0, t1);
        j.table_id = line.substr(t1 + 1, t2 - t1 - 1);
        try {
            j.grade = std::stoi(line.substr(t2 + 1));
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad grade");
        }
        out.push_back(std::move(j));
    }
    return out;
}

inline Corpus parse_corpus(const std::string& tables_path, const std::string& queries_path = "",
                           const std::string& qrels_path = "") {
    Corpus c;
    c.tables = parse_tables_jsonl(tables_path);
    if (!queries_path.empty()) c.queries = parse_queries_jsonl(queries_path);
    if (!qrels_path.empty()) c.judgments = parse_qrels(qrels_path);
    c.rebuild_indexes();
    c.validate_references();
    return c;
}

}  // namespace tabmatch
