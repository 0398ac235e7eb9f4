#pragma once

// Synthetic fixture generators. Tables are built from topic-scoped token
// pools (every token carries its topic index, so distinct topics share no
// vocabulary): similar tables come from one topic and share headers and cell
// vocabulary, dissimilar tables come from different topics, and keyword
// queries sample tokens from their target table's metadata and headers.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "tabmatch/linearize.hpp"
#include "tabmatch/table.hpp"

namespace tabmatch {

namespace synth {

inline const std::vector<std::string>& word_bank() {
    static const std::vector<std::string> bank = {
        "amber",  "basil",  "cedar",  "delta",  "ember",  "fjord",  "grove",  "harbor",
        "ivory",  "juniper", "krill",  "lagoon", "meadow", "nectar", "onyx",   "prairie",
        "quartz", "reef",   "saffron", "tundra", "umber",  "vortex", "willow", "zephyr",
        "anchor", "beacon", "canyon", "dune",   "eddy",   "flint",  "geyser", "heath",
        "islet",  "jetty",  "knoll",  "ledge",  "mesa",   "nook",   "oasis",  "pm"};
    return bank;
}

inline std::string topic_word(int topic, int i) {
    const auto& bank = word_bank();
    return bank[static_cast<size_t>(i) % bank.size()] + std::to_string(topic);
}

// headers draw from words [0, 8), cell values from [8, 14), metadata from [28, 38)
inline std::string topic_header(int topic, int i) { return topic_word(topic, i % 8); }
inline std::string topic_value(int topic, Rng& rng) {
    return topic_word(topic, 8 + rng.uniform_int(6));
}
inline std::string topic_meta(int topic, int i) { return topic_word(topic, 28 + (i % 10)); }

// fixed_caption ties the caption to the topic alone and keeps cells purely
// in the topic vocabulary; otherwise the caption mixes topic words sampled
// per table and the last column holds topic-banded numbers
inline Table make_topic_table(const std::string& id, int topic, int rows, int cols, Rng& rng,
                              bool fixed_caption = false) {
    Table t;
    t.id = id;
    for (int c = 0; c < cols; ++c) t.headers.push_back(topic_header(topic, c));
    for (int r = 0; r < rows; ++r) {
        std::vector<std::string> row;
        for (int c = 0; c < cols; ++c) {
            if (!fixed_caption && c == cols - 1)
                row.push_back(std::to_string(topic * 1000 + 100 + rng.uniform_int(100)));
            else
                row.push_back(topic_value(topic, rng));
        }
        t.cells.push_back(std::move(row));
    }
    std::string caption;
    const int caption_len = fixed_caption ? 5 : 3;
    for (int i = 0; i < caption_len; ++i) {
        const int pick = fixed_caption ? i : rng.uniform_int(10);
        caption += (i ? " " : "") + topic_meta(topic, pick);
    }
    t.metadata.emplace_back("caption", caption);
    if (!fixed_caption)
        t.metadata.emplace_back("page_title",
                                topic_meta(topic, rng.uniform_int(10)) + " " + id + "mark");
    t.infer_types();
    t.validate();
    return t;
}

}  // namespace synth

struct SimilaritySpec {
    int pairs = 400;
    int positives = 200;
    int topics = 10;
    int rows = 2;
    int cols = 3;
};

// Labeled table pairs drawn from per-topic table pools (one query-by-table
// judgment with a binary grade per pair). Tables of one topic share their
// leading headers and a topic vocabulary, so same-topic pairs are similar;
// cross-topic pairs share no tokens at all. Tables recur across pairs the
// way they do in real similarity corpora: folds hold out pairs, not tables.
inline Corpus gen_similarity_corpus(const SimilaritySpec& spec, std::uint64_t seed) {
    if (spec.positives > spec.pairs) throw ConfigError("positives exceed pair count");
    if (spec.topics < 2) throw ConfigError("need at least two topics");
    Rng rng(mix_seed(seed, 0x51));
    Corpus corpus;

    int per_topic = 2;
    while (spec.topics * (per_topic * (per_topic - 1) / 2) < spec.positives) ++per_topic;
    std::vector<std::vector<std::string>> topic_tables(static_cast<size_t>(spec.topics));
    for (int t = 0; t < spec.topics; ++t)
        for (int k = 0; k < per_topic; ++k) {
            const std::string id = "t" + std::to_string(t) + "x" + std::to_string(k);
            corpus.tables.push_back(
                synth::make_topic_table(id, t, spec.rows, spec.cols, rng, /*fixed_caption=*/true));
            topic_tables[static_cast<size_t>(t)].push_back(id);
        }

    // all same-topic pairs, shuffled; the first `positives` become labels 1
    std::vector<std::pair<std::string, std::string>> candidates;
    for (int t = 0; t < spec.topics; ++t)
        for (int i = 0; i < per_topic; ++i)
            for (int j = i + 1; j < per_topic; ++j)
                candidates.emplace_back(topic_tables[static_cast<size_t>(t)][static_cast<size_t>(i)],
                                        topic_tables[static_cast<size_t>(t)][static_cast<size_t>(j)]);
    for (int i = static_cast<int>(candidates.size()) - 1; i > 0; --i)
        std::swap(candidates[static_cast<size_t>(i)],
                  candidates[static_cast<size_t>(rng.uniform_int(i + 1))]);

    struct Labeled {
        std::string a, b;
        int label;
    };
    std::vector<Labeled> labeled;
    for (int p = 0; p < spec.positives; ++p)
        labeled.push_back({candidates[static_cast<size_t>(p)].first,
                           candidates[static_cast<size_t>(p)].second, 1});
    std::set<std::pair<std::string, std::string>> used;
    while (static_cast<int>(labeled.size()) < spec.pairs) {
        const int ta = rng.uniform_int(spec.topics);
        const int tb = (ta + 1 + rng.uniform_int(spec.topics - 1)) % spec.topics;
        const std::string& a =
            topic_tables[static_cast<size_t>(ta)][static_cast<size_t>(rng.uniform_int(per_topic))];
        const std::string& b =
            topic_tables[static_cast<size_t>(tb)][static_cast<size_t>(rng.uniform_int(per_topic))];
        auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
        if (!used.insert(key).second) continue;
        labeled.push_back({a, b, 0});
    }

    for (size_t p = 0; p < labeled.size(); ++p) {
        Query q;
        q.id = "q" + std::to_string(p);
        q.table_id = labeled[p].a;
        corpus.queries.push_back(std::move(q));
        corpus.judgments.push_back({"q" + std::to_string(p), labeled[p].b, labeled[p].label});
    }
    corpus.rebuild_indexes();
    corpus.validate_references();
    return corpus;
}

struct KeywordSpec {
    int tables = 200;
    int queries = 50;
    int judged_per_query = 12;
    int topics = 10;
    int rows = 3;
    int cols = 3;
    int query_tokens = 5;
};

// Queries sample tokens from their target table's metadata and headers; the
// target is judged grade 2 and the remaining judged tables are off-topic
// grade 0, so ranking quality hinges on learned topic matching.
inline Corpus gen_keyword_corpus(const KeywordSpec& spec, std::uint64_t seed) {
    if (spec.tables < spec.topics * 2) throw ConfigError("need at least two tables per topic");
    Rng rng(mix_seed(seed, 0x52));
    Corpus corpus;
    const int per_topic = spec.tables / spec.topics;
    for (int i = 0; i < spec.tables; ++i) {
        const int topic = std::min(i / per_topic, spec.topics - 1);
        corpus.tables.push_back(
            synth::make_topic_table("t" + std::to_string(i), topic, spec.rows, spec.cols, rng));
    }
    for (int qi = 0; qi < spec.queries; ++qi) {
        const int target = rng.uniform_int(spec.tables);
        const Table& t = corpus.tables[static_cast<size_t>(target)];
        std::vector<std::string> pool;
        for (const auto& [name, text] : t.metadata)
            for (const std::string& tok : tokenize(text)) pool.push_back(tok);
        for (const std::string& h : t.headers)
            for (const std::string& tok : tokenize(h)) pool.push_back(tok);
        std::string text;
        for (int w = 0; w < spec.query_tokens; ++w) {
            if (!text.empty()) text += " ";
            text += pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
        }
        Query q;
        q.id = "q" + std::to_string(qi);
        q.text = text;
        corpus.queries.push_back(std::move(q));
        corpus.judgments.push_back({"q" + std::to_string(qi), t.id, 2});
        const int target_topic = std::min(target / per_topic, spec.topics - 1);
        std::vector<char> used(static_cast<size_t>(spec.tables), 0);
        used[static_cast<size_t>(target)] = 1;
        int added = 0;
        while (added < spec.judged_per_query - 1) {
            const int other = rng.uniform_int(spec.tables);
            const int other_topic = std::min(other / per_topic, spec.topics - 1);
            if (used[static_cast<size_t>(other)] || other_topic == target_topic) continue;
            used[static_cast<size_t>(other)] = 1;
            corpus.judgments.push_back({"q" + std::to_string(qi),
                                        corpus.tables[static_cast<size_t>(other)].id, 0});
            ++added;
        }
    }
    corpus.rebuild_indexes();
    corpus.validate_references();
    return corpus;
}

struct ContentSpec {
    int tables = 120;
    int queries = 30;
    int topics = 8;
    int rows = 3;
    int cols = 3;
};

// Query-by-table with graded qrels: same-topic tables are relevant (grade 2
// or 1), off-topic tables are irrelevant.
inline Corpus gen_content_corpus(const ContentSpec& spec, std::uint64_t seed) {
    if (spec.tables < spec.topics * 6) throw ConfigError("need at least six tables per topic");
    Rng rng(mix_seed(seed, 0x53));
    Corpus corpus;
    const int per_topic = spec.tables / spec.topics;
    for (int i = 0; i < spec.tables; ++i) {
        const int topic = std::min(i / per_topic, spec.topics - 1);
        corpus.tables.push_back(
            synth::make_topic_table("t" + std::to_string(i), topic, spec.rows, spec.cols, rng));
    }
    auto topic_of = [&](int idx) { return std::min(idx / per_topic, spec.topics - 1); };
    for (int qi = 0; qi < spec.queries; ++qi) {
        const int target = rng.uniform_int(spec.tables);
        Query q;
        q.id = "q" + std::to_string(qi);
        q.table_id = corpus.tables[static_cast<size_t>(target)].id;
        corpus.queries.push_back(std::move(q));
        std::vector<char> used(static_cast<size_t>(spec.tables), 0);
        used[static_cast<size_t>(target)] = 1;
        auto judge = [&](bool same_topic, int grade, int count) {
            int added = 0;
            while (added < count) {
                const int other = rng.uniform_int(spec.tables);
                if (used[static_cast<size_t>(other)]) continue;
                if ((topic_of(other) == topic_of(target)) != same_topic) continue;
                used[static_cast<size_t>(other)] = 1;
                corpus.judgments.push_back({"q" + std::to_string(qi),
                                            corpus.tables[static_cast<size_t>(other)].id, grade});
                ++added;
            }
        };
        judge(true, 2, 2);
        judge(true, 1, 2);
        judge(false, 0, 8);
    }
    corpus.rebuild_indexes();
    corpus.validate_references();
    return corpus;
}

// The worked-example table: first column "player" (text), a "team" column,
// and a numeric third column.
inline Table fig2_table() {
    Table t;
    t.id = "fig2";
    t.headers = {"player", "team", "goals"};
    t.cells = {{"Ronaldo", "Manchester United", "84"}, {"Messi", "Barcelona", "91"}};
    t.metadata.emplace_back("caption", "List of goalscorers");
    t.metadata.emplace_back("page_title", "Football records");
    t.infer_types();
    t.validate();
    return t;
}

inline Corpus fig2_corpus() {
    Corpus corpus;
    corpus.tables.push_back(fig2_table());
    corpus.rebuild_indexes();
    return corpus;
}

// Writes tables.jsonl / queries.jsonl / qrels.tsv in the loader formats.
inline void write_corpus(const Corpus& corpus, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "tables.jsonl");
        if (!out) throw ParseError("cannot write tables.jsonl under " + out_dir);
        for (const Table& t : corpus.tables) out << table_to_json(t).dump() << "\n";
    }
    if (!corpus.queries.empty()) {
        std::ofstream out(fs::path(out_dir) / "queries.jsonl");
        for (const Query& q : corpus.queries) {
            json j;
            j["id"] = q.id;
            if (q.is_table())
                j["table_id"] = q.table_id;
            else
                j["text"] = q.text;
            out << j.dump() << "\n";
        }
    }
    if (!corpus.judgments.empty()) {
        std::ofstream out(fs::path(out_dir) / "qrels.tsv");
        for (const Judgment& j : corpus.judgments)
            out << j.query_id << "\t" << j.table_id << "\t" << j.grade << "\n";
    }
}

}  // namespace tabmatch
