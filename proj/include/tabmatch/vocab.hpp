#pragma once

// Word-level tokenizer and corpus-derived vocabulary. Text is lowercased and
// split on anything that is not alphanumeric (bytes >= 0x80 are kept so UTF-8
// sequences survive intact). Special tokens are ids, never produced by text:
// a literal "[SEP]" in a cell tokenizes to the ordinary word "sep".

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tabmatch/table.hpp"

namespace tabmatch {

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        const bool word_char = std::isalnum(ch) != 0 || ch >= 0x80;
        if (word_char) {
            cur.push_back(static_cast<char>(ch < 0x80 ? std::tolower(ch) : ch));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int cls_id = 2;
    static constexpr int sep_id = 3;

    Vocabulary() {
        for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add_token(s);
    }

    int add_token(const std::string& tok) {
        auto [it, inserted] = token_to_id_.emplace(tok, static_cast<int>(id_to_token_.size()));
        if (inserted) id_to_token_.push_back(tok);
        return it->second;
    }

    int id(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? unk_id : it->second;
    }

    std::vector<int> ids(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const std::string& t : toks) out.push_back(id(t));
        return out;
    }

    const std::string& token(int id) const { return id_to_token_[static_cast<size_t>(id)]; }
    int size() const { return static_cast<int>(id_to_token_.size()); }

    json to_json() const {
        // specials are implied by construction; store only the learned tail
        return json{{"tokens", std::vector<std::string>(id_to_token_.begin() + 4,
                                                        id_to_token_.end())}};
    }

    static Vocabulary from_json(const json& j) {
        Vocabulary v;
        for (const auto& t : j.at("tokens")) v.add_token(t.get<std::string>());
        return v;
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// Counts tokens over everything the model can see (metadata, headers, type
// words, cell values, query texts) and keeps those with count >= min_freq,
// ordered by descending count then token for dense, deterministic ids.
inline Vocabulary build_vocab(const Corpus& corpus, int min_freq = 1) {
    std::unordered_map<std::string, int> counts;
    auto count_text = [&counts](const std::string& text) {
        for (std::string& t : tokenize(text)) ++counts[t];
    };
    for (const Table& t : corpus.tables) {
        for (const auto& [name, text] : t.metadata) count_text(text);
        for (int c = 0; c < t.n_cols(); ++c) {
            count_text(t.headers[static_cast<size_t>(c)]);
            ++counts[column_type_word(t.col_types[static_cast<size_t>(c)])];
        }
        for (const auto& row : t.cells)
            for (const std::string& cell : row) count_text(cell);
    }
    for (const Query& q : corpus.queries)
        if (!q.text.empty()) count_text(q.text);

    std::vector<std::pair<std::string, int>> kept;
    kept.reserve(counts.size());
    for (auto& [tok, n] : counts)
        if (n >= min_freq) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocabulary v;
    for (auto& [tok, n] : kept) v.add_token(tok);
    return v;
}

}  // namespace tabmatch
