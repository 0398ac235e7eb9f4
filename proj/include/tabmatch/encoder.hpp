#pragma once

// Sequence encoder and cell-wise pooling. Each context sequence goes through
// token (+ optional learned position) embeddings and L transformer layers;
// the last layer's states are then pooled so every cell span collapses to a
// single vector while [CLS], metadata tokens and [SEP]s pass through at
// token granularity.

#include <string>
#include <vector>

#include "tabmatch/linearize.hpp"
#include "tabmatch/nn.hpp"

namespace tabmatch {

struct EncoderConfig {
    int layers = 2;
    int d = 64;
    int heads = 4;
    int ffn = 128;
    int max_len = 256;
    int vocab_size = 0;  // filled from the vocabulary
    bool positions = true;
    double dropout = 0.0;
    double ln_eps = 1e-12;
    // token-embedding init spread as a multiple of the 0.02 projection
    // sigma; desk-scale training from scratch needs the token signal to
    // dominate the shared sequence scaffolding from step one
    double emb_scale = 10.0;

    TransformerLayerConfig layer_config() const { return {d, heads, ffn, dropout, ln_eps}; }

    json to_json() const {
        return json{{"layers", layers}, {"d", d},           {"heads", heads},
                    {"ffn", ffn},       {"max_len", max_len}, {"vocab_size", vocab_size},
                    {"positions", positions}, {"dropout", dropout}, {"emb_scale", emb_scale}};
    }
    static EncoderConfig from_json(const json& j) {
        EncoderConfig c;
        c.layers = j.value("layers", c.layers);
        c.d = j.value("d", c.d);
        c.heads = j.value("heads", c.heads);
        c.ffn = j.value("ffn", c.ffn);
        c.max_len = j.value("max_len", c.max_len);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.positions = j.value("positions", c.positions);
        c.dropout = j.value("dropout", c.dropout);
        c.emb_scale = j.value("emb_scale", c.emb_scale);
        return c;
    }
};

template <typename S>
void init_encoder(ParamStore<S>& store, const std::string& prefix, const EncoderConfig& cfg,
                  Rng& rng) {
    if (cfg.vocab_size <= 0) throw ConfigError("encoder vocab_size not set");
    if (cfg.d % cfg.heads != 0) throw ConfigError("encoder d not divisible by heads");
    store.create(prefix + ".tok_emb", {cfg.vocab_size, cfg.d}, Init::TruncNormal, rng,
                 0.02 * cfg.emb_scale);
    store.create(prefix + ".pos_emb", {cfg.max_len, cfg.d}, Init::TruncNormal, rng);
    for (int l = 0; l < cfg.layers; ++l)
        init_transformer_layer(store, prefix + ".l" + std::to_string(l), cfg.layer_config(), rng);
}

// Last-layer contextualized states for one sequence: [n x d].
template <typename S>
Tensor<S> encode_sequence(Tape<S>& tape, ParamStore<S>& store, const std::string& prefix,
                          const LinearizedSequence& seq, const EncoderConfig& cfg,
                          Rng* dropout_rng = nullptr) {
    const int n = seq.length();
    if (n < 1) throw UsageError("encode_sequence: empty sequence");
    if (n > cfg.max_len)
        throw UsageError("encode_sequence: length " + std::to_string(n) + " exceeds max_len " +
                         std::to_string(cfg.max_len) + " (sequence not truncated upstream)");
    Tensor<S> states = gather_rows(store.use(tape, prefix + ".tok_emb"), seq.token_ids);
    if (cfg.positions) {
        std::vector<int> pos(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
        states = add(states, gather_rows(store.use(tape, prefix + ".pos_emb"), std::move(pos)));
    }
    const TransformerLayerConfig layer_cfg = cfg.layer_config();
    for (int l = 0; l < cfg.layers; ++l)
        states = transformer_layer(tape, store, prefix + ".l" + std::to_string(l), states,
                                   layer_cfg, nullptr, dropout_rng);
    return states;
}

enum class SlotKind { Cls, Text, Sep, Cell };

struct PooledSlot {
    SlotKind kind = SlotKind::Cls;
    int row = -1;
    int col = -1;
};

// One encoded view: pooled vectors [P x d] plus the per-position layout.
// All views of one table along the same axis share the same layout.
template <typename S>
struct EncodedView {
    Tensor<S> vectors;
    std::vector<PooledSlot> layout;
    ViewAxis axis = ViewAxis::Column;
    int index = 0;

    int pooled_length() const { return static_cast<int>(layout.size()); }
};

inline std::vector<PooledSlot> pooled_layout(const LinearizedSequence& seq) {
    std::vector<PooledSlot> layout;
    for (const TokenSpan& span : seq.spans) {
        switch (span.kind) {
            case SpanKind::Cls: layout.push_back({SlotKind::Cls, -1, -1}); break;
            case SpanKind::Sep: layout.push_back({SlotKind::Sep, -1, -1}); break;
            case SpanKind::Cell: layout.push_back({SlotKind::Cell, span.row, span.col}); break;
            case SpanKind::TextField:
                for (int i = span.start; i < span.end; ++i) layout.push_back({SlotKind::Text, -1, -1});
                break;
        }
    }
    return layout;
}

// Cell-wise average pooling: the token states of each cell span are averaged
// into one vector; every other position passes through unchanged.
template <typename S>
EncodedView<S> cell_wise_pool(Tape<S>& tape, const Tensor<S>& states,
                              const LinearizedSequence& seq) {
    if (states.rank() != 2 || states.dim(0) != seq.length())
        throw ShapeError("cell_wise_pool: states do not cover the sequence");
    std::vector<std::pair<int, int>> groups;
    for (const TokenSpan& span : seq.spans) {
        if (span.start >= span.end) throw UsageError("cell_wise_pool: empty span");
        if (span.kind == SpanKind::Cell) {
            groups.emplace_back(span.start, span.end);
        } else {
            for (int i = span.start; i < span.end; ++i) groups.emplace_back(i, i + 1);
        }
    }
    EncodedView<S> view;
    view.vectors = pool_rows(states, std::move(groups));
    view.layout = pooled_layout(seq);
    view.axis = seq.view;
    view.index = seq.index;
    return view;
}

template <typename S>
struct TableViews {
    std::vector<EncodedView<S>> columns;  // one per kept column
    std::vector<EncodedView<S>> rows;     // one per kept data row
};

// Encodes every column and row view of a table (with the query injected as
// the leading context field when given). All views run through the
// transformer stack as one packed tensor with per-sequence attention
// blocks; row-local sublayers make this identical to encoding each
// sequence alone.
template <typename S>
TableViews<S> encode_table(Tape<S>& tape, ParamStore<S>& store, const std::string& prefix,
                           const Table& table, const Vocabulary& vocab, const EncoderConfig& cfg,
                           const PipelineConfig& pipeline, const std::string* query = nullptr,
                           Rng* dropout_rng = nullptr) {
    const TruncationPlan plan = plan_truncation(table, vocab, pipeline, query);
    std::vector<LinearizedSequence> seqs;
    seqs.reserve(static_cast<size_t>(plan.cols_kept + plan.rows_kept));
    for (int j = 0; j < plan.cols_kept; ++j)
        seqs.push_back(build_context_sequence(plan, ViewAxis::Column, j));
    for (int k = 0; k < plan.rows_kept; ++k)
        seqs.push_back(build_context_sequence(plan, ViewAxis::Row, k));

    std::vector<int> token_ids, pos_ids, blocks;
    for (const LinearizedSequence& seq : seqs) {
        const int n = seq.length();
        if (n > cfg.max_len)
            throw UsageError("encode_table: sequence exceeds max_len " +
                             std::to_string(cfg.max_len));
        token_ids.insert(token_ids.end(), seq.token_ids.begin(), seq.token_ids.end());
        for (int i = 0; i < n; ++i) pos_ids.push_back(i);
        blocks.push_back(n);
    }
    Tensor<S> states = gather_rows(store.use(tape, prefix + ".tok_emb"), std::move(token_ids));
    if (cfg.positions)
        states = add(states, gather_rows(store.use(tape, prefix + ".pos_emb"), std::move(pos_ids)));
    const TransformerLayerConfig layer_cfg = cfg.layer_config();
    for (int l = 0; l < cfg.layers; ++l)
        states = transformer_layer(tape, store, prefix + ".l" + std::to_string(l), states,
                                   layer_cfg, nullptr, dropout_rng, blocks);

    TableViews<S> out;
    out.columns.reserve(static_cast<size_t>(plan.cols_kept));
    out.rows.reserve(static_cast<size_t>(plan.rows_kept));
    int offset = 0;
    for (const LinearizedSequence& seq : seqs) {
        Tensor<S> slice = slice0(states, offset, offset + seq.length());
        offset += seq.length();
        EncodedView<S> view = cell_wise_pool(tape, slice, seq);
        (seq.view == ViewAxis::Column ? out.columns : out.rows).push_back(std::move(view));
    }
    return out;
}

}  // namespace tabmatch
