#pragma once

// miniBERT cross-matching and the task heads. miniBERT is a single
// transformer layer with 4 attention heads that reads embedding-level
// sequences built from learned [REP]/[SEP] vectors and the fine-grained
// features of one or two tables, with segment and position embeddings summed
// in. Its position-0 hidden state aggregates the cross-matching signal.
//
// Table pair:   phi = F_rr ++ F_cc ++ miniBERT([REP]_r) ++ miniBERT([REP]_c)
// Query-table:  phi = miniBERT([REP]_r) ++ miniBERT([REP]_c) ++ [CLS]_r ++ [CLS]_c
// where F_xy is the elementwise product of the matching [CLS] features.
// A linear layer maps phi (4d) to the task score; the similarity task uses a
// two-logit head with softmax and an inclusive 0.5 threshold.

#include <string>
#include <vector>

#include "tabmatch/struct_attention.hpp"

namespace tabmatch {

struct MiniBertConfig {
    int d = 64;
    int heads = 4;
    int layers = 1;
    int ffn = 128;
    int max_pos = 64;
    double ln_eps = 1e-12;

    TransformerLayerConfig layer_config() const { return {d, heads, ffn, 0.0, ln_eps}; }

    json to_json() const {
        return json{{"d", d}, {"heads", heads}, {"layers", layers}, {"ffn", ffn},
                    {"max_pos", max_pos}};
    }
    static MiniBertConfig from_json(const json& j) {
        MiniBertConfig c;
        c.d = j.value("d", c.d);
        c.heads = j.value("heads", c.heads);
        c.layers = j.value("layers", c.layers);
        c.ffn = j.value("ffn", c.ffn);
        c.max_pos = j.value("max_pos", c.max_pos);
        return c;
    }
};

enum class RepKind { Row, Column };

template <typename S>
struct PairSequence {
    Tensor<S> vectors;  // [(2 + n_a + n_b) x d] or [(2 + n_a) x d] single-operand
    std::vector<std::string> labels;
    int n_a = 0;
    int n_b = 0;  // 0 for the single-operand form

    int length() const { return 2 + n_a + n_b; }
};

template <typename S>
void init_minibert(ParamStore<S>& store, const MiniBertConfig& cfg, Rng& rng) {
    store.create("mb.rep_r", {1, cfg.d}, Init::TruncNormal, rng);
    store.create("mb.rep_c", {1, cfg.d}, Init::TruncNormal, rng);
    store.create("mb.sep", {1, cfg.d}, Init::TruncNormal, rng);
    store.create("mb.seg_emb", {2, cfg.d}, Init::TruncNormal, rng);
    store.create("mb.pos_emb", {cfg.max_pos, cfg.d}, Init::TruncNormal, rng);
    for (int l = 0; l < cfg.layers; ++l)
        init_transformer_layer(store, "mb.l" + std::to_string(l), cfg.layer_config(), rng);
}

// [REP] ++ A ++ [SEP] ++ B (B optional). Position 0 is the [REP] slot and the
// lone [SEP] sits at 1 + n_a. Segment A covers [REP], the first operand and
// [SEP]; segment B covers the second operand. Content, segment and position
// embeddings are summed.
template <typename S>
PairSequence<S> build_pair_sequence(Tape<S>& tape, ParamStore<S>& store,
                                    const MiniBertConfig& cfg, RepKind rep, const Tensor<S>& a,
                                    const Tensor<S>* b = nullptr) {
    if (a.rank() != 2 || a.dim(1) != cfg.d) throw ShapeError("build_pair_sequence: operand A");
    if (b && (b->rank() != 2 || b->dim(1) != cfg.d))
        throw ShapeError("build_pair_sequence: operand B");
    PairSequence<S> seq;
    seq.n_a = a.dim(0);
    seq.n_b = b ? b->dim(0) : 0;
    const int n = b ? 2 + seq.n_a + seq.n_b : 2 + seq.n_a;
    if (n > cfg.max_pos)
        throw UsageError("build_pair_sequence: length " + std::to_string(n) +
                         " exceeds max_pos " + std::to_string(cfg.max_pos));

    Tensor<S> rep_vec = store.use(tape, rep == RepKind::Row ? "mb.rep_r" : "mb.rep_c");
    Tensor<S> sep_vec = store.use(tape, "mb.sep");
    std::vector<Tensor<S>> parts = {rep_vec, a, sep_vec};
    if (b) parts.push_back(*b);
    Tensor<S> content = concat0(parts);

    std::vector<int> seg_ids(static_cast<size_t>(n), 0);
    for (int i = 2 + seq.n_a; i < n; ++i) seg_ids[static_cast<size_t>(i)] = 1;
    std::vector<int> pos_ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pos_ids[static_cast<size_t>(i)] = i;
    seq.vectors = add(add(content, gather_rows(store.use(tape, "mb.seg_emb"), std::move(seg_ids))),
                      gather_rows(store.use(tape, "mb.pos_emb"), std::move(pos_ids)));

    seq.labels.push_back(rep == RepKind::Row ? "[REP]_r" : "[REP]_c");
    for (int i = 1; i <= seq.n_a; ++i) seq.labels.push_back("A" + std::to_string(i));
    seq.labels.push_back("[SEP]");
    for (int i = 1; i <= seq.n_b; ++i) seq.labels.push_back("B" + std::to_string(i));
    return seq;
}

// Runs the transformer stack and returns the position-0 hidden state [d].
template <typename S>
Tensor<S> minibert_forward(Tape<S>& tape, ParamStore<S>& store, const MiniBertConfig& cfg,
                           const PairSequence<S>& seq, AttentionDump* dump = nullptr) {
    Tensor<S> h = seq.vectors;
    const TransformerLayerConfig layer_cfg = cfg.layer_config();
    for (int l = 0; l < cfg.layers; ++l)
        h = transformer_layer(tape, store, "mb.l" + std::to_string(l), h, layer_cfg,
                              l == 0 ? dump : nullptr);
    return reshape(row(h, 0), {cfg.d});
}

// Coarse interaction: elementwise product of two [CLS] features.
template <typename S>
Tensor<S> coarse_interactions(const Tensor<S>& cls_x, const Tensor<S>& cls_y) {
    if (cls_x.shape() != cls_y.shape())
        throw ShapeError("coarse_interactions: dimension mismatch");
    return mul(cls_x, cls_y);
}

struct ModelConfig {
    EncoderConfig encoder;
    StructConfig structure;
    MiniBertConfig minibert;
    PipelineConfig pipeline;

    void validate() const {
        if (minibert.d != encoder.d)
            throw ConfigError("miniBERT hidden size must match encoder hidden size");
        // a full view can reach max(rows, cols) operand vectors per side
        const int worst = 2 + pipeline.max_rows + std::max(pipeline.max_rows, pipeline.max_cols);
        if (minibert.max_pos < worst)
            throw ConfigError("miniBERT max_pos " + std::to_string(minibert.max_pos) +
                              " too small for row/col caps (needs " + std::to_string(worst) + ")");
    }

    json to_json() const {
        return json{{"encoder", encoder.to_json()},
                    {"structure", structure.to_json()},
                    {"minibert", minibert.to_json()},
                    {"pipeline", pipeline.to_json()}};
    }
    static ModelConfig from_json(const json& j) {
        ModelConfig c;
        c.encoder = EncoderConfig::from_json(j.at("encoder"));
        c.structure = StructConfig::from_json(j.at("structure"));
        c.minibert = MiniBertConfig::from_json(j.at("minibert"));
        c.pipeline = PipelineConfig::from_json(j.at("pipeline"));
        return c;
    }
};

struct PairClassification {
    bool similar = false;
    double p_similar = 0.0;
    double p_dissimilar = 0.0;
};

struct MiniBertAttention {
    std::vector<std::string> labels;
    AttentionDump dump;  // one row-stochastic matrix per head

    json to_json() const {
        json heads = json::array();
        for (const auto& w : dump.heads) {
            json mat = json::array();
            for (int i = 0; i < dump.n; ++i) {
                json row = json::array();
                for (int j = 0; j < dump.n; ++j)
                    row.push_back(w[static_cast<size_t>(i) * dump.n + static_cast<size_t>(j)]);
                mat.push_back(std::move(row));
            }
            heads.push_back(std::move(mat));
        }
        return json{{"heads", std::move(heads)}, {"labels", labels}};
    }
};

// The full scorer: encoder + axis attention + miniBERT + per-task linear
// heads, owning the parameter store and the vocabulary.
template <typename S>
class MatchModel {
public:
    MatchModel(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed)
        : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
        cfg_.encoder.vocab_size = vocab_.size();
        cfg_.validate();
        Rng rng(seed);
        init_encoder(store_, "enc", cfg_.encoder, rng);
        init_struct_attention(store_, cfg_.structure, cfg_.encoder.layer_config(), rng);
        init_minibert(store_, cfg_.minibert, rng);
        const int phi = 4 * cfg_.encoder.d;
        init_linear(store_, "head.pair", phi, 1, rng);   // content retrieval score
        init_linear(store_, "head.sim", phi, 2, rng);    // similarity logits
        init_linear(store_, "head.kw", phi, 1, rng);     // keyword retrieval score
    }

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }

    StructFeatures<S> features(Tape<S>& tape, const Table& table,
                               const std::string* query = nullptr) {
        return struct_features(tape, store_, table, vocab_, cfg_.encoder, cfg_.structure,
                               cfg_.pipeline, query, dropout_rng_);
    }

    // phi(T_i, T_j) = F_rr ++ F_cc ++ miniBERT([REP]_r) ++ miniBERT([REP]_c), [1 x 4d]
    Tensor<S> pair_phi(Tape<S>& tape, const Table& a, const Table& b,
                       MiniBertAttention* row_attn = nullptr,
                       MiniBertAttention* col_attn = nullptr) {
        StructFeatures<S> fa = features(tape, a);
        StructFeatures<S> fb = features(tape, b);
        const int d = cfg_.encoder.d;
        Tensor<S> f_rr = coarse_interactions(fa.cls_row, fb.cls_row);
        Tensor<S> f_cc = coarse_interactions(fa.cls_col, fb.cls_col);
        PairSequence<S> m_rr = build_pair_sequence(tape, store_, cfg_.minibert, RepKind::Row,
                                                   fa.row_embeddings, &fb.row_embeddings);
        PairSequence<S> m_cc = build_pair_sequence(tape, store_, cfg_.minibert, RepKind::Column,
                                                   fa.col_embeddings, &fb.col_embeddings);
        if (row_attn) row_attn->labels = m_rr.labels;
        if (col_attn) col_attn->labels = m_cc.labels;
        Tensor<S> mb_r =
            minibert_forward(tape, store_, cfg_.minibert, m_rr, row_attn ? &row_attn->dump : nullptr);
        Tensor<S> mb_c =
            minibert_forward(tape, store_, cfg_.minibert, m_cc, col_attn ? &col_attn->dump : nullptr);
        return concat_cols(std::vector<Tensor<S>>{
            reshape(f_rr, {1, d}), reshape(f_cc, {1, d}), reshape(mb_r, {1, d}),
            reshape(mb_c, {1, d})});
    }

    // real-valued relevance score of a table pair (content-based retrieval)
    Tensor<S> score_table_pair(Tape<S>& tape, const Table& a, const Table& b) {
        return reshape(linear(tape, store_, "head.pair", pair_phi(tape, a, b)), {1});
    }

    // two-class logits of a table pair (similarity task)
    Tensor<S> pair_logits(Tape<S>& tape, const Table& a, const Table& b) {
        return linear(tape, store_, "head.sim", pair_phi(tape, a, b));
    }

    PairClassification classify_pair(const Table& a, const Table& b) {
        Tape<S> tape;
        Tensor<S> probs = softmax_last(pair_logits(tape, a, b));
        PairClassification out;
        out.p_dissimilar = static_cast<double>(probs.values()[0]);
        out.p_similar = static_cast<double>(probs.values()[1]);
        out.similar = out.p_similar >= 0.5;  // inclusive threshold
        return out;
    }

    // phi(q, T) = miniBERT([REP]_r) ++ miniBERT([REP]_c) ++ [CLS]_r ++ [CLS]_c,
    // with the query injected as the leading context field of every view
    Tensor<S> query_phi(Tape<S>& tape, const std::string& query, const Table& table,
                        MiniBertAttention* row_attn = nullptr,
                        MiniBertAttention* col_attn = nullptr) {
        if (query.empty()) throw UsageError("query_phi: empty query");
        StructFeatures<S> f = features(tape, table, &query);
        const int d = cfg_.encoder.d;
        PairSequence<S> m_rq =
            build_pair_sequence(tape, store_, cfg_.minibert, RepKind::Row, f.row_embeddings);
        PairSequence<S> m_cq =
            build_pair_sequence(tape, store_, cfg_.minibert, RepKind::Column, f.col_embeddings);
        if (row_attn) row_attn->labels = m_rq.labels;
        if (col_attn) col_attn->labels = m_cq.labels;
        Tensor<S> mb_r =
            minibert_forward(tape, store_, cfg_.minibert, m_rq, row_attn ? &row_attn->dump : nullptr);
        Tensor<S> mb_c =
            minibert_forward(tape, store_, cfg_.minibert, m_cq, col_attn ? &col_attn->dump : nullptr);
        return concat_cols(std::vector<Tensor<S>>{
            reshape(mb_r, {1, d}), reshape(mb_c, {1, d}), reshape(f.cls_row, {1, d}),
            reshape(f.cls_col, {1, d})});
    }

    Tensor<S> score_query_table(Tape<S>& tape, const std::string& query, const Table& table) {
        return reshape(linear(tape, store_, "head.kw", query_phi(tape, query, table)), {1});
    }

    // per-head attention matrices of the requested miniBERT path
    MiniBertAttention dump_pair_attention(const Table& a, const Table& b, RepKind path) {
        Tape<S> tape;
        MiniBertAttention row_attn, col_attn;
        pair_phi(tape, a, b, &row_attn, &col_attn);
        return path == RepKind::Row ? row_attn : col_attn;
    }

    MiniBertAttention dump_query_attention(const std::string& query, const Table& table,
                                           RepKind path) {
        Tape<S> tape;
        MiniBertAttention row_attn, col_attn;
        query_phi(tape, query, table, &row_attn, &col_attn);
        return path == RepKind::Row ? row_attn : col_attn;
    }

    void set_dropout_rng(Rng* rng) { dropout_rng_ = rng; }

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    ParamStore<S> store_;
    Rng* dropout_rng_ = nullptr;
};

}  // namespace tabmatch
