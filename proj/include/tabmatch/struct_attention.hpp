#pragma once

// Horizontal and vertical self-attention over aligned view positions, and
// the pooling into four structure- and context-aware features: fine-grained
// row embeddings E_r and column embeddings E_c, plus the row- and
// column-guided [CLS] summary vectors.
//
// Alignment transposes a view set: position p of every column view forms one
// group of l vectors (a cell group holds one whole table row), and position
// p of every row view forms one group of s-1 vectors (one whole column).
// Groups pass independently through a shared stack of transformer layers
// with no added positional encoding. All groups of a view set live in one
// stacked [(P*members) x d] tensor and attention is blocked per group, so
// the per-group computation is identical to running each group alone.

#include <string>
#include <vector>

#include "tabmatch/encoder.hpp"

namespace tabmatch {

template <typename S>
struct AlignmentGroups {
    Tensor<S> stacked;              // [(P*members) x d]; group p at rows [p*m, (p+1)*m)
    std::vector<PooledSlot> slots;  // group kind (and cell coordinate) per position
    int members = 0;                // l for column views, s-1 for row views

    int group_count() const { return static_cast<int>(slots.size()); }
    Tensor<S> group(int p) const {
        return slice0(stacked, p * members, (p + 1) * members);
    }
};

template <typename S>
AlignmentGroups<S> align(Tape<S>& tape, const std::vector<EncodedView<S>>& views) {
    if (views.empty()) throw UsageError("align: no views");
    const int pooled = views[0].pooled_length();
    for (const EncodedView<S>& v : views) {
        if (v.pooled_length() != pooled)
            throw ShapeError("align: ragged views violate the view-length invariant");
        for (int p = 0; p < pooled; ++p) {
            const PooledSlot& a = views[0].layout[static_cast<size_t>(p)];
            const PooledSlot& b = v.layout[static_cast<size_t>(p)];
            if (a.kind != b.kind)
                throw ShapeError("align: view layouts disagree at position " + std::to_string(p));
        }
    }
    AlignmentGroups<S> out;
    out.members = static_cast<int>(views.size());
    out.slots = views[0].layout;
    // cell groups are identified by the coordinate shared across members:
    // the row index for column views, the column index for row views
    for (size_t p = 0; p < out.slots.size(); ++p) {
        if (out.slots[p].kind != SlotKind::Cell) continue;
        if (views[0].axis == ViewAxis::Column)
            out.slots[p].col = -1;
        else
            out.slots[p].row = -1;
    }

    std::vector<Tensor<S>> parts;
    parts.reserve(views.size());
    for (const EncodedView<S>& v : views) parts.push_back(v.vectors);
    Tensor<S> all = views.size() == 1 ? views[0].vectors : concat0(parts);
    // transpose (view, position) into (position, view)
    std::vector<int> rows;
    rows.reserve(static_cast<size_t>(pooled) * views.size());
    for (int p = 0; p < pooled; ++p)
        for (size_t v = 0; v < views.size(); ++v)
            rows.push_back(static_cast<int>(v) * pooled + p);
    out.stacked = gather_rows(all, std::move(rows));
    return out;
}

template <typename S>
void init_axis_attention(ParamStore<S>& store, const std::string& prefix, int layers,
                         const TransformerLayerConfig& cfg, Rng& rng) {
    for (int l = 0; l < layers; ++l)
        init_transformer_layer(store, prefix + ".l" + std::to_string(l), cfg, rng);
}

// Shared transformer stack applied to every group independently (attention
// blocked at the group boundary); the last layer's output is kept.
template <typename S>
AlignmentGroups<S> attend_groups(Tape<S>& tape, ParamStore<S>& store, const std::string& prefix,
                                 const AlignmentGroups<S>& groups, int layers,
                                 const TransformerLayerConfig& cfg, Rng* dropout_rng = nullptr) {
    AlignmentGroups<S> out;
    out.slots = groups.slots;
    out.members = groups.members;
    const std::vector<int> blocks(groups.slots.size(), groups.members);
    Tensor<S> h = groups.stacked;
    for (int l = 0; l < layers; ++l)
        h = transformer_layer(tape, store, prefix + ".l" + std::to_string(l), h, cfg, nullptr,
                              dropout_rng, blocks);
    out.stacked = h;
    return out;
}

template <typename S>
AlignmentGroups<S> horizontal_attention(Tape<S>& tape, ParamStore<S>& store,
                                        const AlignmentGroups<S>& column_groups, int layers,
                                        const TransformerLayerConfig& cfg,
                                        Rng* dropout_rng = nullptr) {
    return attend_groups(tape, store, "hor", column_groups, layers, cfg, dropout_rng);
}

template <typename S>
AlignmentGroups<S> vertical_attention(Tape<S>& tape, ParamStore<S>& store,
                                      const AlignmentGroups<S>& row_groups, int layers,
                                      const TransformerLayerConfig& cfg,
                                      Rng* dropout_rng = nullptr) {
    return attend_groups(tape, store, "ver", row_groups, layers, cfg, dropout_rng);
}

template <typename S>
struct StructFeatures {
    Tensor<S> row_embeddings;  // E_r, [(s-1) x d]
    Tensor<S> col_embeddings;  // E_c, [l x d]
    Tensor<S> cls_row;         // row-guided [CLS], [d]
    Tensor<S> cls_col;         // column-guided [CLS], [d]
};

// Row embeddings average the members of each horizontal cell group (one per
// table row); the row-guided [CLS] averages the horizontal [CLS] group.
// Column embeddings and the column-guided [CLS] mirror this on the vertical
// side. Text and [SEP] groups contribute context through attention only.
template <typename S>
StructFeatures<S> pool_features(Tape<S>& tape, const AlignmentGroups<S>& horizontal,
                                const AlignmentGroups<S>& vertical) {
    auto pool_axis = [](const AlignmentGroups<S>& groups, Tensor<S>& fine, Tensor<S>& cls) {
        const int m = groups.members;
        const int d = groups.stacked.dim(1);
        std::vector<std::pair<int, int>> cell_ranges;
        int cls_pos = -1;
        for (int p = 0; p < groups.group_count(); ++p) {
            const SlotKind kind = groups.slots[static_cast<size_t>(p)].kind;
            if (kind == SlotKind::Cell)
                cell_ranges.emplace_back(p * m, (p + 1) * m);
            else if (kind == SlotKind::Cls)
                cls_pos = p;
        }
        if (cls_pos < 0 || cell_ranges.empty())
            throw ShapeError("pool_features: layout is missing a [CLS] or cell group");
        fine = pool_rows(groups.stacked, std::move(cell_ranges));
        cls = reshape(pool_rows(groups.stacked, {{cls_pos * m, (cls_pos + 1) * m}}), {d});
    };
    StructFeatures<S> out;
    pool_axis(horizontal, out.row_embeddings, out.cls_row);
    pool_axis(vertical, out.col_embeddings, out.cls_col);
    return out;
}

struct StructConfig {
    int horizontal_layers = 3;
    int vertical_layers = 3;

    json to_json() const {
        return json{{"horizontal_layers", horizontal_layers}, {"vertical_layers", vertical_layers}};
    }
    static StructConfig from_json(const json& j) {
        StructConfig c;
        c.horizontal_layers = j.value("horizontal_layers", c.horizontal_layers);
        c.vertical_layers = j.value("vertical_layers", c.vertical_layers);
        return c;
    }
};

template <typename S>
void init_struct_attention(ParamStore<S>& store, const StructConfig& cfg,
                           const TransformerLayerConfig& layer_cfg, Rng& rng) {
    init_axis_attention(store, "hor", cfg.horizontal_layers, layer_cfg, rng);
    init_axis_attention(store, "ver", cfg.vertical_layers, layer_cfg, rng);
}

// encode_table -> align -> horizontal/vertical attention -> pool_features
template <typename S>
StructFeatures<S> struct_features(Tape<S>& tape, ParamStore<S>& store, const Table& table,
                                  const Vocabulary& vocab, const EncoderConfig& enc_cfg,
                                  const StructConfig& struct_cfg, const PipelineConfig& pipeline,
                                  const std::string* query = nullptr, Rng* dropout_rng = nullptr) {
    TableViews<S> views =
        encode_table(tape, store, "enc", table, vocab, enc_cfg, pipeline, query, dropout_rng);
    const TransformerLayerConfig layer_cfg = enc_cfg.layer_config();
    AlignmentGroups<S> horizontal =
        horizontal_attention(tape, store, align(tape, views.columns), struct_cfg.horizontal_layers,
                             layer_cfg, dropout_rng);
    AlignmentGroups<S> vertical =
        vertical_attention(tape, store, align(tape, views.rows), struct_cfg.vertical_layers,
                           layer_cfg, dropout_rng);
    return pool_features(tape, horizontal, vertical);
}

}  // namespace tabmatch
