#pragma once

// Transformer building blocks composed from tape ops: multi-head scaled
// dot-product attention and the post-norm residual block (attention + GELU
// feed-forward, each followed by residual + layer norm).

#include <string>
#include <vector>

#include "tabmatch/tensor.hpp"

namespace tabmatch {

struct TransformerLayerConfig {
    int d = 64;
    int heads = 4;
    int ffn = 128;
    double dropout = 0.0;
    double ln_eps = 1e-12;
};

// Per-head softmax weight matrices captured during a forward pass
// (forward values only, detached from the tape).
struct AttentionDump {
    int n = 0;  // sequence length; each head matrix is n x n, row-major
    std::vector<std::vector<double>> heads;
};

template <typename S>
void init_linear(ParamStore<S>& store, const std::string& prefix, int in, int out, Rng& rng) {
    store.create(prefix + ".w", {in, out}, Init::TruncNormal, rng);
    store.create(prefix + ".b", {out}, Init::Zeros, rng);
}

template <typename S>
void init_layer_norm(ParamStore<S>& store, const std::string& prefix, int d, Rng& rng) {
    store.create(prefix + ".gamma", {d}, Init::Ones, rng);
    store.create(prefix + ".beta", {d}, Init::Zeros, rng);
}

// Parameter layout under `prefix`:
//   .attn.{q,k,v,o}.{w,b}   projections
//   .ln1 / .ln2             post-norm layer norms
//   .ffn.{in,out}.{w,b}     position-wise feed-forward
template <typename S>
void init_transformer_layer(ParamStore<S>& store, const std::string& prefix,
                            const TransformerLayerConfig& cfg, Rng& rng) {
    if (cfg.d % cfg.heads != 0) throw ConfigError("hidden size not divisible by head count");
    init_linear(store, prefix + ".attn.q", cfg.d, cfg.d, rng);
    init_linear(store, prefix + ".attn.k", cfg.d, cfg.d, rng);
    init_linear(store, prefix + ".attn.v", cfg.d, cfg.d, rng);
    init_linear(store, prefix + ".attn.o", cfg.d, cfg.d, rng);
    init_layer_norm(store, prefix + ".ln1", cfg.d, rng);
    init_linear(store, prefix + ".ffn.in", cfg.d, cfg.ffn, rng);
    init_linear(store, prefix + ".ffn.out", cfg.ffn, cfg.d, rng);
    init_layer_norm(store, prefix + ".ln2", cfg.d, rng);
}

template <typename S>
Tensor<S> linear(Tape<S>& tape, ParamStore<S>& store, const std::string& prefix,
                 const Tensor<S>& x) {
    return add_bias(matmul(x, store.use(tape, prefix + ".w")), store.use(tape, prefix + ".b"));
}

// Scaled dot-product attention over seq [n x d], heads concatenated and
// projected. Scale is 1/sqrt(d/heads). No positional information is added
// here; permuting the input rows permutes the output rows identically.
// A non-empty `blocks` vector partitions the rows into independent segments
// that never attend across their boundaries (used to run shared-weight
// attention over many aligned groups or packed sequences in one call).
template <typename S>
Tensor<S> multi_head_attention(Tape<S>& tape, ParamStore<S>& store, const std::string& prefix,
                               const Tensor<S>& seq, int heads, AttentionDump* dump = nullptr,
                               std::vector<int> blocks = {}) {
    if (seq.rank() != 2) throw ShapeError("multi_head_attention: [n x d] input required");
    const int n = seq.dim(0), d = seq.dim(1);
    if (heads < 1 || d % heads != 0)
        throw ConfigError("multi_head_attention: d must be divisible by heads");
    if (blocks.empty()) blocks = {n};

    Tensor<S> q = linear(tape, store, prefix + ".attn.q", seq);
    Tensor<S> k = linear(tape, store, prefix + ".attn.k", seq);
    Tensor<S> v = linear(tape, store, prefix + ".attn.v", seq);

    std::vector<std::vector<S>> saved;
    const bool single_block = blocks.size() == 1;
    Tensor<S> ctx = blocked_attention(q, k, v, heads, std::move(blocks), dump ? &saved : nullptr);
    if (dump) {
        if (!single_block) throw UsageError("attention dump requires a single block");
        dump->n = n;
        dump->heads.clear();
        for (const std::vector<S>& w : saved) {
            std::vector<double> head(w.size());
            for (size_t i = 0; i < w.size(); ++i) head[i] = static_cast<double>(w[i]);
            dump->heads.push_back(std::move(head));
        }
    }
    return linear(tape, store, prefix + ".attn.o", ctx);
}

// Post-norm residual block: LN(x + MHA(x)) then LN(h + FFN(h)).
template <typename S>
Tensor<S> transformer_layer(Tape<S>& tape, ParamStore<S>& store, const std::string& prefix,
                            const Tensor<S>& seq, const TransformerLayerConfig& cfg,
                            AttentionDump* dump = nullptr, Rng* dropout_rng = nullptr,
                            std::vector<int> blocks = {}) {
    Tensor<S> att = multi_head_attention(tape, store, prefix, seq, cfg.heads, dump,
                                         std::move(blocks));
    if (cfg.dropout > 0.0 && dropout_rng) att = dropout(att, cfg.dropout, *dropout_rng);
    Tensor<S> h = layer_norm(add(seq, att), store.use(tape, prefix + ".ln1.gamma"),
                             store.use(tape, prefix + ".ln1.beta"), cfg.ln_eps);
    Tensor<S> f = linear(tape, store, prefix + ".ffn.out",
                         gelu(linear(tape, store, prefix + ".ffn.in", h)));
    if (cfg.dropout > 0.0 && dropout_rng) f = dropout(f, cfg.dropout, *dropout_rng);
    return layer_norm(add(h, f), store.use(tape, prefix + ".ln2.gamma"),
                      store.use(tape, prefix + ".ln2.beta"), cfg.ln_eps);
}

}  // namespace tabmatch
