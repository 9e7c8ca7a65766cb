#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>

#include "pdfnet/errors.hpp"
#include "pdfnet/layers.hpp"

namespace pdfnet {

struct CrossAttentionOptions {
    int64_t query_dim = 0;
    int64_t context_dim = 0;
    int64_t head_count = 4;
    int64_t ffn_ratio = 2;  // hidden width multiple for the gated feed-forward
};

// Residual cross-attention: the query sequence attends over the context
// sequence, the normalized attention result is added back onto the query, and
// a gated (SwiGLU) feed-forward refines the sum:
//
//   q2  = query + Norm(MultiHeadAttention(query -> context))
//   out = q2 + W_down( silu(W_gate(Norm(q2))) * W_up(Norm(q2)) )
//
// The output projection and W_down start at zero, so a freshly constructed
// block is exactly the identity on its query.
struct CrossAttentionBlockImpl : torch::nn::Module {
    CrossAttentionOptions opts;
    int64_t head_dim = 0;
    torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
    torch::nn::Linear ffn_gate{nullptr}, ffn_up{nullptr}, ffn_down{nullptr};
    RMSNormSeq norm_attn{nullptr}, norm_ffn{nullptr};

    explicit CrossAttentionBlockImpl(CrossAttentionOptions o) : opts(o) {
        if (opts.query_dim <= 0 || opts.context_dim <= 0) {
            throw ShapeError("attention dims must be positive");
        }
        if (opts.query_dim % opts.head_count != 0) {
            throw ShapeError("query_dim must be divisible by head_count");
        }
        head_dim = opts.query_dim / opts.head_count;
        auto lin = [&](int64_t in, int64_t out) {
            return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(false));
        };
        wq = register_module("wq", lin(opts.query_dim, opts.query_dim));
        wk = register_module("wk", lin(opts.context_dim, opts.query_dim));
        wv = register_module("wv", lin(opts.context_dim, opts.query_dim));
        wo = register_module("wo", lin(opts.query_dim, opts.query_dim));
        const int64_t hidden = opts.ffn_ratio * opts.query_dim;
        ffn_gate = register_module("ffn_gate", lin(opts.query_dim, hidden));
        ffn_up = register_module("ffn_up", lin(opts.query_dim, hidden));
        ffn_down = register_module("ffn_down", lin(hidden, opts.query_dim));
        norm_attn = register_module("norm_attn", RMSNormSeq(opts.query_dim));
        norm_ffn = register_module("norm_ffn", RMSNormSeq(opts.query_dim));
        torch::NoGradGuard ng;
        wo->weight.zero_();
        ffn_down->weight.zero_();
    }

    // query: B x L_q x query_dim; context: B x L_k x context_dim.
    torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context) {
        if (query.dim() != 3 || context.dim() != 3) {
            throw ShapeError("attention expects BxLxC sequences");
        }
        if (query.size(2) != opts.query_dim) {
            throw ShapeError("query feature size mismatch");
        }
        if (context.size(2) != opts.context_dim) {
            throw ShapeError("context feature size mismatch");
        }
        if (query.size(0) != context.size(0)) {
            throw ShapeError("query/context batch mismatch");
        }
        const auto b = query.size(0), lq = query.size(1), lk = context.size(1);
        const auto h = opts.head_count;
        auto split = [&](torch::Tensor x, int64_t len) {
            return x.view({b, len, h, head_dim}).transpose(1, 2);  // B x h x L x d
        };
        auto q = split(wq(query), lq);
        auto k = split(wk(context), lk);
        auto v = split(wv(context), lk);
        auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
        auto attn = torch::softmax(scores, -1);
        auto mixed = torch::matmul(attn, v).transpose(1, 2).contiguous().view({b, lq, opts.query_dim});
        auto q2 = query + norm_attn(wo(mixed));
        auto z = norm_ffn(q2);
        return q2 + ffn_down(torch::silu(ffn_gate(z)) * ffn_up(z));
    }
};
TORCH_MODULE(CrossAttentionBlock);

}  // namespace pdfnet
