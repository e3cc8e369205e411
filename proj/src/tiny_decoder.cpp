#include "cdsynth/tiny_decoder.hpp"

#include <cmath>
#include <cstring>

#include "cdsynth/rng.hpp"

namespace cdsynth {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y = W x + b with W stored row-major [rows, cols].
void linear(const double* w, const double* b, const double* x, double* y, std::int32_t rows,
            std::int32_t cols) {
    for (std::int32_t o = 0; o < rows; ++o) {
        double acc = b ? b[o] : 0.0;
        const double* wr = w + static_cast<std::int64_t>(o) * cols;
        for (std::int32_t i = 0; i < cols; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

struct LnStats {
    double mean, rstd;
};

LnStats layer_norm(const double* x, const double* w, const double* b, double* y, std::int32_t d) {
    double mean = 0.0;
    for (std::int32_t j = 0; j < d; ++j) mean += x[j];
    mean /= d;
    double var = 0.0;
    for (std::int32_t j = 0; j < d; ++j) {
        double c = x[j] - mean;
        var += c * c;
    }
    var /= d;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (std::int32_t j = 0; j < d; ++j) y[j] = (x[j] - mean) * rstd * w[j] + b[j];
    return {mean, rstd};
}

// Reverse of layer_norm for one row. Adds into dx and the parameter grads.
void layer_norm_backward(const double* x, LnStats st, const double* w, const double* dy, double* dx,
                         double* dw, double* db, std::int32_t d) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::int32_t j = 0; j < d; ++j) {
        double xhat = (x[j] - st.mean) * st.rstd;
        double dxhat = dy[j] * w[j];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
        if (dw) dw[j] += dy[j] * xhat;
        if (db) db[j] += dy[j];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (std::int32_t j = 0; j < d; ++j) {
        double xhat = (x[j] - st.mean) * st.rstd;
        double dxhat = dy[j] * w[j];
        dx[j] += st.rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
}

struct BlockCache {
    std::vector<double> x_in, ln1_out, q, k, v, att, concat, x_mid, ln2_out, fc_pre, fc_act;
    std::vector<LnStats> ln1_st, ln2_st;
};

struct FullCache {
    std::int64_t T = 0;
    std::vector<BlockCache> blocks;
    std::vector<double> x_final, lnf_out;
    std::vector<LnStats> lnf_st;
};

// Runs the decoder over `tokens`, optionally retaining every intermediate
// needed by the backward pass.
void forward_impl(const DecoderParams& p, std::span<const std::int32_t> tokens, FullCache* cache,
                  std::vector<double>& lnf_out) {
    const auto& cfg = p.config();
    const auto& lay = p.layout();
    const double* w = p.flat().data();
    const std::int64_t T = static_cast<std::int64_t>(tokens.size());
    const std::int32_t d = cfg.d_model;
    const std::int32_t H = cfg.n_heads;
    const std::int32_t hd = cfg.head_dim();
    const std::int32_t ff = cfg.d_ff();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    if (T == 0) fail_data("decoder context must be non-empty");
    if (T > cfg.max_context)
        fail_data("context of " + std::to_string(T) + " tokens exceeds the window of " +
                  std::to_string(cfg.max_context));
    for (std::int32_t t : tokens) {
        if (t < 0 || t >= cfg.vocab_size)
            fail_data("token id " + std::to_string(t) + " outside the vocabulary");
    }

    std::vector<double> x(static_cast<std::size_t>(T) * d);
    for (std::int64_t t = 0; t < T; ++t) {
        const double* te = w + lay.tok_embed + static_cast<std::int64_t>(tokens[t]) * d;
        const double* pe = w + lay.pos_embed + t * d;
        for (std::int32_t j = 0; j < d; ++j) x[t * d + j] = te[j] + pe[j];
    }

    if (cache) {
        cache->T = T;
        cache->blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    }

    std::vector<double> ln1(static_cast<std::size_t>(T) * d), q(ln1.size()), k(ln1.size()),
        v(ln1.size()), concat(ln1.size()), x_mid(ln1.size()), ln2(ln1.size());
    std::vector<double> fc_pre(static_cast<std::size_t>(T) * ff), fc_act(fc_pre.size());
    std::vector<double> att(static_cast<std::size_t>(H) * T * T, 0.0);
    std::vector<double> tmp(static_cast<std::size_t>(std::max<std::int32_t>(d, ff)));

    for (std::int32_t b = 0; b < cfg.n_layers; ++b) {
        const auto& bo = lay.blocks[static_cast<std::size_t>(b)];
        BlockCache* bc = cache ? &cache->blocks[static_cast<std::size_t>(b)] : nullptr;
        if (bc) {
            bc->x_in = x;
            bc->ln1_st.resize(static_cast<std::size_t>(T));
            bc->ln2_st.resize(static_cast<std::size_t>(T));
        }

        for (std::int64_t t = 0; t < T; ++t) {
            LnStats st = layer_norm(&x[t * d], w + bo.ln1_w, w + bo.ln1_b, &ln1[t * d], d);
            if (bc) bc->ln1_st[static_cast<std::size_t>(t)] = st;
            linear(w + bo.q_w, w + bo.q_b, &ln1[t * d], &q[t * d], d, d);
            linear(w + bo.k_w, w + bo.k_b, &ln1[t * d], &k[t * d], d, d);
            linear(w + bo.v_w, w + bo.v_b, &ln1[t * d], &v[t * d], d, d);
        }

        std::fill(att.begin(), att.end(), 0.0);
        for (std::int32_t h = 0; h < H; ++h) {
            const std::int32_t off = h * hd;
            for (std::int64_t t = 0; t < T; ++t) {
                double* row = &att[(static_cast<std::int64_t>(h) * T + t) * T];
                double m = -1e300;
                for (std::int64_t s = 0; s <= t; ++s) {
                    double dot = 0.0;
                    for (std::int32_t j = 0; j < hd; ++j)
                        dot += q[t * d + off + j] * k[s * d + off + j];
                    row[s] = dot * att_scale;
                    if (row[s] > m) m = row[s];
                }
                double denom = 0.0;
                for (std::int64_t s = 0; s <= t; ++s) {
                    row[s] = std::exp(row[s] - m);
                    denom += row[s];
                }
                for (std::int64_t s = 0; s <= t; ++s) row[s] /= denom;
                for (std::int32_t j = 0; j < hd; ++j) {
                    double acc = 0.0;
                    for (std::int64_t s = 0; s <= t; ++s) acc += row[s] * v[s * d + off + j];
                    concat[t * d + off + j] = acc;
                }
            }
        }

        for (std::int64_t t = 0; t < T; ++t) {
            linear(w + bo.o_w, w + bo.o_b, &concat[t * d], tmp.data(), d, d);
            for (std::int32_t j = 0; j < d; ++j) x_mid[t * d + j] = x[t * d + j] + tmp[j];
            LnStats st = layer_norm(&x_mid[t * d], w + bo.ln2_w, w + bo.ln2_b, &ln2[t * d], d);
            if (bc) bc->ln2_st[static_cast<std::size_t>(t)] = st;
            linear(w + bo.fc_w, w + bo.fc_b, &ln2[t * d], &fc_pre[t * ff], ff, d);
            for (std::int32_t j = 0; j < ff; ++j) fc_act[t * ff + j] = gelu(fc_pre[t * ff + j]);
            linear(w + bo.proj_w, w + bo.proj_b, &fc_act[t * ff], tmp.data(), d, ff);
            for (std::int32_t j = 0; j < d; ++j) x[t * d + j] = x_mid[t * d + j] + tmp[j];
        }

        if (bc) {
            bc->ln1_out = ln1;
            bc->q = q;
            bc->k = k;
            bc->v = v;
            bc->att = att;
            bc->concat = concat;
            bc->x_mid = x_mid;
            bc->ln2_out = ln2;
            bc->fc_pre = fc_pre;
            bc->fc_act = fc_act;
        }
    }

    lnf_out.assign(static_cast<std::size_t>(T) * d, 0.0);
    if (cache) {
        cache->x_final = x;
        cache->lnf_st.resize(static_cast<std::size_t>(T));
    }
    for (std::int64_t t = 0; t < T; ++t) {
        LnStats st = layer_norm(&x[t * d], w + lay.final_ln_w, w + lay.final_ln_b, &lnf_out[t * d], d);
        if (cache) cache->lnf_st[static_cast<std::size_t>(t)] = st;
    }
    if (cache) cache->lnf_out = lnf_out;
}

} // namespace

void TinyDecoderConfig::validate() const {
    if (vocab_size <= 0) fail_config("vocab_size must be positive");
    if (d_model <= 0) fail_config("d_model must be positive");
    if (n_layers <= 0) fail_config("n_layers must be positive");
    if (n_heads <= 0) fail_config("n_heads must be positive");
    if (d_model % n_heads != 0) fail_config("d_model must be divisible by n_heads");
    if (max_context < 2) fail_config("max_context must be at least 2");
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> DecoderParams::tensor_schema(
    const TinyDecoderConfig& cfg) {
    const std::int64_t V = cfg.vocab_size, d = cfg.d_model, C = cfg.max_context, ff = cfg.d_ff();
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> schema;
    schema.push_back({"tok_embed.weight", {V, d}});
    schema.push_back({"pos_embed.weight", {C, d}});
    for (std::int32_t i = 0; i < cfg.n_layers; ++i) {
        std::string b = "blocks." + std::to_string(i) + ".";
        schema.push_back({b + "ln1.weight", {d}});
        schema.push_back({b + "ln1.bias", {d}});
        for (const char* part : {"q", "k", "v", "out"}) {
            schema.push_back({b + "attn." + part + ".weight", {d, d}});
            schema.push_back({b + "attn." + part + ".bias", {d}});
        }
        schema.push_back({b + "ln2.weight", {d}});
        schema.push_back({b + "ln2.bias", {d}});
        schema.push_back({b + "mlp.fc.weight", {ff, d}});
        schema.push_back({b + "mlp.fc.bias", {ff}});
        schema.push_back({b + "mlp.proj.weight", {d, ff}});
        schema.push_back({b + "mlp.proj.bias", {d}});
    }
    schema.push_back({"final_ln.weight", {d}});
    schema.push_back({"final_ln.bias", {d}});
    schema.push_back({"lm_head.weight", {V, d}});
    return schema;
}

DecoderParams::DecoderParams(TinyDecoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    auto schema = tensor_schema(cfg_);
    std::int64_t offset = 0;
    std::size_t idx = 0;
    auto take = [&]() {
        std::int64_t at = offset;
        std::int64_t n = 1;
        for (std::int64_t s : schema[idx].second) n *= s;
        offset += n;
        ++idx;
        return at;
    };
    layout_.tok_embed = take();
    layout_.pos_embed = take();
    layout_.blocks.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (auto& b : layout_.blocks) {
        b.ln1_w = take();
        b.ln1_b = take();
        b.q_w = take();
        b.q_b = take();
        b.k_w = take();
        b.k_b = take();
        b.v_w = take();
        b.v_b = take();
        b.o_w = take();
        b.o_b = take();
        b.ln2_w = take();
        b.ln2_b = take();
        b.fc_w = take();
        b.fc_b = take();
        b.proj_w = take();
        b.proj_b = take();
    }
    layout_.final_ln_w = take();
    layout_.final_ln_b = take();
    layout_.lm_head = take();
    layout_.total = offset;
    flat_.assign(static_cast<std::size_t>(offset), 0.0);
}

DecoderParams DecoderParams::from_map(TinyDecoderConfig cfg, const TensorMap& weights) {
    DecoderParams p(cfg);
    auto schema = tensor_schema(cfg);
    if (weights.size() != schema.size()) {
        for (const auto& [name, shape] : schema) {
            if (!weights.contains(name)) fail_data("checkpoint is missing tensor '" + name + "'");
        }
        fail_data("checkpoint has " + std::to_string(weights.size()) + " tensors, expected " +
                  std::to_string(schema.size()));
    }
    std::int64_t offset = 0;
    for (const auto& [name, shape] : schema) {
        const Tensor& t = weights.at(name);
        if (t.shape != shape) fail_data("tensor '" + name + "' has an unexpected shape");
        std::int64_t n = t.numel();
        for (std::int64_t i = 0; i < n; ++i) p.flat_[static_cast<std::size_t>(offset + i)] = t.value_at(i);
        offset += n;
    }
    return p;
}

DecoderParams DecoderParams::random_init(TinyDecoderConfig cfg, std::uint64_t seed, double init_std) {
    DecoderParams p(cfg);
    Rng rng(seed);
    auto schema = tensor_schema(cfg);
    std::int64_t offset = 0;
    for (const auto& [name, shape] : schema) {
        std::int64_t n = 1;
        for (std::int64_t s : shape) n *= s;
        bool is_ln_weight = name.ends_with("ln1.weight") || name.ends_with("ln2.weight") ||
                            name == "final_ln.weight";
        bool is_bias = name.ends_with(".bias");
        for (std::int64_t i = 0; i < n; ++i) {
            double v;
            if (is_ln_weight)
                v = 1.0;
            else if (is_bias)
                v = 0.0;
            else
                v = rng.normal(0.0, init_std);
            p.flat_[static_cast<std::size_t>(offset + i)] = v;
        }
        offset += n;
    }
    return p;
}

TensorMap DecoderParams::to_map(Dtype dtype) const {
    TensorMap out;
    auto schema = tensor_schema(cfg_);
    std::int64_t offset = 0;
    for (const auto& [name, shape] : schema) {
        std::int64_t n = 1;
        for (std::int64_t s : shape) n *= s;
        if (dtype == Dtype::f64) {
            std::vector<double> v(flat_.begin() + offset, flat_.begin() + offset + n);
            out.add(name, Tensor::from_f64(shape, std::move(v)));
        } else {
            std::vector<float> v(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i)
                v[static_cast<std::size_t>(i)] = static_cast<float>(flat_[static_cast<std::size_t>(offset + i)]);
            out.add(name, Tensor::from_f32(shape, std::move(v)));
        }
        offset += n;
    }
    return out;
}

TinyDecoderConfig infer_decoder_config(const TensorMap& weights, std::int32_t n_heads) {
    const Tensor& te = weights.at("tok_embed.weight");
    const Tensor& pe = weights.at("pos_embed.weight");
    if (te.shape.size() != 2 || pe.shape.size() != 2)
        fail_data("embedding tensors must be two-dimensional");
    TinyDecoderConfig cfg;
    cfg.vocab_size = static_cast<std::int32_t>(te.shape[0]);
    cfg.d_model = static_cast<std::int32_t>(te.shape[1]);
    cfg.max_context = pe.shape[0];
    cfg.n_heads = n_heads;
    std::int32_t layers = 0;
    while (weights.contains("blocks." + std::to_string(layers) + ".ln1.weight")) ++layers;
    cfg.n_layers = layers;
    cfg.validate();
    return cfg;
}

ForwardStates decoder_forward(const DecoderParams& p, std::span<const std::int32_t> tokens) {
    ForwardStates st;
    forward_impl(p, tokens, nullptr, st.rows);
    st.positions = static_cast<std::int64_t>(tokens.size());
    return st;
}

std::vector<double> decoder_logits_row(const DecoderParams& p, std::span<const double> row) {
    const auto& cfg = p.config();
    std::vector<double> logits(static_cast<std::size_t>(cfg.vocab_size));
    linear(p.flat().data() + p.layout().lm_head, nullptr, row.data(), logits.data(), cfg.vocab_size,
           cfg.d_model);
    return logits;
}

std::pair<double, std::int64_t> sequence_ce_and_grad(const DecoderParams& p,
                                                     std::span<const std::int32_t> tokens,
                                                     std::int64_t target_start,
                                                     std::span<double> grad) {
    const auto& cfg = p.config();
    const auto& lay = p.layout();
    const double* w = p.flat().data();
    const std::int64_t L = static_cast<std::int64_t>(tokens.size());
    if (L < 2) fail_data("training sequence must have at least two tokens");
    if (target_start < 1 || target_start >= L)
        fail_data("loss mask leaves no target positions");
    const bool want_grad = !grad.empty();
    if (want_grad && static_cast<std::int64_t>(grad.size()) != lay.total)
        fail_data("gradient buffer does not match the parameter count");

    const std::int32_t d = cfg.d_model;
    const std::int32_t H = cfg.n_heads;
    const std::int32_t hd = cfg.head_dim();
    const std::int32_t ff = cfg.d_ff();
    const std::int32_t V = cfg.vocab_size;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::span<const std::int32_t> inputs = tokens.subspan(0, static_cast<std::size_t>(L - 1));
    const std::int64_t T = L - 1;

    FullCache cache;
    std::vector<double> lnf;
    forward_impl(p, inputs, &cache, lnf);

    // Loss and the gradient at the output rows.
    double ce_sum = 0.0;
    std::int64_t count = 0;
    std::vector<double> dlnf(static_cast<std::size_t>(T) * d, 0.0);
    std::vector<double> logits(static_cast<std::size_t>(V));
    for (std::int64_t j = target_start; j < L; ++j) {
        const std::int64_t t = j - 1; // input position predicting tokens[j]
        linear(w + lay.lm_head, nullptr, &lnf[t * d], logits.data(), V, d);
        std::vector<double> logprobs = log_softmax(logits);
        const std::int32_t y = tokens[static_cast<std::size_t>(j)];
        ce_sum -= logprobs[static_cast<std::size_t>(y)];
        ++count;
        if (!want_grad) continue;
        // d(ce)/d(logit_v) = softmax_v - [v == y]
        for (std::int32_t vtok = 0; vtok < V; ++vtok) {
            double dlogit = std::exp(logprobs[static_cast<std::size_t>(vtok)]);
            if (vtok == y) dlogit -= 1.0;
            const double* lm_row = w + lay.lm_head + static_cast<std::int64_t>(vtok) * d;
            double* glm_row = grad.data() + lay.lm_head + static_cast<std::int64_t>(vtok) * d;
            for (std::int32_t jj = 0; jj < d; ++jj) {
                glm_row[jj] += dlogit * lnf[t * d + jj];
                dlnf[t * d + jj] += dlogit * lm_row[jj];
            }
        }
    }
    if (!want_grad) return {ce_sum, count};

    // Final layer norm.
    std::vector<double> dx(static_cast<std::size_t>(T) * d, 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        layer_norm_backward(&cache.x_final[t * d], cache.lnf_st[static_cast<std::size_t>(t)],
                            w + lay.final_ln_w, &dlnf[t * d], &dx[t * d],
                            grad.data() + lay.final_ln_w, grad.data() + lay.final_ln_b, d);
    }

    std::vector<double> d_concat(static_cast<std::size_t>(T) * d),
        d_q(static_cast<std::size_t>(T) * d), d_k(d_q.size()), d_v(d_q.size()),
        d_ln1(d_q.size()), d_ln2(d_q.size()), d_xmid(d_q.size());
    std::vector<double> d_fc_act(static_cast<std::size_t>(T) * ff), d_fc_pre(d_fc_act.size());
    std::vector<double> tmp(static_cast<std::size_t>(std::max<std::int32_t>(d, ff)));

    for (std::int32_t b = cfg.n_layers - 1; b >= 0; --b) {
        const auto& bo = lay.blocks[static_cast<std::size_t>(b)];
        const BlockCache& bc = cache.blocks[static_cast<std::size_t>(b)];

        std::fill(d_xmid.begin(), d_xmid.end(), 0.0);
        std::fill(d_ln2.begin(), d_ln2.end(), 0.0);
        std::fill(d_fc_act.begin(), d_fc_act.end(), 0.0);

        // x_out = x_mid + proj(gelu(fc(ln2(x_mid)))): dx flows to both terms.
        for (std::int64_t t = 0; t < T; ++t) {
            const double* dxo = &dx[t * d];
            // proj
            for (std::int32_t o = 0; o < d; ++o) {
                double g = dxo[o];
                if (g == 0.0) continue;
                double* gw = grad.data() + bo.proj_w + static_cast<std::int64_t>(o) * ff;
                const double* wr = w + bo.proj_w + static_cast<std::int64_t>(o) * ff;
                const double* act = &bc.fc_act[t * ff];
                for (std::int32_t i = 0; i < ff; ++i) {
                    gw[i] += g * act[i];
                    d_fc_act[t * ff + i] += g * wr[i];
                }
                grad[static_cast<std::size_t>(bo.proj_b + o)] += g;
            }
            for (std::int32_t i = 0; i < ff; ++i)
                d_fc_pre[t * ff + i] = d_fc_act[t * ff + i] * gelu_grad(bc.fc_pre[t * ff + i]);
            // fc
            for (std::int32_t o = 0; o < ff; ++o) {
                double g = d_fc_pre[t * ff + o];
                if (g == 0.0) continue;
                double* gw = grad.data() + bo.fc_w + static_cast<std::int64_t>(o) * d;
                const double* wr = w + bo.fc_w + static_cast<std::int64_t>(o) * d;
                const double* l2 = &bc.ln2_out[t * d];
                for (std::int32_t i = 0; i < d; ++i) {
                    gw[i] += g * l2[i];
                    d_ln2[t * d + i] += g * wr[i];
                }
                grad[static_cast<std::size_t>(bo.fc_b + o)] += g;
            }
            // ln2 backward into x_mid; plus the residual path dx -> x_mid
            for (std::int32_t jj = 0; jj < d; ++jj) d_xmid[t * d + jj] += dxo[jj];
            layer_norm_backward(&bc.x_mid[t * d], bc.ln2_st[static_cast<std::size_t>(t)],
                                w + bo.ln2_w, &d_ln2[t * d], &d_xmid[t * d],
                                grad.data() + bo.ln2_w, grad.data() + bo.ln2_b, d);
        }

        // x_mid = x_in + out_proj(concat): split the gradient.
        std::fill(d_concat.begin(), d_concat.end(), 0.0);
        for (std::int64_t t = 0; t < T; ++t) {
            const double* dxm = &d_xmid[t * d];
            for (std::int32_t o = 0; o < d; ++o) {
                double g = dxm[o];
                if (g == 0.0) continue;
                double* gw = grad.data() + bo.o_w + static_cast<std::int64_t>(o) * d;
                const double* wr = w + bo.o_w + static_cast<std::int64_t>(o) * d;
                const double* cc = &bc.concat[t * d];
                for (std::int32_t i = 0; i < d; ++i) {
                    gw[i] += g * cc[i];
                    d_concat[t * d + i] += g * wr[i];
                }
                grad[static_cast<std::size_t>(bo.o_b + o)] += g;
            }
        }

        // Attention backward.
        std::fill(d_q.begin(), d_q.end(), 0.0);
        std::fill(d_k.begin(), d_k.end(), 0.0);
        std::fill(d_v.begin(), d_v.end(), 0.0);
        std::vector<double> datt(static_cast<std::size_t>(T));
        for (std::int32_t h = 0; h < H; ++h) {
            const std::int32_t off = h * hd;
            for (std::int64_t t = 0; t < T; ++t) {
                const double* row = &bc.att[(static_cast<std::int64_t>(h) * T + t) * T];
                // d(att weight): concat[t] = sum_s att[s] * v[s]
                double inner = 0.0;
                for (std::int64_t s = 0; s <= t; ++s) {
                    double acc = 0.0;
                    for (std::int32_t j = 0; j < hd; ++j)
                        acc += d_concat[t * d + off + j] * bc.v[s * d + off + j];
                    datt[static_cast<std::size_t>(s)] = acc;
                    inner += row[s] * acc;
                    for (std::int32_t j = 0; j < hd; ++j)
                        d_v[s * d + off + j] += row[s] * d_concat[t * d + off + j];
                }
                // softmax backward, then the scaled dot product.
                for (std::int64_t s = 0; s <= t; ++s) {
                    double dscore = row[s] * (datt[static_cast<std::size_t>(s)] - inner) * att_scale;
                    for (std::int32_t j = 0; j < hd; ++j) {
                        d_q[t * d + off + j] += dscore * bc.k[s * d + off + j];
                        d_k[s * d + off + j] += dscore * bc.q[t * d + off + j];
                    }
                }
            }
        }

        // q/k/v projections back to ln1_out, then ln1 back to x_in.
        std::fill(d_ln1.begin(), d_ln1.end(), 0.0);
        struct Proj {
            std::int64_t w_off, b_off;
            const std::vector<double>* dvec;
        };
        const Proj projs[3] = {{bo.q_w, bo.q_b, &d_q}, {bo.k_w, bo.k_b, &d_k}, {bo.v_w, bo.v_b, &d_v}};
        for (const auto& pr : projs) {
            for (std::int64_t t = 0; t < T; ++t) {
                for (std::int32_t o = 0; o < d; ++o) {
                    double g = (*pr.dvec)[t * d + o];
                    if (g == 0.0) continue;
                    double* gw = grad.data() + pr.w_off + static_cast<std::int64_t>(o) * d;
                    const double* wr = w + pr.w_off + static_cast<std::int64_t>(o) * d;
                    const double* l1 = &bc.ln1_out[t * d];
                    for (std::int32_t i = 0; i < d; ++i) {
                        gw[i] += g * l1[i];
                        d_ln1[t * d + i] += g * wr[i];
                    }
                    grad[static_cast<std::size_t>(pr.b_off + o)] += g;
                }
            }
        }

        // dx for the next (earlier) block: residual + ln1 path.
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int32_t jj = 0; jj < d; ++jj) dx[t * d + jj] = d_xmid[t * d + jj];
            layer_norm_backward(&bc.x_in[t * d], bc.ln1_st[static_cast<std::size_t>(t)],
                                w + bo.ln1_w, &d_ln1[t * d], &dx[t * d], grad.data() + bo.ln1_w,
                                grad.data() + bo.ln1_b, d);
        }
    }

    // Embedding gradients.
    for (std::int64_t t = 0; t < T; ++t) {
        double* gte = grad.data() + lay.tok_embed + static_cast<std::int64_t>(inputs[static_cast<std::size_t>(t)]) * d;
        double* gpe = grad.data() + lay.pos_embed + t * d;
        for (std::int32_t jj = 0; jj < d; ++jj) {
            gte[jj] += dx[t * d + jj];
            gpe[jj] += dx[t * d + jj];
        }
    }

    return {ce_sum, count};
}

TinyDecoder::TinyDecoder(TinyDecoderConfig cfg, const TensorMap& weights, Vocabulary vocab,
                         std::string id)
    : params_(DecoderParams::from_map(cfg, weights)), vocab_(std::move(vocab)), id_(std::move(id)) {
    if (vocab_.size() != cfg.vocab_size)
        fail_data("vocabulary size " + std::to_string(vocab_.size()) +
                  " does not match the checkpoint vocab_size " + std::to_string(cfg.vocab_size));
}

TinyDecoder::TinyDecoder(DecoderParams params, Vocabulary vocab, std::string id)
    : params_(std::move(params)), vocab_(std::move(vocab)), id_(std::move(id)) {
    if (vocab_.size() != params_.config().vocab_size)
        fail_data("vocabulary size does not match the model vocab_size");
}

LogProbVector TinyDecoder::next_logprobs(std::span<const std::int32_t> context) const {
    ForwardStates st = decoder_forward(params_, context);
    const std::int32_t d = params_.config().d_model;
    std::span<const double> last(&st.rows[(st.positions - 1) * d], static_cast<std::size_t>(d));
    std::vector<double> logits = decoder_logits_row(params_, last);
    return LogProbVector(log_softmax(logits));
}

} // namespace cdsynth
