#include <doctest.h>

#include <cmath>
#include <set>

#include "cdsynth/rng.hpp"
#include "cdsynth/tiny_decoder.hpp"

using namespace cdsynth;

TEST_SUITE_BEGIN("tiny_decoder");

namespace {

constexpr double kEps = 1e-5; // layer-norm epsilon of the reference decoder

TinyDecoderConfig tiny_cfg(std::int32_t V, std::int32_t d, std::int32_t layers, std::int32_t heads,
                           std::int32_t ctx) {
    TinyDecoderConfig cfg;
    cfg.vocab_size = V;
    cfg.d_model = d;
    cfg.n_layers = layers;
    cfg.n_heads = heads;
    cfg.max_context = ctx;
    cfg.validate();
    return cfg;
}

// Two-element layer norm, written out longhand for the straight-line oracle.
struct Ln2 {
    double y0, y1;
};
Ln2 ln2_ref(double x0, double x1, double w0, double w1, double b0, double b1) {
    double mean = 0.5 * (x0 + x1);
    double var = 0.5 * ((x0 - mean) * (x0 - mean) + (x1 - mean) * (x1 - mean));
    double rstd = 1.0 / std::sqrt(var + kEps);
    return {(x0 - mean) * rstd * w0 + b0, (x1 - mean) * rstd * w1 + b1};
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

} // namespace

TEST_CASE("all-zero weights produce the uniform distribution") {
    TinyDecoderConfig cfg = tiny_cfg(7, 4, 2, 2, 8);
    DecoderParams p(cfg); // zero-initialized
    Vocabulary vocab = Vocabulary::from_chars("abcd"); // 3 specials + 4 chars = 7
    TinyDecoder model(p, vocab, "zeros");
    LogProbVector lp = model.next_logprobs(std::vector<std::int32_t>{1, 3, 5});
    for (std::int32_t i = 0; i < 7; ++i)
        CHECK(lp.values()[static_cast<std::size_t>(i)] ==
              doctest::Approx(-std::log(7.0)).epsilon(1e-14));
}

TEST_CASE("embedding, final layer norm, and head combine as the closed form predicts") {
    // Everything except the embeddings, final LN, and head is zeroed, so the
    // residual stream carries the embedding straight to the output.
    TinyDecoderConfig cfg = tiny_cfg(4, 2, 1, 1, 4);
    DecoderParams p(cfg);
    auto lay = p.layout();
    std::span<double> w = p.flat();
    const double g = 1.5;
    w[static_cast<std::size_t>(lay.tok_embed + 0 * 2 + 0)] = g; // token 0 -> (g, -g)
    w[static_cast<std::size_t>(lay.tok_embed + 0 * 2 + 1)] = -g;
    // Position 1 adds a constant shift, which layer norm must cancel.
    w[static_cast<std::size_t>(lay.pos_embed + 1 * 2 + 0)] = 0.5;
    w[static_cast<std::size_t>(lay.pos_embed + 1 * 2 + 1)] = 0.5;
    w[static_cast<std::size_t>(lay.final_ln_w + 0)] = 1.0;
    w[static_cast<std::size_t>(lay.final_ln_w + 1)] = 1.0;
    w[static_cast<std::size_t>(lay.lm_head + 0 * 2 + 0)] = 1.0; // logit0 = y0
    w[static_cast<std::size_t>(lay.lm_head + 1 * 2 + 1)] = 1.0; // logit1 = y1

    const double rstd = 1.0 / std::sqrt(g * g + kEps);
    ForwardStates st = decoder_forward(p, std::vector<std::int32_t>{0, 0});

    for (std::int64_t t = 0; t < 2; ++t) {
        std::vector<double> logits =
            decoder_logits_row(p, std::span<const double>(st.rows.data() + t * 2, 2));
        CHECK(logits[0] == doctest::Approx(g * rstd).epsilon(1e-12));
        CHECK(logits[1] == doctest::Approx(-g * rstd).epsilon(1e-12));
        CHECK(logits[2] == doctest::Approx(0.0));
        CHECK(logits[3] == doctest::Approx(0.0));
    }
}

TEST_CASE("one-layer one-head forward matches a straight-line recomputation") {
    TinyDecoderConfig cfg = tiny_cfg(4, 2, 1, 1, 4);
    TensorMap m;
    m.add("tok_embed.weight",
          Tensor::from_f64({4, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.2, 0.0, 0.0}));
    m.add("pos_embed.weight",
          Tensor::from_f64({4, 2}, {0.05, 0.0, -0.1, 0.15, 0.0, 0.0, 0.0, 0.0}));
    m.add("blocks.0.ln1.weight", Tensor::from_f64({2}, {1.1, 0.9}));
    m.add("blocks.0.ln1.bias", Tensor::from_f64({2}, {0.01, -0.02}));
    m.add("blocks.0.attn.q.weight", Tensor::from_f64({2, 2}, {0.5, -0.3, 0.2, 0.7}));
    m.add("blocks.0.attn.q.bias", Tensor::from_f64({2}, {0.1, 0.0}));
    m.add("blocks.0.attn.k.weight", Tensor::from_f64({2, 2}, {-0.4, 0.6, 0.3, 0.1}));
    m.add("blocks.0.attn.k.bias", Tensor::from_f64({2}, {0.0, -0.1}));
    m.add("blocks.0.attn.v.weight", Tensor::from_f64({2, 2}, {0.8, 0.2, -0.1, 0.5}));
    m.add("blocks.0.attn.v.bias", Tensor::from_f64({2}, {0.05, 0.05}));
    m.add("blocks.0.attn.out.weight", Tensor::from_f64({2, 2}, {0.3, -0.2, 0.4, 0.1}));
    m.add("blocks.0.attn.out.bias", Tensor::from_f64({2}, {-0.05, 0.02}));
    m.add("blocks.0.ln2.weight", Tensor::from_f64({2}, {0.95, 1.05}));
    m.add("blocks.0.ln2.bias", Tensor::from_f64({2}, {0.0, 0.01}));
    // Only the first hidden unit of the MLP is active.
    std::vector<double> fc_w(16, 0.0);
    fc_w[0] = 0.6;
    fc_w[1] = -0.5;
    std::vector<double> fc_b(8, 0.0);
    fc_b[0] = 0.1;
    m.add("blocks.0.mlp.fc.weight", Tensor::from_f64({8, 2}, fc_w));
    m.add("blocks.0.mlp.fc.bias", Tensor::from_f64({8}, fc_b));
    std::vector<double> proj_w(16, 0.0);
    proj_w[0] = 0.7;  // row 0, col 0
    proj_w[8] = -0.3; // row 1, col 0
    m.add("blocks.0.mlp.proj.weight", Tensor::from_f64({2, 8}, proj_w));
    m.add("blocks.0.mlp.proj.bias", Tensor::from_f64({2}, {0.02, -0.01}));
    m.add("final_ln.weight", Tensor::from_f64({2}, {1.0, 1.0}));
    m.add("final_ln.bias", Tensor::from_f64({2}, {0.0, 0.0}));
    m.add("lm_head.weight", Tensor::from_f64({4, 2}, {1, 0, 0, 1, 1, 1, -1, 0.5}));

    DecoderParams p = DecoderParams::from_map(cfg, m);

    // ---- reference, spelled out scalar by scalar -------------------------
    // embeddings
    double x00 = 0.3 + 0.05, x01 = 0.4 + 0.0;   // token 1 at position 0
    double x10 = -0.5 - 0.1, x11 = 0.2 + 0.15;  // token 2 at position 1
    // pre-attention layer norm
    Ln2 h0 = ln2_ref(x00, x01, 1.1, 0.9, 0.01, -0.02);
    Ln2 h1 = ln2_ref(x10, x11, 1.1, 0.9, 0.01, -0.02);
    // projections
    double q00 = 0.5 * h0.y0 - 0.3 * h0.y1 + 0.1, q01 = 0.2 * h0.y0 + 0.7 * h0.y1;
    double q10 = 0.5 * h1.y0 - 0.3 * h1.y1 + 0.1, q11 = 0.2 * h1.y0 + 0.7 * h1.y1;
    double k00 = -0.4 * h0.y0 + 0.6 * h0.y1, k01 = 0.3 * h0.y0 + 0.1 * h0.y1 - 0.1;
    double k10 = -0.4 * h1.y0 + 0.6 * h1.y1, k11 = 0.3 * h1.y0 + 0.1 * h1.y1 - 0.1;
    double v00 = 0.8 * h0.y0 + 0.2 * h0.y1 + 0.05, v01 = -0.1 * h0.y0 + 0.5 * h0.y1 + 0.05;
    double v10 = 0.8 * h1.y0 + 0.2 * h1.y1 + 0.05, v11 = -0.1 * h1.y0 + 0.5 * h1.y1 + 0.05;
    (void)q00;
    (void)q01;
    // causal attention at position 1 over positions {0, 1}
    double scale = 1.0 / std::sqrt(2.0);
    double s10 = (q10 * k00 + q11 * k01) * scale;
    double s11 = (q10 * k10 + q11 * k11) * scale;
    double mx = std::max(s10, s11);
    double e10 = std::exp(s10 - mx), e11 = std::exp(s11 - mx);
    double p10 = e10 / (e10 + e11), p11 = e11 / (e10 + e11);
    double a10 = p10 * v00 + p11 * v10, a11 = p10 * v01 + p11 * v11;
    // position 0 attends only to itself
    double a00 = v00, a01 = v01;
    // output projection and residual
    double o00 = 0.3 * a00 - 0.2 * a01 - 0.05, o01 = 0.4 * a00 + 0.1 * a01 + 0.02;
    double o10 = 0.3 * a10 - 0.2 * a11 - 0.05, o11 = 0.4 * a10 + 0.1 * a11 + 0.02;
    double xm00 = x00 + o00, xm01 = x01 + o01;
    double xm10 = x10 + o10, xm11 = x11 + o11;
    // MLP through the single active unit
    auto mlp = [&](double a, double b, double& out0, double& out1) {
        Ln2 n = ln2_ref(a, b, 0.95, 1.05, 0.0, 0.01);
        double f = 0.6 * n.y0 - 0.5 * n.y1 + 0.1;
        double act = gelu_ref(f);
        out0 = a + 0.7 * act + 0.02;
        out1 = b - 0.3 * act - 0.01;
    };
    double xf00, xf01, xf10, xf11;
    mlp(xm00, xm01, xf00, xf01);
    mlp(xm10, xm11, xf10, xf11);
    // final layer norm (weight 1, bias 0) and head
    Ln2 y0 = ln2_ref(xf00, xf01, 1.0, 1.0, 0.0, 0.0);
    Ln2 y1 = ln2_ref(xf10, xf11, 1.0, 1.0, 0.0, 0.0);
    auto head = [](const Ln2& y) {
        return std::vector<double>{y.y0, y.y1, y.y0 + y.y1, -y.y0 + 0.5 * y.y1};
    };
    std::vector<double> want0 = head(y0), want1 = head(y1);

    // ---- engine ----------------------------------------------------------
    ForwardStates st = decoder_forward(p, std::vector<std::int32_t>{1, 2});
    REQUIRE(st.positions == 2);
    std::vector<double> got0 =
        decoder_logits_row(p, std::span<const double>(st.rows.data(), 2));
    std::vector<double> got1 =
        decoder_logits_row(p, std::span<const double>(st.rows.data() + 2, 2));
    for (int i = 0; i < 4; ++i) {
        CAPTURE(i);
        CHECK(got0[static_cast<std::size_t>(i)] ==
              doctest::Approx(want0[static_cast<std::size_t>(i)]).epsilon(1e-12));
        CHECK(got1[static_cast<std::size_t>(i)] ==
              doctest::Approx(want1[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("the analytic gradient agrees with central finite differences") {
    TinyDecoderConfig cfg = tiny_cfg(9, 4, 2, 2, 12);
    DecoderParams p = DecoderParams::random_init(cfg, 31);
    std::vector<std::int32_t> tokens{1, 3, 2, 5, 7, 4};
    const std::int64_t target_start = 2;

    std::vector<double> grad(p.flat().size(), 0.0);
    auto [ce, count] = sequence_ce_and_grad(p, tokens, target_start, grad);
    CHECK(count == 4);
    CHECK(std::isfinite(ce));

    // One coordinate from every parameter family, plus random extras.
    auto lay = p.layout();
    std::vector<std::int64_t> coords{lay.tok_embed + 1 * 4 + 2, lay.pos_embed + 3 * 4 + 1,
                                     lay.final_ln_w + 2, lay.final_ln_b + 0, lay.lm_head + 5 * 4 + 3};
    for (const auto& b : lay.blocks) {
        for (std::int64_t off : {b.ln1_w + 1, b.ln1_b + 3, b.q_w + 5, b.q_b + 0, b.k_w + 9,
                                 b.k_b + 2, b.v_w + 11, b.v_b + 1, b.o_w + 7, b.o_b + 3, b.ln2_w + 0,
                                 b.ln2_b + 2, b.fc_w + 13, b.fc_b + 6, b.proj_w + 21, b.proj_b + 2})
            coords.push_back(off);
    }
    Rng rng(7);
    for (int i = 0; i < 8; ++i)
        coords.push_back(static_cast<std::int64_t>(rng.below(p.flat().size())));

    const double h = 1e-5;
    for (std::int64_t c : coords) {
        CAPTURE(c);
        DecoderParams plus = p, minus = p;
        plus.flat()[static_cast<std::size_t>(c)] += h;
        minus.flat()[static_cast<std::size_t>(c)] -= h;
        double ce_plus = sequence_ce_and_grad(plus, tokens, target_start, {}).first;
        double ce_minus = sequence_ce_and_grad(minus, tokens, target_start, {}).first;
        double fd = (ce_plus - ce_minus) / (2.0 * h);
        double an = grad[static_cast<std::size_t>(c)];
        CHECK(std::abs(fd - an) <= 1e-6 + 1e-4 * std::abs(fd));
    }
}

TEST_CASE("summed cross entropy matches per-prefix recomputation") {
    TinyDecoderConfig cfg = tiny_cfg(9, 4, 2, 2, 12);
    DecoderParams p = DecoderParams::random_init(cfg, 55);
    std::vector<std::int32_t> tokens{2, 6, 1, 8, 0, 3, 5};
    const std::int64_t target_start = 3;

    auto [ce, count] = sequence_ce_and_grad(p, tokens, target_start, {});
    CHECK(count == static_cast<std::int64_t>(tokens.size()) - target_start);

    double want = 0.0;
    for (std::size_t j = static_cast<std::size_t>(target_start); j < tokens.size(); ++j) {
        std::vector<std::int32_t> prefix(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(j));
        ForwardStates st = decoder_forward(p, prefix);
        std::span<const double> last(st.rows.data() + (st.positions - 1) * cfg.d_model,
                                     static_cast<std::size_t>(cfg.d_model));
        std::vector<double> lp = log_softmax(decoder_logits_row(p, last));
        want -= lp[static_cast<std::size_t>(tokens[j])];
    }
    CHECK(ce == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("changing a later token never disturbs earlier positions") {
    TinyDecoderConfig cfg = tiny_cfg(9, 4, 2, 2, 12);
    DecoderParams p = DecoderParams::random_init(cfg, 77);
    ForwardStates a = decoder_forward(p, std::vector<std::int32_t>{1, 2, 3});
    ForwardStates b = decoder_forward(p, std::vector<std::int32_t>{1, 2, 6});
    for (std::size_t i = 0; i < static_cast<std::size_t>(2 * cfg.d_model); ++i)
        CHECK(a.rows[i] == b.rows[i]);
}

TEST_CASE("named-tensor export and import are mutually inverse") {
    TinyDecoderConfig cfg = tiny_cfg(5, 4, 2, 2, 6);
    DecoderParams p = DecoderParams::random_init(cfg, 11);
    TensorMap wide = p.to_map(Dtype::f64);

    std::vector<std::string> name_list = wide.names();
    std::set<std::string> names(name_list.begin(), name_list.end());
    CHECK(names.count("tok_embed.weight") == 1);
    CHECK(names.count("blocks.0.attn.q.weight") == 1);
    CHECK(names.count("blocks.1.mlp.proj.bias") == 1);
    CHECK(names.count("final_ln.weight") == 1);
    CHECK(names.count("lm_head.weight") == 1);
    CHECK(wide.numel() == static_cast<std::int64_t>(p.flat().size()));

    DecoderParams back = DecoderParams::from_map(cfg, wide);
    for (std::size_t i = 0; i < p.flat().size(); ++i) REQUIRE(back.flat()[i] == p.flat()[i]);

    TensorMap missing = wide;
    // Rebuild without one tensor.
    TensorMap incomplete;
    for (const auto& [name, tensor] : missing) {
        if (name != "blocks.1.ln2.bias") incomplete.add(name, tensor);
    }
    try {
        DecoderParams::from_map(cfg, incomplete);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("blocks.1.ln2.bias") != std::string::npos);
    }
}

TEST_CASE("architecture inference recovers the geometry from tensor shapes") {
    TinyDecoderConfig cfg = tiny_cfg(11, 8, 3, 2, 16);
    TensorMap m = DecoderParams::random_init(cfg, 3).to_map();
    TinyDecoderConfig got = infer_decoder_config(m, 2);
    CHECK(got.vocab_size == 11);
    CHECK(got.d_model == 8);
    CHECK(got.n_layers == 3);
    CHECK(got.n_heads == 2);
    CHECK(got.max_context == 16);
    CHECK_THROWS_AS(infer_decoder_config(m, 3), Error); // 3 does not divide 8
    TensorMap empty;
    CHECK_THROWS_AS(infer_decoder_config(empty, 2), Error);
}

TEST_CASE("context and token validation") {
    TinyDecoderConfig cfg = tiny_cfg(5, 4, 1, 1, 3);
    DecoderParams p = DecoderParams::random_init(cfg, 1);
    CHECK_THROWS_AS(decoder_forward(p, std::vector<std::int32_t>{}), Error);
    CHECK_THROWS_AS(decoder_forward(p, std::vector<std::int32_t>{0, 1, 2, 3}), Error);
    CHECK_THROWS_AS(decoder_forward(p, std::vector<std::int32_t>{5}), Error);
    CHECK_THROWS_AS(decoder_forward(p, std::vector<std::int32_t>{-1}), Error);
}

TEST_CASE("the provider facade normalizes the last-position logits") {
    TinyDecoderConfig cfg = tiny_cfg(7, 4, 1, 2, 8);
    DecoderParams p = DecoderParams::random_init(cfg, 13);
    Vocabulary vocab = Vocabulary::from_chars("abcd");
    TinyDecoder model(p, vocab, "probe");
    CHECK(model.id() == "probe");
    CHECK(model.max_context() == 8);

    std::vector<std::int32_t> ctx{1, 4, 2};
    LogProbVector lp = model.next_logprobs(ctx);
    ForwardStates st = decoder_forward(p, ctx);
    std::span<const double> last(st.rows.data() + (st.positions - 1) * cfg.d_model,
                                 static_cast<std::size_t>(cfg.d_model));
    std::vector<double> want = log_softmax(decoder_logits_row(p, last));
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(lp.values()[i] == doctest::Approx(want[i]).epsilon(1e-14));

    Vocabulary wrong = Vocabulary::from_chars("abc"); // size 6, model wants 7
    CHECK_THROWS_AS(TinyDecoder(p, wrong, "bad"), Error);
}

TEST_SUITE_END();
