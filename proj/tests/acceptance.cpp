// Acceptance suite: one check per release criterion, one PASS/FAIL line each.
// Tolerances are fixed here and nowhere else; the binary exits nonzero if any
// check fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pixeltext/finetune.hpp"
#include "pixeltext/model.hpp"
#include "pixeltext/patchio.hpp"
#include "pixeltext/pretrain.hpp"
#include "pixeltext/render.hpp"
#include "pixeltext/rng.hpp"
#include "pixeltext/tokenizer.hpp"

using namespace pixeltext;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

#define REQUIRE_OR_FAIL(cond, why) \
    do { \
        if (!(cond)) return fail(why); \
    } while (0)

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

std::string random_words(Rng& rng, int n_words, int max_len, char lo, int span) {
    std::string doc;
    for (int w = 0; w < n_words; ++w) {
        if (w) doc += ' ';
        int len = 1 + int(rng.next_below(uint64_t(max_len)));
        for (int c = 0; c < len; ++c) doc += char(lo + int(rng.next_below(uint64_t(span))));
    }
    return doc;
}

// ---- 1: default geometry ----

Outcome check_geometry() {
    RenderConfig rcfg;
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);
    RenderedStrip strip = render_text("hello pixel world", rcfg, glyphs);
    REQUIRE_OR_FAIL(strip.height == 16, "height " + std::to_string(strip.height));
    REQUIRE_OR_FAIL(strip.width == 16384, "width " + std::to_string(strip.width));
    REQUIRE_OR_FAIL(strip.channels == 3, "channels " + std::to_string(strip.channels));
    PatchSequence ps = patchify(strip, rcfg.patch_px);
    REQUIRE_OR_FAIL(ps.n == 1024, "patch count " + std::to_string(ps.n));
    REQUIRE_OR_FAIL(ps.dim == 768, "patch dim " + std::to_string(ps.dim));
    REQUIRE_OR_FAIL(strip.used_patches >= 1 && strip.used_patches <= 1024,
                    "used_patches " + std::to_string(strip.used_patches));
    return {};
}

// ---- 2: renderer determinism + role agreement ----

Outcome check_render_determinism() {
    RenderConfig rcfg;
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);
    Rng rng(42);
    for (int d = 0; d < 100; ++d) {
        int n_words = 80 + int(rng.next_below(120));
        std::string doc = random_words(rng, n_words, 9, '!', 94); // printable ascii
        RenderedStrip a = render_text(doc, rcfg, glyphs);
        RenderedStrip b = render_text(doc, rcfg, glyphs);
        REQUIRE_OR_FAIL(a.pixels == b.pixels && a.used_patches == b.used_patches &&
                            a.patch_roles == b.patch_roles,
                        "doc " + std::to_string(d) + " not bit-identical across runs");
        PatchSequence ps = patchify(a, rcfg.patch_px);
        for (int i = 0; i < ps.n; ++i) {
            REQUIRE_OR_FAIL(classify_patch(ps.patch(i), ps.dim) == ps.roles[size_t(i)],
                            "doc " + std::to_string(d) + " patch " + std::to_string(i) +
                                " role disagrees with its pixels");
        }
    }
    return {};
}

// ---- 3: fit_words vs linear oracle ----

Outcome check_fit_words() {
    const GlyphSet& glyphs = GlyphSet::for_font_id("builtin");
    Rng rng(7);
    for (int t = 0; t < 10000; ++t) {
        int n = int(rng.next_below(13));
        std::vector<std::string> words;
        for (int w = 0; w < n; ++w) {
            int len = 1 + int(rng.next_below(10));
            std::string word;
            for (int c = 0; c < len; ++c) {
                if (rng.next_below(12) == 0) word += "\xc3\xa9"; // two-byte code point
                else word += char('a' + int(rng.next_below(26)));
            }
            words.push_back(word);
        }
        int budget = int(rng.next_below(400));
        if (t % 5 == 0 && n > 0) {
            // exact-boundary budgets
            int k = 1 + int(rng.next_below(uint64_t(n)));
            std::string joined = words[0];
            for (int i = 1; i < k; ++i) joined += " " + words[size_t(i)];
            budget = measure_text(joined, glyphs);
        }
        int oracle = 0;
        for (int k = 1; k <= n; ++k) {
            std::string joined = words[0];
            for (int i = 1; i < k; ++i) joined += " " + words[size_t(i)];
            if (measure_text(joined, glyphs) <= budget) oracle = k;
            else break;
        }
        int got = fit_words(words, budget, glyphs);
        REQUIRE_OR_FAIL(got == oracle, "instance " + std::to_string(t) + ": fit_words " +
                                           std::to_string(got) + " oracle " + std::to_string(oracle));
    }
    return {};
}

// ---- 4: loss units ----

Outcome check_loss_units() {
    const int V = 512, n = 5;
    Matrix<double> logits(n, V);
    for (auto& v : logits.data) v = 0.37;
    std::vector<uint32_t> targets{3, 0, 511, 17, 256};
    std::vector<uint8_t> mask(n, 1);
    double ce = next_token_loss(logits, targets, mask);
    REQUIRE_OR_FAIL(std::abs(ce - std::log(double(V))) < 1e-6,
                    "uniform-logit CE " + fmt(ce) + " vs ln(512) " + fmt(std::log(512.0)));

    PatchSequence ps;
    ps.n = 3;
    ps.dim = 8;
    ps.patches.assign(24, 0.0f);
    for (int k = 0; k < 8; ++k) ps.patches[8 + k] = 0.625f; // constant patch
    ps.roles.assign(3, PatchRole::content);
    std::vector<float> tgt = normalize_targets(ps);
    for (int k = 0; k < 8; ++k) {
        REQUIRE_OR_FAIL(std::abs(tgt[k]) < 1e-6f,
                        "constant-patch normalized target " + fmt(tgt[k]) + " not ~0");
    }

    // garbage at masked rows must not reach the loss at all
    Rng rng(11);
    Matrix<double> clean(4, V), dirty(4, V);
    for (auto& v : clean.data) v = rng.next_normal();
    dirty = clean;
    std::vector<uint8_t> holes{1, 0, 1, 0};
    std::vector<uint32_t> tg{1, 2, 3, 4};
    for (int v = 0; v < V; ++v) {
        dirty.at(1, v) = 1e300;
        dirty.at(3, v) = std::numeric_limits<double>::quiet_NaN();
    }
    double la = next_token_loss(clean, tg, holes);
    double lb = next_token_loss(dirty, tg, holes);
    REQUIRE_OR_FAIL(la == lb, "masked-row garbage changed token loss");

    Matrix<double> pred(4, 8), pred2(4, 8), target(4, 8);
    for (auto& v : pred.data) v = rng.next_normal();
    for (auto& v : target.data) v = rng.next_normal();
    pred2 = pred;
    for (int k = 0; k < 8; ++k) pred2.at(1, k) = std::numeric_limits<double>::quiet_NaN();
    double pa = next_patch_loss(pred, target, holes);
    double pb = next_patch_loss(pred2, target, holes);
    REQUIRE_OR_FAIL(pa == pb, "masked-row garbage changed patch loss");
    return {};
}

// ---- 5: gradient check, both objectives ----

SequenceInput synthetic_pair(const ModelConfig& cfg, Rng& rng, int n_patches, int n_tokens) {
    SequenceInput in;
    in.n = n_patches + n_tokens;
    in.patch_dim = cfg.patch_dim;
    in.is_token.assign(size_t(in.n), 0);
    in.tokens.assign(size_t(in.n), 0);
    in.patches.assign(size_t(in.n) * size_t(cfg.patch_dim), 0.0f);
    in.roles.assign(size_t(in.n), PatchRole::content);
    in.attention_mask.assign(size_t(in.n), 1);
    in.loss_mask.assign(size_t(in.n), 1);
    in.loss_mask.back() = 0;
    for (int i = 0; i < n_patches; ++i) {
        for (int k = 0; k < cfg.patch_dim; ++k) {
            in.patches[size_t(i) * size_t(cfg.patch_dim) + size_t(k)] = 0.1f + 0.8f * float(rng.next_double());
        }
    }
    for (int i = n_patches; i < in.n; ++i) {
        in.is_token[size_t(i)] = 1;
        in.tokens[size_t(i)] = uint32_t(rng.next_below(uint64_t(cfg.vocab_size)));
    }
    return in;
}

Outcome check_gradients() {
    ModelConfig cfg;
    cfg.hidden_size = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.n_kv_heads = 2;
    cfg.intermediate_size = 20;
    cfg.vocab_size = 16;
    cfg.max_positions = 16;
    cfg.patch_dim = 12;
    cfg.validate();
    auto params = init_parameters<double>(cfg, 321);
    Rng rng(322);
    SequenceInput in = synthetic_pair(cfg, rng, 4, 4);
    in.attention_mask[2] = 0;

    std::vector<uint8_t> reg_mask = regression_positions(in);
    std::vector<uint8_t> cls_mask = classification_positions(in);
    std::vector<uint32_t> tok_tgt = classification_targets(in);
    Matrix<double> patch_tgt = regression_targets<double>(in);

    auto loss = [&]() {
        auto hidden = forward(in, params, cfg);
        auto reg = regression_head(hidden, params);
        auto cls = classification_head(hidden, params);
        return next_token_loss(cls, tok_tgt, cls_mask) + next_patch_loss(reg, patch_tgt, reg_mask);
    };

    ForwardCache<double> cache;
    auto hidden = forward(in, params, cfg, &cache);
    auto reg = regression_head(hidden, params);
    auto cls = classification_head(hidden, params);
    Matrix<double> d_cls, d_reg;
    next_token_loss(cls, tok_tgt, cls_mask, &d_cls);
    next_patch_loss(reg, patch_tgt, reg_mask, &d_reg);

    Parameters<double> grads = make_parameters<double>(cfg);
    Matrix<double> d_hidden(in.n, cfg.hidden_size), dh_part;
    affine_backward(hidden, params.reg_w, d_reg, dh_part, grads.reg_w, grads.reg_b);
    for (size_t i = 0; i < d_hidden.data.size(); ++i) d_hidden.data[i] += dh_part.data[i];
    affine_backward(hidden, params.cls_w, d_cls, dh_part, grads.cls_w, grads.cls_b);
    for (size_t i = 0; i < d_hidden.data.size(); ++i) d_hidden.data[i] += dh_part.data[i];
    backward(in, params, cfg, cache, d_hidden, grads);

    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    auto pt = named_tensors(params);
    auto gt = named_tensors(grads);
    for (size_t t = 0; t < pt.size(); ++t) {
        Matrix<double>* p = pt[t].second;
        Matrix<double>* g = gt[t].second;
        size_t len = p->data.size();
        size_t n_checks = std::min<size_t>(len, 6);
        for (size_t c = 0; c < n_checks; ++c) {
            size_t idx = c * len / n_checks;
            double orig = p->data[idx];
            p->data[idx] = orig + h;
            double up = loss();
            p->data[idx] = orig - h;
            double dn = loss();
            p->data[idx] = orig;
            double num = (up - dn) / (2.0 * h);
            double ana = g->data[idx];
            double rel = std::abs(num - ana) / std::max(1e-8, std::abs(num) + std::abs(ana));
            if (rel > worst) {
                worst = rel;
                worst_name = pt[t].first;
            }
        }
    }
    REQUIRE_OR_FAIL(worst < 1e-4, "worst relative error " + fmt(worst) + " at " + worst_name);
    return {};
}

// ---- 6: causality ----

Outcome check_causality() {
    ModelConfig cfg;
    cfg.hidden_size = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.n_kv_heads = 2;
    cfg.intermediate_size = 20;
    cfg.vocab_size = 32;
    cfg.max_positions = 32;
    cfg.patch_dim = 12;
    auto params = init_parameters<double>(cfg, 99);
    Rng rng(100);

    PatchSequence ps;
    ps.n = 6;
    ps.dim = cfg.patch_dim;
    ps.patches.resize(size_t(ps.n) * size_t(ps.dim));
    for (auto& v : ps.patches) v = 0.1f + 0.8f * float(rng.next_double());
    ps.roles.assign(size_t(ps.n), PatchRole::content);
    ps.attention_mask = attention_mask_from_roles(ps.roles);
    ps.loss_mask = loss_mask_from_roles(ps.roles);
    std::vector<uint32_t> ids{5, 9, 2, 30, 11};

    SequenceInput pixel = build_pixel_sequence(ps);
    SequenceInput text = build_text_sequence(ids, cfg.patch_dim, 31, 30);
    SequenceInput pair = build_pair_sequence(ps, ids, 31, 30, cfg.max_positions);

    for (SequenceInput* base : {&pixel, &text, &pair}) {
        Matrix<double> before = forward(*base, params, cfg);
        for (int j : {base->n / 2, base->n - 1}) {
            SequenceInput poked = *base;
            if (poked.is_token[size_t(j)]) {
                poked.tokens[size_t(j)] = (poked.tokens[size_t(j)] + 7) % uint32_t(cfg.vocab_size);
            } else {
                for (int k = 0; k < poked.patch_dim; ++k) {
                    poked.patches[size_t(j) * size_t(poked.patch_dim) + size_t(k)] += 0.25f;
                }
            }
            Matrix<double> after = forward(poked, params, cfg);
            for (int i = 0; i < j; ++i) {
                REQUIRE_OR_FAIL(std::memcmp(before.row(i), after.row(i),
                                            sizeof(double) * size_t(cfg.hidden_size)) == 0,
                                "perturbing position " + std::to_string(j) + " leaked into position " +
                                    std::to_string(i));
            }
        }
    }
    return {};
}

// ---- 7: grouped-query degeneracy vs reference MHA ----

Matrix<double> reference_mha(const Matrix<double>& xn, const LayerParams<double>& lw,
                             const std::vector<uint8_t>& mask, const ModelConfig& cfg) {
    const int N = xn.rows, D = cfg.hidden_size, hd = cfg.head_dim(), H = cfg.n_heads;
    auto project = [&](const Matrix<double>& w) {
        Matrix<double> out(N, w.rows);
        for (int i = 0; i < N; ++i) {
            for (int o = 0; o < w.rows; ++o) {
                double s = 0.0;
                for (int d = 0; d < D; ++d) s += xn.at(i, d) * w.at(o, d);
                out.at(i, o) = s;
            }
        }
        return out;
    };
    Matrix<double> q = project(lw.wq), k = project(lw.wk), v = project(lw.wv);
    for (int i = 0; i < N; ++i) {
        for (int h = 0; h < H; ++h) {
            std::vector<double> slice(static_cast<size_t>(hd));
            for (int d = 0; d < hd; ++d) slice[size_t(d)] = q.at(i, h * hd + d);
            slice = rope_apply(std::move(slice), i, cfg.rope_theta);
            for (int d = 0; d < hd; ++d) q.at(i, h * hd + d) = slice[size_t(d)];
            for (int d = 0; d < hd; ++d) slice[size_t(d)] = k.at(i, h * hd + d);
            slice = rope_apply(std::move(slice), i, cfg.rope_theta);
            for (int d = 0; d < hd; ++d) k.at(i, h * hd + d) = slice[size_t(d)];
        }
    }
    Matrix<double> ctx(N, D);
    const double scale = 1.0 / std::sqrt(double(hd));
    for (int h = 0; h < H; ++h) {
        for (int i = 0; i < N; ++i) {
            std::vector<double> scores;
            std::vector<int> visible;
            for (int j = 0; j <= i; ++j) {
                if (!mask[size_t(j)]) continue;
                double s = 0.0;
                for (int d = 0; d < hd; ++d) s += q.at(i, h * hd + d) * k.at(j, h * hd + d);
                scores.push_back(s * scale);
                visible.push_back(j);
            }
            if (visible.empty()) continue;
            double mx = *std::max_element(scores.begin(), scores.end());
            double denom = 0.0;
            for (double s : scores) denom += std::exp(s - mx);
            for (size_t t = 0; t < visible.size(); ++t) {
                double p = std::exp(scores[t] - mx) / denom;
                for (int d = 0; d < hd; ++d) ctx.at(i, h * hd + d) += p * v.at(visible[t], h * hd + d);
            }
        }
    }
    Matrix<double> out(N, D);
    for (int i = 0; i < N; ++i) {
        for (int o = 0; o < D; ++o) {
            double s = 0.0;
            for (int d = 0; d < D; ++d) s += ctx.at(i, d) * lw.wo.at(o, d);
            out.at(i, o) = s;
        }
    }
    return out;
}

Outcome check_gqa_degeneracy() {
    ModelConfig cfg;
    cfg.hidden_size = 32;
    cfg.n_layers = 1;
    cfg.n_heads = 8;
    cfg.n_kv_heads = 8;
    cfg.intermediate_size = 40;
    cfg.vocab_size = 16;
    cfg.max_positions = 16;
    cfg.patch_dim = 12;
    cfg.validate();
    auto params = init_parameters<double>(cfg, 55);
    Rng rng(56);
    const int N = 12;
    Matrix<double> xn(N, cfg.hidden_size);
    for (auto& v : xn.data) v = 0.5 * rng.next_normal();
    std::vector<uint8_t> mask(N, 1);
    mask[3] = 0;
    mask[7] = 0;

    Matrix<double> got = gqa_attention(xn, params.layers[0], mask, cfg);
    Matrix<double> want = reference_mha(xn, params.layers[0], mask, cfg);
    double worst = 0.0;
    for (size_t i = 0; i < got.data.size(); ++i) {
        worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
    }
    REQUIRE_OR_FAIL(worst < 1e-6, "max |gqa - reference mha| = " + fmt(worst));
    return {};
}

// ---- 8: paired memorization ----

Outcome check_memorization() {
    RenderConfig rcfg;
    rcfg.max_patches = 24;
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);
    // Single-letter words put each word+space in exactly one patch, and a
    // unique head symbol per document keeps every pixel prefix unambiguous —
    // otherwise the mean-of-continuations puts a floor under the patch MSE.
    const std::string symbols = "abcdefghijklmnopqrstuvwxyz0123456789";
    Rng rng(2024);
    std::vector<std::string> docs;
    std::string corpus;
    for (int i = 0; i < 32; ++i) {
        int n = 3 + int(rng.next_below(3));
        std::string doc(1, symbols[size_t(i)]);
        for (int w = 1; w < n; ++w) {
            doc += ' ';
            doc += symbols[rng.next_below(symbols.size())];
        }
        docs.push_back(doc);
        corpus += doc;
        corpus += '\n';
    }
    Vocab vocab = train_bpe(corpus, 300);

    ModelConfig mcfg; // desk defaults: 4 layers, 128 wide
    mcfg.validate();
    REQUIRE_OR_FAIL(mcfg.n_layers == 4 && mcfg.hidden_size == 128,
                    "desk defaults changed: layers " + std::to_string(mcfg.n_layers) + ", width " +
                        std::to_string(mcfg.hidden_size));
    PretrainData data;
    for (const auto& doc : docs) {
        PatchSequence ps = patchify(render_text(doc, rcfg, glyphs), rcfg.patch_px);
        data.pair.push_back(
            build_pair_sequence(ps, encode(doc, vocab), Vocab::eos_id, Vocab::pad_id, mcfg.max_positions));
    }

    TrainConfig tcfg;
    tcfg.steps = 2000;
    tcfg.warmup_steps = 100;
    tcfg.peak_lr = 1e-3;
    tcfg.batch_size = 8;
    tcfg.ratio_text = 0;
    tcfg.ratio_pixel = 0;
    tcfg.ratio_pair = 1;
    tcfg.validate();

    const uint64_t seed = 9;
    Trainer trainer(mcfg, tcfg, data, seed);
    std::vector<std::string> log_a;
    int steps_used = 0;
    bool reached = false;
    double ce = 0.0, mse = 0.0;
    for (int s = 0; s < tcfg.steps; ++s) {
        log_a.push_back(format_step_record(trainer.run_step()));
        ++steps_used;
        if (steps_used >= 200 && steps_used % 50 == 0) {
            EvalLosses ev = evaluate_losses(trainer.params(), mcfg, data.pair);
            ce = ev.token_ce;
            mse = ev.patch_mse;
            if (ce < 0.1 && mse < 0.01) {
                reached = true;
                break;
            }
        }
    }
    if (!reached) {
        EvalLosses ev = evaluate_losses(trainer.params(), mcfg, data.pair);
        ce = ev.token_ce;
        mse = ev.patch_mse;
        reached = ce < 0.1 && mse < 0.01;
    }
    REQUIRE_OR_FAIL(reached, "after " + std::to_string(steps_used) + " steps: token CE " + fmt(ce) +
                                 " (need < 0.1), patch MSE " + fmt(mse) + " (need < 0.01)");

    Trainer rerun(mcfg, tcfg, data, seed);
    for (int s = 0; s < steps_used; ++s) {
        std::string line = format_step_record(rerun.run_step());
        REQUIRE_OR_FAIL(line == log_a[size_t(s)],
                        "same-seed rerun diverged at step " + std::to_string(s + 1));
    }
    return {.pass = true,
            .detail = "CE " + fmt(ce) + ", MSE " + fmt(mse) + " after " + std::to_string(steps_used) +
                      " steps"};
}

// ---- 9: schedule and mixing ----

Outcome check_schedule() {
    TrainConfig tcfg; // warmup 200, peak 5e-4
    REQUIRE_OR_FAIL(lr_at(0, tcfg) == 0.0, "lr_at(0) = " + fmt(lr_at(0, tcfg)));
    REQUIRE_OR_FAIL(lr_at(200, tcfg) == 5e-4, "lr_at(200) = " + fmt(lr_at(200, tcfg)));
    auto sched = mix_schedule(4, 4, 2, 1000);
    REQUIRE_OR_FAIL(int(sched.size()) == 1000, "schedule length " + std::to_string(sched.size()));
    for (int w = 0; w < 100; ++w) {
        int text = 0, pixel = 0, pair = 0;
        for (int i = 0; i < 10; ++i) {
            switch (sched[size_t(w * 10 + i)]) {
                case MixKind::text: ++text; break;
                case MixKind::pixel: ++pixel; break;
                default: ++pair; break;
            }
        }
        REQUIRE_OR_FAIL(text == 4 && pixel == 4 && pair == 2,
                        "window " + std::to_string(w) + " counts " + std::to_string(text) + "/" +
                            std::to_string(pixel) + "/" + std::to_string(pair));
    }
    return {};
}

// ---- 10: render-mode conversions ----

Outcome check_conversion(const RenderedStrip& strip, const std::string& which) {
    RenderedStrip gray = to_grayscale(strip);
    RenderedStrip bin = to_binary(strip, 128);
    REQUIRE_OR_FAIL(gray.channels == 1 && bin.channels == 1, which + ": converted channels not 1");
    const size_t n_px = size_t(strip.height) * size_t(strip.width);
    for (size_t p = 0; p < n_px; ++p) {
        double r = strip.pixels[3 * p], g = strip.pixels[3 * p + 1], b = strip.pixels[3 * p + 2];
        long want = std::lround(0.299 * r + 0.587 * g + 0.114 * b);
        REQUIRE_OR_FAIL(long(gray.pixels[p]) == want,
                        which + ": gray pixel " + std::to_string(p) + " is " +
                            std::to_string(gray.pixels[p]) + ", want " + std::to_string(want));
        uint8_t wb = want >= 128 ? 255 : 0;
        REQUIRE_OR_FAIL(bin.pixels[p] == wb, which + ": binary pixel " + std::to_string(p) + " is " +
                                                 std::to_string(bin.pixels[p]) + ", want " +
                                                 std::to_string(wb));
    }
    return {};
}

Outcome check_render_modes() {
    RenderedStrip golden = read_strip_file(std::string(PIXELTEXT_TEST_DATA_DIR) + "/golden_strip.bin");
    Outcome out = check_conversion(golden, "golden strip");
    if (!out.pass) return out;
    RenderConfig rcfg;
    rcfg.max_patches = 64;
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);
    out = check_conversion(render_text("Sphinx of black quartz judge my vow 123", rcfg, glyphs), "fresh strip");
    if (!out.pass) return out;

    // channel-averaged adaptation: adapted(x) == original(x/3 replicated),
    // bitwise at 64-bit on dyadic values
    ModelConfig cfg;
    cfg.hidden_size = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.intermediate_size = 12;
    cfg.vocab_size = 16;
    cfg.max_positions = 8;
    cfg.patch_dim = 12;
    auto params = init_parameters<double>(cfg, 5);
    Rng rng(6);
    const double choices[] = {0.75, -0.75, 1.5, -1.5, 3.0, -3.0};
    for (auto& v : params.patch_proj_w.data) v = choices[rng.next_below(6)];
    for (size_t i = 0; i < params.patch_proj_b.data.size(); ++i) {
        params.patch_proj_b.data[i] = 0.25 * double(i) - 1.0;
    }
    Parameters<double> adapted = adapt_patch_embedding_channels(params, cfg, 3);
    ModelConfig acfg = adapted_config(cfg, 3);

    const double grays[] = {0.0, 0.75, 1.5, 3.0};
    const int px = cfg.patch_dim / 3;
    SequenceInput gray_in, rgb_in;
    gray_in.n = rgb_in.n = 4;
    gray_in.patch_dim = px;
    rgb_in.patch_dim = cfg.patch_dim;
    gray_in.is_token.assign(4, 0);
    rgb_in.is_token.assign(4, 0);
    gray_in.tokens.assign(4, 0);
    rgb_in.tokens.assign(4, 0);
    gray_in.roles.assign(4, PatchRole::content);
    rgb_in.roles.assign(4, PatchRole::content);
    gray_in.attention_mask.assign(4, 1);
    rgb_in.attention_mask.assign(4, 1);
    gray_in.loss_mask.assign(4, 0);
    rgb_in.loss_mask.assign(4, 0);
    gray_in.patches.resize(size_t(4) * size_t(px));
    rgb_in.patches.resize(size_t(4) * size_t(cfg.patch_dim));
    for (int i = 0; i < 4; ++i) {
        for (int p = 0; p < px; ++p) {
            double x = grays[rng.next_below(4)];
            gray_in.patches[size_t(i) * size_t(px) + size_t(p)] = float(x);
            for (int c = 0; c < 3; ++c) {
                rgb_in.patches[size_t(i) * size_t(cfg.patch_dim) + size_t(p * 3 + c)] = float(x / 3.0);
            }
        }
    }
    Matrix<double> ha = forward(gray_in, adapted, acfg);
    Matrix<double> hb = forward(rgb_in, params, cfg);
    REQUIRE_OR_FAIL(ha.rows == hb.rows && ha.cols == hb.cols, "adapted forward shape mismatch");
    REQUIRE_OR_FAIL(std::memcmp(ha.data.data(), hb.data.data(), ha.data.size() * sizeof(double)) == 0,
                    "adapted(x) != original(x/3 replicated) bitwise");
    return {};
}

// ---- 11: metric oracles ----

double oracle_acc(const std::vector<int>& p, const std::vector<int>& l) {
    int hit = 0;
    for (size_t i = 0; i < p.size(); ++i) hit += p[i] == l[i];
    return double(hit) / double(p.size());
}

void oracle_counts(const std::vector<int>& p, const std::vector<int>& l, long& tp, long& tn, long& fp,
                   long& fn) {
    tp = tn = fp = fn = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        bool pp = p[i] != 0, ll = l[i] != 0;
        if (pp && ll) ++tp;
        else if (!pp && !ll) ++tn;
        else if (pp) ++fp;
        else ++fn;
    }
}

double oracle_f1(const std::vector<int>& p, const std::vector<int>& l) {
    long tp, tn, fp, fn;
    oracle_counts(p, l, tp, tn, fp, fn);
    return 2 * tp + fp + fn == 0 ? 0.0 : 2.0 * double(tp) / double(2 * tp + fp + fn);
}

double oracle_mcc(const std::vector<int>& p, const std::vector<int>& l) {
    long tp, tn, fp, fn;
    oracle_counts(p, l, tp, tn, fp, fn);
    double a = double(tp + fp), b = double(tp + fn), c = double(tn + fp), d = double(tn + fn);
    if (a == 0 || b == 0 || c == 0 || d == 0) return 0.0;
    return (double(tp) * double(tn) - double(fp) * double(fn)) / std::sqrt(a * b * c * d);
}

std::vector<double> oracle_ranks(const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        int below = 0, tied = 0;
        for (size_t j = 0; j < x.size(); ++j) {
            below += x[j] < x[i];
            tied += x[j] == x[i];
        }
        r[i] = double(below) + double(tied - 1) / 2.0 + 1.0;
    }
    return r;
}

double oracle_spearman(const std::vector<double>& p, const std::vector<double>& l) {
    auto rp = oracle_ranks(p), rl = oracle_ranks(l);
    double n = double(p.size()), sp = 0, sl = 0, spp = 0, sll = 0, spl = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        sp += rp[i];
        sl += rl[i];
        spp += rp[i] * rp[i];
        sll += rl[i] * rl[i];
        spl += rp[i] * rl[i];
    }
    double cov = spl - sp * sl / n;
    double vp = spp - sp * sp / n, vl = sll - sl * sl / n;
    if (vp <= 0 || vl <= 0) return 0.0;
    return cov / std::sqrt(vp * vl);
}

Outcome check_metric_oracles() {
    Rng rng(77);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        int n = 1 + int(rng.next_below(40));
        std::vector<int> p(static_cast<size_t>(n)), l(static_cast<size_t>(n));
        for (auto& v : p) v = int(rng.next_below(4));
        for (auto& v : l) v = int(rng.next_below(4));
        worst = std::max(worst, std::abs(metric_acc(p, l) - oracle_acc(p, l)));
        worst = std::max(worst, std::abs(metric_f1(p, l) - oracle_f1(p, l)));
        worst = std::max(worst, std::abs(metric_mcc(p, l) - oracle_mcc(p, l)));
        if (n >= 2) {
            std::vector<double> dp(static_cast<size_t>(n)), dl(static_cast<size_t>(n));
            for (auto& v : dp) v = double(rng.next_below(8)) / 2.0;
            for (auto& v : dl) v = double(rng.next_below(8)) / 2.0;
            worst = std::max(worst, std::abs(metric_spearman(dp, dl) - oracle_spearman(dp, dl)));
        }
    }
    REQUIRE_OR_FAIL(worst <= 1e-9, "worst oracle deviation " + fmt(worst));
    return {.pass = true, .detail = "worst deviation " + fmt(worst)};
}

// ---- 12: fine-tune smoke ----

Outcome check_finetune_smoke() {
    ModelConfig cfg;
    cfg.hidden_size = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 8;
    cfg.n_kv_heads = 4;
    cfg.intermediate_size = 176;
    cfg.vocab_size = 300;
    cfg.max_positions = 48;
    cfg.validate();
    auto params = init_parameters<float>(cfg, 1234);

    const char dark[] = {'m', 'w', 'g', 'b'};
    const char light[] = {'i', 'l', 't', 'j'};
    Rng rng(4321);
    auto make_word = [&](const char* alphabet) {
        int len = 4 + int(rng.next_below(2));
        std::string w;
        for (int c = 0; c < len; ++c) w += alphabet[rng.next_below(4)];
        return w;
    };
    TaskTable train, dev;
    std::string corpus;
    for (int i = 0; i < 16; ++i) {
        train.text_a.push_back(make_word(dark));
        train.labels.push_back("dark");
        train.text_a.push_back(make_word(light));
        train.labels.push_back("light");
    }
    for (int i = 0; i < 10; ++i) {
        dev.text_a.push_back(make_word(dark));
        dev.labels.push_back("dark");
        dev.text_a.push_back(make_word(light));
        dev.labels.push_back("light");
    }
    for (const auto& w : train.text_a) corpus += w + "\n";
    Vocab vocab = train_bpe(corpus, 280);

    RenderConfig rcfg;
    rcfg.max_patches = 16;
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);

    TaskSpec task;
    task.name = "ink-density";
    task.kind = TaskKind::classification;
    task.n_classes = 2;
    task.arity = InputArity::single;
    task.metric = MetricKind::acc;
    task.render_mode = RenderMode::rgb;
    task.modality = TaskModality::pixel;
    task.validate();

    FinetuneConfig fcfg;
    fcfg.max_steps = 500;
    fcfg.batch_size = 8;
    fcfg.lr = 1e-3;
    fcfg.eval_every = 25;
    fcfg.patience = 20;
    fcfg.seed = 8;

    std::vector<float> train_y = numeric_labels(train, task);
    std::vector<float> dev_y = numeric_labels(dev, task);

    auto train_px = build_task_inputs(train, task, rcfg, glyphs, vocab, cfg);
    auto dev_px = build_task_inputs(dev, task, rcfg, glyphs, vocab, cfg);
    FinetuneResult pixel = finetune(cfg, params, task, train_px, train_y, dev_px, dev_y, fcfg);
    REQUIRE_OR_FAIL(pixel.dev.value >= 0.95, "pixel-modality dev accuracy " + fmt(pixel.dev.value) +
                                                 " < 0.95 after " + std::to_string(pixel.steps_run) +
                                                 " steps");

    task.modality = TaskModality::dual;
    auto train_du = build_task_inputs(train, task, rcfg, glyphs, vocab, cfg);
    auto dev_du = build_task_inputs(dev, task, rcfg, glyphs, vocab, cfg);
    FinetuneResult dual = finetune(cfg, params, task, train_du, train_y, dev_du, dev_y, fcfg);
    REQUIRE_OR_FAIL(dual.dev.value >= pixel.dev.value - 0.05,
                    "dual accuracy " + fmt(dual.dev.value) + " below pixel accuracy " +
                        fmt(pixel.dev.value) + " - 0.05");
    return {.pass = true,
            .detail = "pixel " + fmt(pixel.dev.value) + " @ step " + std::to_string(pixel.best_step) +
                      ", dual " + fmt(dual.dev.value) + " @ step " + std::to_string(dual.best_step)};
}

// ---- 13: round-trips and corruption ----

Outcome check_roundtrip() {
    fs::path dir = fs::temp_directory_path() / "px_acceptance";
    fs::create_directories(dir);
    std::string shard_path = (dir / "roundtrip.shard").string();
    std::string ckpt_path = (dir / "roundtrip.ckpt").string();

    Rng rng(15);
    PatchSequence ps;
    ps.n = 4;
    ps.dim = 12;
    ps.patches.resize(48);
    for (auto& v : ps.patches) v = float(rng.next_below(256)) / 255.0f;
    ps.roles.assign(4, PatchRole::content);
    ps.attention_mask = attention_mask_from_roles(ps.roles);
    ps.loss_mask = loss_mask_from_roles(ps.roles);
    std::vector<uint32_t> ids{7, 3, 200};

    std::vector<ShardRecord> records;
    records.push_back(record_from_sequence(build_pixel_sequence(ps)));
    records.push_back(record_from_sequence(build_text_sequence(ids, 12, 258, 256)));
    records.push_back(record_from_sequence(build_pair_sequence(ps, ids, 258, 256, 64)));
    write_shard(records, shard_path, 12);
    std::vector<ShardRecord> back = read_shard(shard_path, 12);
    REQUIRE_OR_FAIL(back.size() == records.size(), "record count changed across the round trip");
    for (size_t i = 0; i < records.size(); ++i) {
        REQUIRE_OR_FAIL(back[i] == records[i], "record " + std::to_string(i) + " changed across the trip");
    }

    {
        std::fstream f(shard_path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('Q');
    }
    bool threw = false;
    try {
        read_shard(shard_path, 12);
    } catch (const CorruptShard&) {
        threw = true;
    }
    REQUIRE_OR_FAIL(threw, "corrupted shard header did not raise CorruptShard");

    ModelConfig cfg;
    cfg.hidden_size = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.n_kv_heads = 2;
    cfg.intermediate_size = 20;
    cfg.vocab_size = 32;
    cfg.max_positions = 16;
    cfg.patch_dim = 12;
    auto params = init_parameters<float>(cfg, 77);
    save_checkpoint(ckpt_path, cfg, params);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    REQUIRE_OR_FAIL(ckpt.config == cfg, "checkpoint config changed across the round trip");
    auto restored = params_from_checkpoint(ckpt);
    auto pa = named_tensors(params);
    auto pb = named_tensors(restored);
    for (size_t t = 0; t < pa.size(); ++t) {
        REQUIRE_OR_FAIL(pa[t].second->data == pb[t].second->data,
                        "tensor " + pa[t].first + " changed across the round trip");
    }
    fs::remove_all(dir);
    return {};
}

} // namespace

int main() {
    struct Entry {
        const char* name;
        Outcome (*fn)();
    };
    const Entry entries[] = {
        {"default-geometry", check_geometry},
        {"render-determinism-and-roles", check_render_determinism},
        {"fit-words-oracle", check_fit_words},
        {"loss-units", check_loss_units},
        {"gradcheck-both-objectives", check_gradients},
        {"causality-exact", check_causality},
        {"gqa-degenerates-to-mha", check_gqa_degeneracy},
        {"pair-memorization", check_memorization},
        {"schedule-and-mixing", check_schedule},
        {"render-mode-conversions", check_render_modes},
        {"metric-oracles", check_metric_oracles},
        {"finetune-smoke", check_finetune_smoke},
        {"roundtrip-and-corruption", check_roundtrip},
    };
    int failures = 0;
    int idx = 0;
    for (const Entry& e : entries) {
        ++idx;
        auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = e.fn();
        } catch (const std::exception& ex) {
            out = fail(std::string("unexpected exception: ") + ex.what());
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ostringstream line;
        line << (out.pass ? "PASS" : "FAIL") << " " << idx << " " << e.name;
        if (!out.detail.empty()) line << ": " << out.detail;
        line << " (" << fmt(secs) << "s)";
        std::cout << line.str() << std::endl;
        failures += out.pass ? 0 : 1;
    }
    std::cout << (13 - failures) << "/13 passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
