#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pixeltext/errors.hpp"
#include "pixeltext/render.hpp"
#include "pixeltext/rng.hpp"
#include "pixeltext/tensor.hpp"

namespace pixeltext {

// Decoder-only transformer configuration. Defaults are the desk-scale setup
// (CPU-trainable); the published-scale values (D=1024, 24 layers, 16/8 heads,
// intermediate 2816, V=32000) remain expressible through the same fields.
struct ModelConfig {
    int hidden_size = 128;
    int n_layers = 4;
    int n_heads = 8;
    int n_kv_heads = 4;
    int intermediate_size = 352;
    int vocab_size = 512;
    int max_positions = 256;
    double rope_theta = 10000.0;
    double rms_eps = 1e-5;
    int patch_dim = 768; // P*P*C

    int head_dim() const { return hidden_size / n_heads; }
    int kv_dim() const { return n_kv_heads * head_dim(); }

    void validate() const {
        if (hidden_size <= 0 || n_layers <= 0 || intermediate_size <= 0 || vocab_size <= 0 ||
            max_positions <= 0 || patch_dim <= 0) {
            throw ShapeError("model dimensions must be positive");
        }
        if (n_heads <= 0 || hidden_size % n_heads != 0) {
            throw ShapeError("hidden_size must be divisible by n_heads");
        }
        if (n_kv_heads <= 0 || n_heads % n_kv_heads != 0) {
            throw ShapeError("n_heads must be divisible by n_kv_heads");
        }
        if (head_dim() % 2 != 0) throw OddHeadDim("head dim " + std::to_string(head_dim()) + " must be even");
        if (rms_eps <= 0) throw ShapeError("rms_eps must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

// One training element: a run of patch positions and/or token positions.
// Row i of patches is all zeros at token positions and vice versa, so the
// buffers stay rectangular. Masks follow the content-role rule; loss routing
// is split by the modality of the TARGET (position i+1).
struct SequenceInput {
    int n = 0;
    int patch_dim = 0;
    std::vector<uint8_t> is_token;
    std::vector<uint32_t> tokens;
    std::vector<float> patches; // n x patch_dim
    std::vector<PatchRole> roles;
    std::vector<uint8_t> attention_mask;
    std::vector<uint8_t> loss_mask;

    const float* patch(int i) const { return patches.data() + size_t(i) * patch_dim; }
};

template <typename T>
struct LayerParams {
    Matrix<T> attn_norm; // 1 x D
    Matrix<T> wq;        // D x D
    Matrix<T> wk;        // kvD x D
    Matrix<T> wv;        // kvD x D
    Matrix<T> wo;        // D x D
    Matrix<T> ffn_norm;  // 1 x D
    Matrix<T> w_gate;    // I x D
    Matrix<T> w_up;      // I x D
    Matrix<T> w_down;    // D x I
};

template <typename T>
struct Parameters {
    Matrix<T> token_embedding; // V x D
    Matrix<T> patch_proj_w;    // D x patch_dim
    Matrix<T> patch_proj_b;    // 1 x D
    std::vector<LayerParams<T>> layers;
    Matrix<T> final_norm; // 1 x D
    Matrix<T> reg_w;      // patch_dim x D
    Matrix<T> reg_b;      // 1 x patch_dim
    Matrix<T> cls_w;      // V x D
    Matrix<T> cls_b;      // 1 x V
};

// Fixed enumeration order; checkpoints, initialization and the optimizer all
// iterate tensors through this list.
template <typename T>
std::vector<std::pair<std::string, Matrix<T>*>> named_tensors(Parameters<T>& p) {
    std::vector<std::pair<std::string, Matrix<T>*>> out;
    out.emplace_back("token_embedding", &p.token_embedding);
    out.emplace_back("patch_proj.weight", &p.patch_proj_w);
    out.emplace_back("patch_proj.bias", &p.patch_proj_b);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        std::string base = "layers." + std::to_string(l) + ".";
        LayerParams<T>& lp = p.layers[l];
        out.emplace_back(base + "attn_norm.weight", &lp.attn_norm);
        out.emplace_back(base + "attn.wq", &lp.wq);
        out.emplace_back(base + "attn.wk", &lp.wk);
        out.emplace_back(base + "attn.wv", &lp.wv);
        out.emplace_back(base + "attn.wo", &lp.wo);
        out.emplace_back(base + "ffn_norm.weight", &lp.ffn_norm);
        out.emplace_back(base + "ffn.w_gate", &lp.w_gate);
        out.emplace_back(base + "ffn.w_up", &lp.w_up);
        out.emplace_back(base + "ffn.w_down", &lp.w_down);
    }
    out.emplace_back("final_norm.weight", &p.final_norm);
    out.emplace_back("regression_head.weight", &p.reg_w);
    out.emplace_back("regression_head.bias", &p.reg_b);
    out.emplace_back("classification_head.weight", &p.cls_w);
    out.emplace_back("classification_head.bias", &p.cls_b);
    return out;
}

template <typename T>
Parameters<T> make_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const int D = cfg.hidden_size, I = cfg.intermediate_size, kvD = cfg.kv_dim();
    Parameters<T> p;
    p.token_embedding = Matrix<T>(cfg.vocab_size, D);
    p.patch_proj_w = Matrix<T>(D, cfg.patch_dim);
    p.patch_proj_b = Matrix<T>(1, D);
    p.layers.resize(size_t(cfg.n_layers));
    for (auto& lp : p.layers) {
        lp.attn_norm = Matrix<T>(1, D);
        lp.wq = Matrix<T>(D, D);
        lp.wk = Matrix<T>(kvD, D);
        lp.wv = Matrix<T>(kvD, D);
        lp.wo = Matrix<T>(D, D);
        lp.ffn_norm = Matrix<T>(1, D);
        lp.w_gate = Matrix<T>(I, D);
        lp.w_up = Matrix<T>(I, D);
        lp.w_down = Matrix<T>(D, I);
    }
    p.final_norm = Matrix<T>(1, D);
    p.reg_w = Matrix<T>(cfg.patch_dim, D);
    p.reg_b = Matrix<T>(1, cfg.patch_dim);
    p.cls_w = Matrix<T>(cfg.vocab_size, D);
    p.cls_b = Matrix<T>(1, cfg.vocab_size);
    return p;
}

// Weights ~ normal(0, 0.02), norm weights 1, biases 0.
template <typename T>
Parameters<T> init_parameters(const ModelConfig& cfg, uint64_t seed) {
    Parameters<T> p = make_parameters<T>(cfg);
    Rng rng(sub_seed(seed, "init"));
    for (auto& [name, tensor] : named_tensors(p)) {
        if (name.find("norm") != std::string::npos) {
            std::fill(tensor->data.begin(), tensor->data.end(), T(1));
        } else if (name.find("bias") != std::string::npos) {
            tensor->set_zero();
        } else {
            tensor->fill_normal(rng, 0.02);
        }
    }
    return p;
}

template <typename T>
void zero_parameters(Parameters<T>& p) {
    for (auto& [name, tensor] : named_tensors(p)) tensor->set_zero();
}

// ---- primitive ops ----

// out_i = weight_i * x_i / sqrt(mean(x^2) + eps)
inline std::vector<double> rmsnorm(const std::vector<double>& x, const std::vector<double>& weight, double eps) {
    if (x.size() != weight.size()) throw ShapeError("rmsnorm weight length mismatch");
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= x.empty() ? 1.0 : double(x.size());
    double r = 1.0 / std::sqrt(ms + eps);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = weight[i] * x[i] * r;
    return out;
}

// Rotates consecutive pairs (x_{2i}, x_{2i+1}) by position * theta^(-2i/d).
inline std::vector<double> rope_apply(std::vector<double> x, int position, double theta) {
    if (x.size() % 2 != 0) throw OddHeadDim("rope needs an even dimension, got " + std::to_string(x.size()));
    const int d = int(x.size());
    for (int i = 0; i * 2 < d; ++i) {
        double angle = double(position) * std::pow(theta, -2.0 * i / d);
        double c = std::cos(angle), s = std::sin(angle);
        double x0 = x[size_t(2 * i)], x1 = x[size_t(2 * i + 1)];
        x[size_t(2 * i)] = x0 * c - x1 * s;
        x[size_t(2 * i + 1)] = x0 * s + x1 * c;
    }
    return x;
}

namespace detail {

template <typename T>
inline void rope_rotate(T* x, int d, int position, double theta, bool inverse) {
    for (int i = 0; i * 2 < d; ++i) {
        double angle = double(position) * std::pow(theta, -2.0 * i / d);
        T c = T(std::cos(angle)), s = T(std::sin(angle));
        if (inverse) s = -s;
        T x0 = x[2 * i], x1 = x[2 * i + 1];
        x[2 * i] = x0 * c - x1 * s;
        x[2 * i + 1] = x0 * s + x1 * c;
    }
}

// Row-wise rmsnorm over an N x D matrix; rms_inv[i] caches 1/sqrt(ms + eps).
template <typename T>
inline void rmsnorm_rows(Matrix<T>& out, std::vector<T>& rms_inv, const Matrix<T>& x, const Matrix<T>& weight,
                         double eps) {
    const int D = x.cols;
    out.rows = x.rows;
    out.cols = D;
    out.data.resize(size_t(x.rows) * D);
    rms_inv.resize(size_t(x.rows));
    for (int i = 0; i < x.rows; ++i) {
        const T* xi = x.row(i);
        double ms = 0.0;
        for (int k = 0; k < D; ++k) ms += double(xi[k]) * double(xi[k]);
        T r = T(1.0 / std::sqrt(ms / D + eps));
        rms_inv[size_t(i)] = r;
        T* oi = out.row(i);
        const T* w = weight.row(0);
        for (int k = 0; k < D; ++k) oi[k] = w[k] * xi[k] * r;
    }
}

// dx ASSIGNED, dw accumulated. dx_k = dy_k w_k r - x_k r^3 / D * sum_j dy_j w_j x_j
template <typename T>
inline void rmsnorm_rows_backward(Matrix<T>& dx, Matrix<T>& dw, const Matrix<T>& x, const Matrix<T>& weight,
                                  const std::vector<T>& rms_inv, const Matrix<T>& dy) {
    const int D = x.cols;
    dx.rows = x.rows;
    dx.cols = D;
    dx.data.resize(size_t(x.rows) * D);
    for (int i = 0; i < x.rows; ++i) {
        const T* xi = x.row(i);
        const T* dyi = dy.row(i);
        const T* w = weight.row(0);
        T* dwr = dw.row(0);
        const T r = rms_inv[size_t(i)];
        T s = 0;
        for (int k = 0; k < D; ++k) s += dyi[k] * w[k] * xi[k];
        const T coeff = r * r * r * s / T(D);
        T* dxi = dx.row(i);
        for (int k = 0; k < D; ++k) {
            dxi[k] = dyi[k] * w[k] * r - xi[k] * coeff;
            dwr[k] += dyi[k] * xi[k] * r;
        }
    }
}

template <typename T>
inline T silu(T z) {
    T s = T(1) / (T(1) + std::exp(-z));
    return z * s;
}

template <typename T>
inline T silu_grad(T z) {
    T s = T(1) / (T(1) + std::exp(-z));
    return s * (T(1) + z * (T(1) - s));
}

} // namespace detail

// y(N x out) = x(N x in) * w(out x in)^T + b(1 x out)
template <typename T>
inline void affine_forward(Matrix<T>& y, const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
    if (x.cols != w.cols || w.rows != b.cols) throw ShapeError("affine shape mismatch");
    matmul_nt(y, x, w);
    for (int i = 0; i < y.rows; ++i) {
        T* yi = y.row(i);
        const T* bb = b.row(0);
        for (int j = 0; j < y.cols; ++j) yi[j] += bb[j];
    }
}

// dx ASSIGNED; dw, db accumulated.
template <typename T>
inline void affine_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>& dx,
                            Matrix<T>& dw, Matrix<T>& db) {
    matmul(dx, dy, w);
    matmul_tn_acc(dw, dy, x);
    for (int i = 0; i < dy.rows; ++i) axpy(db.row(0), T(1), dy.row(i), dy.cols);
}

// SwiGLU feed-forward for a single vector (standalone reference op; the
// sequence path lives in forward()).
inline std::vector<double> swiglu_ffn(const std::vector<double>& x, const Matrix<double>& w_gate,
                                      const Matrix<double>& w_up, const Matrix<double>& w_down) {
    if (int(x.size()) != w_gate.cols || w_up.cols != w_gate.cols || w_down.cols != w_gate.rows) {
        throw ShapeError("swiglu shape mismatch");
    }
    const int I = w_gate.rows, D = w_down.rows;
    std::vector<double> act(static_cast<size_t>(I));
    for (int i = 0; i < I; ++i) {
        double g = dot(w_gate.row(i), x.data(), int(x.size()));
        double u = dot(w_up.row(i), x.data(), int(x.size()));
        act[size_t(i)] = detail::silu(g) * u;
    }
    std::vector<double> out(static_cast<size_t>(D));
    for (int d = 0; d < D; ++d) out[size_t(d)] = dot(w_down.row(d), act.data(), I);
    return out;
}

// ---- attention ----

template <typename T>
struct AttentionWork {
    Matrix<T> q, k, v;    // q: N x D, k/v: N x kvD, rope applied to q and k
    std::vector<T> probs; // n_heads * N * N, p(h,i,j); zero where not allowed
    Matrix<T> ctx;        // N x D
    Matrix<T> out;        // N x D
};

// Grouped-query attention over pre-normalized hidden states. A key j is
// visible to query i iff j <= i (when causal) and attention_mask[j] is true.
// A query whose visible set is empty gets a zero context vector. Masked
// positions still issue queries over earlier content so boundary positions
// carry usable states; only the loss mask decides whether anything reads
// them.
template <typename T>
void attention_forward(const Matrix<T>& xn, const LayerParams<T>& lw, const std::vector<uint8_t>& mask,
                       const ModelConfig& cfg, bool causal, AttentionWork<T>& work) {
    const int N = xn.rows, D = cfg.hidden_size, hd = cfg.head_dim();
    const int H = cfg.n_heads, group = cfg.n_heads / cfg.n_kv_heads;
    if (xn.cols != D) throw ShapeError("attention input width mismatch");
    if (int(mask.size()) != N) throw ShapeError("attention mask length mismatch");

    matmul_nt(work.q, xn, lw.wq);
    matmul_nt(work.k, xn, lw.wk);
    matmul_nt(work.v, xn, lw.wv);
    for (int i = 0; i < N; ++i) {
        for (int h = 0; h < H; ++h) detail::rope_rotate(work.q.row(i) + h * hd, hd, i, cfg.rope_theta, false);
        for (int g = 0; g < cfg.n_kv_heads; ++g)
            detail::rope_rotate(work.k.row(i) + g * hd, hd, i, cfg.rope_theta, false);
    }

    const double inv_sqrt = 1.0 / std::sqrt(double(hd));
    work.probs.assign(size_t(H) * N * N, T(0));
    work.ctx = Matrix<T>(N, D);
    std::vector<double> scores(static_cast<size_t>(N));
    for (int h = 0; h < H; ++h) {
        const int g = h / group;
        for (int i = 0; i < N; ++i) {
            const T* qi = work.q.row(i) + h * hd;
            const int j_end = causal ? i + 1 : N;
            double max_score = -1e300;
            for (int j = 0; j < j_end; ++j) {
                if (!mask[size_t(j)]) continue;
                double s = double(dot(qi, work.k.row(j) + g * hd, hd)) * inv_sqrt;
                scores[size_t(j)] = s;
                if (s > max_score) max_score = s;
            }
            if (max_score == -1e300) continue; // nothing visible: zero context
            double denom = 0.0;
            for (int j = 0; j < j_end; ++j) {
                if (mask[size_t(j)]) denom += std::exp(scores[size_t(j)] - max_score);
            }
            T* prow = work.probs.data() + (size_t(h) * N + size_t(i)) * N;
            T* ci = work.ctx.row(i) + h * hd;
            for (int j = 0; j < j_end; ++j) {
                if (!mask[size_t(j)]) continue;
                T p = T(std::exp(scores[size_t(j)] - max_score) / denom);
                prow[j] = p;
                axpy(ci, p, work.v.row(j) + g * hd, hd);
            }
        }
    }
    matmul_nt(work.out, work.ctx, lw.wo);
}

template <typename T>
Matrix<T> gqa_attention(const Matrix<T>& hidden, const LayerParams<T>& lw, const std::vector<uint8_t>& mask,
                        const ModelConfig& cfg, bool causal = true) {
    AttentionWork<T> work;
    attention_forward(hidden, lw, mask, cfg, causal, work);
    return work.out;
}

// d_xn ACCUMULATED; layer weight grads accumulated into g.
template <typename T>
void attention_backward(const Matrix<T>& xn, const LayerParams<T>& lw, const std::vector<uint8_t>& mask,
                        const ModelConfig& cfg, bool causal, const AttentionWork<T>& work, const Matrix<T>& dout,
                        Matrix<T>& d_xn, LayerParams<T>& g) {
    const int N = xn.rows, D = cfg.hidden_size, hd = cfg.head_dim();
    const int H = cfg.n_heads, group = cfg.n_heads / cfg.n_kv_heads;
    const T inv_sqrt = T(1.0 / std::sqrt(double(hd)));

    Matrix<T> dctx;
    matmul(dctx, dout, lw.wo);
    matmul_tn_acc(g.wo, dout, work.ctx);

    Matrix<T> dq(N, D), dk(N, cfg.kv_dim()), dv(N, cfg.kv_dim());
    std::vector<T> dp(static_cast<size_t>(N));
    for (int h = 0; h < H; ++h) {
        const int g_kv = h / group;
        for (int i = 0; i < N; ++i) {
            const int j_end = causal ? i + 1 : N;
            const T* prow = work.probs.data() + (size_t(h) * N + size_t(i)) * N;
            const T* dci = dctx.row(i) + h * hd;
            T dot_pd = 0;
            for (int j = 0; j < j_end; ++j) {
                if (prow[j] == T(0)) {
                    dp[size_t(j)] = 0;
                    continue;
                }
                dp[size_t(j)] = dot(dci, work.v.row(j) + g_kv * hd, hd);
                dot_pd += prow[j] * dp[size_t(j)];
            }
            T* dqi = dq.row(i) + h * hd;
            const T* qi = work.q.row(i) + h * hd;
            for (int j = 0; j < j_end; ++j) {
                const T p = prow[j];
                if (p == T(0)) continue;
                const T ds = p * (dp[size_t(j)] - dot_pd) * inv_sqrt;
                axpy(dqi, ds, work.k.row(j) + g_kv * hd, hd);
                axpy(dk.row(j) + g_kv * hd, ds, qi, hd);
                axpy(dv.row(j) + g_kv * hd, p, dci, hd);
            }
        }
    }
    for (int i = 0; i < N; ++i) {
        for (int h = 0; h < H; ++h) detail::rope_rotate(dq.row(i) + h * hd, hd, i, cfg.rope_theta, true);
        for (int g_kv = 0; g_kv < cfg.n_kv_heads; ++g_kv)
            detail::rope_rotate(dk.row(i) + g_kv * hd, hd, i, cfg.rope_theta, true);
    }
    matmul_acc(d_xn, dq, lw.wq);
    matmul_acc(d_xn, dk, lw.wk);
    matmul_acc(d_xn, dv, lw.wv);
    matmul_tn_acc(g.wq, dq, xn);
    matmul_tn_acc(g.wk, dk, xn);
    matmul_tn_acc(g.wv, dv, xn);
}

// ---- full model ----

template <typename T>
struct LayerCache {
    Matrix<T> x_in;     // residual stream entering the layer
    Matrix<T> xn_attn;  // rmsnorm output feeding attention
    std::vector<T> rms_inv_attn;
    AttentionWork<T> attn;
    Matrix<T> x_mid;    // residual stream after attention
    Matrix<T> xn_ffn;
    std::vector<T> rms_inv_ffn;
    Matrix<T> gate_pre, up, act; // N x I
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    Matrix<T> x_final; // residual stream before the final norm
    std::vector<T> rms_inv_final;
    Matrix<T> hidden;  // N x D
};

// Modality-appropriate embedding per position: token rows come from the
// lookup table, patch rows from the linear projection plus bias.
template <typename T>
Matrix<T> embed(const SequenceInput& input, const Parameters<T>& params, const ModelConfig& cfg) {
    if (input.patch_dim != cfg.patch_dim) {
        throw ShapeError("input patch_dim " + std::to_string(input.patch_dim) + " != model patch_dim " +
                         std::to_string(cfg.patch_dim));
    }
    const int D = cfg.hidden_size;
    Matrix<T> x(input.n, D);
    std::vector<T> patch(size_t(cfg.patch_dim));
    for (int i = 0; i < input.n; ++i) {
        T* xi = x.row(i);
        if (input.is_token[size_t(i)]) {
            uint32_t id = input.tokens[size_t(i)];
            if (id >= uint32_t(cfg.vocab_size)) {
                throw UnknownId("token id " + std::to_string(id) + " >= vocab size " +
                                std::to_string(cfg.vocab_size));
            }
            const T* e = params.token_embedding.row(int(id));
            for (int d = 0; d < D; ++d) xi[d] = e[d];
        } else {
            const float* src = input.patch(i);
            for (int k = 0; k < cfg.patch_dim; ++k) patch[size_t(k)] = T(src[k]);
            const T* b = params.patch_proj_b.row(0);
            for (int d = 0; d < D; ++d) xi[d] = b[d] + dot(params.patch_proj_w.row(d), patch.data(), cfg.patch_dim);
        }
    }
    return x;
}

// embed -> n_layers x (rmsnorm, attention, residual; rmsnorm, swiglu,
// residual) -> final rmsnorm. Returns the final hidden states; fills cache
// when given one (required later for backward()).
template <typename T>
Matrix<T> forward(const SequenceInput& input, const Parameters<T>& params, const ModelConfig& cfg,
                  ForwardCache<T>* cache = nullptr) {
    if (input.n > cfg.max_positions) {
        throw LengthError("sequence length " + std::to_string(input.n) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
    }
    if (int(input.attention_mask.size()) != input.n) throw ShapeError("attention mask length mismatch");
    const int N = input.n, I = cfg.intermediate_size;

    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c.layers.resize(size_t(cfg.n_layers));

    Matrix<T> x = embed(input, params, cfg);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerCache<T>& lc = c.layers[size_t(l)];
        const LayerParams<T>& lw = params.layers[size_t(l)];
        lc.x_in = x;
        detail::rmsnorm_rows(lc.xn_attn, lc.rms_inv_attn, x, lw.attn_norm, cfg.rms_eps);
        attention_forward(lc.xn_attn, lw, input.attention_mask, cfg, true, lc.attn);
        for (size_t idx = 0; idx < x.data.size(); ++idx) x.data[idx] += lc.attn.out.data[idx];
        lc.x_mid = x;
        detail::rmsnorm_rows(lc.xn_ffn, lc.rms_inv_ffn, x, lw.ffn_norm, cfg.rms_eps);
        matmul_nt(lc.gate_pre, lc.xn_ffn, lw.w_gate);
        matmul_nt(lc.up, lc.xn_ffn, lw.w_up);
        lc.act = Matrix<T>(N, I);
        for (size_t idx = 0; idx < lc.act.data.size(); ++idx) {
            lc.act.data[idx] = detail::silu(lc.gate_pre.data[idx]) * lc.up.data[idx];
        }
        Matrix<T> ffn_out;
        matmul_nt(ffn_out, lc.act, lw.w_down);
        for (size_t idx = 0; idx < x.data.size(); ++idx) x.data[idx] += ffn_out.data[idx];
    }
    c.x_final = x;
    detail::rmsnorm_rows(c.hidden, c.rms_inv_final, x, params.final_norm, cfg.rms_eps);
    return c.hidden;
}

// Affine map D -> P^2*C; row i predicts the normalized patch at i+1.
template <typename T>
Matrix<T> regression_head(const Matrix<T>& hidden, const Parameters<T>& params) {
    Matrix<T> out;
    affine_forward(out, hidden, params.reg_w, params.reg_b);
    return out;
}

// Affine map D -> V, untied from the embedding table.
template <typename T>
Matrix<T> classification_head(const Matrix<T>& hidden, const Parameters<T>& params) {
    Matrix<T> out;
    affine_forward(out, hidden, params.cls_w, params.cls_b);
    return out;
}

// Accumulates parameter gradients for d_loss/d_hidden into grads (which the
// caller zeroes). Head gradients are the caller's business (affine_backward
// on the head outputs produces d_hidden).
template <typename T>
void backward(const SequenceInput& input, const Parameters<T>& params, const ModelConfig& cfg,
              const ForwardCache<T>& cache, const Matrix<T>& d_hidden, Parameters<T>& grads) {
    const int N = input.n, I = cfg.intermediate_size;
    Matrix<T> dx;
    detail::rmsnorm_rows_backward(dx, grads.final_norm, cache.x_final, params.final_norm, cache.rms_inv_final,
                                  d_hidden);
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerCache<T>& lc = cache.layers[size_t(l)];
        const LayerParams<T>& lw = params.layers[size_t(l)];
        LayerParams<T>& lg = grads.layers[size_t(l)];

        // ffn block: x = x_mid + w_down(silu(gate_pre) ⊙ up)
        Matrix<T> dact;
        matmul(dact, dx, lw.w_down);
        matmul_tn_acc(lg.w_down, dx, lc.act);
        Matrix<T> dgate(N, I), dup(N, I);
        for (size_t idx = 0; idx < dact.data.size(); ++idx) {
            const T g = lc.gate_pre.data[idx];
            dup.data[idx] = dact.data[idx] * detail::silu(g);
            dgate.data[idx] = dact.data[idx] * lc.up.data[idx] * detail::silu_grad(g);
        }
        Matrix<T> d_xn(N, cfg.hidden_size);
        matmul_acc(d_xn, dgate, lw.w_gate);
        matmul_acc(d_xn, dup, lw.w_up);
        matmul_tn_acc(lg.w_gate, dgate, lc.xn_ffn);
        matmul_tn_acc(lg.w_up, dup, lc.xn_ffn);
        Matrix<T> dres;
        detail::rmsnorm_rows_backward(dres, lg.ffn_norm, lc.x_mid, lw.ffn_norm, lc.rms_inv_ffn, d_xn);
        for (size_t idx = 0; idx < dx.data.size(); ++idx) dx.data[idx] += dres.data[idx];

        // attention block: x_mid = x_in + wo(attend(xn_attn))
        Matrix<T> d_xn_attn(N, cfg.hidden_size);
        attention_backward(lc.xn_attn, lw, input.attention_mask, cfg, true, lc.attn, dx, d_xn_attn, lg);
        detail::rmsnorm_rows_backward(dres, lg.attn_norm, lc.x_in, lw.attn_norm, lc.rms_inv_attn, d_xn_attn);
        for (size_t idx = 0; idx < dx.data.size(); ++idx) dx.data[idx] += dres.data[idx];
    }

    // embedding backward
    std::vector<T> patch(size_t(cfg.patch_dim));
    for (int i = 0; i < N; ++i) {
        const T* dxi = dx.row(i);
        if (input.is_token[size_t(i)]) {
            axpy(grads.token_embedding.row(int(input.tokens[size_t(i)])), T(1), dxi, cfg.hidden_size);
        } else {
            const float* src = input.patch(i);
            for (int k = 0; k < cfg.patch_dim; ++k) patch[size_t(k)] = T(src[k]);
            for (int d = 0; d < cfg.hidden_size; ++d) {
                axpy(grads.patch_proj_w.row(d), dxi[d], patch.data(), cfg.patch_dim);
            }
            axpy(grads.patch_proj_b.row(0), T(1), dxi, cfg.hidden_size);
        }
    }
}

// ---- checkpoint I/O ----

// Layout: magic "PXCKPT01"; u32 config block length + key=value lines; u32
// tensor count; per tensor u32 name length, name bytes, u32 rank, u32 dims,
// then float32 little-endian values.
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Matrix<float>> tensors;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::vector<std::pair<std::string, const Matrix<float>*>>& tensors);
void save_checkpoint(const std::string& path, const ModelConfig& cfg, Parameters<float>& params);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds Parameters from checkpoint tensors; throws ConfigMismatch when a
// tensor is missing or has the wrong shape for the stored config.
Parameters<float> params_from_checkpoint(const Checkpoint& ckpt);

} // namespace pixeltext
