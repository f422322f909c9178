#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pixeltext/errors.hpp"
#include "pixeltext/model.hpp"
#include "pixeltext/patchio.hpp"
#include "pixeltext/rng.hpp"
#include "pixeltext/tensor.hpp"

namespace pixeltext {

// Batch kinds, in the order the text:image:pair ratio triple is written.
enum class MixKind : uint8_t { text = 0, pixel = 1, pair = 2 };

inline const char* mix_kind_name(MixKind k) {
    switch (k) {
        case MixKind::text: return "text";
        case MixKind::pixel: return "pixel";
        default: return "pair";
    }
}

struct TrainConfig {
    int steps = 2000;
    int warmup_steps = 200;
    double peak_lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
    int batch_size = 8;
    int ratio_text = 4;
    int ratio_pixel = 4;
    int ratio_pair = 2;
    uint64_t seed = 0;

    void validate() const {
        if (steps < 0 || batch_size <= 0) throw ConfigMismatch("steps must be >= 0 and batch_size positive");
        if (warmup_steps < 0 || warmup_steps > steps) {
            throw ConfigMismatch("warmup_steps must lie in [0, steps]");
        }
        if (ratio_text < 0 || ratio_pixel < 0 || ratio_pair < 0) {
            throw ConfigMismatch("mix ratio entries must be >= 0");
        }
        if (peak_lr < 0 || clip_norm < 0 || weight_decay < 0) {
            throw ConfigMismatch("rates must be >= 0");
        }
    }
};

// ---- sequence builders ----

// Patch positions only, trailing pad positions dropped (they are
// attention-masked and loss-excluded, so removing them changes nothing).
SequenceInput build_pixel_sequence(const PatchSequence& ps);

// Token positions only; appends the eos token unless told otherwise. Roles
// are content except for pad tokens, and the masks follow the same
// next-element rule as patch sequences.
SequenceInput build_text_sequence(const std::vector<uint32_t>& ids, int patch_dim, uint32_t eos_id,
                                  uint32_t pad_id, bool append_eos = true);

// Patch positions first (trailing pads dropped), then the token sequence.
// Position i's loss routes by the modality of element i+1: patch target ->
// regression, token target -> classification; the last patch position (the
// eos patch) predicts the first token. Zero tokens degenerates to the pixel
// sequence and zero patches to the text sequence.
SequenceInput build_pair_sequence(const PatchSequence& ps, const std::vector<uint32_t>& ids, uint32_t eos_id,
                                  uint32_t pad_id, int max_positions, bool append_eos = true);

// Shard record for a built sequence: patch values back to raw bytes (exact,
// since they were bytes / 255), tokens and masks verbatim. Patch positions
// must precede token positions. Modality falls out of what is present.
ShardRecord record_from_sequence(const SequenceInput& in);

// Inverse of record_from_sequence: bytes / 255 patches, roles re-derived
// (from pixels for patches, pad_id for tokens), stored masks kept verbatim.
SequenceInput sequence_from_record(const ShardRecord& rec, uint32_t pad_id = 256);

// Positions whose loss routes to the regression head / classification head.
std::vector<uint8_t> regression_positions(const SequenceInput& in);
std::vector<uint8_t> classification_positions(const SequenceInput& in);

// targets[i] = tokens[i+1] wherever classification_positions is set (0 elsewhere).
std::vector<uint32_t> classification_targets(const SequenceInput& in);

// Row i = patch i+1 standardized to zero mean, unit (population) variance
// over its own values, wherever regression_positions is set; zero elsewhere.
template <typename T>
Matrix<T> regression_targets(const SequenceInput& in, double eps = 1e-6) {
    const std::vector<uint8_t> want = regression_positions(in);
    Matrix<T> out(in.n, in.patch_dim);
    for (int i = 0; i < in.n; ++i) {
        if (!want[size_t(i)]) continue;
        const float* src = in.patch(i + 1);
        double mean = 0.0;
        for (int k = 0; k < in.patch_dim; ++k) mean += double(src[k]);
        mean /= double(in.patch_dim);
        double var = 0.0;
        for (int k = 0; k < in.patch_dim; ++k) {
            double d = double(src[k]) - mean;
            var += d * d;
        }
        var /= double(in.patch_dim);
        double inv = 1.0 / std::sqrt(var + eps);
        T* dst = out.row(i);
        for (int k = 0; k < in.patch_dim; ++k) dst[k] = T((double(src[k]) - mean) * inv);
    }
    return out;
}

// ---- losses ----

// Unnormalized building block: adds the summed squared error (averaged over
// the patch dimension, not over positions) and the position count; d_pred,
// when given, receives the gradient of the SUM at masked rows.
template <typename T>
void next_patch_loss_sum(const Matrix<T>& pred, const Matrix<T>& target, const std::vector<uint8_t>& mask,
                         double& loss_sum, int& n_positions, Matrix<T>* d_pred = nullptr) {
    if (pred.rows != target.rows || pred.cols != target.cols) throw ShapeError("patch loss shape mismatch");
    if (int(mask.size()) != pred.rows) throw ShapeError("patch loss mask length mismatch");
    const int dim = pred.cols;
    if (d_pred) *d_pred = Matrix<T>(pred.rows, pred.cols);
    for (int i = 0; i < pred.rows; ++i) {
        if (!mask[size_t(i)]) continue;
        const T* p = pred.row(i);
        const T* t = target.row(i);
        double se = 0.0;
        for (int k = 0; k < dim; ++k) {
            double d = double(p[k]) - double(t[k]);
            se += d * d;
        }
        loss_sum += se / double(dim);
        ++n_positions;
        if (d_pred) {
            T* g = d_pred->row(i);
            for (int k = 0; k < dim; ++k) g[k] = T(2.0 / double(dim)) * (p[k] - t[k]);
        }
    }
}

// Mean over masked positions of the per-patch mean squared error. Zero
// masked positions is defined as 0 and raises the optional warning flag.
template <typename T>
double next_patch_loss(const Matrix<T>& pred, const Matrix<T>& target, const std::vector<uint8_t>& mask,
                       Matrix<T>* d_pred = nullptr, bool* no_positions = nullptr) {
    double sum = 0.0;
    int n = 0;
    next_patch_loss_sum(pred, target, mask, sum, n, d_pred);
    if (no_positions) *no_positions = n == 0;
    if (n == 0) return 0.0;
    if (d_pred) {
        for (auto& v : d_pred->data) v = T(double(v) / double(n));
    }
    return sum / double(n);
}

// Summed cross-entropy (natural log) building block; d_logits, when given,
// receives softmax - onehot at masked rows (gradient of the SUM).
template <typename T>
void next_token_loss_sum(const Matrix<T>& logits, const std::vector<uint32_t>& targets,
                         const std::vector<uint8_t>& mask, double& loss_sum, int& n_positions,
                         Matrix<T>* d_logits = nullptr) {
    if (int(mask.size()) != logits.rows || int(targets.size()) != logits.rows) {
        throw ShapeError("token loss mask length mismatch");
    }
    const int V = logits.cols;
    if (d_logits) *d_logits = Matrix<T>(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        if (!mask[size_t(i)]) continue;
        if (targets[size_t(i)] >= uint32_t(V)) {
            throw UnknownId("loss target id " + std::to_string(targets[size_t(i)]) + " >= vocab size " +
                            std::to_string(V));
        }
        const T* row = logits.row(i);
        double mx = double(row[0]);
        for (int v = 1; v < V; ++v) mx = std::max(mx, double(row[v]));
        double denom = 0.0;
        for (int v = 0; v < V; ++v) denom += std::exp(double(row[v]) - mx);
        const int tgt = int(targets[size_t(i)]);
        loss_sum += std::log(denom) - (double(row[tgt]) - mx);
        ++n_positions;
        if (d_logits) {
            T* g = d_logits->row(i);
            for (int v = 0; v < V; ++v) g[v] = T(std::exp(double(row[v]) - mx) / denom);
            g[tgt] -= T(1);
        }
    }
}

// Mean cross-entropy over masked positions, natural log.
template <typename T>
double next_token_loss(const Matrix<T>& logits, const std::vector<uint32_t>& targets,
                       const std::vector<uint8_t>& mask, Matrix<T>* d_logits = nullptr,
                       bool* no_positions = nullptr) {
    double sum = 0.0;
    int n = 0;
    next_token_loss_sum(logits, targets, mask, sum, n, d_logits);
    if (no_positions) *no_positions = n == 0;
    if (n == 0) return 0.0;
    if (d_logits) {
        for (auto& v : d_logits->data) v = T(double(v) / double(n));
    }
    return sum / double(n);
}

// ---- schedule ----

// Periodic round-robin expansion of the ratio triple: each period of length
// ratio_text+ratio_pixel+ratio_pair cycles through the kinds, emitting one
// step of every kind that still has quota left in the period. Every window
// of one period length therefore contains exactly the ratio counts.
std::vector<MixKind> mix_schedule(int ratio_text, int ratio_pixel, int ratio_pair, int total_steps);

// Linear warmup from 0 to peak over warmup_steps, then linear decay to 0 at
// cfg.steps.
double lr_at(int step, const TrainConfig& cfg);

// ---- optimizer ----

template <typename T>
struct AdamState {
    std::vector<Matrix<T>> m, v; // aligned with named_tensors order
    int64_t t = 0;
};

template <typename T>
AdamState<T> make_adam_state(Parameters<T>& params) {
    AdamState<T> st;
    for (auto& [name, tensor] : named_tensors(params)) {
        st.m.emplace_back(tensor->rows, tensor->cols);
        st.v.emplace_back(tensor->rows, tensor->cols);
    }
    return st;
}

// Decoupled weight decay, bias-corrected moments. Throws NonFiniteGradient
// before touching any state if a gradient entry is NaN or infinite.
template <typename T>
void adamw_step(Parameters<T>& params, const Parameters<T>& grads, AdamState<T>& state, double lr,
                const TrainConfig& cfg) {
    auto pt = named_tensors(params);
    auto gt = named_tensors(const_cast<Parameters<T>&>(grads));
    for (auto& [name, tensor] : gt) {
        for (T v : tensor->data) {
            if (!std::isfinite(double(v))) throw NonFiniteGradient("non-finite gradient in " + name);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    for (size_t t = 0; t < pt.size(); ++t) {
        Matrix<T>& p = *pt[t].second;
        const Matrix<T>& g = *gt[t].second;
        Matrix<T>& m = state.m[t];
        Matrix<T>& v = state.v[t];
        for (size_t i = 0; i < p.data.size(); ++i) {
            if (cfg.weight_decay != 0.0) p.data[i] -= T(lr * cfg.weight_decay) * p.data[i];
            m.data[i] = T(cfg.beta1) * m.data[i] + T(1.0 - cfg.beta1) * g.data[i];
            v.data[i] = T(cfg.beta2) * v.data[i] + T(1.0 - cfg.beta2) * g.data[i] * g.data[i];
            double mhat = double(m.data[i]) / bc1;
            double vhat = double(v.data[i]) / bc2;
            p.data[i] -= T(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

// Scales gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
template <typename T>
double clip_gradients(Parameters<T>& grads, double max_norm) {
    double ss = 0.0;
    for (auto& [name, tensor] : named_tensors(grads)) {
        for (T v : tensor->data) ss += double(v) * double(v);
    }
    double norm = std::sqrt(ss);
    if (max_norm > 0 && norm > max_norm) {
        T scale = T(max_norm / norm);
        for (auto& [name, tensor] : named_tensors(grads)) {
            for (T& v : tensor->data) v *= scale;
        }
    }
    return norm;
}

// ---- training loop ----

struct PretrainData {
    std::vector<SequenceInput> text, pixel, pair;

    const std::vector<SequenceInput>& of(MixKind k) const {
        switch (k) {
            case MixKind::text: return text;
            case MixKind::pixel: return pixel;
            default: return pair;
        }
    }
};

struct StepRecord {
    int step = 0;
    MixKind kind = MixKind::text;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    // components; NaN when the batch kind has no such loss
    double token_loss = 0.0;
    double patch_loss = 0.0;
};

// Tab-separated {step, kind, loss, lr, grad_norm}.
std::string format_step_record(const StepRecord& rec);

// Single-modality batches drawn by a seeded schedule; per-position mean loss
// across the whole batch; gradient accumulation in fixed item order, so two
// runs with one seed produce identical logs.
class Trainer {
  public:
    Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, PretrainData data, uint64_t root_seed);

    Parameters<float>& params() { return params_; }
    const Parameters<float>& params() const { return params_; }
    const ModelConfig& model_config() const { return mcfg_; }
    const TrainConfig& train_config() const { return tcfg_; }
    int current_step() const { return step_; }

    StepRecord run_step();
    // Runs through cfg.steps, writing one log line per step when given a stream.
    std::vector<StepRecord> run(std::ostream* log = nullptr);

  private:
    ModelConfig mcfg_;
    TrainConfig tcfg_;
    PretrainData data_;
    Parameters<float> params_;
    Parameters<float> grads_;
    AdamState<float> adam_;
    std::vector<MixKind> schedule_;
    Rng batch_rng_;
    int step_ = 0;
};

// Whole-set per-position mean losses (token CE, patch MSE) under the current
// parameters; positions route exactly as in training.
struct EvalLosses {
    double token_ce = 0.0;
    double patch_mse = 0.0;
    int token_positions = 0;
    int patch_positions = 0;
};
EvalLosses evaluate_losses(const Parameters<float>& params, const ModelConfig& cfg,
                           const std::vector<SequenceInput>& items);

} // namespace pixeltext
