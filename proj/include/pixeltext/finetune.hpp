#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pixeltext/errors.hpp"
#include "pixeltext/model.hpp"
#include "pixeltext/patchio.hpp"
#include "pixeltext/render.hpp"
#include "pixeltext/rng.hpp"
#include "pixeltext/tokenizer.hpp"

namespace pixeltext {

enum class TaskKind : uint8_t { classification, regression };
enum class InputArity : uint8_t { single, pair };
enum class MetricKind : uint8_t { acc, f1, mcc, spearman };
enum class RenderMode : uint8_t { rgb, grayscale, binary };
enum class TaskModality : uint8_t { pixel, text, dual };

const char* metric_name(MetricKind m);

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::classification;
    int n_classes = 2; // classification only
    InputArity arity = InputArity::single;
    MetricKind metric = MetricKind::acc;
    RenderMode render_mode = RenderMode::rgb;
    TaskModality modality = TaskModality::pixel;

    void validate() const {
        bool spearman = metric == MetricKind::spearman;
        bool regression = kind == TaskKind::regression;
        if (spearman != regression) throw ConfigMismatch("spearman pairs with regression tasks only");
        if (kind == TaskKind::classification && n_classes < 2) {
            throw ConfigMismatch("classification needs at least 2 classes");
        }
    }

    int head_width() const { return kind == TaskKind::classification ? n_classes : 1; }
};

// ---- pooling and heads ----

// State at the last content position: the last attended patch for pixel
// inputs, the last real token otherwise (pads and eos are never content).
template <typename T>
std::vector<T> pooled_repr(const Matrix<T>& hidden, const SequenceInput& in) {
    if (hidden.rows != in.n) throw ShapeError("pooled_repr row mismatch");
    int last = -1;
    for (int i = 0; i < in.n; ++i) {
        if (in.roles[size_t(i)] == PatchRole::content) last = i;
    }
    if (last < 0) throw EmptySequence("no content position to pool");
    return std::vector<T>(hidden.row(last), hidden.row(last) + hidden.cols);
}

// Index pooled by pooled_repr (for routing gradients back).
int pooled_index(const SequenceInput& in);

struct TaskHead {
    Matrix<float> w; // k x D
    Matrix<float> b; // 1 x k
};

// Fresh affine head, weights normal(0, 0.02), bias zero; the LM heads stay in
// the parameter set but are out of the fine-tuning loss path.
TaskHead make_task_head(const ModelConfig& cfg, const TaskSpec& task, uint64_t seed);

struct FinetuneModel {
    ModelConfig config;
    Parameters<float> params;
    TaskHead head;
};

// Rebuilds the backbone from a checkpoint and attaches a task head; throws
// ConfigMismatch when the checkpoint tensors disagree with its config.
FinetuneModel attach_task_head(const Checkpoint& ckpt, const TaskSpec& task, uint64_t seed);

// ---- render-mode adaptation ----

namespace detail {

// Channel mean anchored at channel 0: base + sum(other - base) / C. When all
// channels hold the same value the differences are exactly zero and the mean
// is that value bit-for-bit, which a plain (a+b+c)/C does not guarantee (the
// 3a add can cross a binade and round by more than half an ulp of a).
template <typename T, typename Get>
T channel_mean(Get get, int channels) {
    T base = get(0);
    T acc = 0;
    for (int c = 1; c < channels; ++c) acc += get(c) - base;
    return base + acc / T(channels);
}

} // namespace detail

// Collapses the patch projection from P^2*C inputs to P^2 by averaging the C
// channel weights at each pixel (bias unchanged), and collapses the
// regression head outputs the same way so the parameter set stays
// self-consistent. adapted(gray) == original(gray/C replicated C times).
template <typename T>
Parameters<T> adapt_patch_embedding_channels(const Parameters<T>& params, const ModelConfig& cfg,
                                             int channels = 3) {
    if (channels <= 0 || cfg.patch_dim % channels != 0) {
        throw ShapeError("patch_dim " + std::to_string(cfg.patch_dim) + " not divisible by channels " +
                         std::to_string(channels));
    }
    const int px = cfg.patch_dim / channels;
    Parameters<T> out = params;
    out.patch_proj_w = Matrix<T>(cfg.hidden_size, px);
    for (int d = 0; d < cfg.hidden_size; ++d) {
        const T* src = params.patch_proj_w.row(d);
        T* dst = out.patch_proj_w.row(d);
        for (int p = 0; p < px; ++p) {
            dst[p] = detail::channel_mean<T>([&](int c) { return src[p * channels + c]; }, channels);
        }
    }
    out.reg_w = Matrix<T>(px, cfg.hidden_size);
    out.reg_b = Matrix<T>(1, px);
    for (int p = 0; p < px; ++p) {
        for (int d = 0; d < cfg.hidden_size; ++d) {
            out.reg_w.at(p, d) =
                detail::channel_mean<T>([&](int c) { return params.reg_w.at(p * channels + c, d); }, channels);
        }
        out.reg_b.at(0, p) =
            detail::channel_mean<T>([&](int c) { return params.reg_b.at(0, p * channels + c); }, channels);
    }
    return out;
}

// The matching config for adapted parameters (patch projection width shrinks).
ModelConfig adapted_config(const ModelConfig& cfg, int channels = 3);

// ---- dual inputs ----

// Patches sliced to the strip's used length, right-filled with all-white pad
// patches to exactly patch_budget slots (attention-masked), then the tokens.
SequenceInput build_dual_input(const RenderedStrip& strip, const std::vector<uint32_t>& tokens,
                               int patch_budget, int patch_px, int max_positions, uint32_t pad_id);

// ---- metrics ----

double metric_acc(const std::vector<int>& preds, const std::vector<int>& labels);
// Binary positive-class F1; inputs binarized as (value != 0).
double metric_f1(const std::vector<int>& preds, const std::vector<int>& labels);
// Matthews correlation; an all-zero marginal is degenerate and yields 0 with
// the flag set.
double metric_mcc(const std::vector<int>& preds, const std::vector<int>& labels, bool* degenerate = nullptr);
// Spearman rank correlation with average ranks for ties; needs >= 2 points.
double metric_spearman(const std::vector<double>& preds, const std::vector<double>& labels);

// ---- task data ----

struct TaskTable {
    bool has_pair = false;
    std::vector<std::string> text_a, text_b;
    std::vector<std::string> labels;

    size_t size() const { return labels.size(); }
};

// Tab-separated UTF-8 file with a header row of {text_a, [text_b], label}.
TaskTable load_task_table(const std::string& path);

// Sorted unique label strings (classification class names).
std::vector<std::string> class_names(const TaskTable& table);

// Numeric labels: class index into class_names for classification, parsed
// decimal for regression.
std::vector<float> numeric_labels(const TaskTable& table, const TaskSpec& task);

// Same, but classification labels map through an explicit name list (index =
// position in names) so separate tables share one mapping. Labels missing
// from the list throw ConfigMismatch.
std::vector<float> numeric_labels(const TaskTable& table, const TaskSpec& task,
                                  const std::vector<std::string>& names);

// Model inputs for a task table: renders (in the task's render mode) for the
// pixel modality, token ids for text, patches-plus-tokens for dual.
// patch_budget 0 sizes the dual patch region to the longest strip.
std::vector<SequenceInput> build_task_inputs(const TaskTable& table, const TaskSpec& task,
                                             const RenderConfig& rcfg, const GlyphSet& glyphs,
                                             const Vocab& vocab, const ModelConfig& mcfg,
                                             int patch_budget = 0);

// ---- fine-tuning ----

struct FinetuneConfig {
    int max_steps = 500;
    int batch_size = 8;
    double lr = 1e-4;
    double clip_norm = 1.0;
    int eval_every = 50;
    int patience = 10; // evaluations without improvement
    bool freeze_backbone = false;
    uint64_t seed = 0;
};

struct EvalReport {
    std::string metric;
    double value = 0.0;
    int n_samples = 0;
    bool degenerate = false;
    std::vector<std::vector<long>> confusion; // k x k, rows = label, cols = pred
};

// Key-value lines plus the machine line "METRIC <name> <value>".
std::string format_report(const EvalReport& report);

EvalReport evaluate_task(const ModelConfig& cfg, const Parameters<float>& params, const TaskHead& head,
                         const TaskSpec& task, const std::vector<SequenceInput>& inputs,
                         const std::vector<float>& labels);

struct FinetuneResult {
    EvalReport dev;
    int steps_run = 0;
    int best_step = 0;
    Parameters<float> params;
    TaskHead head;
};

// Full-model fine-tuning (freeze_backbone trains the head alone) with AdamW,
// dev evaluation every eval_every steps, early stopping after `patience`
// evaluations without improvement; returns the best-scoring snapshot.
FinetuneResult finetune(const ModelConfig& cfg, const Parameters<float>& init_params, const TaskSpec& task,
                        const std::vector<SequenceInput>& train_inputs, const std::vector<float>& train_labels,
                        const std::vector<SequenceInput>& dev_inputs, const std::vector<float>& dev_labels,
                        const FinetuneConfig& fcfg, std::ostream* log = nullptr);

} // namespace pixeltext
