#include "pixeltext/pretrain.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace pixeltext {

namespace {

void append_token_positions(SequenceInput& in, const std::vector<uint32_t>& toks, uint32_t pad_id) {
    for (uint32_t id : toks) {
        in.is_token.push_back(1);
        in.tokens.push_back(id);
        in.roles.push_back(id == pad_id ? PatchRole::pad : PatchRole::content);
    }
    in.n = int(in.is_token.size());
    in.patches.resize(size_t(in.n) * size_t(in.patch_dim), 0.0f);
}

void finish_masks(SequenceInput& in) {
    in.attention_mask.resize(size_t(in.n));
    in.loss_mask.resize(size_t(in.n));
    for (int i = 0; i < in.n; ++i) {
        in.attention_mask[size_t(i)] = in.roles[size_t(i)] == PatchRole::content ? 1 : 0;
        in.loss_mask[size_t(i)] =
            (i + 1 < in.n && in.roles[size_t(i) + 1] == PatchRole::content) ? 1 : 0;
    }
}

} // namespace

SequenceInput build_pixel_sequence(const PatchSequence& ps) {
    int n_keep = 0;
    for (int i = 0; i < ps.n; ++i) {
        if (ps.roles[size_t(i)] != PatchRole::pad) n_keep = i + 1;
    }
    SequenceInput in;
    in.n = n_keep;
    in.patch_dim = ps.dim;
    in.is_token.assign(size_t(n_keep), 0);
    in.tokens.assign(size_t(n_keep), 0);
    in.patches.assign(ps.patches.begin(), ps.patches.begin() + size_t(n_keep) * size_t(ps.dim));
    in.roles.assign(ps.roles.begin(), ps.roles.begin() + n_keep);
    finish_masks(in);
    return in;
}

SequenceInput build_text_sequence(const std::vector<uint32_t>& ids, int patch_dim, uint32_t eos_id,
                                  uint32_t pad_id, bool append_eos) {
    SequenceInput in;
    in.patch_dim = patch_dim;
    std::vector<uint32_t> toks = ids;
    if (append_eos) toks.push_back(eos_id);
    append_token_positions(in, toks, pad_id);
    finish_masks(in);
    return in;
}

SequenceInput build_pair_sequence(const PatchSequence& ps, const std::vector<uint32_t>& ids, uint32_t eos_id,
                                  uint32_t pad_id, int max_positions, bool append_eos) {
    SequenceInput in = build_pixel_sequence(ps);
    if (!ids.empty()) {
        std::vector<uint32_t> toks = ids;
        if (append_eos) toks.push_back(eos_id);
        append_token_positions(in, toks, pad_id);
        finish_masks(in);
    }
    if (in.n > max_positions) {
        throw LengthError("pair sequence length " + std::to_string(in.n) + " exceeds max positions " +
                          std::to_string(max_positions));
    }
    return in;
}

ShardRecord record_from_sequence(const SequenceInput& in) {
    int np = 0;
    while (np < in.n && !in.is_token[size_t(np)]) ++np;
    for (int i = np; i < in.n; ++i) {
        if (!in.is_token[size_t(i)]) throw ShapeError("patch positions must precede token positions");
    }
    ShardRecord rec;
    rec.patch_dim = in.patch_dim;
    rec.modality = np == 0 ? Modality::text : (np == in.n ? Modality::pixel : Modality::pair);
    rec.patch_bytes.resize(size_t(np) * size_t(in.patch_dim));
    for (size_t k = 0; k < rec.patch_bytes.size(); ++k) {
        rec.patch_bytes[k] = uint8_t(std::lround(double(in.patches[k]) * 255.0));
    }
    rec.tokens.assign(in.tokens.begin() + np, in.tokens.end());
    rec.attention_mask = in.attention_mask;
    rec.loss_mask = in.loss_mask;
    return rec;
}

SequenceInput sequence_from_record(const ShardRecord& rec, uint32_t pad_id) {
    const int np = rec.n_patches(), nt = rec.n_tokens();
    const int n = np + nt;
    if (int(rec.attention_mask.size()) != n || int(rec.loss_mask.size()) != n) {
        throw ShapeError("record masks cover " + std::to_string(rec.attention_mask.size()) + " positions, not " +
                         std::to_string(n));
    }
    SequenceInput in;
    in.n = n;
    in.patch_dim = rec.patch_dim;
    in.is_token.assign(size_t(n), 0);
    in.tokens.assign(size_t(n), 0);
    in.patches.assign(size_t(n) * size_t(rec.patch_dim), 0.0f);
    in.roles.assign(size_t(n), PatchRole::content);
    for (int i = 0; i < np; ++i) {
        float* dst = in.patches.data() + size_t(i) * size_t(rec.patch_dim);
        const uint8_t* src = rec.patch_bytes.data() + size_t(i) * size_t(rec.patch_dim);
        for (int d = 0; d < rec.patch_dim; ++d) dst[d] = float(src[d]) / 255.0f;
        in.roles[size_t(i)] = classify_patch(dst, rec.patch_dim);
    }
    for (int t = 0; t < nt; ++t) {
        size_t pos = size_t(np + t);
        in.is_token[pos] = 1;
        in.tokens[pos] = rec.tokens[size_t(t)];
        in.roles[pos] = rec.tokens[size_t(t)] == pad_id ? PatchRole::pad : PatchRole::content;
    }
    in.attention_mask = rec.attention_mask;
    in.loss_mask = rec.loss_mask;
    return in;
}

std::vector<uint8_t> regression_positions(const SequenceInput& in) {
    std::vector<uint8_t> out(size_t(in.n), 0);
    for (int i = 0; i + 1 < in.n; ++i) {
        out[size_t(i)] = (in.loss_mask[size_t(i)] && !in.is_token[size_t(i) + 1]) ? 1 : 0;
    }
    return out;
}

std::vector<uint8_t> classification_positions(const SequenceInput& in) {
    std::vector<uint8_t> out(size_t(in.n), 0);
    for (int i = 0; i + 1 < in.n; ++i) {
        out[size_t(i)] = (in.loss_mask[size_t(i)] && in.is_token[size_t(i) + 1]) ? 1 : 0;
    }
    return out;
}

std::vector<uint32_t> classification_targets(const SequenceInput& in) {
    std::vector<uint32_t> out(size_t(in.n), 0);
    std::vector<uint8_t> want = classification_positions(in);
    for (int i = 0; i + 1 < in.n; ++i) {
        if (want[size_t(i)]) out[size_t(i)] = in.tokens[size_t(i) + 1];
    }
    return out;
}

std::vector<MixKind> mix_schedule(int ratio_text, int ratio_pixel, int ratio_pair, int total_steps) {
    if (ratio_text < 0 || ratio_pixel < 0 || ratio_pair < 0) {
        throw ConfigMismatch("mix ratio entries must be >= 0");
    }
    const int counts[3] = {ratio_text, ratio_pixel, ratio_pair};
    const int period_len = ratio_text + ratio_pixel + ratio_pair;
    if (period_len <= 0) throw AllZeroRatio("mix ratio is all zero");
    std::vector<MixKind> period;
    period.reserve(size_t(period_len));
    int emitted[3] = {0, 0, 0};
    while (int(period.size()) < period_len) {
        for (int k = 0; k < 3; ++k) {
            if (emitted[k] < counts[k]) {
                period.push_back(MixKind(k));
                ++emitted[k];
            }
        }
    }
    std::vector<MixKind> out(size_t(std::max(total_steps, 0)));
    for (size_t s = 0; s < out.size(); ++s) out[s] = period[s % period.size()];
    return out;
}

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0) step = 0;
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return cfg.peak_lr * double(step) / double(cfg.warmup_steps);
    }
    if (step >= cfg.steps) return 0.0;
    return cfg.peak_lr * double(cfg.steps - step) / double(cfg.steps - cfg.warmup_steps);
}

std::string format_step_record(const StepRecord& rec) {
    std::ostringstream os;
    os << rec.step << '\t' << mix_kind_name(rec.kind) << '\t' << std::setprecision(10) << rec.loss << '\t'
       << rec.lr << '\t' << rec.grad_norm;
    return os.str();
}

Trainer::Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, PretrainData data, uint64_t root_seed)
    : mcfg_(mcfg), tcfg_(tcfg), data_(std::move(data)), batch_rng_(sub_seed(root_seed, "batch")) {
    mcfg_.validate();
    tcfg_.validate();
    schedule_ = mix_schedule(tcfg_.ratio_text, tcfg_.ratio_pixel, tcfg_.ratio_pair, tcfg_.steps);
    const int ratios[3] = {tcfg_.ratio_text, tcfg_.ratio_pixel, tcfg_.ratio_pair};
    for (int k = 0; k < 3; ++k) {
        if (ratios[k] > 0 && data_.of(MixKind(k)).empty()) {
            throw MissingModality(std::string("no data for enabled kind ") + mix_kind_name(MixKind(k)));
        }
    }
    params_ = init_parameters<float>(mcfg_, root_seed);
    grads_ = make_parameters<float>(mcfg_);
    adam_ = make_adam_state(params_);
}

StepRecord Trainer::run_step() {
    const MixKind kind = schedule_[size_t(step_)];
    const auto& pool = data_.of(kind);
    std::vector<const SequenceInput*> items;
    items.reserve(size_t(tcfg_.batch_size));
    for (int b = 0; b < tcfg_.batch_size; ++b) {
        items.push_back(&pool[size_t(batch_rng_.next_below(pool.size()))]);
    }

    struct ItemWork {
        ForwardCache<float> cache;
        Matrix<float> hidden, d_reg, d_cls;
        std::vector<uint8_t> reg_mask, cls_mask;
        bool has_reg = false, has_cls = false;
    };
    std::vector<ItemWork> work(items.size());
    double patch_sum = 0.0, token_sum = 0.0;
    int n_patch = 0, n_token = 0;
    for (size_t b = 0; b < items.size(); ++b) {
        const SequenceInput& in = *items[b];
        ItemWork& w = work[b];
        w.hidden = forward(in, params_, mcfg_, &w.cache);
        w.reg_mask = regression_positions(in);
        w.cls_mask = classification_positions(in);
        for (uint8_t m : w.reg_mask) {
            if (m) w.has_reg = true;
        }
        for (uint8_t m : w.cls_mask) {
            if (m) w.has_cls = true;
        }
        if (w.has_reg) {
            Matrix<float> pred = regression_head(w.hidden, params_);
            Matrix<float> tgt = regression_targets<float>(in);
            next_patch_loss_sum(pred, tgt, w.reg_mask, patch_sum, n_patch, &w.d_reg);
        }
        if (w.has_cls) {
            Matrix<float> logits = classification_head(w.hidden, params_);
            std::vector<uint32_t> tgts = classification_targets(in);
            next_token_loss_sum(logits, tgts, w.cls_mask, token_sum, n_token, &w.d_cls);
        }
    }

    zero_parameters(grads_);
    for (size_t b = 0; b < items.size(); ++b) {
        const SequenceInput& in = *items[b];
        ItemWork& w = work[b];
        Matrix<float> d_hidden(in.n, mcfg_.hidden_size);
        Matrix<float> dh_part;
        if (w.has_reg) {
            for (auto& v : w.d_reg.data) v /= float(n_patch);
            affine_backward(w.hidden, params_.reg_w, w.d_reg, dh_part, grads_.reg_w, grads_.reg_b);
            for (size_t i = 0; i < d_hidden.data.size(); ++i) d_hidden.data[i] += dh_part.data[i];
        }
        if (w.has_cls) {
            for (auto& v : w.d_cls.data) v /= float(n_token);
            affine_backward(w.hidden, params_.cls_w, w.d_cls, dh_part, grads_.cls_w, grads_.cls_b);
            for (size_t i = 0; i < d_hidden.data.size(); ++i) d_hidden.data[i] += dh_part.data[i];
        }
        backward(in, params_, mcfg_, w.cache, d_hidden, grads_);
    }

    const double norm = clip_gradients(grads_, tcfg_.clip_norm);
    const double lr = lr_at(step_ + 1, tcfg_);
    adamw_step(params_, grads_, adam_, lr, tcfg_);
    ++step_;

    StepRecord rec;
    rec.step = step_;
    rec.kind = kind;
    rec.patch_loss = n_patch > 0 ? patch_sum / n_patch : std::nan("");
    rec.token_loss = n_token > 0 ? token_sum / n_token : std::nan("");
    rec.loss = (n_patch > 0 ? patch_sum / n_patch : 0.0) + (n_token > 0 ? token_sum / n_token : 0.0);
    rec.lr = lr;
    rec.grad_norm = norm;
    return rec;
}

std::vector<StepRecord> Trainer::run(std::ostream* log) {
    std::vector<StepRecord> records;
    records.reserve(size_t(tcfg_.steps - step_));
    while (step_ < tcfg_.steps) {
        records.push_back(run_step());
        if (log) *log << format_step_record(records.back()) << '\n';
    }
    if (log) log->flush();
    return records;
}

EvalLosses evaluate_losses(const Parameters<float>& params, const ModelConfig& cfg,
                           const std::vector<SequenceInput>& items) {
    EvalLosses out;
    double token_sum = 0.0, patch_sum = 0.0;
    for (const SequenceInput& in : items) {
        Matrix<float> hidden = forward(in, params, cfg);
        std::vector<uint8_t> reg_mask = regression_positions(in);
        std::vector<uint8_t> cls_mask = classification_positions(in);
        bool has_reg = false, has_cls = false;
        for (uint8_t m : reg_mask) {
            if (m) has_reg = true;
        }
        for (uint8_t m : cls_mask) {
            if (m) has_cls = true;
        }
        if (has_reg) {
            Matrix<float> pred = regression_head(hidden, params);
            Matrix<float> tgt = regression_targets<float>(in);
            next_patch_loss_sum(pred, tgt, reg_mask, patch_sum, out.patch_positions);
        }
        if (has_cls) {
            Matrix<float> logits = classification_head(hidden, params);
            std::vector<uint32_t> tgts = classification_targets(in);
            next_token_loss_sum(logits, tgts, cls_mask, token_sum, out.token_positions);
        }
    }
    out.token_ce = out.token_positions > 0 ? token_sum / out.token_positions : 0.0;
    out.patch_mse = out.patch_positions > 0 ? patch_sum / out.patch_positions : 0.0;
    return out;
}

} // namespace pixeltext
