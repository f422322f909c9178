#include "pixeltext/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pixeltext/pretrain.hpp"

namespace pixeltext {

const char* metric_name(MetricKind m) {
    switch (m) {
        case MetricKind::acc: return "acc";
        case MetricKind::f1: return "f1";
        case MetricKind::mcc: return "mcc";
        default: return "spearman";
    }
}

int pooled_index(const SequenceInput& in) {
    int last = -1;
    for (int i = 0; i < in.n; ++i) {
        if (in.roles[size_t(i)] == PatchRole::content) last = i;
    }
    if (last < 0) throw EmptySequence("no content position to pool");
    return last;
}

TaskHead make_task_head(const ModelConfig& cfg, const TaskSpec& task, uint64_t seed) {
    task.validate();
    TaskHead head;
    head.w = Matrix<float>(task.head_width(), cfg.hidden_size);
    head.b = Matrix<float>(1, task.head_width());
    Rng rng(sub_seed(seed, "task_head"));
    head.w.fill_normal(rng, 0.02f);
    return head;
}

FinetuneModel attach_task_head(const Checkpoint& ckpt, const TaskSpec& task, uint64_t seed) {
    FinetuneModel m;
    m.config = ckpt.config;
    m.params = params_from_checkpoint(ckpt);
    m.head = make_task_head(m.config, task, seed);
    return m;
}

ModelConfig adapted_config(const ModelConfig& cfg, int channels) {
    if (channels <= 0 || cfg.patch_dim % channels != 0) {
        throw ShapeError("patch_dim " + std::to_string(cfg.patch_dim) + " not divisible by channels " +
                         std::to_string(channels));
    }
    ModelConfig out = cfg;
    out.patch_dim = cfg.patch_dim / channels;
    out.validate();
    return out;
}

SequenceInput build_dual_input(const RenderedStrip& strip, const std::vector<uint32_t>& tokens,
                               int patch_budget, int patch_px, int max_positions, uint32_t pad_id) {
    PatchSequence ps = patchify(strip, patch_px);
    int used = 0;
    for (int i = 0; i < ps.n; ++i) {
        if (ps.roles[size_t(i)] != PatchRole::pad) used = i + 1;
    }
    if (used > patch_budget) {
        throw LengthError("strip uses " + std::to_string(used) + " patches, over the budget of " +
                          std::to_string(patch_budget));
    }
    const int n = patch_budget + int(tokens.size());
    if (n > max_positions) {
        throw LengthError("dual sequence length " + std::to_string(n) + " exceeds max_positions " +
                          std::to_string(max_positions));
    }

    SequenceInput in;
    in.n = n;
    in.patch_dim = ps.dim;
    in.is_token.assign(size_t(n), 0);
    in.tokens.assign(size_t(n), 0);
    in.patches.assign(size_t(n) * size_t(ps.dim), 0.0f);
    in.roles.assign(size_t(n), PatchRole::pad);
    for (int i = 0; i < used; ++i) {
        std::copy(ps.patch(i), ps.patch(i) + ps.dim, in.patches.begin() + size_t(i) * ps.dim);
        in.roles[size_t(i)] = ps.roles[size_t(i)];
    }
    for (int i = used; i < patch_budget; ++i) { // right-fill: all-white pad patches
        std::fill_n(in.patches.begin() + size_t(i) * ps.dim, size_t(ps.dim), 1.0f);
    }
    for (size_t t = 0; t < tokens.size(); ++t) {
        size_t pos = size_t(patch_budget) + t;
        in.is_token[pos] = 1;
        in.tokens[pos] = tokens[t];
        in.roles[pos] = tokens[t] == pad_id ? PatchRole::pad : PatchRole::content;
    }
    in.attention_mask = attention_mask_from_roles(in.roles);
    in.loss_mask = loss_mask_from_roles(in.roles);
    return in;
}

// ---- metrics ----

namespace {

void check_lengths(size_t a, size_t b, size_t min_len) {
    if (a != b) {
        throw LengthMismatch("prediction/label count mismatch: " + std::to_string(a) + " vs " +
                             std::to_string(b));
    }
    if (a < min_len) {
        throw LengthMismatch("need at least " + std::to_string(min_len) + " points, got " + std::to_string(a));
    }
}

struct BinaryCounts {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

BinaryCounts binary_counts(const std::vector<int>& preds, const std::vector<int>& labels) {
    BinaryCounts c;
    for (size_t i = 0; i < preds.size(); ++i) {
        bool p = preds[i] != 0, l = labels[i] != 0;
        if (p && l) ++c.tp;
        else if (p && !l) ++c.fp;
        else if (!p && l) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = (double(i) + double(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double metric_acc(const std::vector<int>& preds, const std::vector<int>& labels) {
    check_lengths(preds.size(), labels.size(), 1);
    long hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
    return double(hits) / double(preds.size());
}

double metric_f1(const std::vector<int>& preds, const std::vector<int>& labels) {
    check_lengths(preds.size(), labels.size(), 1);
    BinaryCounts c = binary_counts(preds, labels);
    double denom = 2.0 * double(c.tp) + double(c.fp) + double(c.fn);
    return denom == 0.0 ? 0.0 : 2.0 * double(c.tp) / denom;
}

double metric_mcc(const std::vector<int>& preds, const std::vector<int>& labels, bool* degenerate) {
    check_lengths(preds.size(), labels.size(), 1);
    if (degenerate) *degenerate = false;
    BinaryCounts c = binary_counts(preds, labels);
    double m1 = double(c.tp + c.fp), m2 = double(c.tp + c.fn);
    double m3 = double(c.tn + c.fp), m4 = double(c.tn + c.fn);
    if (m1 == 0.0 || m2 == 0.0 || m3 == 0.0 || m4 == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0; // an all-zero marginal leaves the correlation undefined
    }
    return (double(c.tp) * double(c.tn) - double(c.fp) * double(c.fn)) / std::sqrt(m1 * m2 * m3 * m4);
}

double metric_spearman(const std::vector<double>& preds, const std::vector<double>& labels) {
    check_lengths(preds.size(), labels.size(), 2);
    std::vector<double> rp = average_ranks(preds), rl = average_ranks(labels);
    const double n = double(rp.size());
    double mp = 0.0, ml = 0.0;
    for (size_t i = 0; i < rp.size(); ++i) {
        mp += rp[i];
        ml += rl[i];
    }
    mp /= n;
    ml /= n;
    double cov = 0.0, vp = 0.0, vl = 0.0;
    for (size_t i = 0; i < rp.size(); ++i) {
        double a = rp[i] - mp, b = rl[i] - ml;
        cov += a * b;
        vp += a * a;
        vl += b * b;
    }
    double denom = std::sqrt(vp) * std::sqrt(vl);
    return denom == 0.0 ? 0.0 : cov / denom;
}

// ---- task data ----

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

} // namespace

TaskTable load_task_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open task file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("task file is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_tabs(line);

    TaskTable table;
    if (header == std::vector<std::string>{"text_a", "label"}) {
        table.has_pair = false;
    } else if (header == std::vector<std::string>{"text_a", "text_b", "label"}) {
        table.has_pair = true;
    } else {
        throw Error("task file header must be text_a[<TAB>text_b]<TAB>label: " + path);
    }

    const size_t want = table.has_pair ? 3 : 2;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != want) {
            throw Error("task file row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                        " columns, expected " + std::to_string(want));
        }
        table.text_a.push_back(fields[0]);
        if (table.has_pair) table.text_b.push_back(fields[1]);
        table.labels.push_back(fields.back());
    }
    return table;
}

std::vector<std::string> class_names(const TaskTable& table) {
    std::vector<std::string> names = table.labels;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

std::vector<float> numeric_labels(const TaskTable& table, const TaskSpec& task) {
    return numeric_labels(table, task, class_names(table));
}

std::vector<float> numeric_labels(const TaskTable& table, const TaskSpec& task,
                                  const std::vector<std::string>& names) {
    std::vector<float> out;
    out.reserve(table.size());
    if (task.kind == TaskKind::regression) {
        for (const auto& s : table.labels) {
            try {
                out.push_back(std::stof(s));
            } catch (const std::exception&) {
                throw Error("regression label is not a number: '" + s + "'");
            }
        }
        return out;
    }
    if (int(names.size()) > task.n_classes) {
        throw ConfigMismatch("task declares " + std::to_string(task.n_classes) + " classes but data has " +
                             std::to_string(names.size()));
    }
    for (const auto& s : table.labels) {
        auto it = std::find(names.begin(), names.end(), s);
        if (it == names.end()) throw ConfigMismatch("label '" + s + "' is not in the class list");
        out.push_back(float(it - names.begin()));
    }
    return out;
}

std::vector<SequenceInput> build_task_inputs(const TaskTable& table, const TaskSpec& task,
                                             const RenderConfig& rcfg, const GlyphSet& glyphs,
                                             const Vocab& vocab, const ModelConfig& mcfg, int patch_budget) {
    task.validate();
    const bool pair = task.arity == InputArity::pair;
    if (pair && !table.has_pair) throw ConfigMismatch("pair-input task needs a text_b column");

    auto render_row = [&](size_t i) {
        RenderedStrip strip = pair ? render_pair(table.text_a[i], table.text_b[i], rcfg, glyphs)
                                   : render_text(table.text_a[i], rcfg, glyphs);
        if (task.render_mode == RenderMode::grayscale) strip = to_grayscale(strip);
        if (task.render_mode == RenderMode::binary) strip = to_binary(strip);
        return strip;
    };
    auto encode_row = [&](size_t i) {
        std::vector<uint32_t> ids = encode(table.text_a[i], vocab);
        if (pair) { // eos acts as the segment delimiter, mirroring the pixel divider
            ids.push_back(Vocab::eos_id);
            auto more = encode(table.text_b[i], vocab);
            ids.insert(ids.end(), more.begin(), more.end());
        }
        return ids;
    };

    std::vector<SequenceInput> inputs;
    inputs.reserve(table.size());

    if (task.modality == TaskModality::text) {
        for (size_t i = 0; i < table.size(); ++i) {
            inputs.push_back(build_text_sequence(encode_row(i), mcfg.patch_dim, Vocab::eos_id, Vocab::pad_id,
                                                 /*append_eos=*/false));
        }
        return inputs;
    }

    std::vector<RenderedStrip> strips;
    strips.reserve(table.size());
    for (size_t i = 0; i < table.size(); ++i) {
        strips.push_back(render_row(i));
        int dim = rcfg.patch_px * rcfg.patch_px * strips.back().channels;
        if (dim != mcfg.patch_dim) {
            throw ShapeError("rendered patch dim " + std::to_string(dim) + " does not match model patch_dim " +
                             std::to_string(mcfg.patch_dim));
        }
    }

    if (task.modality == TaskModality::pixel) {
        for (const auto& strip : strips) {
            inputs.push_back(build_pixel_sequence(patchify(strip, rcfg.patch_px)));
        }
        return inputs;
    }

    int budget = patch_budget;
    if (budget <= 0) {
        for (const auto& strip : strips) budget = std::max(budget, strip.used_patches);
    }
    for (size_t i = 0; i < table.size(); ++i) {
        inputs.push_back(build_dual_input(strips[i], encode_row(i), budget, rcfg.patch_px, mcfg.max_positions,
                                          Vocab::pad_id));
    }
    return inputs;
}

// ---- evaluation ----

namespace {

// Head logits at the pooled position, accumulated in double.
std::vector<double> head_logits(const TaskHead& head, const Matrix<float>& hidden, int pooled) {
    const int k = head.w.rows, d = head.w.cols;
    std::vector<double> z(size_t(k), 0.0);
    const float* x = hidden.row(pooled);
    for (int c = 0; c < k; ++c) {
        const float* wr = head.w.row(c);
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += double(wr[j]) * double(x[j]);
        z[size_t(c)] = s + double(head.b.at(0, c));
    }
    return z;
}

int argmax(const std::vector<double>& z) {
    int best = 0;
    for (int i = 1; i < int(z.size()); ++i) {
        if (z[size_t(i)] > z[size_t(best)]) best = i;
    }
    return best;
}

} // namespace

EvalReport evaluate_task(const ModelConfig& cfg, const Parameters<float>& params, const TaskHead& head,
                         const TaskSpec& task, const std::vector<SequenceInput>& inputs,
                         const std::vector<float>& labels) {
    task.validate();
    check_lengths(inputs.size(), labels.size(), 1);

    EvalReport report;
    report.metric = metric_name(task.metric);
    report.n_samples = int(inputs.size());

    const bool classify = task.kind == TaskKind::classification;
    std::vector<int> pred_i, label_i;
    std::vector<double> pred_d, label_d;
    if (classify) {
        report.confusion.assign(size_t(task.n_classes), std::vector<long>(size_t(task.n_classes), 0));
    }

    for (size_t i = 0; i < inputs.size(); ++i) {
        Matrix<float> hidden = forward(inputs[i], params, cfg);
        auto z = head_logits(head, hidden, pooled_index(inputs[i]));
        if (classify) {
            int pred = argmax(z);
            int label = int(std::lround(double(labels[i])));
            if (label < 0 || label >= task.n_classes) {
                throw ConfigMismatch("label " + std::to_string(label) + " outside 0.." +
                                     std::to_string(task.n_classes - 1));
            }
            report.confusion[size_t(label)][size_t(pred)] += 1;
            pred_i.push_back(pred);
            label_i.push_back(label);
        } else {
            pred_d.push_back(z[0]);
            label_d.push_back(double(labels[i]));
        }
    }

    switch (task.metric) {
        case MetricKind::acc: report.value = metric_acc(pred_i, label_i); break;
        case MetricKind::f1: report.value = metric_f1(pred_i, label_i); break;
        case MetricKind::mcc: report.value = metric_mcc(pred_i, label_i, &report.degenerate); break;
        default: report.value = metric_spearman(pred_d, label_d); break;
    }
    return report;
}

std::string format_report(const EvalReport& report) {
    std::ostringstream out;
    out << std::setprecision(10);
    out << "metric " << report.metric << "\n";
    out << "samples " << report.n_samples << "\n";
    if (report.degenerate) out << "degenerate 1\n";
    for (const auto& row : report.confusion) {
        out << "confusion_row";
        for (long v : row) out << ' ' << v;
        out << "\n";
    }
    out << "METRIC " << report.metric << ' ' << report.value << "\n";
    return out.str();
}

// ---- fine-tuning ----

namespace {

double sq_norm(const Matrix<float>& m) {
    double s = 0.0;
    for (float v : m.data) s += double(v) * double(v);
    return s;
}

void check_finite(const Matrix<float>& g, const char* name) {
    for (float v : g.data) {
        if (!std::isfinite(double(v))) throw NonFiniteGradient(std::string("non-finite gradient in ") + name);
    }
}

// Same decoupled AdamW update as the pretrainer, for one standalone tensor.
void adam_update(Matrix<float>& p, const Matrix<float>& g, Matrix<float>& m, Matrix<float>& v, int64_t t,
                 double lr, const TrainConfig& tc) {
    const double bc1 = 1.0 - std::pow(tc.beta1, double(t));
    const double bc2 = 1.0 - std::pow(tc.beta2, double(t));
    for (size_t i = 0; i < p.data.size(); ++i) {
        if (tc.weight_decay != 0.0) p.data[i] -= float(lr * tc.weight_decay) * p.data[i];
        m.data[i] = float(tc.beta1) * m.data[i] + float(1.0 - tc.beta1) * g.data[i];
        v.data[i] = float(tc.beta2) * v.data[i] + float(1.0 - tc.beta2) * g.data[i] * g.data[i];
        double mhat = double(m.data[i]) / bc1;
        double vhat = double(v.data[i]) / bc2;
        p.data[i] -= float(lr * mhat / (std::sqrt(vhat) + tc.adam_eps));
    }
}

void validate_finetune_config(const FinetuneConfig& fcfg) {
    if (fcfg.max_steps < 0) throw ConfigMismatch("max_steps must be >= 0");
    if (fcfg.batch_size <= 0) throw ConfigMismatch("batch_size must be positive");
    if (fcfg.lr < 0) throw ConfigMismatch("lr must be >= 0");
    if (fcfg.eval_every <= 0) throw ConfigMismatch("eval_every must be positive");
    if (fcfg.patience <= 0) throw ConfigMismatch("patience must be positive");
}

} // namespace

FinetuneResult finetune(const ModelConfig& cfg, const Parameters<float>& init_params, const TaskSpec& task,
                        const std::vector<SequenceInput>& train_inputs, const std::vector<float>& train_labels,
                        const std::vector<SequenceInput>& dev_inputs, const std::vector<float>& dev_labels,
                        const FinetuneConfig& fcfg, std::ostream* log) {
    task.validate();
    cfg.validate();
    validate_finetune_config(fcfg);
    check_lengths(train_inputs.size(), train_labels.size(), fcfg.max_steps > 0 ? 1 : 0);

    const int k = task.head_width();
    const bool classify = task.kind == TaskKind::classification;

    Parameters<float> params = init_params;
    TaskHead head = make_task_head(cfg, task, fcfg.seed);
    Parameters<float> grads = make_parameters<float>(cfg);
    AdamState<float> adam = make_adam_state(params);
    Matrix<float> gw(k, cfg.hidden_size), gb(1, k);
    Matrix<float> mw(k, cfg.hidden_size), vw(k, cfg.hidden_size), mb(1, k), vb(1, k);
    int64_t head_t = 0;
    TrainConfig tc; // adam betas/eps; decay off, schedule unused

    Rng batch_rng(sub_seed(fcfg.seed, "batch"));

    FinetuneResult result;
    result.dev = evaluate_task(cfg, params, head, task, dev_inputs, dev_labels);
    result.best_step = 0;
    double best_value = result.dev.value;
    result.params = params;
    result.head = head;
    if (log) *log << "eval\t0\t" << result.dev.metric << '\t' << std::setprecision(10) << result.dev.value << '\n';

    int stale = 0;
    for (int step = 1; step <= fcfg.max_steps; ++step) {
        zero_parameters(grads);
        gw.set_zero();
        gb.set_zero();
        double loss_sum = 0.0;

        for (int b = 0; b < fcfg.batch_size; ++b) {
            size_t pick = size_t(batch_rng.next_below(uint64_t(train_inputs.size())));
            const SequenceInput& in = train_inputs[pick];

            ForwardCache<float> cache;
            Matrix<float> hidden = forward(in, params, cfg, fcfg.freeze_backbone ? nullptr : &cache);
            const int pooled = pooled_index(in);
            auto z = head_logits(head, hidden, pooled);

            std::vector<double> dz(size_t(k), 0.0);
            if (classify) {
                int label = int(std::lround(double(train_labels[pick])));
                if (label < 0 || label >= k) {
                    throw ConfigMismatch("label " + std::to_string(label) + " outside 0.." + std::to_string(k - 1));
                }
                double zmax = *std::max_element(z.begin(), z.end());
                double lse = 0.0;
                for (double v : z) lse += std::exp(v - zmax);
                lse = zmax + std::log(lse);
                loss_sum += lse - z[size_t(label)];
                for (int c = 0; c < k; ++c) dz[size_t(c)] = std::exp(z[size_t(c)] - lse);
                dz[size_t(label)] -= 1.0;
            } else {
                double diff = z[0] - double(train_labels[pick]);
                loss_sum += diff * diff;
                dz[0] = 2.0 * diff;
            }
            const double scale = 1.0 / double(fcfg.batch_size);

            // head gradients and d(pooled row)
            const float* x = hidden.row(pooled);
            std::vector<float> dx(size_t(cfg.hidden_size), 0.0f);
            for (int c = 0; c < k; ++c) {
                const float dc = float(dz[size_t(c)] * scale);
                float* gwr = gw.row(c);
                const float* wr = head.w.row(c);
                for (int j = 0; j < cfg.hidden_size; ++j) {
                    gwr[j] += dc * x[j];
                    dx[size_t(j)] += dc * wr[j];
                }
                gb.at(0, c) += dc;
            }

            if (!fcfg.freeze_backbone) {
                Matrix<float> d_hidden(in.n, cfg.hidden_size);
                std::copy(dx.begin(), dx.end(), d_hidden.row(pooled));
                backward(in, params, cfg, cache, d_hidden, grads);
            }
        }

        // joint clip over backbone + head gradients
        double ss = sq_norm(gw) + sq_norm(gb);
        for (auto& [name, tensor] : named_tensors(grads)) ss += sq_norm(*tensor);
        const double grad_norm = std::sqrt(ss);
        if (fcfg.clip_norm > 0 && grad_norm > fcfg.clip_norm) {
            const float s = float(fcfg.clip_norm / grad_norm);
            for (auto& [name, tensor] : named_tensors(grads)) {
                for (float& v : tensor->data) v *= s;
            }
            for (float& v : gw.data) v *= s;
            for (float& v : gb.data) v *= s;
        }

        check_finite(gw, "task_head.weight");
        check_finite(gb, "task_head.bias");
        if (!fcfg.freeze_backbone) adamw_step(params, grads, adam, fcfg.lr, tc);
        head_t += 1;
        adam_update(head.w, gw, mw, vw, head_t, fcfg.lr, tc);
        adam_update(head.b, gb, mb, vb, head_t, fcfg.lr, tc);

        result.steps_run = step;
        if (log) {
            *log << "step\t" << step << '\t' << std::setprecision(10) << loss_sum / double(fcfg.batch_size)
                 << '\t' << grad_norm << '\n';
        }

        if (step % fcfg.eval_every == 0 || step == fcfg.max_steps) {
            EvalReport report = evaluate_task(cfg, params, head, task, dev_inputs, dev_labels);
            if (log) *log << "eval\t" << step << '\t' << report.metric << '\t' << report.value << '\n';
            if (report.value > best_value) {
                best_value = report.value;
                result.dev = report;
                result.best_step = step;
                result.params = params;
                result.head = head;
                stale = 0;
            } else {
                ++stale;
                if (stale >= fcfg.patience) break;
            }
            if (step == fcfg.max_steps) break;
        }
    }
    return result;
}

} // namespace pixeltext
