#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pixeltext/finetune.hpp"
#include "pixeltext/model.hpp"
#include "pixeltext/patchio.hpp"
#include "pixeltext/pretrain.hpp"
#include "pixeltext/render.hpp"
#include "pixeltext/threadpool.hpp"
#include "pixeltext/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace pixeltext;

namespace {

// Exit codes: 1 generic failure, 2 unreadable input, 3 render overflow with
// segmentation disabled, 4 vocabulary size mismatch.
struct CliError {
    int code;
    std::string message;
};

void require_readable(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError{2, "cannot read " + path};
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError{2, "cannot read " + path.string()};
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw CliError{2, "cannot read " + path.string()};
    return buf.str();
}

// Regular files under dir in sorted order; the order fixes record order.
std::vector<fs::path> corpus_files(const std::string& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw CliError{2, "corpus is not a readable directory: " + dir};
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    if (ec) throw CliError{2, "cannot list corpus directory: " + dir};
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

Vocab load_vocab_checked(const std::string& path) {
    require_readable(path);
    return load_vocab(path);
}

fs::path out_file(const std::string& out_dir, const std::string& name) {
    fs::create_directories(out_dir);
    return fs::path(out_dir) / name;
}

int count_content_patches(const ShardRecord& rec) {
    int n = 0;
    std::vector<float> patch(size_t(rec.patch_dim));
    for (int i = 0; i < rec.n_patches(); ++i) {
        const uint8_t* src = rec.patch_bytes.data() + size_t(i) * size_t(rec.patch_dim);
        for (int d = 0; d < rec.patch_dim; ++d) patch[size_t(d)] = float(src[d]) / 255.0f;
        if (classify_patch(patch.data(), rec.patch_dim) == PatchRole::content) ++n;
    }
    return n;
}

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::pixel: return "pixel";
        default: return "pair";
    }
}

// ---- render ----

struct RenderOpts {
    std::string corpus;
    std::string shard = "pixels.shard";
    std::string overflow = "error";
    std::string modality = "pixel";
    std::string vocab_path;
    int max_patches = 1024;
    int patch_px = 16;
};

// Words that fit the content budget, the widest prefix; a single over-wide
// word is cut at character granularity so pairing stays faithful.
std::string fit_prefix(const std::string& text, const RenderConfig& rcfg, const GlyphSet& glyphs) {
    std::vector<std::string> words = split_words(text);
    if (words.empty()) return "";
    const int budget = (rcfg.max_patches - 1) * rcfg.patch_px - rcfg.padding_px;
    int k = fit_words(words, budget, glyphs);
    if (k > 0) {
        std::string joined = words[0];
        for (int i = 1; i < k; ++i) joined += " " + words[size_t(i)];
        return joined;
    }
    std::string head;
    size_t pos = 0;
    while (pos < words[0].size()) {
        size_t prev = pos;
        decode_utf8(words[0], pos);
        std::string next = words[0].substr(0, pos);
        if (measure_text(next, glyphs) > budget) break;
        head = next;
        if (prev == pos) break;
    }
    return head;
}

int cmd_render(const RenderOpts& opts, const std::string& out_dir) {
    RenderConfig rcfg;
    rcfg.max_patches = opts.max_patches;
    rcfg.patch_px = opts.patch_px;
    rcfg.height_px = opts.patch_px;
    rcfg.validate();
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);
    const bool pair_mode = opts.modality == "pair";
    Vocab vocab;
    if (pair_mode) {
        if (opts.vocab_path.empty()) throw CliError{1, "--modality pair needs --vocab"};
        vocab = load_vocab_checked(opts.vocab_path);
    }

    std::vector<fs::path> files = corpus_files(opts.corpus);
    std::vector<std::string> docs;
    docs.reserve(files.size());
    for (const auto& f : files) docs.push_back(read_file(f));

    std::vector<std::vector<ShardRecord>> slots(docs.size());
    std::vector<std::string> failures(docs.size());
    parallel_for_each(int(docs.size()), [&](int i) {
        try {
            if (pair_mode) {
                std::string kept = fit_prefix(docs[size_t(i)], rcfg, glyphs);
                RenderedStrip strip = render_text(kept, rcfg, glyphs);
                PatchSequence ps = patchify(strip, rcfg.patch_px);
                SequenceInput in = build_pair_sequence(ps, encode(kept, vocab), Vocab::eos_id, Vocab::pad_id,
                                                       std::numeric_limits<int>::max());
                slots[size_t(i)].push_back(record_from_sequence(in));
                return;
            }
            std::vector<RenderedStrip> strips;
            if (opts.overflow == "error") {
                strips.push_back(render_text(docs[size_t(i)], rcfg, glyphs));
            } else {
                OverflowMode mode = opts.overflow == "segment" ? OverflowMode::segment : OverflowMode::truncate;
                strips = truncate_or_segment(docs[size_t(i)], rcfg, glyphs, mode);
            }
            for (const auto& strip : strips) {
                slots[size_t(i)].push_back(record_from_sequence(build_pixel_sequence(patchify(strip, rcfg.patch_px))));
            }
        } catch (const RenderOverflow& e) {
            failures[size_t(i)] = std::string("overflow: ") + e.what() + " (enable --overflow segment)";
        } catch (const std::exception& e) {
            failures[size_t(i)] = e.what();
        }
    });
    for (size_t i = 0; i < failures.size(); ++i) {
        if (failures[i].empty()) continue;
        int code = failures[i].rfind("overflow:", 0) == 0 ? 3 : 1;
        throw CliError{code, files[i].filename().string() + ": " + failures[i]};
    }

    fs::path shard_path = out_file(out_dir, opts.shard);
    const int patch_dim = rcfg.patch_px * rcfg.patch_px * rcfg.channels;
    ShardWriter writer(shard_path.string(), patch_dim);
    long strips = 0, content = 0;
    for (const auto& recs : slots) {
        for (const auto& rec : recs) {
            writer.add(rec);
            ++strips;
            content += count_content_patches(rec);
        }
    }
    writer.close();
    std::cout << "documents " << docs.size() << "\n"
              << "strips " << strips << "\n"
              << "content_patches " << content << "\n"
              << "records " << strips << "\n"
              << "shard " << shard_path.string() << "\n";
    return 0;
}

// ---- tokenize ----

struct TokenizeOpts {
    std::string corpus;
    std::string shard = "tokens.shard";
    std::string vocab_path;
    bool train_vocab = false;
    int vocab_size = 512;
    int patch_dim = 768;
};

int cmd_tokenize(const TokenizeOpts& opts, const std::string& out_dir) {
    if (opts.vocab_path.empty()) throw CliError{1, "--vocab is required (path to load, or to save with --train-vocab)"};
    std::vector<fs::path> files = corpus_files(opts.corpus);
    std::vector<std::string> docs;
    for (const auto& f : files) docs.push_back(read_file(f));

    Vocab vocab;
    if (opts.train_vocab) {
        std::string corpus;
        for (const auto& d : docs) {
            corpus += d;
            corpus += '\n';
        }
        vocab = train_bpe(corpus, uint32_t(opts.vocab_size));
        save_vocab(vocab, opts.vocab_path);
    } else {
        vocab = load_vocab_checked(opts.vocab_path);
    }

    fs::path shard_path = out_file(out_dir, opts.shard);
    ShardWriter writer(shard_path.string(), opts.patch_dim);
    long tokens = 0;
    for (const auto& doc : docs) {
        SequenceInput in = build_text_sequence(encode(doc, vocab), opts.patch_dim, Vocab::eos_id, Vocab::pad_id);
        writer.add(record_from_sequence(in));
        tokens += in.n;
    }
    writer.close();
    std::cout << "documents " << docs.size() << "\n"
              << "records " << docs.size() << "\n"
              << "tokens " << tokens << "\n"
              << "vocab_size " << vocab.size() << "\n"
              << "shard " << shard_path.string() << "\n";
    return 0;
}

// ---- pretrain ----

struct PretrainOpts {
    std::string text_shard, pixel_shard, pair_shard;
    std::string checkpoint = "checkpoint.bin";
    std::string log = "pretrain.log";
    int mix_text = -1, mix_pixel = -1, mix_pair = -1; // -1: default when the shard is given
};

void add_model_flags(CLI::App* sub, ModelConfig& mcfg) {
    sub->add_option("--hidden-size", mcfg.hidden_size, "model width");
    sub->add_option("--layers", mcfg.n_layers, "transformer layers");
    sub->add_option("--heads", mcfg.n_heads, "attention heads");
    sub->add_option("--kv-heads", mcfg.n_kv_heads, "key/value heads (grouped-query)");
    sub->add_option("--intermediate", mcfg.intermediate_size, "feed-forward width");
    sub->add_option("--vocab-size", mcfg.vocab_size, "token vocabulary size");
    sub->add_option("--max-positions", mcfg.max_positions, "maximum sequence length");
    sub->add_option("--patch-dim", mcfg.patch_dim, "flattened patch dimension");
}

// Slices a stored sequence to the model's position budget.
void truncate_sequence(SequenceInput& in, int max_n) {
    if (in.n <= max_n) return;
    in.n = max_n;
    in.is_token.resize(size_t(max_n));
    in.tokens.resize(size_t(max_n));
    in.patches.resize(size_t(max_n) * size_t(in.patch_dim));
    in.roles.resize(size_t(max_n));
    in.attention_mask.resize(size_t(max_n));
    in.loss_mask.resize(size_t(max_n));
    in.loss_mask[size_t(max_n - 1)] = 0;
}

int cmd_pretrain(const PretrainOpts& opts, ModelConfig mcfg, TrainConfig tcfg, uint64_t seed,
                 const std::string& out_dir) {
    mcfg.validate();
    tcfg.ratio_text = opts.mix_text >= 0 ? opts.mix_text : (opts.text_shard.empty() ? 0 : 4);
    tcfg.ratio_pixel = opts.mix_pixel >= 0 ? opts.mix_pixel : (opts.pixel_shard.empty() ? 0 : 4);
    tcfg.ratio_pair = opts.mix_pair >= 0 ? opts.mix_pair : (opts.pair_shard.empty() ? 0 : 2);
    tcfg.seed = seed;

    PretrainData data;
    long truncated = 0;
    auto load = [&](const std::string& path) {
        require_readable(path);
        for (auto& rec : read_shard(path, mcfg.patch_dim)) {
            SequenceInput in = sequence_from_record(rec, Vocab::pad_id);
            if (in.n > mcfg.max_positions) {
                truncate_sequence(in, mcfg.max_positions);
                ++truncated;
            }
            switch (rec.modality) {
                case Modality::text: data.text.push_back(std::move(in)); break;
                case Modality::pixel: data.pixel.push_back(std::move(in)); break;
                default: data.pair.push_back(std::move(in)); break;
            }
        }
    };
    if (!opts.text_shard.empty()) load(opts.text_shard);
    if (!opts.pixel_shard.empty()) load(opts.pixel_shard);
    if (!opts.pair_shard.empty()) load(opts.pair_shard);

    Trainer trainer(mcfg, tcfg, std::move(data), seed);
    fs::path log_path = out_file(out_dir, opts.log);
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw CliError{1, "cannot open log for writing: " + log_path.string()};
    std::vector<StepRecord> steps = trainer.run(&log);

    fs::path ckpt_path = out_file(out_dir, opts.checkpoint);
    save_checkpoint(ckpt_path.string(), mcfg, trainer.params());
    std::cout << "steps " << steps.size() << "\n";
    if (!steps.empty()) std::cout << "final_loss " << steps.back().loss << "\n";
    if (truncated) std::cout << "truncated_records " << truncated << "\n";
    std::cout << "checkpoint " << ckpt_path.string() << "\n"
              << "log " << log_path.string() << "\n";
    return 0;
}

// ---- finetune / eval ----

struct TaskOpts {
    std::string name = "task";
    std::string kind = "classification";
    std::string metric = "acc";
    std::string arity = "single";
    std::string render_mode = "rgb";
    std::string modality = "pixel";
    int classes = 2;
    int max_patches = 0; // 0: model's position budget
    int patch_budget = 0;
    std::string vocab_path;
};

TaskSpec task_from(const TaskOpts& opts) {
    TaskSpec task;
    task.name = opts.name;
    task.kind = opts.kind == "regression" ? TaskKind::regression : TaskKind::classification;
    task.n_classes = opts.classes;
    task.arity = opts.arity == "pair" ? InputArity::pair : InputArity::single;
    if (opts.metric == "f1") task.metric = MetricKind::f1;
    else if (opts.metric == "mcc") task.metric = MetricKind::mcc;
    else if (opts.metric == "spearman") task.metric = MetricKind::spearman;
    else task.metric = MetricKind::acc;
    if (opts.render_mode == "grayscale") task.render_mode = RenderMode::grayscale;
    else if (opts.render_mode == "binary") task.render_mode = RenderMode::binary;
    else task.render_mode = RenderMode::rgb;
    if (opts.modality == "text") task.modality = TaskModality::text;
    else if (opts.modality == "dual") task.modality = TaskModality::dual;
    else task.modality = TaskModality::pixel;
    task.validate();
    return task;
}

void add_task_flags(CLI::App* sub, TaskOpts& opts) {
    sub->add_option("--task-name", opts.name, "task identifier");
    sub->add_option("--kind", opts.kind, "task kind")->check(CLI::IsMember({"classification", "regression"}));
    sub->add_option("--classes", opts.classes, "number of classes (classification)");
    sub->add_option("--metric", opts.metric, "evaluation metric")
        ->check(CLI::IsMember({"acc", "f1", "mcc", "spearman"}));
    sub->add_option("--arity", opts.arity, "single text or text pair")->check(CLI::IsMember({"single", "pair"}));
    sub->add_option("--render-mode", opts.render_mode, "pixel rendering mode")
        ->check(CLI::IsMember({"rgb", "grayscale", "binary"}));
    sub->add_option("--modality", opts.modality, "input modality")
        ->check(CLI::IsMember({"pixel", "text", "dual"}));
    sub->add_option("--task-vocab", opts.vocab_path, "vocabulary file (text/dual modalities)");
    sub->add_option("--strip-patches", opts.max_patches, "render strip patch count (0: max positions)");
    sub->add_option("--patch-budget", opts.patch_budget, "dual-modality patch slots (0: widest strip)");
}

Vocab task_vocab(const TaskOpts& opts, const ModelConfig& cfg) {
    Vocab vocab;
    if (opts.modality == "pixel") return vocab; // tokens unused
    if (opts.vocab_path.empty()) throw CliError{1, "--task-vocab is required for text/dual modality"};
    vocab = load_vocab_checked(opts.vocab_path);
    if (vocab.size() != uint32_t(cfg.vocab_size)) {
        throw CliError{4, "vocabulary size mismatch: checkpoint expects " + std::to_string(cfg.vocab_size) +
                              ", vocabulary file has " + std::to_string(vocab.size())};
    }
    return vocab;
}

RenderConfig task_render_config(const TaskOpts& opts, const ModelConfig& cfg) {
    RenderConfig rcfg;
    rcfg.max_patches = opts.max_patches > 0 ? opts.max_patches : cfg.max_positions;
    rcfg.validate();
    return rcfg;
}

TaskTable load_table_checked(const std::string& path) {
    require_readable(path);
    return load_task_table(path);
}

struct FinetuneCmdOpts {
    std::string checkpoint, train_tsv, dev_tsv;
    std::string report = "report.txt";
    std::string model_out = "finetuned.bin";
    std::string log = "finetune.log";
    std::string classes_out = "classes.txt";
};

void save_finetuned(const std::string& path, const ModelConfig& cfg, Parameters<float>& params,
                    const TaskHead& head) {
    auto tensors = named_tensors(params);
    std::vector<std::pair<std::string, const Matrix<float>*>> out;
    out.reserve(tensors.size() + 2);
    for (auto& [name, tensor] : tensors) out.emplace_back(name, tensor);
    out.emplace_back("task_head.weight", &head.w);
    out.emplace_back("task_head.bias", &head.b);
    save_checkpoint(path, cfg, out);
}

int cmd_finetune(const FinetuneCmdOpts& opts, const TaskOpts& topts, FinetuneConfig fcfg, uint64_t seed,
                 const std::string& out_dir) {
    fcfg.seed = seed;
    TaskSpec task = task_from(topts);
    require_readable(opts.checkpoint);
    Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    ModelConfig cfg = ckpt.config;
    Parameters<float> params = params_from_checkpoint(ckpt);
    if (task.render_mode != RenderMode::rgb && task.modality != TaskModality::text) {
        params = adapt_patch_embedding_channels(params, cfg);
        cfg = adapted_config(cfg);
    }
    Vocab vocab = task_vocab(topts, cfg);
    RenderConfig rcfg = task_render_config(topts, cfg);
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);

    TaskTable train = load_table_checked(opts.train_tsv);
    TaskTable dev = load_table_checked(opts.dev_tsv);
    std::vector<std::string> names = class_names(train);
    std::vector<float> train_y = numeric_labels(train, task, names);
    std::vector<float> dev_y = numeric_labels(dev, task, names);
    auto train_x = build_task_inputs(train, task, rcfg, glyphs, vocab, cfg, topts.patch_budget);
    auto dev_x = build_task_inputs(dev, task, rcfg, glyphs, vocab, cfg, topts.patch_budget);

    fs::path log_path = out_file(out_dir, opts.log);
    std::ofstream log(log_path, std::ios::binary);
    FinetuneResult result = finetune(cfg, params, task, train_x, train_y, dev_x, dev_y, fcfg, &log);

    std::string report = format_report(result.dev);
    std::cout << report;
    std::ofstream rout(out_file(out_dir, opts.report), std::ios::binary);
    rout << report;
    if (!opts.model_out.empty()) {
        fs::path model_path = out_file(out_dir, opts.model_out);
        save_finetuned(model_path.string(), cfg, result.params, result.head);
        std::cout << "model " << model_path.string() << "\n";
    }
    if (task.kind == TaskKind::classification && !opts.classes_out.empty()) {
        std::ofstream cout_(out_file(out_dir, opts.classes_out), std::ios::binary);
        for (const auto& n : names) cout_ << n << "\n";
    }
    std::cout << "best_step " << result.best_step << "\n"
              << "steps_run " << result.steps_run << "\n";
    return 0;
}

struct EvalCmdOpts {
    std::string checkpoint, task_tsv;
    std::string report = "eval_report.txt";
    std::string class_names_path;
};

int cmd_eval(const EvalCmdOpts& opts, const TaskOpts& topts, const std::string& out_dir) {
    TaskSpec task = task_from(topts);
    require_readable(opts.checkpoint);
    Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    ModelConfig cfg = ckpt.config;
    Parameters<float> params = params_from_checkpoint(ckpt);
    auto wit = ckpt.tensors.find("task_head.weight");
    auto bit = ckpt.tensors.find("task_head.bias");
    if (wit == ckpt.tensors.end() || bit == ckpt.tensors.end()) {
        throw CliError{1, "checkpoint has no task head (run finetune first): " + opts.checkpoint};
    }
    TaskHead head{wit->second, bit->second};
    if (head.w.rows != task.head_width() || head.w.cols != cfg.hidden_size) {
        throw CliError{1, "task head is " + std::to_string(head.w.rows) + "x" + std::to_string(head.w.cols) +
                              " but the task needs " + std::to_string(task.head_width()) + "x" +
                              std::to_string(cfg.hidden_size)};
    }
    Vocab vocab = task_vocab(topts, cfg);
    RenderConfig rcfg = task_render_config(topts, cfg);
    const GlyphSet& glyphs = GlyphSet::for_font_id(rcfg.font_id);

    TaskTable table = load_table_checked(opts.task_tsv);
    std::vector<std::string> names;
    if (!opts.class_names_path.empty()) {
        require_readable(opts.class_names_path);
        std::ifstream in(opts.class_names_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) names.push_back(line);
        }
    } else {
        names = class_names(table);
    }
    std::vector<float> labels = numeric_labels(table, task, names);
    auto inputs = build_task_inputs(table, task, rcfg, glyphs, vocab, cfg, topts.patch_budget);

    EvalReport report = evaluate_task(cfg, params, head, task, inputs, labels);
    std::string text = format_report(report);
    std::cout << text;
    std::ofstream rout(out_file(out_dir, opts.report), std::ios::binary);
    rout << text;
    return 0;
}

// ---- inspect ----

struct InspectOpts {
    std::string path;
    std::string ppm;
    int record = 0;
    int patch_dim = 768;
    int patch_px = 16;
};

void write_pixmap(const std::string& path, int width, int height, int channels,
                  const std::vector<uint8_t>& pixels) {
    if (channels != 1 && channels != 3) {
        throw CliError{1, "can only dump 1- or 3-channel images, got " + std::to_string(channels)};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliError{1, "cannot open for writing: " + path};
    out << (channels == 3 ? "P6" : "P5") << "\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
}

void dump_record_pixmap(const ShardRecord& rec, int patch_px, const std::string& path) {
    const int P = patch_px;
    if (P <= 0 || rec.patch_dim % (P * P) != 0) {
        throw CliError{1, "patch_dim " + std::to_string(rec.patch_dim) + " is not a multiple of patch_px^2"};
    }
    const int C = rec.patch_dim / (P * P);
    const int np = rec.n_patches();
    const int width = np * P;
    std::vector<uint8_t> pixels(size_t(P) * size_t(width) * size_t(C));
    for (int i = 0; i < np; ++i) {
        const uint8_t* src = rec.patch_bytes.data() + size_t(i) * size_t(rec.patch_dim);
        for (int r = 0; r < P; ++r) {
            for (int c = 0; c < P; ++c) {
                for (int ch = 0; ch < C; ++ch) {
                    pixels[(size_t(r) * size_t(width) + size_t(i * P + c)) * size_t(C) + size_t(ch)] =
                        src[(r * P + c) * C + ch];
                }
            }
        }
    }
    write_pixmap(path, width, P, C, pixels);
}

int cmd_inspect(const InspectOpts& opts) {
    require_readable(opts.path);
    std::ifstream probe(opts.path, std::ios::binary);
    char magic[8] = {};
    probe.read(magic, 8);
    std::string tag(magic, size_t(std::max<std::streamsize>(probe.gcount(), 0)));
    probe.close();

    if (tag.rfind("PXSHARD1", 0) == 0) {
        ShardReader reader(opts.path, opts.patch_dim);
        std::cout << "shard " << opts.path << "\n"
                  << "records " << reader.count() << "\n";
        ShardRecord rec;
        int idx = 0;
        bool dumped = opts.ppm.empty();
        while (reader.next(rec)) {
            std::cout << "record " << idx << " " << modality_name(rec.modality) << " patches "
                      << rec.n_patches() << " tokens " << rec.n_tokens() << "\n";
            if (!opts.ppm.empty() && idx == opts.record) {
                dump_record_pixmap(rec, opts.patch_px, opts.ppm);
                std::cout << "pixmap " << opts.ppm << "\n";
                dumped = true;
            }
            ++idx;
        }
        if (!dumped) throw CliError{1, "record index " + std::to_string(opts.record) + " out of range"};
        return 0;
    }
    if (tag.rfind("PXCKPT01", 0) == 0) {
        Checkpoint ckpt = load_checkpoint(opts.path);
        const ModelConfig& c = ckpt.config;
        std::cout << "checkpoint " << opts.path << "\n"
                  << "hidden_size " << c.hidden_size << "\n"
                  << "n_layers " << c.n_layers << "\n"
                  << "n_heads " << c.n_heads << "\n"
                  << "n_kv_heads " << c.n_kv_heads << "\n"
                  << "intermediate_size " << c.intermediate_size << "\n"
                  << "vocab_size " << c.vocab_size << "\n"
                  << "max_positions " << c.max_positions << "\n"
                  << "rope_theta " << c.rope_theta << "\n"
                  << "rms_eps " << c.rms_eps << "\n"
                  << "patch_dim " << c.patch_dim << "\n";
        size_t total = 0;
        for (const auto& [name, tensor] : ckpt.tensors) {
            std::cout << "tensor " << name << " " << tensor.rows << "x" << tensor.cols << "\n";
            total += tensor.data.size();
        }
        std::cout << "parameters " << total << "\n";
        return 0;
    }
    if (tag.rfind("PXSTRIP1", 0) == 0) {
        RenderedStrip strip = read_strip_file(opts.path);
        std::cout << "strip " << opts.path << "\n"
                  << "height " << strip.height << "\n"
                  << "width " << strip.width << "\n"
                  << "channels " << strip.channels << "\n";
        if (!opts.ppm.empty()) {
            write_pixmap(opts.ppm, strip.width, strip.height, strip.channels, strip.pixels);
            std::cout << "pixmap " << opts.ppm << "\n";
        }
        return 0;
    }
    if (tag.rfind("pxvocab", 0) == 0) {
        Vocab vocab = load_vocab(opts.path);
        std::cout << "vocab " << opts.path << "\n"
                  << "size " << vocab.size() << "\n"
                  << "merges " << vocab.merges.size() << "\n";
        return 0;
    }
    throw CliError{1, "unrecognized file format: " + opts.path};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pixeltext: render text as pixel strips and train pixel/token transformers"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value config file with [subcommand] sections; flags override it");

    uint64_t seed = 0;
    std::string out_dir = ".";
    app.add_option("--seed", seed, "root seed; components derive named sub-seeds from it");
    app.add_option("--out", out_dir, "output directory");

    RenderOpts render_opts;
    CLI::App* render = app.add_subcommand("render", "render a text corpus into a patch shard");
    render->add_option("--corpus", render_opts.corpus, "directory of UTF-8 text files")->required();
    render->add_option("--shard", render_opts.shard, "output shard filename");
    render->add_option("--overflow", render_opts.overflow, "overlong document handling")
        ->check(CLI::IsMember({"error", "truncate", "segment"}));
    render->add_flag_callback("--segment", [&] { render_opts.overflow = "segment"; },
                              "shorthand for --overflow segment");
    render->add_option("--modality", render_opts.modality, "record kind")
        ->check(CLI::IsMember({"pixel", "pair"}));
    render->add_option("--vocab", render_opts.vocab_path, "vocabulary file (pair modality)");
    render->add_option("--max-patches", render_opts.max_patches, "strip patch count");
    render->add_option("--patch-px", render_opts.patch_px, "patch side in pixels");

    TokenizeOpts tok_opts;
    CLI::App* tokenize = app.add_subcommand("tokenize", "encode a text corpus into a token shard");
    tokenize->add_option("--corpus", tok_opts.corpus, "directory of UTF-8 text files")->required();
    tokenize->add_option("--vocab", tok_opts.vocab_path, "vocabulary file to load (or save with --train-vocab)")
        ->required();
    tokenize->add_flag("--train-vocab", tok_opts.train_vocab, "learn byte-pair merges from the corpus");
    tokenize->add_option("--vocab-size", tok_opts.vocab_size, "target vocabulary size when training");
    tokenize->add_option("--shard", tok_opts.shard, "output shard filename");
    tokenize->add_option("--patch-dim", tok_opts.patch_dim, "patch dimension stamped on the shard");

    PretrainOpts pre_opts;
    ModelConfig mcfg;
    TrainConfig tcfg;
    CLI::App* pretrain = app.add_subcommand("pretrain", "train a model on patch/token shards");
    pretrain->add_option("--text-shard", pre_opts.text_shard, "token shard");
    pretrain->add_option("--pixel-shard", pre_opts.pixel_shard, "patch shard");
    pretrain->add_option("--pair-shard", pre_opts.pair_shard, "paired shard");
    pretrain->add_option("--checkpoint", pre_opts.checkpoint, "output checkpoint filename");
    pretrain->add_option("--log", pre_opts.log, "output training log filename");
    pretrain->add_option("--steps", tcfg.steps, "training steps");
    pretrain->add_option("--warmup", tcfg.warmup_steps, "linear warmup steps");
    pretrain->add_option("--peak-lr", tcfg.peak_lr, "peak learning rate");
    pretrain->add_option("--batch-size", tcfg.batch_size, "sequences per step");
    pretrain->add_option("--clip-norm", tcfg.clip_norm, "global gradient norm cap");
    pretrain->add_option("--weight-decay", tcfg.weight_decay, "decoupled weight decay");
    pretrain->add_option("--mix-text", pre_opts.mix_text, "text steps per mixing window");
    pretrain->add_option("--mix-pixel", pre_opts.mix_pixel, "pixel steps per mixing window");
    pretrain->add_option("--mix-pair", pre_opts.mix_pair, "pair steps per mixing window");
    add_model_flags(pretrain, mcfg);

    FinetuneCmdOpts fin_opts;
    TaskOpts fin_task;
    FinetuneConfig fcfg;
    CLI::App* finetune_cmd = app.add_subcommand("finetune", "fine-tune a checkpoint on a labeled task");
    finetune_cmd->add_option("--checkpoint", fin_opts.checkpoint, "pretrained checkpoint")->required();
    finetune_cmd->add_option("--train", fin_opts.train_tsv, "training table (tsv)")->required();
    finetune_cmd->add_option("--dev", fin_opts.dev_tsv, "dev table (tsv)")->required();
    finetune_cmd->add_option("--report", fin_opts.report, "output report filename");
    finetune_cmd->add_option("--model-out", fin_opts.model_out, "output checkpoint filename (empty: skip)");
    finetune_cmd->add_option("--log", fin_opts.log, "output step log filename");
    finetune_cmd->add_option("--steps", fcfg.max_steps, "maximum training steps");
    finetune_cmd->add_option("--batch-size", fcfg.batch_size, "examples per step");
    finetune_cmd->add_option("--lr", fcfg.lr, "constant learning rate");
    finetune_cmd->add_option("--clip-norm", fcfg.clip_norm, "global gradient norm cap");
    finetune_cmd->add_option("--eval-every", fcfg.eval_every, "steps between dev evaluations");
    finetune_cmd->add_option("--patience", fcfg.patience, "dev evaluations without improvement before stopping");
    finetune_cmd->add_flag("--freeze", fcfg.freeze_backbone, "train only the task head");
    add_task_flags(finetune_cmd, fin_task);

    EvalCmdOpts eval_opts;
    TaskOpts eval_task;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint on a labeled table");
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "fine-tuned checkpoint with task head")->required();
    eval_cmd->add_option("--task", eval_opts.task_tsv, "evaluation table (tsv)")->required();
    eval_cmd->add_option("--report", eval_opts.report, "output report filename");
    eval_cmd->add_option("--class-names", eval_opts.class_names_path,
                         "class name list fixing label order (one per line)");
    add_task_flags(eval_cmd, eval_task);

    InspectOpts ins_opts;
    CLI::App* inspect = app.add_subcommand("inspect", "describe a shard, checkpoint, strip, or vocab file");
    inspect->add_option("path", ins_opts.path, "file to inspect")->required();
    inspect->add_option("--patch-dim", ins_opts.patch_dim, "patch dimension for shard files");
    inspect->add_option("--patch-px", ins_opts.patch_px, "patch side for pixmap dumps");
    inspect->add_option("--record", ins_opts.record, "record index to dump");
    inspect->add_option("--ppm", ins_opts.ppm, "write the selected record or strip as a portable pixmap");

    CLI11_PARSE(app, argc, argv);

    try {
        if (render->parsed()) return cmd_render(render_opts, out_dir);
        if (tokenize->parsed()) return cmd_tokenize(tok_opts, out_dir);
        if (pretrain->parsed()) return cmd_pretrain(pre_opts, mcfg, tcfg, seed, out_dir);
        if (finetune_cmd->parsed()) {
            fcfg.seed = seed;
            return cmd_finetune(fin_opts, fin_task, fcfg, seed, out_dir);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_opts, eval_task, out_dir);
        if (inspect->parsed()) return cmd_inspect(ins_opts);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const RenderOverflow& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
