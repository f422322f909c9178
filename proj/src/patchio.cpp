#include "pixeltext/patchio.hpp"

#include <cmath>
#include <cstring>

namespace pixeltext {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& out, uint16_t v) {
    uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw CorruptShard("truncated shard: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint16_t get_u16(std::istream& in, const std::string& path) {
    uint8_t b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2)) throw CorruptShard("truncated shard: " + path);
    return uint16_t(uint16_t(b[0]) | uint16_t(b[1]) << 8);
}

void put_bitset(std::ostream& out, const std::vector<uint8_t>& bits) {
    size_t n_bytes = (bits.size() + 7) / 8;
    std::vector<uint8_t> packed(n_bytes, 0);
    for (size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) packed[i / 8] |= uint8_t(1u << (i % 8));
    }
    out.write(reinterpret_cast<const char*>(packed.data()), std::streamsize(packed.size()));
}

std::vector<uint8_t> get_bitset(std::istream& in, size_t n_bits, const std::string& path) {
    size_t n_bytes = (n_bits + 7) / 8;
    std::vector<uint8_t> packed(n_bytes);
    if (n_bytes > 0 && !in.read(reinterpret_cast<char*>(packed.data()), std::streamsize(n_bytes))) {
        throw CorruptShard("truncated shard: " + path);
    }
    std::vector<uint8_t> bits(n_bits);
    for (size_t i = 0; i < n_bits; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return bits;
}

constexpr std::streamoff kCountOffset = 10; // after magic and version

} // namespace

PatchRole classify_patch(const float* patch, int dim) {
    bool all0 = true, all1 = true;
    for (int i = 0; i < dim; ++i) {
        if (patch[i] != 0.0f) all0 = false;
        if (patch[i] != 1.0f) all1 = false;
        if (!all0 && !all1) return PatchRole::content;
    }
    if (all0) return PatchRole::eos;
    return PatchRole::pad;
}

std::vector<uint8_t> attention_mask_from_roles(const std::vector<PatchRole>& roles) {
    std::vector<uint8_t> mask(roles.size());
    for (size_t i = 0; i < roles.size(); ++i) mask[i] = roles[i] == PatchRole::content;
    return mask;
}

std::vector<uint8_t> loss_mask_from_roles(const std::vector<PatchRole>& roles) {
    std::vector<uint8_t> mask(roles.size(), 0);
    for (size_t i = 0; i + 1 < roles.size(); ++i) mask[i] = roles[i + 1] == PatchRole::content;
    return mask;
}

PatchSequence patchify(const RenderedStrip& strip, int P) {
    if (strip.height != P) {
        throw ShapeError("strip height " + std::to_string(strip.height) + " != patch size " + std::to_string(P));
    }
    if (P <= 0 || strip.width % P != 0) {
        throw ShapeError("strip width " + std::to_string(strip.width) + " not divisible by " + std::to_string(P));
    }
    const int C = strip.channels;
    PatchSequence seq;
    seq.n = strip.width / P;
    seq.dim = P * P * C;
    seq.patches.resize(size_t(seq.n) * seq.dim);
    for (int i = 0; i < seq.n; ++i) {
        float* dst = seq.patches.data() + size_t(i) * seq.dim;
        for (int r = 0; r < P; ++r) {
            const uint8_t* src = strip.pixels.data() + (size_t(r) * strip.width + size_t(i) * P) * C;
            for (int c = 0; c < P; ++c) {
                for (int ch = 0; ch < C; ++ch) {
                    dst[(size_t(r) * P + c) * C + ch] = float(src[size_t(c) * C + ch]) * (1.0f / 255.0f);
                }
            }
        }
    }
    seq.roles.resize(size_t(seq.n));
    for (int i = 0; i < seq.n; ++i) seq.roles[size_t(i)] = classify_patch(seq.patch(i), seq.dim);
    seq.attention_mask = attention_mask_from_roles(seq.roles);
    seq.loss_mask = loss_mask_from_roles(seq.roles);
    return seq;
}

RenderedStrip depatchify(const PatchSequence& seq, int P) {
    if (P <= 0 || seq.dim % (P * P) != 0) {
        throw ShapeError("patch dim " + std::to_string(seq.dim) + " is not P*P*C for P = " + std::to_string(P));
    }
    const int C = seq.dim / (P * P);
    RenderedStrip strip;
    strip.height = P;
    strip.width = seq.n * P;
    strip.channels = C;
    strip.patch_px = P;
    strip.used_patches = 0;
    strip.patch_roles = seq.roles;
    strip.pixels.resize(size_t(strip.height) * strip.width * C);
    for (int i = 0; i < seq.n; ++i) {
        const float* src = seq.patch(i);
        for (int r = 0; r < P; ++r) {
            uint8_t* dst = strip.pixels.data() + (size_t(r) * strip.width + size_t(i) * P) * C;
            for (int c = 0; c < P; ++c) {
                for (int ch = 0; ch < C; ++ch) {
                    float v = src[(size_t(r) * P + c) * C + ch] * 255.0f;
                    long px = std::lround(v);
                    if (px < 0) px = 0;
                    if (px > 255) px = 255;
                    dst[size_t(c) * C + ch] = uint8_t(px);
                }
            }
        }
    }
    for (size_t i = 0; i < seq.roles.size(); ++i) {
        if (seq.roles[i] == PatchRole::eos) strip.used_patches = int(i) + 1;
    }
    return strip;
}

std::vector<float> normalize_targets(const PatchSequence& seq, float eps) {
    std::vector<float> out(seq.patches.size());
    for (int i = 0; i < seq.n; ++i) {
        const float* x = seq.patch(i);
        double mean = 0.0;
        for (int j = 0; j < seq.dim; ++j) mean += x[j];
        mean /= seq.dim;
        double var = 0.0;
        for (int j = 0; j < seq.dim; ++j) {
            double d = x[j] - mean;
            var += d * d;
        }
        var /= seq.dim;
        double inv = 1.0 / std::sqrt(var + double(eps));
        float* dst = out.data() + size_t(i) * seq.dim;
        for (int j = 0; j < seq.dim; ++j) dst[j] = float((x[j] - mean) * inv);
    }
    return out;
}

RenderedStrip to_grayscale(const RenderedStrip& strip) {
    if (strip.channels != 3) {
        throw ShapeError("grayscale conversion needs 3 channels, got " + std::to_string(strip.channels));
    }
    RenderedStrip out;
    out.height = strip.height;
    out.width = strip.width;
    out.channels = 1;
    out.patch_px = strip.patch_px;
    out.used_patches = strip.used_patches;
    out.patch_roles = strip.patch_roles;
    out.pixels.resize(size_t(out.height) * out.width);
    for (size_t i = 0; i < out.pixels.size(); ++i) {
        const uint8_t* px = strip.pixels.data() + i * 3;
        out.pixels[i] = uint8_t(std::lround(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]));
    }
    return out;
}

RenderedStrip to_binary(const RenderedStrip& strip, int threshold) {
    RenderedStrip out = strip.channels == 3 ? to_grayscale(strip) : strip;
    for (auto& px : out.pixels) px = px < threshold ? 0 : 255;
    return out;
}

ShardWriter::ShardWriter(const std::string& path, int patch_dim)
    : out_(path, std::ios::binary), path_(path), patch_dim_(patch_dim) {
    if (!out_) throw CorruptShard("cannot open shard for writing: " + path);
    out_.write("PXSHARD1", 8);
    put_u16(out_, 1);
    put_u32(out_, 0); // record count, patched on close
    open_ = true;
}

ShardWriter::~ShardWriter() {
    if (open_) close();
}

void ShardWriter::add(const ShardRecord& record) {
    if (!open_) throw CorruptShard("shard writer already closed: " + path_);
    if (record.patch_dim != patch_dim_) {
        throw ShapeError("record patch_dim " + std::to_string(record.patch_dim) + " != shard patch_dim " +
                         std::to_string(patch_dim_));
    }
    if (int(record.patch_bytes.size()) != record.n_patches() * patch_dim_) {
        throw ShapeError("patch payload size is not a multiple of patch_dim");
    }
    size_t total = size_t(record.n_patches()) + size_t(record.n_tokens());
    if (record.attention_mask.size() != total || record.loss_mask.size() != total) {
        throw ShapeError("mask length does not match n_patches + n_tokens");
    }
    out_.put(char(uint8_t(record.modality)));
    put_u32(out_, uint32_t(record.n_patches()));
    put_u32(out_, uint32_t(record.n_tokens()));
    out_.write(reinterpret_cast<const char*>(record.patch_bytes.data()),
               std::streamsize(record.patch_bytes.size()));
    for (uint32_t t : record.tokens) put_u32(out_, t);
    put_bitset(out_, record.attention_mask);
    put_bitset(out_, record.loss_mask);
    if (!out_) throw CorruptShard("short write to shard: " + path_);
    ++count_;
}

void ShardWriter::close() {
    if (!open_) return;
    open_ = false;
    out_.seekp(kCountOffset);
    put_u32(out_, count_);
    out_.close();
    if (!out_) throw CorruptShard("failed to finalize shard: " + path_);
}

ShardReader::ShardReader(const std::string& path, int patch_dim)
    : in_(path, std::ios::binary), path_(path), patch_dim_(patch_dim) {
    if (!in_) throw CorruptShard("cannot open shard: " + path);
    char magic[8];
    if (!in_.read(magic, 8) || std::memcmp(magic, "PXSHARD1", 8) != 0) {
        throw CorruptShard("bad shard magic: " + path);
    }
    uint16_t version = get_u16(in_, path_);
    if (version != 1) throw CorruptShard("unsupported shard version " + std::to_string(version) + ": " + path);
    count_ = get_u32(in_, path_);
}

bool ShardReader::next(ShardRecord& record) {
    if (read_ >= count_) return false;
    int mod = in_.get();
    if (mod == std::char_traits<char>::eof()) throw CorruptShard("truncated shard: " + path_);
    if (mod < 0 || mod > 2) throw CorruptShard("bad modality tag " + std::to_string(mod) + ": " + path_);
    record.modality = Modality(uint8_t(mod));
    record.patch_dim = patch_dim_;
    uint32_t n_patches = get_u32(in_, path_);
    uint32_t n_tokens = get_u32(in_, path_);
    record.patch_bytes.resize(size_t(n_patches) * size_t(patch_dim_));
    if (!record.patch_bytes.empty() &&
        !in_.read(reinterpret_cast<char*>(record.patch_bytes.data()),
                  std::streamsize(record.patch_bytes.size()))) {
        throw CorruptShard("truncated shard: " + path_);
    }
    record.tokens.resize(n_tokens);
    for (uint32_t i = 0; i < n_tokens; ++i) record.tokens[i] = get_u32(in_, path_);
    size_t total = size_t(n_patches) + size_t(n_tokens);
    record.attention_mask = get_bitset(in_, total, path_);
    record.loss_mask = get_bitset(in_, total, path_);
    ++read_;
    return true;
}

void write_shard(const std::vector<ShardRecord>& records, const std::string& path, int patch_dim) {
    ShardWriter writer(path, patch_dim);
    for (const auto& r : records) writer.add(r);
    writer.close();
}

std::vector<ShardRecord> read_shard(const std::string& path, int patch_dim) {
    ShardReader reader(path, patch_dim);
    std::vector<ShardRecord> records;
    ShardRecord r;
    while (reader.next(r)) records.push_back(r);
    return records;
}

} // namespace pixeltext
