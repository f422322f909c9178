#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pixeltext/errors.hpp"
#include "pixeltext/render.hpp"

namespace pixeltext {

// A strip cut into N flattened patches. Values are pixels / 255 in [0,1];
// flattening order inside a patch is rows, then columns, then channels.
// attention_mask marks content positions; loss_mask marks positions whose
// NEXT element is content (so black/white patches never appear as targets).
struct PatchSequence {
    int n = 0;
    int dim = 0; // P*P*C
    std::vector<float> patches; // n x dim, row-major
    std::vector<PatchRole> roles;
    std::vector<uint8_t> attention_mask;
    std::vector<uint8_t> loss_mask;

    const float* patch(int i) const { return patches.data() + size_t(i) * dim; }
};

// all-zero -> eos, all-one -> pad, anything else -> content
PatchRole classify_patch(const float* patch, int dim);

std::vector<uint8_t> attention_mask_from_roles(const std::vector<PatchRole>& roles);
std::vector<uint8_t> loss_mask_from_roles(const std::vector<PatchRole>& roles);

// Splits the strip into width/P patches of P x P x C scaled values. Roles are
// classified from the pixels, which by construction agrees with what the
// renderer recorded. Throws ShapeError when width % P != 0 or height != P.
PatchSequence patchify(const RenderedStrip& strip, int P);

// Inverse of patchify up to the /255 scaling: values are multiplied by 255
// and rounded back to bytes. Throws ShapeError on a patch dim not divisible
// by P*P.
RenderedStrip depatchify(const PatchSequence& seq, int P);

// Per-patch whitening for the regression target: (x - mean) / sqrt(var + eps)
// with mean/variance taken over the patch's dim values. Constant patches map
// to all zeros.
std::vector<float> normalize_targets(const PatchSequence& seq, float eps = 1e-6f);

// L = round(0.299 R + 0.587 G + 0.114 B), one output channel.
RenderedStrip to_grayscale(const RenderedStrip& strip);

// Grayscale first, then pixels below threshold -> 0, at or above -> 255.
RenderedStrip to_binary(const RenderedStrip& strip, int threshold = 128);

enum class Modality : uint8_t { text = 0, pixel = 1, pair = 2 };

// One pre-tokenized training sequence. patch_bytes holds raw pre-scaling
// pixels (n_patches * patch_dim of them); masks cover the concatenated
// sequence of n_patches + n_tokens positions.
struct ShardRecord {
    Modality modality = Modality::text;
    int patch_dim = 768;
    std::vector<uint8_t> patch_bytes;
    std::vector<uint32_t> tokens;
    std::vector<uint8_t> attention_mask;
    std::vector<uint8_t> loss_mask;

    int n_patches() const { return patch_dim == 0 ? 0 : int(patch_bytes.size()) / patch_dim; }
    int n_tokens() const { return int(tokens.size()); }
    bool operator==(const ShardRecord&) const = default;
};

// Shard layout: magic "PXSHARD1", u16 version = 1, u32 record count, then per
// record: u8 modality, u32 n_patches, u32 n_tokens, raw patch bytes, token
// ids as u32, attention mask then loss mask as LSB-first packed bitsets each
// padded to a byte boundary. All integers little-endian. The per-patch byte
// count is not stored; reader and writer must agree on patch_dim.
class ShardWriter {
public:
    ShardWriter(const std::string& path, int patch_dim = 768);
    ~ShardWriter();
    void add(const ShardRecord& record);
    void close();
    uint32_t count() const { return count_; }

private:
    std::ofstream out_;
    std::string path_;
    int patch_dim_;
    uint32_t count_ = 0;
    bool open_ = false;
};

// Streaming reader: one record in memory at a time.
class ShardReader {
public:
    ShardReader(const std::string& path, int patch_dim = 768);
    bool next(ShardRecord& record);
    uint32_t count() const { return count_; }

private:
    std::ifstream in_;
    std::string path_;
    int patch_dim_;
    uint32_t count_ = 0;
    uint32_t read_ = 0;
};

void write_shard(const std::vector<ShardRecord>& records, const std::string& path, int patch_dim = 768);
std::vector<ShardRecord> read_shard(const std::string& path, int patch_dim = 768);

} // namespace pixeltext
