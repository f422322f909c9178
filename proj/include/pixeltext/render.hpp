#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pixeltext/errors.hpp"

namespace pixeltext {

// Rendering parameters. Defaults give a 16 x 16384 x 3 canvas made of 1024
// patches of 16x16 pixels. dpi and font_size are informational knobs for
// pluggable glyph backends; the builtin bitmap backend ignores them.
struct RenderConfig {
    int height_px = 16;
    int max_patches = 1024;
    int patch_px = 16;
    int channels = 3;
    uint8_t background = 255;
    uint8_t font_color = 0;
    int dpi = 120;
    int font_size = 8;
    int padding_px = 3;
    std::string font_id = "builtin";

    int canvas_width() const { return max_patches * patch_px; }

    // Throws ShapeError on violated invariants (patch_px must equal
    // height_px; at least 2 patches so one content glyph plus EOS fit).
    void validate() const;
};

enum class PatchRole : uint8_t { content = 0, eos = 1, pad = 2 };

struct Glyph {
    int advance_px = 0;
    // height x advance_px, row-major, 1 = ink
    std::vector<uint8_t> bitmap;
};

// Glyph backend: per-code-point bitmaps plus a replacement glyph for
// unmapped characters. Alternative backends (proportional or system fonts)
// construct a GlyphSet through the same interface.
class GlyphSet {
public:
    static const GlyphSet& builtin(); // fixed-advance 8x16, printable ASCII
    static const GlyphSet& for_font_id(const std::string& font_id);

    GlyphSet(int height_px, Glyph replacement) : height_px_(height_px), replacement_(std::move(replacement)) {}

    void add(char32_t cp, Glyph g) { glyphs_[cp] = std::move(g); }
    const Glyph& glyph_for(char32_t cp) const {
        auto it = glyphs_.find(cp);
        return it == glyphs_.end() ? replacement_ : it->second;
    }
    int height() const { return height_px_; }

private:
    int height_px_;
    Glyph replacement_;
    std::map<char32_t, Glyph> glyphs_;
};

// A rendered strip: fixed-size canvas plus per-patch bookkeeping.
// used_patches is the length of the prefix up to and including the final
// EOS patch; everything after it is padding. Roles are recorded from the
// pixels themselves, so an all-white patch inside the text (nothing but
// spaces) is recorded as pad and stays attention-masked downstream.
struct RenderedStrip {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<uint8_t> pixels; // row-major, channel-interleaved
    int used_patches = 0;
    std::vector<PatchRole> patch_roles;

    int patch_count() const { return patch_px == 0 ? 0 : width / patch_px; }
    int patch_px = 0;
};

enum class OverflowMode { truncate, segment };

// Decodes the code point at byte offset pos, advancing pos. Invalid bytes
// decode to U+FFFD one byte at a time.
char32_t decode_utf8(std::string_view s, size_t& pos);

// Sum of glyph advances over the code points of text.
int measure_text(std::string_view text, const GlyphSet& glyphs);

// Largest k such that words[0..k) joined with single spaces measures at
// most budget_px. Binary search; width is strictly increasing in k.
int fit_words(const std::vector<std::string>& words, int budget_px, const GlyphSet& glyphs);

// Rasterizes text as one horizontal run starting at padding_px, appends an
// all-black EOS patch, fills the rest with background. Throws
// RenderOverflow when the content needs more than max_patches - 1 patches.
RenderedStrip render_text(std::string_view text, const RenderConfig& cfg, const GlyphSet& glyphs);

// seg_a, black delimiter patch, seg_b (inset by padding_px after the
// delimiter), black EOS patch, padding.
RenderedStrip render_pair(std::string_view seg_a, std::string_view seg_b, const RenderConfig& cfg,
                          const GlyphSet& glyphs);

// Splits text into whitespace-separated words and packs them into strips
// using fit_words. truncate keeps only the first strip's worth of words;
// segment emits strips until every word is placed. A word wider than a
// whole strip is hard-broken at character granularity.
std::vector<RenderedStrip> truncate_or_segment(std::string_view text, const RenderConfig& cfg,
                                               const GlyphSet& glyphs, OverflowMode mode);

// Golden-file strip dump: magic "PXSTRIP1", u32 height, u32 width (little
// endian), then raw channel-interleaved rows.
void write_strip_file(const RenderedStrip& strip, const std::string& path);
RenderedStrip read_strip_file(const std::string& path);

} // namespace pixeltext
