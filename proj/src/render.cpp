#include "pixeltext/render.hpp"

#include <cctype>
#include <cstring>
#include <fstream>

namespace pixeltext {

namespace {

constexpr int kFontWidth = 8;
constexpr int kFontArtRows = 8;

// 8x8 source art for printable ASCII (0x20..0x7E), MSB = leftmost column.
// Each row is scan-doubled to fill the 16-px cell.
const uint8_t kFontArt[95][kFontArtRows] = {
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}, // ' '
    {0x18, 0x18, 0x18, 0x18, 0x18, 0x00, 0x18, 0x00}, // '!'
    {0x66, 0x66, 0x44, 0x00, 0x00, 0x00, 0x00, 0x00}, // '"'
    {0x6c, 0x6c, 0xff, 0x6c, 0xff, 0x6c, 0x6c, 0x00}, // '#'
    {0x10, 0x7e, 0xd0, 0x7c, 0x16, 0xfc, 0x10, 0x00}, // '$'
    {0xc2, 0xc4, 0x08, 0x10, 0x20, 0x46, 0x86, 0x00}, // '%'
    {0x70, 0xd8, 0x70, 0xec, 0xdc, 0xcc, 0x76, 0x00}, // '&'
    {0x18, 0x18, 0x10, 0x00, 0x00, 0x00, 0x00, 0x00}, // '\''
    {0x0c, 0x18, 0x30, 0x30, 0x30, 0x18, 0x0c, 0x00}, // '('
    {0x30, 0x18, 0x0c, 0x0c, 0x0c, 0x18, 0x30, 0x00}, // ')'
    {0x00, 0x66, 0x3c, 0xff, 0x3c, 0x66, 0x00, 0x00}, // '*'
    {0x00, 0x18, 0x18, 0x7e, 0x18, 0x18, 0x00, 0x00}, // '+'
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x18, 0x18, 0x30}, // ','
    {0x00, 0x00, 0x00, 0x7e, 0x00, 0x00, 0x00, 0x00}, // '-'
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x18, 0x18, 0x00}, // '.'
    {0x02, 0x06, 0x0c, 0x18, 0x30, 0x60, 0x40, 0x00}, // '/'
    {0x7c, 0xc6, 0xce, 0xd6, 0xe6, 0xc6, 0x7c, 0x00}, // '0'
    {0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x7e, 0x00}, // '1'
    {0x7c, 0xc6, 0x06, 0x1c, 0x30, 0x60, 0xfe, 0x00}, // '2'
    {0x7c, 0xc6, 0x06, 0x3c, 0x06, 0xc6, 0x7c, 0x00}, // '3'
    {0x1c, 0x3c, 0x6c, 0xcc, 0xfe, 0x0c, 0x1e, 0x00}, // '4'
    {0xfc, 0xc0, 0xfc, 0x06, 0x06, 0xc6, 0x7c, 0x00}, // '5'
    {0x3c, 0x60, 0xc0, 0xfc, 0xc6, 0xc6, 0x7c, 0x00}, // '6'
    {0xfe, 0xc6, 0x06, 0x0c, 0x18, 0x18, 0x18, 0x00}, // '7'
    {0x7c, 0xc6, 0xc6, 0x7c, 0xc6, 0xc6, 0x7c, 0x00}, // '8'
    {0x7c, 0xc6, 0xc6, 0x7e, 0x06, 0x0c, 0x78, 0x00}, // '9'
    {0x00, 0x18, 0x18, 0x00, 0x18, 0x18, 0x00, 0x00}, // ':'
    {0x00, 0x18, 0x18, 0x00, 0x18, 0x18, 0x30, 0x00}, // ';'
    {0x0c, 0x18, 0x30, 0x60, 0x30, 0x18, 0x0c, 0x00}, // '<'
    {0x00, 0x00, 0x7e, 0x00, 0x7e, 0x00, 0x00, 0x00}, // '='
    {0x60, 0x30, 0x18, 0x0c, 0x18, 0x30, 0x60, 0x00}, // '>'
    {0x7c, 0xc6, 0x06, 0x0c, 0x18, 0x00, 0x18, 0x00}, // '?'
    {0x7c, 0xc6, 0xde, 0xde, 0xde, 0xc0, 0x7c, 0x00}, // '@'
    {0x38, 0x6c, 0xc6, 0xc6, 0xfe, 0xc6, 0xc6, 0x00}, // 'A'
    {0xfc, 0xc6, 0xc6, 0xfc, 0xc6, 0xc6, 0xfc, 0x00}, // 'B'
    {0x7c, 0xc6, 0xc0, 0xc0, 0xc0, 0xc6, 0x7c, 0x00}, // 'C'
    {0xf8, 0xcc, 0xc6, 0xc6, 0xc6, 0xcc, 0xf8, 0x00}, // 'D'
    {0xfe, 0xc0, 0xc0, 0xfc, 0xc0, 0xc0, 0xfe, 0x00}, // 'E'
    {0xfe, 0xc0, 0xc0, 0xfc, 0xc0, 0xc0, 0xc0, 0x00}, // 'F'
    {0x7c, 0xc6, 0xc0, 0xde, 0xc6, 0xc6, 0x7c, 0x00}, // 'G'
    {0xc6, 0xc6, 0xc6, 0xfe, 0xc6, 0xc6, 0xc6, 0x00}, // 'H'
    {0x7e, 0x18, 0x18, 0x18, 0x18, 0x18, 0x7e, 0x00}, // 'I'
    {0x1e, 0x0c, 0x0c, 0x0c, 0xcc, 0xcc, 0x78, 0x00}, // 'J'
    {0xc6, 0xcc, 0xd8, 0xf0, 0xd8, 0xcc, 0xc6, 0x00}, // 'K'
    {0xc0, 0xc0, 0xc0, 0xc0, 0xc0, 0xc0, 0xfe, 0x00}, // 'L'
    {0xc6, 0xee, 0xfe, 0xd6, 0xc6, 0xc6, 0xc6, 0x00}, // 'M'
    {0xc6, 0xe6, 0xf6, 0xde, 0xce, 0xc6, 0xc6, 0x00}, // 'N'
    {0x7c, 0xc6, 0xc6, 0xc6, 0xc6, 0xc6, 0x7c, 0x00}, // 'O'
    {0xfc, 0xc6, 0xc6, 0xfc, 0xc0, 0xc0, 0xc0, 0x00}, // 'P'
    {0x7c, 0xc6, 0xc6, 0xc6, 0xd6, 0xcc, 0x7a, 0x00}, // 'Q'
    {0xfc, 0xc6, 0xc6, 0xfc, 0xd8, 0xcc, 0xc6, 0x00}, // 'R'
    {0x7c, 0xc6, 0xc0, 0x7c, 0x06, 0xc6, 0x7c, 0x00}, // 'S'
    {0xfc, 0x30, 0x30, 0x30, 0x30, 0x30, 0x30, 0x00}, // 'T'
    {0xc6, 0xc6, 0xc6, 0xc6, 0xc6, 0xc6, 0x7c, 0x00}, // 'U'
    {0xc6, 0xc6, 0xc6, 0xc6, 0xc6, 0x6c, 0x38, 0x00}, // 'V'
    {0xc6, 0xc6, 0xc6, 0xd6, 0xfe, 0xee, 0xc6, 0x00}, // 'W'
    {0xc6, 0x6c, 0x38, 0x38, 0x6c, 0xc6, 0xc6, 0x00}, // 'X'
    {0xc6, 0xc6, 0x6c, 0x38, 0x18, 0x18, 0x18, 0x00}, // 'Y'
    {0xfe, 0x06, 0x0c, 0x18, 0x30, 0x60, 0xfe, 0x00}, // 'Z'
    {0x3c, 0x30, 0x30, 0x30, 0x30, 0x30, 0x3c, 0x00}, // '['
    {0x40, 0x60, 0x30, 0x18, 0x0c, 0x06, 0x02, 0x00}, // '\\'
    {0x3c, 0x0c, 0x0c, 0x0c, 0x0c, 0x0c, 0x3c, 0x00}, // ']'
    {0x10, 0x38, 0x6c, 0xc6, 0x00, 0x00, 0x00, 0x00}, // '^'
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xff}, // '_'
    {0x30, 0x18, 0x08, 0x00, 0x00, 0x00, 0x00, 0x00}, // '`'
    {0x00, 0x00, 0x7c, 0x06, 0x7e, 0xc6, 0x7e, 0x00}, // 'a'
    {0xc0, 0xc0, 0xfc, 0xc6, 0xc6, 0xc6, 0xfc, 0x00}, // 'b'
    {0x00, 0x00, 0x7c, 0xc0, 0xc0, 0xc6, 0x7c, 0x00}, // 'c'
    {0x06, 0x06, 0x7e, 0xc6, 0xc6, 0xc6, 0x7e, 0x00}, // 'd'
    {0x00, 0x00, 0x7c, 0xc6, 0xfe, 0xc0, 0x7c, 0x00}, // 'e'
    {0x3c, 0x60, 0x60, 0xf8, 0x60, 0x60, 0x60, 0x00}, // 'f'
    {0x00, 0x00, 0x7e, 0xc6, 0xc6, 0x7e, 0x06, 0x7c}, // 'g'
    {0xc0, 0xc0, 0xfc, 0xc6, 0xc6, 0xc6, 0xc6, 0x00}, // 'h'
    {0x18, 0x00, 0x38, 0x18, 0x18, 0x18, 0x3c, 0x00}, // 'i'
    {0x06, 0x00, 0x06, 0x06, 0x06, 0x06, 0xcc, 0x78}, // 'j'
    {0xc0, 0xc0, 0xcc, 0xd8, 0xf0, 0xd8, 0xcc, 0x00}, // 'k'
    {0x38, 0x18, 0x18, 0x18, 0x18, 0x18, 0x3c, 0x00}, // 'l'
    {0x00, 0x00, 0xcc, 0xfe, 0xd6, 0xd6, 0xc6, 0x00}, // 'm'
    {0x00, 0x00, 0xfc, 0xc6, 0xc6, 0xc6, 0xc6, 0x00}, // 'n'
    {0x00, 0x00, 0x7c, 0xc6, 0xc6, 0xc6, 0x7c, 0x00}, // 'o'
    {0x00, 0x00, 0xfc, 0xc6, 0xc6, 0xfc, 0xc0, 0xc0}, // 'p'
    {0x00, 0x00, 0x7e, 0xc6, 0xc6, 0x7e, 0x06, 0x06}, // 'q'
    {0x00, 0x00, 0xdc, 0xe0, 0xc0, 0xc0, 0xc0, 0x00}, // 'r'
    {0x00, 0x00, 0x7e, 0xc0, 0x7c, 0x06, 0xfc, 0x00}, // 's'
    {0x60, 0x60, 0xf8, 0x60, 0x60, 0x66, 0x3c, 0x00}, // 't'
    {0x00, 0x00, 0xc6, 0xc6, 0xc6, 0xc6, 0x7e, 0x00}, // 'u'
    {0x00, 0x00, 0xc6, 0xc6, 0xc6, 0x6c, 0x38, 0x00}, // 'v'
    {0x00, 0x00, 0xc6, 0xd6, 0xd6, 0xfe, 0x6c, 0x00}, // 'w'
    {0x00, 0x00, 0xc6, 0x6c, 0x38, 0x6c, 0xc6, 0x00}, // 'x'
    {0x00, 0x00, 0xc6, 0xc6, 0xc6, 0x7e, 0x06, 0x7c}, // 'y'
    {0x00, 0x00, 0xfe, 0x0c, 0x18, 0x30, 0xfe, 0x00}, // 'z'
    {0x0e, 0x18, 0x18, 0x70, 0x18, 0x18, 0x0e, 0x00}, // '{'
    {0x18, 0x18, 0x18, 0x18, 0x18, 0x18, 0x18, 0x00}, // '|'
    {0x70, 0x18, 0x18, 0x0e, 0x18, 0x18, 0x70, 0x00}, // '}'
    {0x76, 0xdc, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}, // '~'
};

const uint8_t kReplacementArt[kFontArtRows] = {
    0x00, 0x7e, 0x42, 0x42, 0x42, 0x42, 0x7e, 0x00, // hollow box
};

Glyph make_glyph(const uint8_t art[kFontArtRows], int height_px) {
    Glyph g;
    g.advance_px = kFontWidth;
    g.bitmap.assign(size_t(height_px) * kFontWidth, 0);
    for (int r = 0; r < height_px; ++r) {
        uint8_t row = art[r * kFontArtRows / height_px];
        for (int c = 0; c < kFontWidth; ++c) {
            if (row & (0x80u >> c)) g.bitmap[size_t(r) * kFontWidth + c] = 1;
        }
    }
    return g;
}

GlyphSet make_builtin() {
    const int h = 16;
    GlyphSet set(h, make_glyph(kReplacementArt, h));
    for (int code = 0x20; code < 0x7F; ++code) {
        set.add(char32_t(code), make_glyph(kFontArt[code - 0x20], h));
    }
    return set;
}

// Number of patches the span [0, padding + width) touches; 0 for empty text.
int content_patches(int width_px, const RenderConfig& cfg) {
    if (width_px <= 0) return 0;
    return (cfg.padding_px + width_px + cfg.patch_px - 1) / cfg.patch_px;
}

void blit_text(RenderedStrip& strip, std::string_view text, int x0, const RenderConfig& cfg,
               const GlyphSet& glyphs) {
    if (glyphs.height() != cfg.height_px) {
        throw ShapeError("glyph height " + std::to_string(glyphs.height()) + " does not match strip height " +
                         std::to_string(cfg.height_px));
    }
    const int c = cfg.channels;
    int x = x0;
    size_t pos = 0;
    while (pos < text.size()) {
        char32_t cp = decode_utf8(text, pos);
        const Glyph& g = glyphs.glyph_for(cp);
        for (int r = 0; r < cfg.height_px; ++r) {
            uint8_t* row = strip.pixels.data() + (size_t(r) * strip.width + x) * c;
            const uint8_t* bits = g.bitmap.data() + size_t(r) * g.advance_px;
            for (int col = 0; col < g.advance_px; ++col) {
                if (bits[col]) {
                    for (int ch = 0; ch < c; ++ch) row[size_t(col) * c + ch] = cfg.font_color;
                }
            }
        }
        x += g.advance_px;
    }
}

void fill_patch(RenderedStrip& strip, int patch, uint8_t value, const RenderConfig& cfg) {
    const int c = cfg.channels;
    for (int r = 0; r < cfg.height_px; ++r) {
        uint8_t* row = strip.pixels.data() + (size_t(r) * strip.width + size_t(patch) * cfg.patch_px) * c;
        std::memset(row, value, size_t(cfg.patch_px) * c);
    }
}

RenderedStrip blank_strip(const RenderConfig& cfg) {
    RenderedStrip strip;
    strip.height = cfg.height_px;
    strip.width = cfg.canvas_width();
    strip.channels = cfg.channels;
    strip.patch_px = cfg.patch_px;
    strip.pixels.assign(size_t(strip.height) * strip.width * strip.channels, cfg.background);
    return strip;
}

// Reads roles back off the pixels so recorded roles agree with any
// pixel-level classifier: all-0 patch = eos, all-255 = pad, else content.
void record_roles(RenderedStrip& strip, const RenderConfig& cfg) {
    const int n = cfg.max_patches;
    strip.patch_roles.assign(size_t(n), PatchRole::pad);
    strip.used_patches = 0;
    const int c = cfg.channels;
    for (int p = 0; p < n; ++p) {
        bool all0 = true, all255 = true;
        for (int r = 0; r < cfg.height_px && (all0 || all255); ++r) {
            const uint8_t* row = strip.pixels.data() + (size_t(r) * strip.width + size_t(p) * cfg.patch_px) * c;
            for (int i = 0; i < cfg.patch_px * c; ++i) {
                if (row[i] != 0) all0 = false;
                if (row[i] != 255) all255 = false;
                if (!all0 && !all255) break;
            }
        }
        if (all0) {
            strip.patch_roles[size_t(p)] = PatchRole::eos;
            strip.used_patches = p + 1;
        } else if (!all255) {
            strip.patch_roles[size_t(p)] = PatchRole::content;
        }
    }
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) words.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

std::string join_words(const std::vector<std::string>& words, size_t first, size_t count) {
    std::string out;
    for (size_t i = first; i < first + count; ++i) {
        if (i > first) out += ' ';
        out += words[i];
    }
    return out;
}

// Longest prefix of word (in code points) measuring at most budget_px;
// takes at least one code point so segmentation always makes progress.
size_t char_break(const std::string& word, int budget_px, const GlyphSet& glyphs) {
    size_t pos = 0;
    size_t taken = 0;
    int width = 0;
    while (pos < word.size()) {
        size_t next = pos;
        char32_t cp = decode_utf8(word, next);
        int w = glyphs.glyph_for(cp).advance_px;
        if (taken > 0 && width + w > budget_px) break;
        width += w;
        pos = next;
        ++taken;
    }
    return pos;
}

} // namespace

void RenderConfig::validate() const {
    if (patch_px != height_px) {
        throw ShapeError("patch_px must equal height_px (" + std::to_string(patch_px) + " vs " +
                         std::to_string(height_px) + ")");
    }
    if (max_patches < 2) throw ShapeError("max_patches must be at least 2 (one content patch plus eos)");
    if (patch_px < 1 || channels < 1) throw ShapeError("patch_px and channels must be positive");
    if (padding_px < 0 || padding_px >= patch_px) {
        throw ShapeError("padding_px must lie in [0, patch_px)");
    }
}

const GlyphSet& GlyphSet::builtin() {
    static const GlyphSet set = make_builtin();
    return set;
}

const GlyphSet& GlyphSet::for_font_id(const std::string& font_id) {
    if (font_id == "builtin") return builtin();
    throw UnknownId("unknown font_id: " + font_id);
}

char32_t decode_utf8(std::string_view s, size_t& pos) {
    const auto byte = [&](size_t i) { return static_cast<unsigned char>(s[i]); };
    unsigned char b0 = byte(pos);
    if (b0 < 0x80) {
        ++pos;
        return b0;
    }
    int extra;
    char32_t cp;
    if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1Fu;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0Fu;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07u;
    } else {
        ++pos;
        return 0xFFFD;
    }
    if (pos + size_t(extra) + 1 > s.size()) {
        ++pos;
        return 0xFFFD;
    }
    for (int i = 1; i <= extra; ++i) {
        unsigned char b = byte(pos + size_t(i));
        if ((b & 0xC0) != 0x80) {
            ++pos;
            return 0xFFFD;
        }
        cp = (cp << 6) | (b & 0x3Fu);
    }
    static const char32_t kMin[4] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        ++pos;
        return 0xFFFD;
    }
    pos += size_t(extra) + 1;
    return cp;
}

int measure_text(std::string_view text, const GlyphSet& glyphs) {
    int width = 0;
    size_t pos = 0;
    while (pos < text.size()) width += glyphs.glyph_for(decode_utf8(text, pos)).advance_px;
    return width;
}

int fit_words(const std::vector<std::string>& words, int budget_px, const GlyphSet& glyphs) {
    const int space = glyphs.glyph_for(U' ').advance_px;
    std::vector<int> prefix(words.size() + 1, 0);
    for (size_t i = 0; i < words.size(); ++i) {
        int joined = i == 0 ? 0 : space;
        prefix[i + 1] = prefix[i] + joined + measure_text(words[i], glyphs);
    }
    // prefix is non-decreasing, so the largest fitting k is found by
    // bisecting the predicate prefix[k] <= budget_px.
    size_t lo = 0, hi = words.size();
    while (lo < hi) {
        size_t mid = (lo + hi + 1) / 2;
        if (prefix[mid] <= budget_px) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    return int(lo);
}

RenderedStrip render_text(std::string_view text, const RenderConfig& cfg, const GlyphSet& glyphs) {
    cfg.validate();
    const int width_px = measure_text(text, glyphs);
    const int n_content = content_patches(width_px, cfg);
    if (n_content > cfg.max_patches - 1) {
        throw RenderOverflow("text needs " + std::to_string(n_content) + " content patches but only " +
                             std::to_string(cfg.max_patches - 1) + " fit");
    }
    RenderedStrip strip = blank_strip(cfg);
    blit_text(strip, text, cfg.padding_px, cfg, glyphs);
    fill_patch(strip, n_content, 0, cfg);
    record_roles(strip, cfg);
    return strip;
}

RenderedStrip render_pair(std::string_view seg_a, std::string_view seg_b, const RenderConfig& cfg,
                          const GlyphSet& glyphs) {
    cfg.validate();
    const int n_a = content_patches(measure_text(seg_a, glyphs), cfg);
    const int n_b = content_patches(measure_text(seg_b, glyphs), cfg);
    if (n_a + n_b + 2 > cfg.max_patches) {
        throw RenderOverflow("segment pair needs " + std::to_string(n_a + n_b + 2) + " patches but only " +
                             std::to_string(cfg.max_patches) + " fit");
    }
    RenderedStrip strip = blank_strip(cfg);
    blit_text(strip, seg_a, cfg.padding_px, cfg, glyphs);
    fill_patch(strip, n_a, 0, cfg);
    blit_text(strip, seg_b, (n_a + 1) * cfg.patch_px + cfg.padding_px, cfg, glyphs);
    fill_patch(strip, n_a + 1 + n_b, 0, cfg);
    record_roles(strip, cfg);
    return strip;
}

std::vector<RenderedStrip> truncate_or_segment(std::string_view text, const RenderConfig& cfg,
                                               const GlyphSet& glyphs, OverflowMode mode) {
    cfg.validate();
    std::vector<std::string> words = split_words(text);
    const int budget_px = (cfg.max_patches - 1) * cfg.patch_px - cfg.padding_px;
    std::vector<RenderedStrip> strips;
    size_t next = 0;
    while (true) {
        std::string line;
        if (next < words.size()) {
            std::vector<std::string> rest(words.begin() + ptrdiff_t(next), words.end());
            int k = fit_words(rest, budget_px, glyphs);
            if (k == 0) {
                size_t cut = char_break(words[next], budget_px, glyphs);
                line = words[next].substr(0, cut);
                words[next].erase(0, cut);
            } else {
                line = join_words(words, next, size_t(k));
                next += size_t(k);
            }
        }
        strips.push_back(render_text(line, cfg, glyphs));
        if (mode == OverflowMode::truncate || next >= words.size()) break;
    }
    return strips;
}

void write_strip_file(const RenderedStrip& strip, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write("PXSTRIP1", 8);
    uint32_t dims[2] = {uint32_t(strip.height), uint32_t(strip.width)};
    uint8_t le[8];
    for (int d = 0; d < 2; ++d) {
        for (int i = 0; i < 4; ++i) le[d * 4 + i] = uint8_t(dims[d] >> (8 * i));
    }
    out.write(reinterpret_cast<const char*>(le), 8);
    out.write(reinterpret_cast<const char*>(strip.pixels.data()), std::streamsize(strip.pixels.size()));
    if (!out) throw Error("short write: " + path);
}

RenderedStrip read_strip_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path);
    char magic[8];
    uint8_t le[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "PXSTRIP1", 8) != 0) {
        throw Error("bad strip file magic: " + path);
    }
    if (!in.read(reinterpret_cast<char*>(le), 8)) throw Error("truncated strip header: " + path);
    uint32_t dims[2];
    for (int d = 0; d < 2; ++d) {
        dims[d] = 0;
        for (int i = 0; i < 4; ++i) dims[d] |= uint32_t(le[d * 4 + i]) << (8 * i);
    }
    RenderedStrip strip;
    strip.height = int(dims[0]);
    strip.width = int(dims[1]);
    strip.channels = 3;
    strip.patch_px = strip.height;
    strip.pixels.resize(size_t(strip.height) * strip.width * strip.channels);
    if (!in.read(reinterpret_cast<char*>(strip.pixels.data()), std::streamsize(strip.pixels.size()))) {
        throw Error("truncated strip pixels: " + path);
    }
    RenderConfig cfg;
    cfg.height_px = strip.height;
    cfg.patch_px = strip.height;
    cfg.max_patches = strip.patch_px == 0 ? 0 : strip.width / strip.patch_px;
    record_roles(strip, cfg);
    return strip;
}

} // namespace pixeltext
