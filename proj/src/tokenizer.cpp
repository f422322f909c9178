#include "pixeltext/tokenizer.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace pixeltext {

namespace {

Vocab base_vocab() {
    Vocab v;
    v.token_strings.reserve(259);
    for (int b = 0; b < 256; ++b) v.token_strings.emplace_back(1, char(b));
    v.token_strings.emplace_back("<pad>");
    v.token_strings.emplace_back("<bos>");
    v.token_strings.emplace_back("<eos>");
    return v;
}

bool is_special(uint32_t id) { return id >= 256 && id < Vocab::first_merged_id; }

// Replaces every left-to-right non-overlapping (l, r) occurrence with merged.
void apply_merge(std::vector<uint32_t>& syms, uint32_t l, uint32_t r, uint32_t merged) {
    size_t out = 0;
    for (size_t i = 0; i < syms.size();) {
        if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
            syms[out++] = merged;
            i += 2;
        } else {
            syms[out++] = syms[i];
            ++i;
        }
    }
    syms.resize(out);
}

std::string to_hex(const std::string& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) {
        out += digits[b >> 4];
        out += digits[b & 0xF];
    }
    return out;
}

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string from_hex(const std::string& hex, const std::string& path) {
    if (hex.size() % 2 != 0) throw Error("odd-length hex string in vocab file: " + path);
    std::string out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_digit(hex[i]), lo = hex_digit(hex[i + 1]);
        if (hi < 0 || lo < 0) throw Error("bad hex in vocab file: " + path);
        out += char(hi * 16 + lo);
    }
    return out;
}

} // namespace

Vocab train_bpe(std::string_view corpus, uint32_t target_vocab) {
    if (target_vocab < Vocab::first_merged_id) {
        throw ConfigMismatch("target_vocab must be at least " + std::to_string(Vocab::first_merged_id) +
                             " (256 bytes plus 3 specials)");
    }
    if (corpus.empty()) throw EmptyCorpus("cannot train a tokenizer on an empty corpus");

    Vocab v = base_vocab();
    std::vector<uint32_t> syms(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) syms[i] = uint8_t(corpus[i]);

    while (v.size() < target_vocab) {
        // count adjacent pairs (overlapping occurrences included)
        std::map<std::pair<uint32_t, uint32_t>, uint64_t> counts;
        for (size_t i = 0; i + 1 < syms.size(); ++i) ++counts[{syms[i], syms[i + 1]}];
        if (counts.empty()) break;

        auto better = [&](const std::pair<uint32_t, uint32_t>& a, const std::pair<uint32_t, uint32_t>& b) {
            const std::string &al = v.token_strings[a.first], &ar = v.token_strings[a.second];
            const std::string &bl = v.token_strings[b.first], &br = v.token_strings[b.second];
            if (al != bl) return al < bl;
            if (ar != br) return ar < br;
            return a < b;
        };
        std::pair<uint32_t, uint32_t> best{};
        uint64_t best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count || (count == best_count && better(pair, best))) {
                best = pair;
                best_count = count;
            }
        }

        uint32_t merged = v.size();
        v.merges.push_back(best);
        v.token_strings.push_back(v.token_strings[best.first] + v.token_strings[best.second]);
        apply_merge(syms, best.first, best.second, merged);
    }
    return v;
}

std::vector<uint32_t> encode(std::string_view text, const Vocab& v) {
    std::vector<uint32_t> syms(text.size());
    for (size_t i = 0; i < text.size(); ++i) syms[i] = uint8_t(text[i]);
    for (size_t rule = 0; rule < v.merges.size(); ++rule) {
        if (syms.size() < 2) break;
        apply_merge(syms, v.merges[rule].first, v.merges[rule].second, Vocab::first_merged_id + uint32_t(rule));
    }
    return syms;
}

std::string decode(const std::vector<uint32_t>& tokens, const Vocab& v) {
    std::string out;
    for (uint32_t id : tokens) {
        if (id >= v.size()) throw UnknownId("token id " + std::to_string(id) + " outside vocabulary of size " +
                                            std::to_string(v.size()));
        if (is_special(id)) continue;
        out += v.token_strings[id];
    }
    return out;
}

void save_vocab(const Vocab& v, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    out << "pxvocab 1 " << v.size() << "\n";
    for (const auto& [l, r] : v.merges) {
        out << to_hex(v.token_strings[l]) << " " << to_hex(v.token_strings[r]) << "\n";
    }
    if (!out) throw Error("short write: " + path);
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open for reading: " + path);
    std::string tag;
    int version = 0;
    uint32_t target = 0;
    if (!(in >> tag >> version >> target) || tag != "pxvocab") throw Error("bad vocab header: " + path);
    if (version != 1) throw Error("unsupported vocab version " + std::to_string(version) + ": " + path);

    Vocab v = base_vocab();
    std::map<std::string, uint32_t> by_string;
    for (uint32_t id = 0; id < 256; ++id) by_string[v.token_strings[id]] = id;

    std::string l_hex, r_hex;
    while (in >> l_hex >> r_hex) {
        std::string l_str = from_hex(l_hex, path), r_str = from_hex(r_hex, path);
        auto l_it = by_string.find(l_str);
        auto r_it = by_string.find(r_str);
        if (l_it == by_string.end() || r_it == by_string.end()) {
            throw Error("merge references an unknown token in vocab file: " + path);
        }
        uint32_t merged = v.size();
        v.merges.emplace_back(l_it->second, r_it->second);
        v.token_strings.push_back(l_str + r_str);
        by_string.emplace(l_str + r_str, merged); // first definition wins
    }
    if (v.size() != target) {
        throw Error("vocab file declares " + std::to_string(target) + " tokens but defines " +
                    std::to_string(v.size()) + ": " + path);
    }
    return v;
}

} // namespace pixeltext
