#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pixeltext/errors.hpp"

namespace pixeltext {

// Byte-level BPE vocabulary. Ids 0..255 are the raw bytes, 256..258 the
// specials, and 259+k the token produced by merge rule k. Merged token byte
// strings are the concatenation of their parts, so decoding never loses
// information regardless of the input language.
struct Vocab {
    static constexpr uint32_t pad_id = 256;
    static constexpr uint32_t bos_id = 257;
    static constexpr uint32_t eos_id = 258;
    static constexpr uint32_t first_merged_id = 259;

    std::vector<std::string> token_strings;
    std::vector<std::pair<uint32_t, uint32_t>> merges;

    uint32_t size() const { return uint32_t(token_strings.size()); }
};

// Greedy BPE training: repeatedly merge the most frequent adjacent symbol
// pair, breaking ties by lexicographically smaller left token string, then
// smaller right. Stops at target_vocab ids or when no adjacent pair is left.
// Throws EmptyCorpus on empty input and ConfigMismatch when target_vocab
// cannot even hold the byte tokens plus specials.
Vocab train_bpe(std::string_view corpus, uint32_t target_vocab);

// Applies merge rules in rule order over the byte sequence of text. Never
// produces special ids.
std::vector<uint32_t> encode(std::string_view text, const Vocab& v);

// Concatenates token byte strings; specials contribute nothing. Throws
// UnknownId for ids outside the vocabulary.
std::string decode(const std::vector<uint32_t>& tokens, const Vocab& v);

// Text format: header "pxvocab <version> <V>", then one merge per line as
// two space-separated hex-encoded byte strings in rule order.
void save_vocab(const Vocab& v, const std::string& path);
Vocab load_vocab(const std::string& path);

} // namespace pixeltext
