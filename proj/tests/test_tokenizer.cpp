#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <string>

#include "pixeltext/rng.hpp"
#include "pixeltext/tokenizer.hpp"

using namespace pixeltext;

namespace {

std::string random_bytes(Rng& rng, size_t max_len) {
    std::string s;
    size_t len = rng.next_below(max_len + 1);
    for (size_t i = 0; i < len; ++i) s += char(rng.next_below(256));
    return s;
}

std::string random_utf8(Rng& rng, size_t max_cps) {
    static const char* samples[] = {"a", "b", " ", "Z", "9", "\xC3\xA9", "\xE4\xBD\xA0", "\xF0\x9F\x98\x80", "\n"};
    std::string s;
    size_t n = rng.next_below(max_cps + 1);
    for (size_t i = 0; i < n; ++i) s += samples[rng.next_below(9)];
    return s;
}

} // namespace

TEST_CASE("training on 'aaaa' produces the (a,a) merge first") {
    Vocab v = train_bpe("aaaa", 260);
    REQUIRE(v.merges.size() == 1);
    CHECK(v.merges[0] == std::pair<uint32_t, uint32_t>{97, 97});
    CHECK(v.token_strings[259] == "aa");
    CHECK(v.size() == 260);
}

TEST_CASE("target 259 keeps only bytes and specials") {
    Vocab v = train_bpe("whatever text", 259);
    CHECK(v.size() == 259);
    CHECK(v.merges.empty());
    CHECK(v.token_strings[Vocab::pad_id] == "<pad>");
    CHECK(v.token_strings[Vocab::bos_id] == "<bos>");
    CHECK(v.token_strings[Vocab::eos_id] == "<eos>");
}

TEST_CASE("empty corpus and undersized targets are rejected") {
    CHECK_THROWS_AS(train_bpe("", 512), EmptyCorpus);
    CHECK_THROWS_AS(train_bpe("abc", 258), ConfigMismatch);
}

TEST_CASE("pair frequencies count overlapping occurrences") {
    // "aaa" has two (a,a) positions, more than the single (b,c)
    Vocab v = train_bpe("aaabc", 260);
    CHECK(v.merges[0] == std::pair<uint32_t, uint32_t>{97, 97});
}

TEST_CASE("frequency ties break toward the smaller left token string") {
    // (z,y) and (x,w) both occur twice; 'x' < 'z'
    Vocab v = train_bpe("zyzyxwxw", 260);
    CHECK(v.merges[0] == std::pair<uint32_t, uint32_t>{uint32_t('x'), uint32_t('w')});
}

TEST_CASE("training is deterministic") {
    const char* corpus = "the cat sat on the mat; the dog sat on the log";
    Vocab a = train_bpe(corpus, 300);
    Vocab b = train_bpe(corpus, 300);
    CHECK(a.merges == b.merges);
    CHECK(a.token_strings == b.token_strings);
}

TEST_CASE("training stops early when no pairs remain") {
    Vocab v = train_bpe("ab", 512);
    // "ab" supports exactly one merge, after which a single symbol remains
    CHECK(v.size() == 260);
}

TEST_CASE("encode applies merges in rule order") {
    Vocab v = train_bpe("xy", 260); // gives one merge so the struct is well-formed
    v.merges = {{uint32_t('b'), uint32_t('c')}, {uint32_t('a'), 259u}};
    v.token_strings.resize(259);
    v.token_strings.push_back("bc");
    v.token_strings.push_back("abc");
    CHECK(encode("abc", v) == std::vector<uint32_t>{260});
    CHECK(encode("bca", v) == std::vector<uint32_t>{259, uint32_t('a')});
    CHECK(decode(encode("abc", v), v) == "abc");
}

TEST_CASE("empty text round-trips through empty token list") {
    Vocab v = train_bpe("seed text", 280);
    CHECK(encode("", v).empty());
    CHECK(decode({}, v).empty());
}

TEST_CASE("decode skips specials and rejects out-of-range ids") {
    Vocab v = train_bpe("seed text", 280);
    std::vector<uint32_t> tokens = {Vocab::bos_id, uint32_t('h'), uint32_t('i'), Vocab::eos_id, Vocab::pad_id};
    CHECK(decode(tokens, v) == "hi");
    CHECK_THROWS_AS(decode({v.size()}, v), UnknownId);
    CHECK_THROWS_AS(decode({v.size() + 1}, v), UnknownId);
}

TEST_CASE("round-trip identity on random byte and unicode strings") {
    std::string corpus;
    Rng seed_rng(sub_seed(13, "bpe corpus"));
    for (int i = 0; i < 2000; ++i) corpus += char('a' + seed_rng.next_below(26));
    Vocab v = train_bpe(corpus, 512);

    Rng rng(sub_seed(13, "bpe roundtrip"));
    for (int trial = 0; trial < 500; ++trial) {
        std::string t = random_bytes(rng, 60);
        CAPTURE(trial);
        REQUIRE(decode(encode(t, v), v) == t);
    }
    for (int trial = 0; trial < 500; ++trial) {
        std::string t = random_utf8(rng, 30);
        CAPTURE(trial);
        REQUIRE(decode(encode(t, v), v) == t);
    }
}

TEST_CASE("encode output stays below the vocabulary size") {
    Vocab v = train_bpe("abcabcabc abc", 270);
    for (uint32_t id : encode("abcabc xyz \xFF\x00", v)) REQUIRE(id < v.size());
}

TEST_CASE("vocab files round-trip merges and encoding behavior") {
    std::string corpus = "pack my box with five dozen liquor jugs. pack my box again!";
    Vocab v = train_bpe(corpus, 320);
    std::string path = (std::filesystem::temp_directory_path() / "pixeltext_vocab.txt").string();
    save_vocab(v, path);
    Vocab loaded = load_vocab(path);
    CHECK(loaded.size() == v.size());
    CHECK(loaded.merges == v.merges);
    CHECK(loaded.token_strings == v.token_strings);
    CHECK(encode(corpus, loaded) == encode(corpus, v));
    std::remove(path.c_str());
}
