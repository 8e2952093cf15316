#include "doctest.h"

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "codeseed/corpus.hpp"
#include "testutil.hpp"

using namespace codeseed;

// ---- independent normalization oracle -------------------------------------
// A second, structurally different path to a normalized stream: one pass that
// strips comments and swaps quoted literals for marker bytes, then per-line
// whitespace splitting with a chunk-level tokenizer. Only used to cross-check
// the production scanner.
namespace oracle {

constexpr char kStrMark = '\x01';

inline bool id_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

std::string strip_comments_and_quotes(const std::string& src) {
    std::string out;
    std::size_t i = 0;
    while (i < src.size()) {
        if (src[i] == '/' && i + 1 < src.size() && src[i + 1] == '/') {
            while (i < src.size() && src[i] != '\n') ++i;
        } else if (src[i] == '/' && i + 1 < src.size() && src[i + 1] == '*') {
            i += 2;
            while (i + 1 < src.size() && !(src[i] == '*' && src[i + 1] == '/')) {
                if (src[i] == '\n') out += '\n';
                ++i;
            }
            i += 2;
        } else if (src[i] == '"' || src[i] == '\'') {
            const char quote = src[i];
            ++i;
            while (i < src.size() && src[i] != quote) {
                if (src[i] == '\\') ++i;
                ++i;
            }
            ++i;
            out += kStrMark;
        } else {
            out += src[i++];
        }
    }
    return out;
}

std::vector<std::string> split_chunk(const std::string& chunk) {
    static const std::vector<std::string> multi = {
        ">>>=", ">>>", "<<=", ">>=", "...", "==", "!=", "<=", ">=", "&&", "||", "++",
        "--",   "+=",  "-=",  "*=",  "/=",  "%=", "&=", "|=", "^=", "<<", ">>", "->", "::"};
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = chunk.size();
    while (i < n) {
        const char c = chunk[i];
        if (c == kStrMark) {
            out.push_back("StringVal");
            ++i;
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(chunk[i + 1])))) {
            std::size_t j = i;
            bool is_float = false;
            auto run = [&](auto pred) {
                while (j < n && (pred(static_cast<unsigned char>(chunk[j])) || chunk[j] == '_')) ++j;
            };
            if (chunk[j] == '0' && j + 1 < n && (chunk[j + 1] == 'x' || chunk[j + 1] == 'X')) {
                j += 2;
                run([](unsigned char ch) { return std::isxdigit(ch) != 0; });
            } else if (chunk[j] == '0' && j + 1 < n && (chunk[j + 1] == 'b' || chunk[j + 1] == 'B')) {
                j += 2;
                run([](unsigned char ch) { return std::isdigit(ch) != 0; });
            } else {
                if (chunk[j] == '.') {
                    is_float = true;
                    ++j;
                }
                run([](unsigned char ch) { return std::isdigit(ch) != 0; });
                if (!is_float && j < n && chunk[j] == '.') {
                    is_float = true;
                    ++j;
                    run([](unsigned char ch) { return std::isdigit(ch) != 0; });
                }
                if (j < n && (chunk[j] == 'e' || chunk[j] == 'E')) {
                    std::size_t k = j + 1;
                    if (k < n && (chunk[k] == '+' || chunk[k] == '-')) ++k;
                    if (k < n && std::isdigit(static_cast<unsigned char>(chunk[k]))) {
                        is_float = true;
                        j = k;
                        run([](unsigned char ch) { return std::isdigit(ch) != 0; });
                    }
                }
            }
            if (j < n && (chunk[j] == 'f' || chunk[j] == 'F' || chunk[j] == 'd' || chunk[j] == 'D')) {
                is_float = true;
                ++j;
            } else if (j < n && (chunk[j] == 'l' || chunk[j] == 'L')) {
                ++j;
            }
            out.push_back(is_float ? "FloatVal" : "IntVal");
            i = j;
        } else if (id_char(c) && !std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < n && id_char(chunk[j])) ++j;
            out.push_back(chunk.substr(i, j - i));
            i = j;
        } else {
            bool matched = false;
            for (const std::string& op : multi) {
                if (chunk.compare(i, op.size(), op) == 0) {
                    out.push_back(op);
                    i += op.size();
                    matched = true;
                    break;
                }
            }
            if (!matched) {
                out.push_back(chunk.substr(i, 1));
                ++i;
            }
        }
    }
    return out;
}

std::string normalize(const std::string& src) {
    const std::string clean = strip_comments_and_quotes(src);
    std::string out;
    std::size_t pos = 0;
    while (pos <= clean.size()) {
        std::size_t eol = clean.find('\n', pos);
        if (eol == std::string::npos) eol = clean.size();
        const std::string line = clean.substr(pos, eol - pos);
        std::vector<std::string> tokens;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            std::size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
            if (j > i)
                for (std::string& t : split_chunk(line.substr(i, j - i))) tokens.push_back(std::move(t));
            i = j;
        }
        if (!tokens.empty()) {
            for (std::size_t t = 0; t < tokens.size(); ++t) {
                if (t) out += ' ';
                out += tokens[t];
            }
            out += '\n';
        }
        if (eol == clean.size()) break;
        pos = eol + 1;
    }
    return out;
}

}  // namespace oracle
// ----------------------------------------------------------------------------

namespace {
SourceFile src(const std::string& text) { return SourceFile{"Test.java", text}; }
}

TEST_CASE("normalization replaces literals and strips comments") {
    CHECK(normalize_source(src("int x = 1; // count")) == "int x = IntVal ;\n");
    CHECK(normalize_source(src("")) == "");
    // cross-checked against the chunk-level oracle before freezing
    const std::string mixed = "String s = \"hi\" + \"yo\"; double d = 1.2e3;";
    const std::string expected = "String s = StringVal + StringVal ; double d = FloatVal ;\n";
    CHECK(oracle::normalize(mixed) == expected);
    CHECK(normalize_source(src(mixed)) == expected);
}

TEST_CASE("blank lines and whole-line comments disappear") {
    const std::string text = "int a = 1;\n\n\n// gone\nint b = 2;\n/* gone\n gone */\nint c;\n";
    CHECK(normalize_source(src(text)) == "int a = IntVal ;\nint b = IntVal ;\nint c ;\n");
}

TEST_CASE("char literals normalize to StringVal") {
    CHECK(normalize_source(src("char c = 'a';")) == "char c = StringVal ;\n");
    CHECK(normalize_source(src("char c = '\\'';")) == "char c = StringVal ;\n");
}

TEST_CASE("literal replacement never fires inside identifiers") {
    CHECK(normalize_source(src("int x1 = x2y3;")) == "int x1 = x2y3 ;\n");
}

TEST_CASE("annotations lex as marker plus identifier") {
    CHECK(normalize_source(src("@Override\nvoid f() {}")) ==
          "@ Override\nvoid f ( ) { }\n");
}

TEST_CASE("comments-only mode keeps literal text") {
    const std::string text = "int a = 42; // gone\nString s = \"a b\";\n";
    const std::string out = normalize_source(src(text), NormalizeMode::CommentsOnly);
    CHECK(out == "int a = 42 ;\nString s = \"a\\u0020b\" ;\n");
}

TEST_CASE("normalization errors carry file and line") {
    CHECK_THROWS_WITH_AS(normalize_source(SourceFile{"A.java", "int a;\n/* open"}),
                         doctest::Contains("A.java:2"), Error);
    CHECK_THROWS_WITH_AS(normalize_source(SourceFile{"B.java", "String s = \"oops;"}),
                         doctest::Contains("unterminated string"), Error);
}

TEST_CASE("normalization is idempotent and matches the oracle on generated files") {
    Rng rng(123);
    for (int i = 0; i < 60; ++i) {
        const std::string source = testutil::javagen::file(rng);
        CAPTURE(source);
        const std::string once = normalize_source(src(source));
        CHECK(once == oracle::normalize(source));
        CHECK(normalize_source(src(once)) == once);
        CHECK(once.find("/*") == std::string::npos);
        CHECK(once.find("//") == std::string::npos);
        CHECK(once.find("\n\n") == std::string::npos);
    }
}

TEST_CASE("lex splits normalized text into tokens with line structure") {
    const TokenSequence seq = lex("t", "System.out.println ( StringVal ) ;");
    CHECK(seq.tokens == std::vector<std::string>{"System", ".", "out", ".", "println", "(",
                                                 "StringVal", ")", ";"});
    CHECK(seq.loc() == 1);

    CHECK(lex("t", "a").tokens == std::vector<std::string>{"a"});
    CHECK(lex("t", "x>=y&&z").tokens == std::vector<std::string>{"x", ">=", "y", "&&", "z"});
    CHECK(lex("t", "").tokens.empty());
}

TEST_CASE("re-lexing the space-joined stream is a fixpoint") {
    Rng rng(77);
    for (int i = 0; i < 25; ++i) {
        const std::string source = testutil::javagen::file(rng);
        const TokenSequence first = lex("t", normalize_source(src(source)));
        std::string joined;
        for (std::size_t t = 0; t < first.tokens.size(); ++t) {
            if (t) joined += ' ';
            joined += first.tokens[t];
        }
        CHECK(lex("t", joined).tokens == first.tokens);
    }
}

TEST_CASE("token streams round-trip through the .toks format") {
    Rng rng(9);
    const std::string source = testutil::javagen::file(rng);
    const TokenSequence seq = lex("t", normalize_source(src(source)));
    const std::string text = format_token_stream(seq);
    const TokenSequence back = parse_token_stream("t", text);
    CHECK(back.tokens == seq.tokens);
    CHECK(back.line_starts == seq.line_starts);
    CHECK(format_token_stream(back) == text);
}

TEST_CASE("windowize slides stride one with left padding") {
    const std::vector<std::int32_t> ids{7, 8, 9};
    const auto ws = windowize(ids, 2, 0);
    REQUIRE(ws.size() == 2);
    CHECK(ws[0].context == std::vector<std::int32_t>{0, 7});
    CHECK(ws[0].target == 8);
    CHECK(ws[1].context == std::vector<std::int32_t>{7, 8});
    CHECK(ws[1].target == 9);

    CHECK(windowize({5}, 20, 0).empty());

    std::vector<std::int32_t> long_ids;
    for (std::int32_t i = 0; i < 25; ++i) long_ids.push_back(i + 2);
    const auto lw = windowize(long_ids, 20, 0);
    REQUIRE(lw.size() == 24);
    int pads = 0;
    for (std::int32_t v : lw[0].context) pads += v == 0 ? 1 : 0;
    CHECK(pads == 19);
    CHECK(lw[0].context.back() == long_ids[0]);
    CHECK(lw[0].target == long_ids[1]);
}

// enumeration oracle: every (stream length, tau) pair obeys count = len - 1
TEST_CASE("windowize count matches enumeration") {
    for (int len = 1; len <= 12; ++len) {
        for (int tau : {1, 2, 5, 20}) {
            std::vector<std::int32_t> ids;
            for (int i = 0; i < len; ++i) ids.push_back(i + 2);
            const auto ws = windowize(ids, tau, 0);
            CHECK(static_cast<int>(ws.size()) == std::max(0, len - 1));
            for (std::size_t t = 0; t < ws.size(); ++t) {
                CHECK(static_cast<int>(ws[t].context.size()) == tau);
                CHECK(ws[t].target == ids[t + 1]);
                bool any_real = false;
                for (std::int32_t v : ws[t].context) any_real |= v != 0;
                CHECK(any_real);
            }
        }
    }
    CHECK_THROWS_AS(windowize({}, 5, 0), Error);
    CHECK_THROWS_AS(windowize({1, 2}, 0, 0), Error);
}

namespace {
TokenSequence stream_of_lines(const std::string& origin, int lines, int tokens_per_line) {
    TokenSequence seq;
    seq.origin = origin;
    for (int l = 0; l < lines; ++l) {
        seq.line_starts.push_back(static_cast<std::uint32_t>(seq.tokens.size()));
        for (int t = 0; t < tokens_per_line; ++t)
            seq.tokens.push_back(origin + "_" + std::to_string(l) + "_" + std::to_string(t));
    }
    return seq;
}
}  // namespace

TEST_CASE("split_folds balances LOC and partitions every line") {
    const std::vector<TokenSequence> corpus{stream_of_lines("a", 40, 3), stream_of_lines("b", 35, 2),
                                            stream_of_lines("c", 25, 4)};
    const FoldAssignment fa = split_folds(corpus, 10, 1);
    REQUIRE(fa.fold_count == 10);
    for (long long loc : fa.fold_loc) CHECK(loc == 10);

    // partition: every (file,line) in exactly one fold
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < fa.ranges.size(); ++i) {
        const LineRange& r = fa.ranges[i];
        for (int l = r.first_line; l < r.first_line + r.line_count; ++l)
            CHECK(seen.insert({r.file, l}).second);
    }
    CHECK(seen.size() == 100);
}

TEST_CASE("split_folds pigeonholes the odd line") {
    const std::vector<TokenSequence> corpus{stream_of_lines("a", 101, 2)};
    const FoldAssignment fa = split_folds(corpus, 10, 7);
    long long mn = 1000, mx = 0;
    for (long long loc : fa.fold_loc) {
        mn = std::min(mn, loc);
        mx = std::max(mx, loc);
    }
    CHECK(mn == 10);
    CHECK(mx == 11);
}

TEST_CASE("split_folds is deterministic in the seed") {
    const std::vector<TokenSequence> corpus{stream_of_lines("a", 53, 2), stream_of_lines("b", 47, 3)};
    const FoldAssignment a = split_folds(corpus, 10, 42);
    const FoldAssignment b = split_folds(corpus, 10, 42);
    CHECK(a.fold_of_range == b.fold_of_range);
    REQUIRE(a.ranges.size() == b.ranges.size());
    for (std::size_t i = 0; i < a.ranges.size(); ++i) {
        CHECK(a.ranges[i].file == b.ranges[i].file);
        CHECK(a.ranges[i].first_line == b.ranges[i].first_line);
    }
    const FoldAssignment c = split_folds(corpus, 10, 43);
    bool identical = a.fold_of_range == c.fold_of_range;
    for (std::size_t i = 0; identical && i < a.ranges.size(); ++i)
        identical = a.ranges[i].first_line == c.ranges[i].first_line &&
                    a.ranges[i].file == c.ranges[i].file;
    CHECK_FALSE(identical);
}

TEST_CASE("split_folds rejects degenerate inputs") {
    CHECK_THROWS_AS(split_folds({}, 10, 0), Error);
    CHECK_THROWS_AS(split_folds({stream_of_lines("a", 5, 1)}, 10, 0), Error);
    CHECK_THROWS_AS(split_folds({stream_of_lines("a", 50, 1)}, 2, 0), Error);
}

TEST_CASE("fold streams merge contiguous ranges in line order") {
    const std::vector<TokenSequence> corpus{stream_of_lines("a", 30, 2)};
    const FoldAssignment fa = split_folds(corpus, 3, 5);
    std::size_t total_tokens = 0;
    for (int fold = 0; fold < 3; ++fold) {
        for (const TokenSequence& s : fold_streams(corpus, fa, fold)) {
            CHECK(!s.tokens.empty());
            total_tokens += s.tokens.size();
            // block contents are contiguous slices of the source stream
            const auto it = std::find(corpus[0].tokens.begin(), corpus[0].tokens.end(), s.tokens[0]);
            REQUIRE(it != corpus[0].tokens.end());
            const std::size_t base = static_cast<std::size_t>(it - corpus[0].tokens.begin());
            for (std::size_t i = 0; i < s.tokens.size(); ++i)
                CHECK(s.tokens[i] == corpus[0].tokens[base + i]);
        }
    }
    CHECK(total_tokens == corpus[0].tokens.size());
}
