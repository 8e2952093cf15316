#pragma once

// Source ingestion: normalization, lexing into token streams, fixed-context
// training windows, and LOC-balanced fold assignment.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/lexer.hpp"

namespace codeseed {

struct SourceFile {
    std::string path;
    std::string text;
};

// One lexed file: flat token list plus the index where each normalized line
// starts. loc() is the normalized line count (blank lines never survive
// normalization, so every line owns at least one token).
struct TokenSequence {
    std::string origin;
    std::vector<std::string> tokens;
    std::vector<std::uint32_t> line_starts;

    int loc() const { return static_cast<int>(line_starts.size()); }

    std::uint32_t line_begin(int line) const { return line_starts[static_cast<std::size_t>(line)]; }
    std::uint32_t line_end(int line) const {
        return static_cast<std::size_t>(line) + 1 < line_starts.size()
                   ? line_starts[static_cast<std::size_t>(line) + 1]
                   : static_cast<std::uint32_t>(tokens.size());
    }
};

struct ContextWindow {
    std::vector<std::int32_t> context;
    std::int32_t target = 0;
};

enum class NormalizeMode {
    Full,          // strip comments/blank lines and map literals to generic tokens
    CommentsOnly,  // strip comments/blank lines, keep literal text
};

inline std::string normalize_mode_name(NormalizeMode m) {
    return m == NormalizeMode::Full ? "normalized" : "comments-only";
}

inline NormalizeMode normalize_mode_from_name(const std::string& s) {
    if (s == "normalized") return NormalizeMode::Full;
    if (s == "comments-only") return NormalizeMode::CommentsOnly;
    throw Error(msg("unknown normalize mode '", s, "'"));
}

namespace corpusdetail {

// Verbatim literals may contain whitespace; encode it with Java escapes so
// the one-token-per-column stream format stays intact.
inline std::string escape_literal_whitespace(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case ' ': out += "\\u0020"; break;
            case '\t': out += "\\t"; break;
            case '\f': out += "\\f"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string generic_token(const RawToken& t, NormalizeMode mode) {
    if (mode == NormalizeMode::Full) {
        switch (t.kind) {
            case TokenKind::IntLiteral: return "IntVal";
            case TokenKind::FloatLiteral: return "FloatVal";
            case TokenKind::StringLiteral:
            case TokenKind::CharLiteral: return "StringVal";
            default: return t.text;
        }
    }
    if (t.kind == TokenKind::StringLiteral || t.kind == TokenKind::CharLiteral)
        return escape_literal_whitespace(t.text);
    return t.text;
}

}  // namespace corpusdetail

// Strips comments and blank lines, replaces literals per the mode, and emits
// one space-joined token line per surviving source line.
inline std::string normalize_source(const SourceFile& file, NormalizeMode mode = NormalizeMode::Full) {
    const std::vector<RawToken> raw = scan_java(file.text, file.path);
    std::string out;
    out.reserve(file.text.size());
    int current_line = -1;
    for (const RawToken& t : raw) {
        if (t.line != current_line) {
            if (current_line != -1) out += '\n';
            current_line = t.line;
        } else {
            out += ' ';
        }
        out += corpusdetail::generic_token(t, mode);
    }
    if (!out.empty()) out += '\n';
    return out;
}

// Lexes normalized text into a token stream. Works on any lexable Java-like
// text; literal tokens that survive (comments-only corpora) pass through
// verbatim.
inline TokenSequence lex(const std::string& origin, std::string_view normalized) {
    TokenSequence seq;
    seq.origin = origin;
    int current_line = -1;
    for (const RawToken& t : scan_java(normalized, origin)) {
        if (t.line != current_line) {
            seq.line_starts.push_back(static_cast<std::uint32_t>(seq.tokens.size()));
            current_line = t.line;
        }
        seq.tokens.push_back(t.text);
    }
    return seq;
}

// Stride-1 sliding windows: one window per target position t in [1, len),
// context is the tau ids before t, left-padded with pad_id.
inline std::vector<ContextWindow> windowize(const std::vector<std::int32_t>& ids, int tau,
                                            std::int32_t pad_id) {
    if (tau < 1) throw Error(msg("windowize: context size must be >= 1, got ", tau));
    if (ids.empty()) throw Error("windowize: empty id sequence");
    std::vector<ContextWindow> out;
    if (ids.size() < 2) return out;
    out.reserve(ids.size() - 1);
    for (std::size_t t = 1; t < ids.size(); ++t) {
        ContextWindow w;
        w.context.resize(static_cast<std::size_t>(tau), pad_id);
        for (int k = 0; k < tau; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - tau + k;
            if (src >= 0) w.context[static_cast<std::size_t>(k)] = ids[static_cast<std::size_t>(src)];
        }
        w.target = ids[t];
        out.push_back(std::move(w));
    }
    return out;
}

// A contiguous run of normalized lines inside one file; the unit of fold
// assignment.
struct LineRange {
    int file = 0;
    int first_line = 0;
    int line_count = 0;
};

struct FoldAssignment {
    int fold_count = 0;
    std::vector<LineRange> ranges;
    std::vector<int> fold_of_range;       // parallel to ranges
    std::vector<long long> fold_loc;      // total lines per fold

    int fold_of(int file, int line) const {
        for (std::size_t i = 0; i < ranges.size(); ++i) {
            const LineRange& r = ranges[i];
            if (r.file == file && line >= r.first_line && line < r.first_line + r.line_count)
                return fold_of_range[i];
        }
        throw Error(msg("fold_of: line ", line, " of file ", file, " not assigned"));
    }
};

// Shuffles line ranges with the seed, then assigns each to the currently
// lightest fold, so fold LOC totals differ by at most one granule.
// Fold roles downstream: 0 = test, 1 = validation, 2.. = training.
inline FoldAssignment split_folds(const std::vector<TokenSequence>& corpus, int k,
                                  std::uint64_t seed, int granule = 1) {
    if (k < 3) throw Error(msg("split_folds: need at least 3 folds, got ", k));
    if (granule < 1) throw Error("split_folds: granule must be >= 1");

    FoldAssignment fa;
    fa.fold_count = k;
    long long total_loc = 0;
    for (std::size_t f = 0; f < corpus.size(); ++f) {
        const int loc = corpus[f].loc();
        total_loc += loc;
        for (int first = 0; first < loc; first += granule) {
            LineRange r;
            r.file = static_cast<int>(f);
            r.first_line = first;
            r.line_count = std::min(granule, loc - first);
            fa.ranges.push_back(r);
        }
    }
    if (total_loc == 0) throw Error("split_folds: corpus has no lines of code");
    if (total_loc < k)
        throw Error(msg("split_folds: corpus has ", total_loc, " lines, fewer than ", k, " folds"));

    Rng rng(seed);
    shuffle(fa.ranges, rng);

    fa.fold_of_range.resize(fa.ranges.size());
    fa.fold_loc.assign(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < fa.ranges.size(); ++i) {
        int best = 0;
        for (int f = 1; f < k; ++f)
            if (fa.fold_loc[static_cast<std::size_t>(f)] < fa.fold_loc[static_cast<std::size_t>(best)])
                best = f;
        fa.fold_of_range[i] = best;
        fa.fold_loc[static_cast<std::size_t>(best)] += fa.ranges[i].line_count;
    }
    return fa;
}

// Token streams of one fold: per file, ranges are gathered in line order and
// adjacent ranges merged, so each stream is a maximal contiguous block.
inline std::vector<TokenSequence> fold_streams(const std::vector<TokenSequence>& corpus,
                                               const FoldAssignment& fa, int fold) {
    std::vector<std::vector<LineRange>> per_file(corpus.size());
    for (std::size_t i = 0; i < fa.ranges.size(); ++i)
        if (fa.fold_of_range[i] == fold) per_file[static_cast<std::size_t>(fa.ranges[i].file)].push_back(fa.ranges[i]);

    std::vector<TokenSequence> out;
    for (std::size_t f = 0; f < per_file.size(); ++f) {
        auto& ranges = per_file[f];
        std::sort(ranges.begin(), ranges.end(),
                  [](const LineRange& a, const LineRange& b) { return a.first_line < b.first_line; });
        std::size_t i = 0;
        while (i < ranges.size()) {
            int first = ranges[i].first_line;
            int count = ranges[i].line_count;
            std::size_t j = i + 1;
            while (j < ranges.size() && ranges[j].first_line == first + count) {
                count += ranges[j].line_count;
                ++j;
            }
            const TokenSequence& src = corpus[f];
            TokenSequence block;
            block.origin = msg(src.origin, "#", first, "+", count);
            const std::uint32_t begin = src.line_begin(first);
            for (int line = first; line < first + count; ++line) {
                block.line_starts.push_back(static_cast<std::uint32_t>(src.line_begin(line) - begin));
            }
            block.tokens.assign(src.tokens.begin() + src.line_begin(first),
                                src.tokens.begin() + src.line_end(first + count - 1));
            out.push_back(std::move(block));
            i = j;
        }
    }
    return out;
}

// ---- corpus I/O ----

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(msg("cannot open ", p.string()));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

inline void write_text_file(const std::filesystem::path& p, std::string_view text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(msg("cannot write ", p.string()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(msg("short write to ", p.string()));
}

// .java files under dir, sorted by path for deterministic corpus order.
inline std::vector<std::filesystem::path> find_corpus_files(const std::filesystem::path& dir,
                                                            const char* extension) {
    if (!std::filesystem::is_directory(dir))
        throw UsageError(msg("not a directory: ", dir.string()));
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == extension)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

// Pre-normalized token stream files: one space-joined token line per
// normalized source line.
inline TokenSequence parse_token_stream(const std::string& origin, std::string_view text) {
    TokenSequence seq;
    seq.origin = origin;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        bool line_started = false;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && line[i] == ' ') ++i;
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ') ++j;
            if (j > i) {
                if (!line_started) {
                    seq.line_starts.push_back(static_cast<std::uint32_t>(seq.tokens.size()));
                    line_started = true;
                }
                seq.tokens.emplace_back(line.substr(i, j - i));
            }
            i = j;
        }
        pos = eol + 1;
    }
    return seq;
}

inline std::string format_token_stream(const TokenSequence& seq) {
    std::string out;
    for (int line = 0; line < seq.loc(); ++line) {
        for (std::uint32_t i = seq.line_begin(line); i < seq.line_end(line); ++i) {
            if (i != seq.line_begin(line)) out += ' ';
            out += seq.tokens[i];
        }
        out += '\n';
    }
    return out;
}

// Loads a corpus directory: .java files are normalized and lexed, .toks
// files are read as already-normalized streams. Empty files contribute no
// stream.
inline std::vector<TokenSequence> load_corpus(const std::filesystem::path& dir,
                                              NormalizeMode mode = NormalizeMode::Full) {
    std::vector<TokenSequence> corpus;
    for (const auto& p : find_corpus_files(dir, ".java")) {
        SourceFile file{p.string(), read_text_file(p)};
        TokenSequence seq = lex(file.path, normalize_source(file, mode));
        if (!seq.tokens.empty()) corpus.push_back(std::move(seq));
    }
    for (const auto& p : find_corpus_files(dir, ".toks")) {
        TokenSequence seq = parse_token_stream(p.string(), read_text_file(p));
        if (!seq.tokens.empty()) corpus.push_back(std::move(seq));
    }
    if (corpus.empty()) throw UsageError(msg("no .java or .toks files under ", dir.string()));
    return corpus;
}

}  // namespace codeseed
