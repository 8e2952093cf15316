#pragma once

// Hand-rolled longest-match scanner over the Java token alphabet.
// Produces classified raw tokens with source line numbers; comments and
// whitespace are consumed, everything else is an error with a position.

#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "codeseed/common.hpp"

namespace codeseed {

enum class TokenKind {
    Identifier,  // identifiers and keywords alike
    IntLiteral,
    FloatLiteral,
    StringLiteral,
    CharLiteral,
    Separator,  // operators, separators, annotations marker
};

struct RawToken {
    std::string text;
    TokenKind kind;
    int line;  // 1-based line of the first character
};

namespace lexdetail {

inline bool is_ident_start(unsigned char c) {
    return std::isalpha(c) || c == '_' || c == '$' || c >= 0x80;
}
inline bool is_ident_part(unsigned char c) { return is_ident_start(c) || std::isdigit(c); }
inline bool is_digit(unsigned char c) { return std::isdigit(c); }
inline bool is_hex_digit(unsigned char c) { return std::isxdigit(c); }

// Longest first within each bucket is irrelevant; buckets are tried 4..1.
constexpr std::array<std::string_view, 1> kOps4 = {">>>="};
constexpr std::array<std::string_view, 4> kOps3 = {">>>", "<<=", ">>=", "..."};
constexpr std::array<std::string_view, 20> kOps2 = {
    "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "->", "::"};
constexpr std::string_view kOps1 = "{}()[];,.=+-*/%!<>?:&|^~@";

}  // namespace lexdetail

class JavaScanner {
public:
    JavaScanner(std::string_view src, std::string origin)
        : src_(src), origin_(std::move(origin)) {}

    std::vector<RawToken> scan() {
        std::vector<RawToken> out;
        while (!eof()) {
            const char c = peek();
            if (c == '\n' || c == '\r') {
                consume_newline();
            } else if (c == ' ' || c == '\t' || c == '\f') {
                ++pos_;
            } else if (c == '/' && peek(1) == '/') {
                skip_line_comment();
            } else if (c == '/' && peek(1) == '*') {
                skip_block_comment();
            } else if (lexdetail::is_ident_start(static_cast<unsigned char>(c))) {
                out.push_back(scan_identifier());
            } else if (lexdetail::is_digit(static_cast<unsigned char>(c)) ||
                       (c == '.' && lexdetail::is_digit(static_cast<unsigned char>(peek(1))))) {
                out.push_back(scan_number());
            } else if (c == '"') {
                out.push_back(scan_string());
            } else if (c == '\'') {
                out.push_back(scan_char());
            } else {
                out.push_back(scan_separator());
            }
        }
        return out;
    }

private:
    bool eof() const { return pos_ >= src_.size(); }
    char peek(std::size_t ahead = 0) const {
        return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
    }
    std::size_t column() const {
        std::size_t col = 1;
        for (std::size_t i = pos_; i > 0 && src_[i - 1] != '\n' && src_[i - 1] != '\r'; --i) ++col;
        return col;
    }

    void consume_newline() {
        if (peek() == '\r' && peek(1) == '\n') ++pos_;
        ++pos_;
        ++line_;
    }

    void skip_line_comment() {
        pos_ += 2;
        while (!eof() && peek() != '\n' && peek() != '\r') ++pos_;
    }

    void skip_block_comment() {
        const int start_line = line_;
        pos_ += 2;
        while (true) {
            if (eof())
                throw Error(msg(origin_, ":", start_line, ": unterminated block comment"));
            if (peek() == '*' && peek(1) == '/') {
                pos_ += 2;
                return;
            }
            if (peek() == '\n' || peek() == '\r')
                consume_newline();
            else
                ++pos_;
        }
    }

    RawToken scan_identifier() {
        const std::size_t start = pos_;
        const int line = line_;
        while (!eof() && lexdetail::is_ident_part(static_cast<unsigned char>(peek()))) ++pos_;
        return {std::string(src_.substr(start, pos_ - start)), TokenKind::Identifier, line};
    }

    // Integer family: decimal, hex, octal, binary, long suffix, underscores.
    // Float family: decimal point, exponent, f/F/d/D suffix, hex floats.
    RawToken scan_number() {
        const std::size_t start = pos_;
        const int line = line_;
        bool is_float = false;

        auto digits = [&](auto pred) {
            while (!eof() && (pred(static_cast<unsigned char>(peek())) || peek() == '_')) ++pos_;
        };

        if (peek() == '0' && (peek(1) == 'x' || peek(1) == 'X')) {
            pos_ += 2;
            digits(lexdetail::is_hex_digit);
            if (peek() == '.') {
                is_float = true;
                ++pos_;
                digits(lexdetail::is_hex_digit);
            }
            if (peek() == 'p' || peek() == 'P') {  // binary exponent makes it a hex float
                is_float = true;
                ++pos_;
                if (peek() == '+' || peek() == '-') ++pos_;
                digits(lexdetail::is_digit);
            }
        } else if (peek() == '0' && (peek(1) == 'b' || peek(1) == 'B')) {
            pos_ += 2;
            digits(lexdetail::is_digit);
        } else {
            if (peek() == '.') {
                is_float = true;
                ++pos_;
                digits(lexdetail::is_digit);
            } else {
                digits(lexdetail::is_digit);
                if (peek() == '.') {
                    is_float = true;
                    ++pos_;
                    digits(lexdetail::is_digit);
                }
            }
            if ((peek() == 'e' || peek() == 'E')) {
                const char after = peek(1);
                const char after2 = peek(2);
                if (lexdetail::is_digit(static_cast<unsigned char>(after)) ||
                    ((after == '+' || after == '-') &&
                     lexdetail::is_digit(static_cast<unsigned char>(after2)))) {
                    is_float = true;
                    ++pos_;
                    if (peek() == '+' || peek() == '-') ++pos_;
                    digits(lexdetail::is_digit);
                }
            }
        }

        if (peek() == 'f' || peek() == 'F' || peek() == 'd' || peek() == 'D') {
            is_float = true;
            ++pos_;
        } else if (peek() == 'l' || peek() == 'L') {
            ++pos_;
        }

        return {std::string(src_.substr(start, pos_ - start)),
                is_float ? TokenKind::FloatLiteral : TokenKind::IntLiteral, line};
    }

    RawToken scan_string() {
        const std::size_t start = pos_;
        const int line = line_;
        ++pos_;  // opening quote
        while (true) {
            if (eof() || peek() == '\n' || peek() == '\r')
                throw Error(msg(origin_, ":", line, ": unterminated string literal"));
            if (peek() == '\\') {
                pos_ += 2;
                continue;
            }
            if (peek() == '"') {
                ++pos_;
                break;
            }
            ++pos_;
        }
        return {std::string(src_.substr(start, pos_ - start)), TokenKind::StringLiteral, line};
    }

    RawToken scan_char() {
        const std::size_t start = pos_;
        const int line = line_;
        ++pos_;
        while (true) {
            if (eof() || peek() == '\n' || peek() == '\r')
                throw Error(msg(origin_, ":", line, ": unterminated character literal"));
            if (peek() == '\\') {
                pos_ += 2;
                continue;
            }
            if (peek() == '\'') {
                ++pos_;
                break;
            }
            ++pos_;
        }
        return {std::string(src_.substr(start, pos_ - start)), TokenKind::CharLiteral, line};
    }

    RawToken scan_separator() {
        const std::string_view rest = src_.substr(pos_);
        for (std::string_view op : lexdetail::kOps4)
            if (rest.starts_with(op)) return take_separator(op.size());
        for (std::string_view op : lexdetail::kOps3)
            if (rest.starts_with(op)) return take_separator(op.size());
        for (std::string_view op : lexdetail::kOps2)
            if (rest.starts_with(op)) return take_separator(op.size());
        if (lexdetail::kOps1.find(rest.front()) != std::string_view::npos)
            return take_separator(1);
        throw Error(msg(origin_, ":", line_, ":", column(), ": unexpected character '",
                        rest.front(), "'"));
    }

    RawToken take_separator(std::size_t len) {
        RawToken t{std::string(src_.substr(pos_, len)), TokenKind::Separator, line_};
        pos_ += len;
        return t;
    }

    std::string_view src_;
    std::string origin_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

inline std::vector<RawToken> scan_java(std::string_view text, const std::string& origin) {
    return JavaScanner(text, origin).scan();
}

}  // namespace codeseed
