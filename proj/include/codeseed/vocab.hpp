#pragma once

// Frequency-thresholded token vocabulary with reserved pad/unk entries.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/corpus.hpp"

namespace codeseed {

class Vocabulary {
public:
    static constexpr std::int32_t kPadId = 0;
    static constexpr std::int32_t kUnkId = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnkToken = "<unk>";

    Vocabulary() : min_count_(1) { reserve_specials(); }

    // Tokens with corpus frequency >= min_count get ids from 2 upward,
    // ordered by descending frequency then lexicographically.
    static Vocabulary build(const std::vector<TokenSequence>& streams, int min_count) {
        if (min_count < 1) throw Error(msg("vocabulary min_count must be >= 1, got ", min_count));
        std::unordered_map<std::string, std::int64_t> counts;
        for (const TokenSequence& seq : streams)
            for (const std::string& tok : seq.tokens) ++counts[tok];

        std::vector<std::pair<std::string, std::int64_t>> kept;
        kept.reserve(counts.size());
        for (auto& kv : counts)
            if (kv.second >= min_count) kept.emplace_back(kv.first, kv.second);
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });

        Vocabulary v;
        v.min_count_ = min_count;
        for (auto& kv : kept) {
            v.token_to_id_.emplace(kv.first, static_cast<std::int32_t>(v.id_to_token_.size()));
            v.id_to_token_.push_back(std::move(kv.first));
        }
        return v;
    }

    std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
    int min_count() const { return min_count_; }

    std::int32_t id_of(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnkId : it->second;
    }

    bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

    const std::string& token_of(std::int32_t id) const {
        if (id < 0 || id >= size())
            throw Error(msg("token id ", id, " out of range (vocabulary size ", size(), ")"));
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    std::vector<std::int32_t> encode(const std::vector<std::string>& tokens) const {
        std::vector<std::int32_t> ids;
        ids.reserve(tokens.size());
        for (const std::string& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<std::int32_t>& ids) const {
        std::vector<std::string> tokens;
        tokens.reserve(ids.size());
        for (std::int32_t id : ids) tokens.push_back(token_of(id));
        return tokens;
    }

    // One token per line; the 0-based line number is the id.
    std::string serialize() const {
        std::string out;
        for (const std::string& tok : id_to_token_) {
            out += tok;
            out += '\n';
        }
        return out;
    }

    void save(const std::filesystem::path& p) const { write_text_file(p, serialize()); }

    static Vocabulary load(const std::filesystem::path& p) {
        std::string text = read_text_file(p);
        Vocabulary v;
        v.id_to_token_.clear();
        v.token_to_id_.clear();
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            std::string tok = text.substr(pos, eol - pos);
            v.token_to_id_.emplace(tok, static_cast<std::int32_t>(v.id_to_token_.size()));
            v.id_to_token_.push_back(std::move(tok));
            pos = eol + 1;
        }
        if (v.size() < 2 || v.id_to_token_[0] != kPadToken || v.id_to_token_[1] != kUnkToken)
            throw Error(msg("malformed vocabulary file ", p.string(),
                            ": first entries must be ", kPadToken, " and ", kUnkToken));
        return v;
    }

private:
    void reserve_specials() {
        id_to_token_ = {kPadToken, kUnkToken};
        token_to_id_ = {{kPadToken, kPadId}, {kUnkToken, kUnkId}};
    }

    std::unordered_map<std::string, std::int32_t> token_to_id_;
    std::vector<std::string> id_to_token_;
    int min_count_;
};

}  // namespace codeseed
