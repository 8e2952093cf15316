#pragma once

// Model bundle serialization. A bundle is a directory:
//   manifest.txt  key=value lines, LF, keys sorted
//   vocab.txt     one token per line (plus rnn_vocab.txt/gru_vocab.txt for
//                 transfer bundles)
//   weights.bin   magic "CSLM", version u32 LE, then per-tensor records
//                 [name_len u32 LE][name][rows u32 LE][cols u32 LE]
//                 [rows*cols f32 LE, row-major], sorted by name
//
// Weights are stored in binary32; load(save(m)) reproduces every stored bit.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/models.hpp"
#include "codeseed/vocab.hpp"

namespace codeseed {

constexpr char kWeightsMagic[4] = {'C', 'S', 'L', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

using Manifest = std::map<std::string, std::string>;

// ---- little-endian encoding helpers ----

namespace bundledetail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    std::uint32_t u32() {
        if (pos_ + 4 > data_.size()) throw Error(msg(what_, ": truncated weights blob"));
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + static_cast<std::size_t>(i)]);
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(std::size_t n) {
        if (pos_ + n > data_.size()) throw Error(msg(what_, ": truncated weights blob"));
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    std::string_view data_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace bundledetail

// ---- weights blob ----

struct NamedMatrix {
    std::string name;
    const Matrix* value = nullptr;
};

inline std::string serialize_weights(std::vector<NamedMatrix> records) {
    std::sort(records.begin(), records.end(),
              [](const NamedMatrix& a, const NamedMatrix& b) { return a.name < b.name; });
    std::string out;
    out.append(kWeightsMagic, 4);
    bundledetail::put_u32(out, kFormatVersion);
    for (const NamedMatrix& r : records) {
        bundledetail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out += r.name;
        bundledetail::put_u32(out, static_cast<std::uint32_t>(r.value->rows));
        bundledetail::put_u32(out, static_cast<std::uint32_t>(r.value->cols));
        for (double v : r.value->data) bundledetail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

inline std::map<std::string, Matrix> parse_weights(std::string_view blob, const std::string& what) {
    if (blob.size() < 8 || std::memcmp(blob.data(), kWeightsMagic, 4) != 0)
        throw Error(msg(what, ": bad magic, not a weights blob"));
    bundledetail::ByteReader r(blob.substr(4), what);
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw Error(msg(what, ": unsupported weights version ", version));

    std::map<std::string, Matrix> out;
    std::string prev;
    while (!r.done()) {
        const std::uint32_t name_len = r.u32();
        if (name_len == 0 || name_len > 4096)
            throw Error(msg(what, ": implausible record name length ", name_len));
        const std::string name = r.bytes(name_len);
        if (!prev.empty() && !(prev < name))
            throw Error(msg(what, ": records not sorted by name ('", prev, "' then '", name, "')"));
        prev = name;
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1ull << 31))
            throw Error(msg(what, ": implausible shape ", rows, "x", cols, " for '", name, "'"));
        Matrix m(static_cast<int>(rows), static_cast<int>(cols));
        for (double& v : m.data) v = static_cast<double>(r.f32());
        out.emplace(name, std::move(m));
    }
    return out;
}

// ---- content hashing ----

// FNV-1a over canonical records: (name, rows, cols, binary32 data) sorted by
// name. Used to fingerprint a frozen branch independently of the prefix its
// parameters carry inside a larger model.
inline std::uint64_t content_hash(std::vector<NamedMatrix> records) {
    std::sort(records.begin(), records.end(),
              [](const NamedMatrix& a, const NamedMatrix& b) { return a.name < b.name; });
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const std::uint8_t*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const NamedMatrix& r : records) {
        mix(r.name.data(), r.name.size());
        const std::uint32_t rows = static_cast<std::uint32_t>(r.value->rows);
        const std::uint32_t cols = static_cast<std::uint32_t>(r.value->cols);
        mix(&rows, 4);
        mix(&cols, 4);
        for (double v : r.value->data) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            mix(&bits, 4);
        }
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// Branch view of a base model: embedding plus recurrent weights under their
// canonical (unprefixed) names; the output head is not part of the branch.
inline std::vector<NamedMatrix> branch_records(const BaseLM& m) {
    std::vector<NamedMatrix> out;
    for (const Parameter* p : m.parameters())
        if (p->name != "out_W" && p->name != "out_b") out.push_back({p->name, &p->value});
    return out;
}

inline std::vector<NamedMatrix> branch_records(const FrozenBranch& b, const std::string& prefix) {
    std::vector<NamedMatrix> out;
    for (const Parameter* p : b.parameters()) {
        std::string name = p->name;
        if (name.rfind(prefix + ".", 0) == 0) name = name.substr(prefix.size() + 1);
        out.push_back({std::move(name), &p->value});
    }
    return out;
}

inline std::uint64_t branch_hash(const BaseLM& m) { return content_hash(branch_records(m)); }
inline std::uint64_t branch_hash(const FrozenBranch& b, const std::string& prefix) {
    return content_hash(branch_records(b, prefix));
}

// ---- manifest ----

inline std::string serialize_manifest(const Manifest& m) {
    std::string out;
    for (const auto& kv : m) {
        out += kv.first;
        out += '=';
        out += kv.second;
        out += '\n';
    }
    return out;
}

inline Manifest parse_manifest(std::string_view text, const std::string& what) {
    Manifest m;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        if (!line.empty()) {
            const std::size_t eq = line.find('=');
            if (eq == std::string_view::npos)
                throw Error(msg(what, ": malformed manifest line '", std::string(line), "'"));
            m.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
        }
        pos = eol + 1;
    }
    return m;
}

inline const std::string& manifest_get(const Manifest& m, const std::string& key,
                                       const std::string& what) {
    auto it = m.find(key);
    if (it == m.end()) throw Error(msg(what, ": manifest missing key '", key, "'"));
    return it->second;
}

inline long long manifest_get_int(const Manifest& m, const std::string& key,
                                  const std::string& what) {
    const std::string& s = manifest_get(m, key, what);
    try {
        return std::stoll(s);
    } catch (const std::exception&) {
        throw Error(msg(what, ": manifest key '", key, "' is not an integer: '", s, "'"));
    }
}

inline double manifest_get_double(const Manifest& m, const std::string& key,
                                  const std::string& what) {
    const std::string& s = manifest_get(m, key, what);
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw Error(msg(what, ": manifest key '", key, "' is not a number: '", s, "'"));
    }
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

// ---- bundles ----

struct BaseBundle {
    BaseLM model;
    Vocabulary vocab;
    Manifest manifest;
};

struct TransferBundle {
    TransferModel model;
    Manifest manifest;
};

namespace bundledetail {

inline Matrix take_record(std::map<std::string, Matrix>& records, const std::string& name,
                          int rows, int cols, const std::string& what) {
    auto it = records.find(name);
    if (it == records.end()) throw Error(msg(what, ": missing weight record '", name, "'"));
    Matrix m = std::move(it->second);
    records.erase(it);
    if (m.rows != rows || m.cols != cols)
        throw Error(msg(what, ": shape mismatch for '", name, "': stored ", m.rows, "x", m.cols,
                        ", expected ", rows, "x", cols));
    return m;
}

inline void expect_consumed(const std::map<std::string, Matrix>& records, const std::string& what) {
    if (!records.empty())
        throw Error(msg(what, ": unexpected weight record '", records.begin()->first, "'"));
}

}  // namespace bundledetail

inline void save_base_bundle(const std::filesystem::path& dir, const BaseLM& model,
                             const Vocabulary& vocab, Manifest manifest) {
    std::filesystem::create_directories(dir);
    const BaseLMConfig& cfg = model.config();
    manifest["format_version"] = std::to_string(kFormatVersion);
    manifest["model_kind"] = "base";
    manifest["unit"] = unit_name(cfg.unit);
    manifest["embed_dim"] = std::to_string(cfg.embed_dim);
    manifest["hidden_dim"] = std::to_string(cfg.hidden_dim);
    manifest["context"] = std::to_string(cfg.context);
    manifest["vocab_size"] = std::to_string(cfg.vocab_size);
    manifest["dropout"] = format_double(cfg.dropout_rate);
    manifest["seed"] = std::to_string(model.init_seed());
    manifest["vocab_file"] = "vocab.txt";
    manifest["branch_hash"] = hash_hex(branch_hash(model));

    std::vector<NamedMatrix> records;
    for (const Parameter* p : model.parameters()) records.push_back({p->name, &p->value});

    write_text_file(dir / "manifest.txt", serialize_manifest(manifest));
    vocab.save(dir / "vocab.txt");
    write_text_file(dir / "weights.bin", serialize_weights(std::move(records)));
}

inline Manifest read_bundle_manifest(const std::filesystem::path& dir) {
    const auto p = dir / "manifest.txt";
    if (!std::filesystem::is_regular_file(p))
        throw UsageError(msg("not a model bundle (no manifest.txt): ", dir.string()));
    Manifest m = parse_manifest(read_text_file(p), p.string());
    const long long version = manifest_get_int(m, "format_version", p.string());
    if (version != kFormatVersion)
        throw Error(msg(p.string(), ": unsupported bundle format_version ", version));
    return m;
}

inline BaseBundle load_base_bundle(const std::filesystem::path& dir) {
    const std::string what = dir.string();
    BaseBundle b;
    b.manifest = read_bundle_manifest(dir);
    if (manifest_get(b.manifest, "model_kind", what) != "base")
        throw Error(msg(what, ": not a base model bundle"));

    BaseLMConfig cfg;
    cfg.unit = unit_from_name(manifest_get(b.manifest, "unit", what));
    cfg.embed_dim = static_cast<int>(manifest_get_int(b.manifest, "embed_dim", what));
    cfg.hidden_dim = static_cast<int>(manifest_get_int(b.manifest, "hidden_dim", what));
    cfg.context = static_cast<int>(manifest_get_int(b.manifest, "context", what));
    cfg.vocab_size = static_cast<std::int32_t>(manifest_get_int(b.manifest, "vocab_size", what));
    cfg.dropout_rate = manifest_get_double(b.manifest, "dropout", what);
    const std::uint64_t seed =
        static_cast<std::uint64_t>(manifest_get_int(b.manifest, "seed", what));

    b.vocab = Vocabulary::load(dir / manifest_get(b.manifest, "vocab_file", what));
    if (b.vocab.size() != cfg.vocab_size)
        throw Error(msg(what, ": vocabulary size ", b.vocab.size(), " does not match manifest ",
                        cfg.vocab_size));

    b.model = BaseLM(cfg, seed);
    auto records = parse_weights(read_text_file(dir / "weights.bin"), what);
    for (Parameter* p : b.model.parameters())
        p->value = bundledetail::take_record(records, p->name, p->value.rows, p->value.cols, what);
    bundledetail::expect_consumed(records, what);
    return b;
}

inline void save_transfer_bundle(const std::filesystem::path& dir, const TransferModel& model,
                                 Manifest manifest) {
    std::filesystem::create_directories(dir);
    manifest["format_version"] = std::to_string(kFormatVersion);
    manifest["model_kind"] = "transfer";
    manifest["context"] = std::to_string(model.context());
    manifest["dropout"] = format_double(model.dropout_rate());
    manifest["seed"] = std::to_string(model.init_seed());
    manifest["attn_dim"] = std::to_string(model.attention().attn_dim());
    manifest["vocab_size"] = std::to_string(model.target_vocab().size());
    manifest["vocab_file"] = "vocab.txt";

    const auto branch_entries = [&manifest](const FrozenBranch& b, const std::string& prefix) {
        manifest[prefix + "_unit"] = unit_name(b.unit);
        manifest[prefix + "_embed_dim"] = std::to_string(b.embed_dim);
        manifest[prefix + "_hidden_dim"] = std::to_string(b.hidden_dim);
        manifest[prefix + "_vocab_size"] = std::to_string(b.vocab.size());
        manifest[prefix + "_vocab_file"] = prefix + "_vocab.txt";
        manifest[prefix + "_branch_hash"] = hash_hex(branch_hash(b, prefix + "_branch"));
    };
    branch_entries(model.rnn_branch(), "rnn");
    branch_entries(model.gru_branch(), "gru");

    std::vector<NamedMatrix> records;
    for (const Parameter* p : model.parameters()) records.push_back({p->name, &p->value});

    write_text_file(dir / "manifest.txt", serialize_manifest(manifest));
    model.target_vocab().save(dir / "vocab.txt");
    model.rnn_branch().vocab.save(dir / "rnn_vocab.txt");
    model.gru_branch().vocab.save(dir / "gru_vocab.txt");
    write_text_file(dir / "weights.bin", serialize_weights(std::move(records)));
}

inline TransferBundle load_transfer_bundle(const std::filesystem::path& dir) {
    const std::string what = dir.string();
    TransferBundle b;
    b.manifest = read_bundle_manifest(dir);
    if (manifest_get(b.manifest, "model_kind", what) != "transfer")
        throw Error(msg(what, ": not a transfer model bundle"));

    const int context = static_cast<int>(manifest_get_int(b.manifest, "context", what));
    auto records = parse_weights(read_text_file(dir / "weights.bin"), what);

    auto load_branch = [&](const std::string& prefix) {
        FrozenBranch br;
        br.unit = unit_from_name(manifest_get(b.manifest, prefix + "_unit", what));
        br.embed_dim = static_cast<int>(manifest_get_int(b.manifest, prefix + "_embed_dim", what));
        br.hidden_dim = static_cast<int>(manifest_get_int(b.manifest, prefix + "_hidden_dim", what));
        br.context = context;
        br.vocab = Vocabulary::load(dir / manifest_get(b.manifest, prefix + "_vocab_file", what));
        const std::string p = prefix + "_branch";
        br.embedding = Parameter(p + ".embedding", br.vocab.size(), br.embed_dim, false);
        br.embedding.value = bundledetail::take_record(records, p + ".embedding", br.vocab.size(),
                                                       br.embed_dim, what);
        if (br.unit == Unit::Gru) {
            br.gru = GruParams(p + ".gru", br.embed_dim, br.hidden_dim, false);
            for (Parameter* param : br.gru.all())
                param->value = bundledetail::take_record(records, param->name, param->value.rows,
                                                         param->value.cols, what);
        } else {
            br.rnn_w = Parameter(p + ".rnn.W", br.embed_dim, br.hidden_dim, false);
            br.rnn_u = Parameter(p + ".rnn.U", br.hidden_dim, br.hidden_dim, false);
            br.rnn_w.value = bundledetail::take_record(records, br.rnn_w.name, br.embed_dim,
                                                       br.hidden_dim, what);
            br.rnn_u.value = bundledetail::take_record(records, br.rnn_u.name, br.hidden_dim,
                                                       br.hidden_dim, what);
        }
        return br;
    };

    FrozenBranch rnn = load_branch("rnn");
    FrozenBranch gru = load_branch("gru");

    const int concat = rnn.hidden_dim + gru.hidden_dim;
    const int attn_dim = static_cast<int>(manifest_get_int(b.manifest, "attn_dim", what));
    const std::int32_t target_v =
        static_cast<std::int32_t>(manifest_get_int(b.manifest, "vocab_size", what));

    Vocabulary target_vocab = Vocabulary::load(dir / manifest_get(b.manifest, "vocab_file", what));
    if (target_vocab.size() != target_v)
        throw Error(msg(what, ": target vocabulary size ", target_vocab.size(),
                        " does not match manifest ", target_v));

    AttentionParams attn("attention", concat, attn_dim);
    attn.W_a.value = bundledetail::take_record(records, "attention.W_a", concat, attn_dim, what);
    attn.v_a.value = bundledetail::take_record(records, "attention.v_a", attn_dim, 1, what);
    Parameter out_w("out_W", concat, target_v);
    out_w.value = bundledetail::take_record(records, "out_W", concat, target_v, what);
    Parameter out_b("out_b", 1, target_v);
    out_b.value = bundledetail::take_record(records, "out_b", 1, target_v, what);
    bundledetail::expect_consumed(records, what);

    b.model = TransferModel::assemble(
        std::move(rnn), std::move(gru), std::move(attn), std::move(out_w), std::move(out_b),
        std::move(target_vocab), manifest_get_double(b.manifest, "dropout", what),
        static_cast<std::uint64_t>(manifest_get_int(b.manifest, "seed", what)));
    return b;
}

}  // namespace codeseed
