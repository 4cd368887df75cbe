#include "sdvae/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "sdvae/data.hpp"
#include "sdvae/errors.hpp"

namespace sdvae {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'V', 'A', 'E', 'C', 'K', 'P'};

class Writer {
public:
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    std::vector<std::uint8_t> out;

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw ParseError("checkpoint: truncated", pos_);
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
    const ModelConfig& c = params.config;
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.u64(c.dim_x);
    w.u64(c.dim_u);
    w.u64(c.classes);
    w.u64(c.decoder_hidden);
    w.u64(c.flow_length);
    w.u64(c.trunk_hidden.size());
    for (std::size_t h : c.trunk_hidden) w.u64(h);
    w.f64(c.dropout);
    w.u32(static_cast<std::uint32_t>(c.likelihood));

    const auto tensors = params.named_tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u64(t->rows());
        w.u64(t->cols());
        for (double v : t->values()) w.f64(v);
    }
    return std::move(w.out);
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(sizeof kMagic);
    if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw ParseError("checkpoint: bad magic", 0);
    const std::size_t version_at = r.pos();
    if (const auto version = r.u32(); version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version), version_at);

    ModelConfig c;
    c.dim_x = r.u64();
    c.dim_u = r.u64();
    c.classes = r.u64();
    c.decoder_hidden = r.u64();
    c.flow_length = r.u64();
    const std::size_t n_trunk_at = r.pos();
    const std::uint64_t n_trunk = r.u64();
    if (n_trunk > 64) throw ParseError("checkpoint: implausible trunk depth", n_trunk_at);
    c.trunk_hidden.clear();
    for (std::uint64_t i = 0; i < n_trunk; ++i) c.trunk_hidden.push_back(r.u64());
    c.dropout = r.f64();
    const std::size_t lik_at = r.pos();
    const std::uint32_t lik = r.u32();
    if (lik > 1) throw ParseError("checkpoint: unknown likelihood tag", lik_at);
    c.likelihood = static_cast<Likelihood>(lik);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ParseError(std::string("checkpoint: invalid model config: ") + e.what(), n_trunk_at);
    }

    // Shapes come from the config; the stored tensors must agree exactly.
    ModelParams p = ModelParams::init(c, 0);
    auto tensors = p.named_tensors();
    const std::size_t count_at = r.pos();
    if (r.u32() != tensors.size()) throw ParseError("checkpoint: tensor count does not match config", count_at);
    for (auto& [name, t] : tensors) {
        const std::size_t at = r.pos();
        const std::uint32_t len = r.u32();
        auto raw = r.take(len);
        const std::string stored(raw.begin(), raw.end());
        if (stored != name) throw ParseError("checkpoint: expected tensor '" + name + "', found '" + stored + "'", at);
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        if (rows != t->rows() || cols != t->cols())
            throw ParseError("checkpoint: tensor '" + name + "' has wrong shape", at);
        for (double& v : t->values()) v = r.f64();
    }
    if (!r.done()) throw ParseError("checkpoint: trailing bytes", r.pos());
    return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace sdvae
