// SPDX-License-Identifier: Apache-2.0
#include "locas/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "locas/errors.hpp"

namespace locas {

namespace {

constexpr char kMagic[4] = {'L', 'O', 'C', 'A'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void raw(const std::string& s) { out_ += s; }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) {
            throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string text() { return bytes(u32()); }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }

private:
    const std::string& in_;
    std::size_t pos_ = 0;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("checkpoint field '" + field + "' is not a number: " + s);
    }
}

std::uint64_t config_u64(const Container& c, const std::string& name) {
    const ConfigValue* v = c.find_config(name);
    if (v == nullptr || !std::holds_alternative<std::uint64_t>(*v)) {
        throw FormatError("checkpoint config is missing integer field '" + name + "'");
    }
    return std::get<std::uint64_t>(*v);
}

std::string config_text(const Container& c, const std::string& name) {
    const ConfigValue* v = c.find_config(name);
    if (v == nullptr || !std::holds_alternative<std::string>(*v)) {
        throw FormatError("checkpoint config is missing text field '" + name + "'");
    }
    return std::get<std::string>(*v);
}

const Matrix& tensor(const Container& c, const std::string& name) {
    const Matrix* m = c.find_tensor(name);
    if (m == nullptr) {
        throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    return *m;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

const ConfigValue* Container::find_config(const std::string& name) const {
    for (const auto& [k, v] : config) {
        if (k == name) return &v;
    }
    return nullptr;
}

const Matrix* Container::find_tensor(const std::string& name) const {
    for (const auto& [k, v] : tensors) {
        if (k == name) return &v;
    }
    return nullptr;
}

std::string encode_container(const Container& c) {
    Writer cfg;
    cfg.u32(static_cast<std::uint32_t>(c.config.size()));
    for (const auto& [name, value] : c.config) {
        cfg.text(name);
        if (std::holds_alternative<std::uint64_t>(value)) {
            cfg.u8(0);
            cfg.u64(std::get<std::uint64_t>(value));
        } else {
            cfg.u8(1);
            cfg.text(std::get<std::string>(value));
        }
    }

    Writer w;
    w.raw(std::string(kMagic, 4));
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(cfg.str().size()));
    w.raw(cfg.str());
    w.u32(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, m] : c.tensors) {
        w.text(name);
        w.u64(m.rows());
        w.u64(m.cols());
        for (double v : m.data()) w.f64(v);
    }
    return std::move(w.str());
}

Container decode_container(const std::string& bytes) {
    Reader r(bytes);
    if (r.bytes(4) != std::string(kMagic, 4)) {
        throw FormatError("bad checkpoint magic (expected \"LOCA\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    Container c;
    const std::uint32_t cfg_bytes = r.u32();
    const std::size_t cfg_end = r.pos() + cfg_bytes;
    r.need(cfg_bytes);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.text();
        const std::uint8_t tag = r.u8();
        if (tag == 0) {
            c.config.emplace_back(std::move(name), r.u64());
        } else if (tag == 1) {
            c.config.emplace_back(std::move(name), r.text());
        } else {
            throw FormatError("unknown config value tag " + std::to_string(tag));
        }
    }
    if (r.pos() != cfg_end) {
        throw FormatError("config block length does not match its contents");
    }
    const std::uint32_t tensors = r.u32();
    for (std::uint32_t i = 0; i < tensors; ++i) {
        std::string name = r.text();
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        if (cols != 0 && rows > (bytes.size() / 8) / cols) {
            throw FormatError("tensor '" + name + "' shape exceeds the file size");
        }
        r.need(rows * cols * 8);
        std::vector<double> data(rows * cols);
        for (double& v : data) v = r.f64();
        c.tensors.emplace_back(std::move(name), Matrix(rows, cols, std::move(data)));
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after the last tensor");
    }
    return c;
}

void write_container(const Container& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write checkpoint " + path.string());
    }
    const std::string bytes = encode_container(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("short write to " + path.string());
    }
}

Container read_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

void save_checkpoint(const Backbone& backbone, const std::filesystem::path& path) {
    const ModelConfig& cfg = backbone.config;
    Container c;
    c.config = {
        {"kind", std::string("backbone")},
        {"layers", static_cast<std::uint64_t>(cfg.layers)},
        {"hidden", static_cast<std::uint64_t>(cfg.hidden)},
        {"intermediate", static_cast<std::uint64_t>(cfg.intermediate)},
        {"heads", static_cast<std::uint64_t>(cfg.heads)},
        {"vocab", static_cast<std::uint64_t>(cfg.vocab)},
        {"ffn_kind", std::string(to_string(cfg.ffn_kind))},
        {"max_seq", static_cast<std::uint64_t>(cfg.max_seq)},
        {"rope_base", format_double(cfg.rope_base)},
        {"norm_eps", format_double(cfg.norm_eps)},
    };
    for_each_tensor(backbone.weights, [&](const std::string& name, const Matrix& m) { c.tensors.emplace_back(name, m); });
    write_container(c, path);
}

Backbone load_checkpoint(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (config_text(c, "kind") != "backbone") {
        throw FormatError(path.string() + " is not a backbone checkpoint");
    }
    ModelConfig cfg;
    cfg.layers = static_cast<int>(config_u64(c, "layers"));
    cfg.hidden = static_cast<int>(config_u64(c, "hidden"));
    cfg.intermediate = static_cast<int>(config_u64(c, "intermediate"));
    cfg.heads = static_cast<int>(config_u64(c, "heads"));
    cfg.vocab = static_cast<int>(config_u64(c, "vocab"));
    cfg.max_seq = static_cast<int>(config_u64(c, "max_seq"));
    cfg.rope_base = parse_double(config_text(c, "rope_base"), "rope_base");
    cfg.norm_eps = parse_double(config_text(c, "norm_eps"), "norm_eps");
    try {
        cfg.ffn_kind = parse_ffn_kind(config_text(c, "ffn_kind"));
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }

    Backbone b{cfg, zeros_like(cfg)};
    for_each_tensor(b.weights, [&](const std::string& name, Matrix& m) {
        const Matrix& src = tensor(c, name);
        if (src.rows() != m.rows() || src.cols() != m.cols()) {
            throw FormatError("tensor '" + name + "' has shape " + std::to_string(src.rows()) + "x" +
                              std::to_string(src.cols()) + ", expected " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()));
        }
        m = src;
    });
    return b;
}

void save_memory(const GluMemory& memory, const std::filesystem::path& path) {
    Container c;
    c.config = {{"kind", std::string("locas-glu")},
                {"layers", static_cast<std::uint64_t>(memory.layers.size())},
                {"width", static_cast<std::uint64_t>(memory.width())}};
    for (std::size_t i = 0; i < memory.layers.size(); ++i) {
        const auto& l = memory.layers[i];
        const std::string p = "locas.layer" + std::to_string(i) + ".";
        c.config.emplace_back("layer" + std::to_string(i) + ".tau", format_double(l.tau));
        Matrix sel(1, l.selection.size());
        for (std::size_t j = 0; j < l.selection.size(); ++j) sel(0, j) = static_cast<double>(l.selection[j]);
        c.tensors.emplace_back(p + "gate", l.gate);
        c.tensors.emplace_back(p + "key", l.key);
        c.tensors.emplace_back(p + "value", l.value);
        c.tensors.emplace_back(p + "selection", sel);
    }
    write_container(c, path);
}

void save_memory(const MlpMemory& memory, const std::filesystem::path& path) {
    Container c;
    c.config = {{"kind", std::string("locas-mlp")},
                {"layers", static_cast<std::uint64_t>(memory.layers.size())},
                {"width", static_cast<std::uint64_t>(memory.width())},
                {"epsilon", format_double(memory.epsilon)}};
    for (std::size_t i = 0; i < memory.layers.size(); ++i) {
        const std::string p = "locas.layer" + std::to_string(i) + ".";
        c.tensors.emplace_back(p + "key", memory.layers[i].key);
        c.tensors.emplace_back(p + "value", memory.layers[i].value);
    }
    write_container(c, path);
}

GluMemory load_glu_memory(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (config_text(c, "kind") != "locas-glu") {
        throw FormatError(path.string() + " is not a locas-glu memory");
    }
    GluMemory mem;
    mem.layers.resize(config_u64(c, "layers"));
    for (std::size_t i = 0; i < mem.layers.size(); ++i) {
        auto& l = mem.layers[i];
        const std::string p = "locas.layer" + std::to_string(i) + ".";
        l.gate = tensor(c, p + "gate");
        l.key = tensor(c, p + "key");
        l.value = tensor(c, p + "value");
        l.tau = parse_double(config_text(c, "layer" + std::to_string(i) + ".tau"), "tau");
        for (double v : tensor(c, p + "selection").data()) l.selection.push_back(static_cast<std::size_t>(v));
    }
    return mem;
}

MlpMemory load_mlp_memory(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (config_text(c, "kind") != "locas-mlp") {
        throw FormatError(path.string() + " is not a locas-mlp memory");
    }
    MlpMemory mem;
    mem.epsilon = parse_double(config_text(c, "epsilon"), "epsilon");
    mem.layers.resize(config_u64(c, "layers"));
    for (std::size_t i = 0; i < mem.layers.size(); ++i) {
        const std::string p = "locas.layer" + std::to_string(i) + ".";
        mem.layers[i].key = tensor(c, p + "key");
        mem.layers[i].value = tensor(c, p + "value");
    }
    return mem;
}

}  // namespace locas
