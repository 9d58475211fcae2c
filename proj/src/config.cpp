// SPDX-License-Identifier: Apache-2.0
#include "locas/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "locas/errors.hpp"

namespace locas {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Settings::Settings() {
    const ModelConfig m = ModelConfig::desk_default(FfnKind::glu);
    const RunConfig r;
    const TrainOptions t;
    const CyclePolicy c;
    auto num = [](double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        return o.str();
    };
    values_ = {
        {"seed", "0"},
        {"deterministic", "true"},
        {"model.layers", std::to_string(m.layers)},
        {"model.hidden", std::to_string(m.hidden)},
        {"model.intermediate", std::to_string(m.intermediate)},
        {"model.heads", std::to_string(m.heads)},
        {"model.ffn_kind", std::string(to_string(m.ffn_kind))},
        {"model.max_seq", std::to_string(m.max_seq)},
        {"model.rope_base", num(m.rope_base)},
        {"model.norm_eps", num(m.norm_eps)},
        {"train.steps", "600"},
        {"train.lr", num(t.lr)},
        {"train.seq_len", "256"},
        {"train.batch", std::to_string(t.batch)},
        {"train.warmup", std::to_string(t.warmup)},
        {"train.grad_clip", num(t.grad_clip)},
        {"train.corpus_seed", "1"},
        {"train.n_docs", "32"},
        {"train.doc_len", "8192"},
        {"corpus.seed", "0"},
        {"corpus.n_docs", "8"},
        {"corpus.doc_len", "16384"},
        {"corpus.vocab_skew", "1.1"},
        {"run.method", std::string(to_string(r.method))},
        {"run.strategy", std::string(to_string(r.strategy))},
        {"run.r", std::to_string(r.r)},
        {"run.lr", num(r.lr)},
        {"run.steps_per_chunk", std::to_string(r.steps_per_chunk)},
        {"run.optimizer", std::string(to_string(r.optimizer))},
        {"run.epsilon", num(r.epsilon)},
        {"run.chunk_size", std::to_string(r.chunk_size)},
        {"run.window", std::to_string(r.window)},
        {"run.checkpoint_every", std::to_string(r.checkpoint_every)},
        {"run.reinit_per_chunk", r.reinit_per_chunk ? "true" : "false"},
        {"cycle.capacity", std::to_string(c.capacity)},
        {"cycle.n_target", std::to_string(c.n_target)},
        {"cycle.cadence", std::string(to_string(c.cadence))},
        {"cycle.window", std::to_string(c.window)},
        {"cycle.drop_threshold", num(c.drop_threshold)},
        {"cycle.tokens", "1024"},
    };
}

void Settings::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    parse(ss.str(), path.string());
}

void Settings::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string name = trim(t.substr(0, eq));
        set(section.empty() ? name : section + "." + name, trim(t.substr(eq + 1)));
    }
}

void Settings::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    it->second = value;
    explicit_.insert(key);
}

const std::string& Settings::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    return it->second;
}

long long Settings::get_int(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    errno = 0;
    const long long out = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || errno != 0) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    return out;
}

double Settings::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno != 0) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

bool Settings::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string Settings::dump() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) {
        if (key.find('.') == std::string::npos) out << key << " = " << value << '\n';
    }
    std::string section;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) continue;
        const std::string s = key.substr(0, dot);
        if (s != section) {
            out << "\n[" << s << "]\n";
            section = s;
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
    return out.str();
}

ModelConfig Settings::model() const {
    const FfnKind kind = parse_ffn_kind(get("model.ffn_kind"));
    ModelConfig m;
    m.ffn_kind = kind;
    m.layers = static_cast<int>(get_int("model.layers"));
    m.hidden = static_cast<int>(get_int("model.hidden"));
    // The GLU and MLP desk defaults differ in width; follow the kind unless
    // the width was given.
    m.intermediate = explicitly_set("model.intermediate") ? static_cast<int>(get_int("model.intermediate"))
                                                          : ModelConfig::desk_default(kind).intermediate;
    m.heads = static_cast<int>(get_int("model.heads"));
    m.max_seq = static_cast<int>(get_int("model.max_seq"));
    m.rope_base = get_double("model.rope_base");
    m.norm_eps = get_double("model.norm_eps");
    m.validate();
    return m;
}

RunConfig Settings::run() const {
    RunConfig r;
    r.method = parse_method(get("run.method"));
    r.strategy = parse_init_strategy(get("run.strategy"));
    const long long width = get_int("run.r");
    if (width < 0) throw ConfigError("run.r must be >= 0");
    r.r = static_cast<std::size_t>(width);
    r.lr = get_double("run.lr");
    if (r.strategy == InitStrategy::normalized_activation && !explicitly_set("run.lr")) {
        r.lr = 1e-6;
    }
    r.steps_per_chunk = static_cast<int>(get_int("run.steps_per_chunk"));
    r.optimizer = parse_optimizer(get("run.optimizer"));
    r.epsilon = get_double("run.epsilon");
    const long long chunk = get_int("run.chunk_size");
    const long long window = get_int("run.window");
    const long long every = get_int("run.checkpoint_every");
    if (chunk < 1 || window < 1 || every < 1) {
        throw ConfigError("run.chunk_size, run.window and run.checkpoint_every must be >= 1");
    }
    r.chunk_size = static_cast<std::size_t>(chunk);
    r.window = static_cast<std::size_t>(window);
    r.checkpoint_every = static_cast<std::size_t>(every);
    r.reinit_per_chunk = get_bool("run.reinit_per_chunk");
    r.seed = static_cast<std::uint64_t>(get_int("seed"));
    return r;
}

TrainOptions Settings::train() const {
    TrainOptions t;
    t.steps = static_cast<int>(get_int("train.steps"));
    t.lr = get_double("train.lr");
    t.seq_len = static_cast<int>(get_int("train.seq_len"));
    t.batch = static_cast<int>(get_int("train.batch"));
    t.warmup = static_cast<int>(get_int("train.warmup"));
    t.grad_clip = get_double("train.grad_clip");
    t.seed = static_cast<std::uint64_t>(get_int("seed"));
    return t;
}

CyclePolicy Settings::cycle() const {
    CyclePolicy c;
    const long long cap = get_int("cycle.capacity");
    const long long n = get_int("cycle.n_target");
    const long long w = get_int("cycle.window");
    if (cap < 1 || n < 0 || w < 1) throw ConfigError("cycle.capacity, cycle.n_target, cycle.window out of range");
    c.capacity = static_cast<std::size_t>(cap);
    c.n_target = static_cast<std::size_t>(n);
    c.cadence = parse_cadence(get("cycle.cadence"));
    c.window = static_cast<std::size_t>(w);
    c.drop_threshold = get_double("cycle.drop_threshold");
    c.validate();
    return c;
}

}  // namespace locas
