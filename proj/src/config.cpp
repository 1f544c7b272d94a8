#include "unimd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "unimd/numerics.hpp"

namespace unimd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::string key;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};


template <typename Acc>
Field make_size(std::string key, Acc acc) {
    return {key, [acc](const Config& c) { return std::to_string(acc(const_cast<Config&>(c))); },
            [acc, key](Config& c, const std::string& v) { acc(c) = parse_size(key, v); }};
}

template <typename Acc>
Field make_double(std::string key, Acc acc) {
    return {key, [acc](const Config& c) { return fmt_double(acc(const_cast<Config&>(c))); },
            [acc, key](Config& c, const std::string& v) { acc(c) = parse_double(key, v); }};
}

template <typename Acc>
Field make_bool(std::string key, Acc acc) {
    return {key,
            [acc](const Config& c) {
                return std::string(acc(const_cast<Config&>(c)) ? "true" : "false");
            },
            [acc, key](Config& c, const std::string& v) { acc(c) = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"seed", [](const Config& c) { return std::to_string(c.seed); },
                     [](Config& c, const std::string& v) { c.seed = parse_u64("seed", v); }});
        f.push_back(make_size("image.search_size", [](Config& c) -> auto& { return c.image.search_size; }));
        f.push_back(make_size("image.template_size", [](Config& c) -> auto& { return c.image.template_size; }));
        f.push_back(make_size("image.patch", [](Config& c) -> auto& { return c.image.patch; }));
        f.push_back(make_size("image.text_dim", [](Config& c) -> auto& { return c.image.text_dim; }));
        f.push_back(make_double("image.search_factor", [](Config& c) -> auto& { return c.image.search_factor; }));
        f.push_back(make_double("image.template_factor", [](Config& c) -> auto& { return c.image.template_factor; }));
        f.push_back(make_size("model.d", [](Config& c) -> auto& { return c.backbone.d; }));
        f.push_back(make_size("backbone.depth", [](Config& c) -> auto& { return c.backbone.depth; }));
        f.push_back(make_size("backbone.heads", [](Config& c) -> auto& { return c.backbone.heads; }));
        f.push_back(make_size("backbone.ffn_mult", [](Config& c) -> auto& { return c.backbone.ffn_mult; }));
        f.push_back(make_size("backbone.dsf_span", [](Config& c) -> auto& { return c.backbone.dsf_span; }));
        f.push_back(make_bool("mcp.enabled", [](Config& c) -> auto& { return c.mcp.enabled; }));
        f.push_back(make_size("mcp.n_tokens", [](Config& c) -> auto& { return c.mcp.n_tokens; }));
        f.push_back(make_size("mcp.bank_l", [](Config& c) -> auto& { return c.mcp.bank_l; }));
        f.push_back({"mcp.policy", [](const Config& c) { return to_string(c.mcp.policy); },
                     [](Config& c, const std::string& v) {
                         if (v == "uniform") c.mcp.policy = MemoryPolicy::Uniform;
                         else if (v == "fifo") c.mcp.policy = MemoryPolicy::FifoEveryK;
                         else throw ConfigError("mcp.policy: expected uniform|fifo, got '" + v + "'");
                     }});
        f.push_back(make_size("mcp.fifo_k", [](Config& c) -> auto& { return c.mcp.fifo_k; }));
        f.push_back({"mcp.bias", [](const Config& c) { return to_string(c.mcp.bias); },
                     [](Config& c, const std::string& v) {
                         if (v == "alibi") c.mcp.bias = PositionBias::Alibi;
                         else if (v == "none") c.mcp.bias = PositionBias::None;
                         else if (v == "absolute") c.mcp.bias = PositionBias::Absolute;
                         else throw ConfigError("mcp.bias: expected alibi|none|absolute, got '" + v + "'");
                     }});
        f.push_back({"mcp.distance",
                     [](const Config& c) {
                         return std::string(c.mcp.distance == AlibiDistance::BankPosition ? "bank" : "frame");
                     },
                     [](Config& c, const std::string& v) {
                         if (v == "bank") c.mcp.distance = AlibiDistance::BankPosition;
                         else if (v == "frame") c.mcp.distance = AlibiDistance::FrameIndex;
                         else throw ConfigError("mcp.distance: expected bank|frame, got '" + v + "'");
                     }});
        f.push_back(make_bool("dsf.enabled", [](Config& c) -> auto& { return c.dsf.enabled; }));
        f.push_back(make_size("dsf.count", [](Config& c) -> auto& { return c.dsf.count; }));
        f.push_back(make_size("dsf.inner_mult", [](Config& c) -> auto& { return c.dsf.inner_mult; }));
        f.push_back(make_size("dsf.state_dim", [](Config& c) -> auto& { return c.dsf.state_dim; }));
        f.push_back(make_size("dsf.conv_width", [](Config& c) -> auto& { return c.dsf.conv_width; }));
        f.push_back(make_size("dsf.dt_rank", [](Config& c) -> auto& { return c.dsf.dt_rank; }));
        f.push_back({"dsf.source", [](const Config& c) { return to_string(c.dsf.source); },
                     [](Config& c, const std::string& v) {
                         if (v == "search") c.dsf.source = DsfSource::FinalSearch;
                         else if (v == "sequence") c.dsf.source = DsfSource::WholeSequence;
                         else if (v == "stage_input") c.dsf.source = DsfSource::StageInput;
                         else throw ConfigError("dsf.source: expected search|sequence|stage_input, got '" + v + "'");
                     }});
        f.push_back(make_double("loss.giou", [](Config& c) -> auto& { return c.loss.giou; }));
        f.push_back(make_double("loss.l1", [](Config& c) -> auto& { return c.loss.l1; }));
        f.push_back(make_double("loss.focal", [](Config& c) -> auto& { return c.loss.focal; }));
        f.push_back(make_double("loss.ce", [](Config& c) -> auto& { return c.loss.ce; }));
        f.push_back(make_double("train.lr", [](Config& c) -> auto& { return c.train.lr; }));
        f.push_back(make_size("train.steps", [](Config& c) -> auto& { return c.train.steps; }));
        f.push_back(make_double("train.weight_decay", [](Config& c) -> auto& { return c.train.weight_decay; }));
        f.push_back(make_double("train.beta1", [](Config& c) -> auto& { return c.train.beta1; }));
        f.push_back(make_double("train.beta2", [](Config& c) -> auto& { return c.train.beta2; }));
        f.push_back(make_double("train.adam_eps", [](Config& c) -> auto& { return c.train.adam_eps; }));
        f.push_back(make_double("train.grad_clip", [](Config& c) -> auto& { return c.train.grad_clip; }));
        f.push_back(make_size("train.clip_frames", [](Config& c) -> auto& { return c.train.clip_frames; }));
        f.push_back(make_size("train.templates", [](Config& c) -> auto& { return c.train.templates; }));
        f.push_back(make_bool("train.memory_backprop", [](Config& c) -> auto& { return c.train.memory_backprop; }));
        f.push_back(make_size("train.sequences", [](Config& c) -> auto& { return c.train.sequences; }));
        f.push_back(make_size("train.seq_length", [](Config& c) -> auto& { return c.train.seq_length; }));
        f.push_back(make_double("train.jitter_center", [](Config& c) -> auto& { return c.train.jitter_center; }));
        f.push_back(make_double("train.jitter_scale", [](Config& c) -> auto& { return c.train.jitter_scale; }));
        f.push_back(make_size("train.log_every", [](Config& c) -> auto& { return c.train.log_every; }));
        f.push_back(make_size("data.frame_size", [](Config& c) -> auto& { return c.data.frame_size; }));
        f.push_back(make_size("eval.seeds_per_scenario", [](Config& c) -> auto& { return c.eval.seeds_per_scenario; }));
        f.push_back(make_size("eval.length", [](Config& c) -> auto& { return c.eval.length; }));
        f.push_back({"eval.seed", [](const Config& c) { return std::to_string(c.eval.seed); },
                     [](Config& c, const std::string& v) { c.eval.seed = parse_u64("eval.seed", v); }});
        return f;
    }();
    return table;
}

const Field& field(const std::string& key) {
    for (const Field& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key: " + key);
}

}  // namespace

std::string to_string(MemoryPolicy p) { return p == MemoryPolicy::Uniform ? "uniform" : "fifo"; }

std::string to_string(PositionBias b) {
    switch (b) {
        case PositionBias::Alibi: return "alibi";
        case PositionBias::None: return "none";
        case PositionBias::Absolute: return "absolute";
    }
    return "?";
}

std::string to_string(DsfSource s) {
    switch (s) {
        case DsfSource::FinalSearch: return "search";
        case DsfSource::WholeSequence: return "sequence";
        case DsfSource::StageInput: return "stage_input";
    }
    return "?";
}

std::size_t Config::dsf_dt_rank() const {
    if (dsf.dt_rank != 0) return dsf.dt_rank;
    return (backbone.d + 15) / 16;
}

void Config::validate() const {
    if (image.patch == 0) throw ConfigError("image.patch must be positive");
    if (image.search_size % image.patch != 0 || image.template_size % image.patch != 0) {
        throw ConfigError("image sizes must be divisible by image.patch");
    }
    if (backbone.d == 0 || backbone.heads == 0 || backbone.d % backbone.heads != 0) {
        throw ConfigError("backbone.heads must divide model.d");
    }
    if (backbone.depth == 0) throw ConfigError("backbone.depth must be positive");
    if (mcp.enabled) {
        if (mcp.n_tokens == 0) throw ConfigError("mcp.n_tokens must be positive");
        if (mcp.bank_l < 1) throw ConfigError("mcp.bank_l must be at least 1");
        if (mcp.fifo_k < 1) throw ConfigError("mcp.fifo_k must be at least 1");
    }
    if (dsf.enabled) {
        const std::size_t span = backbone.dsf_span == 0 ? backbone.depth : backbone.dsf_span;
        if (span > backbone.depth) throw ConfigError("backbone.dsf_span exceeds depth");
        if (dsf.count == 0 || span % dsf.count != 0) {
            throw ConfigError("dsf.count must evenly divide the DSF layer span");
        }
        if (dsf.state_dim == 0 || dsf.inner_mult == 0 || dsf.conv_width == 0) {
            throw ConfigError("dsf dimensions must be positive");
        }
    }
    if (train.clip_frames <= train.templates) {
        throw ConfigError("train.clip_frames must exceed train.templates");
    }
    if (train.templates == 0) throw ConfigError("train.templates must be positive");
    if (train.seq_length < train.clip_frames) {
        throw ConfigError("train.seq_length must be at least train.clip_frames");
    }
}

void Config::set(const std::string& key, const std::string& value) {
    field(key).set(*this, trim(value));
}

std::string Config::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& Config::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const Field& f : fields()) out.push_back(f.key);
        return out;
    }();
    return k;
}

std::string Config::to_text() const {
    std::ostringstream os;
    for (const Field& f : fields()) os << f.key << '=' << f.get(*this) << '\n';
    return os.str();
}

Config Config::parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    c.validate();
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

}  // namespace unimd
