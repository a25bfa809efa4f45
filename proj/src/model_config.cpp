#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "collabod/model.hpp"

namespace collabod {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 7> kKindNames{{
    {LayerKind::dpf_stem, "dpf_stem"},
    {LayerKind::dablock, "dablock"},
    {LayerKind::brm, "brm"},
    {LayerKind::conv, "conv"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::upsample, "upsample"},
    {LayerKind::uda_head, "uda_head"},
}};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

long long parse_integer(const std::string& text, const std::string& what) {
    long long v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw Error(what + ": expected an integer, got '" + text + "'");
    return v;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw Error("unknown layer kind '" + std::string(name) + "'");
}

std::optional<std::string> LayerSpec::get(const std::string& key) const {
    const auto it = options.find(key);
    if (it == options.end()) return std::nullopt;
    return it->second;
}

int LayerSpec::get_int(const std::string& key, int fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    return static_cast<int>(parse_integer(*v, "layer '" + id + "' option " + key));
}

std::array<std::string, kNumScales> ModelConfig::head_bindings() const {
    std::array<std::string, kNumScales> b;
    for (const auto& l : layers) {
        if (l.kind != LayerKind::uda_head) continue;
        for (int i = 0; i < kNumScales; ++i)
            if (auto v = l.get(std::string(kScaleNames[i]))) b[i] = *v;
    }
    return b;
}

ModelConfig parse_config(std::string_view text) {
    ModelConfig cfg;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    std::set<std::string> ids{std::string(kInputId)};
    while (std::getline(in, raw)) {
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
        std::istringstream line(raw);
        std::vector<std::string> tok;
        for (std::string t; line >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        const std::string where = "config line " + std::to_string(line_no);
        const std::string& key = tok[0];

        auto need = [&](std::size_t n) {
            if (tok.size() != n + 1)
                throw Error(where + ": '" + key + "' takes " + std::to_string(n) + " value(s)");
        };
        if (key == "name") {
            need(1);
            cfg.name = tok[1];
        } else if (key == "input") {
            need(4);
            for (int i = 0; i < 4; ++i)
                cfg.input.dims[i] = static_cast<int>(parse_integer(tok[i + 1], where));
            if (!cfg.input.valid()) throw Error(where + ": input extents must be positive");
        } else if (key == "classes") {
            need(1);
            cfg.num_classes = static_cast<int>(parse_integer(tok[1], where));
        } else if (key == "bins") {
            need(1);
            cfg.bins = static_cast<int>(parse_integer(tok[1], where));
        } else if (key == "hidden") {
            need(1);
            cfg.hidden = static_cast<int>(parse_integer(tok[1], where));
        } else if (key == "seed") {
            need(1);
            cfg.seed = static_cast<std::uint64_t>(parse_integer(tok[1], where));
        } else if (key == "bias") {
            need(1);
            cfg.bias = parse_integer(tok[1], where) != 0;
        } else if (key == "layer") {
            if (tok.size() < 3) throw Error(where + ": expected 'layer <id> <kind> [key=value ...]'");
            LayerSpec spec;
            spec.id = tok[1];
            spec.kind = parse_layer_kind(tok[2]);
            spec.line = line_no;
            if (!ids.insert(spec.id).second)
                throw Error(where + ": duplicate layer id '" + spec.id + "'");
            for (std::size_t i = 3; i < tok.size(); ++i) {
                const auto eq = tok[i].find('=');
                if (eq == std::string::npos || eq == 0)
                    throw Error(where + ": expected key=value, got '" + tok[i] + "'");
                std::string k = tok[i].substr(0, eq);
                std::string v = tok[i].substr(eq + 1);
                if (k == "in")
                    spec.inputs = split_list(v);
                else if (!spec.options.emplace(std::move(k), std::move(v)).second)
                    throw Error(where + ": repeated option in layer '" + spec.id + "'");
            }
            cfg.layers.push_back(std::move(spec));
        } else {
            throw Error(where + ": unknown key '" + key + "'");
        }
    }
    return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace collabod
