#include "marm/experiment_config.hpp"

#include <concepts>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace marm {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

template <std::unsigned_integral U>
void read(const json& j, const std::string& path, U& out) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
        fail(path, "expected a non-negative integer");
    out = j.get<U>();
}

void read(const json& j, const std::string& path, double& out) {
    if (!j.is_number()) fail(path, "expected a number");
    out = j.get<double>();
}

void read(const json& j, const std::string& path, bool& out) {
    if (!j.is_boolean()) fail(path, "expected true or false");
    out = j.get<bool>();
}

template <typename T>
void read(const json& j, const std::string& path, std::vector<T>& out) {
    if (!j.is_array()) fail(path, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
        T v{};
        read(j[i], path + "[" + std::to_string(i) + "]", v);
        out.push_back(std::move(v));
    }
}

template <typename Parse>
auto read_enum(const json& j, const std::string& path, Parse parse) {
    if (!j.is_string()) fail(path, "expected a string");
    try {
        return parse(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
}

using Setter = std::function<void(const json&, const std::string&)>;

void read_section(const json& j, const std::string& path, const std::map<std::string, Setter>& keys) {
    if (!j.is_object()) fail(path, "expected an object");
    for (const auto& [k, v] : j.items()) {
        auto it = keys.find(k);
        if (it == keys.end()) fail(path + "." + k, "unknown key");
        it->second(v, path + "." + k);
    }
}

template <typename T>
Setter field(T& target) {
    return [&target](const json& j, const std::string& path) { read(j, path, target); };
}

std::map<std::string, Setter> model_keys(ModelConfig& m) {
    return {
        {"L", field(m.L)},
        {"n", field(m.n)},
        {"d", field(m.d)},
        {"F", field(m.F)},
        {"d_ff", field(m.d_ff)},
        {"K", field(m.K)},
        {"learning_rate", field(m.learning_rate)},
        {"embedding_learning_rate", field(m.embedding_learning_rate)},
        {"grad_clip", field(m.grad_clip)},
        {"optimizer", [&m](const json& j, const std::string& p) { m.optimizer = read_enum(j, p, parse_optimizer); }},
        {"embedding_table_capacity", field(m.embedding_table_capacity)},
        {"n_retain", field(m.n_retain)},
        {"history_capacity", field(m.history_capacity)},
        {"seed", field(m.seed)},
        {"mode", [&m](const json& j, const std::string& p) { m.mode = read_enum(j, p, parse_engine_mode); }},
        {"filter", [&m](const json& j, const std::string& p) { m.filter = read_enum(j, p, parse_sequence_filter); }},
    };
}

std::map<std::string, Setter> stream_keys(SynthConfig& s) {
    return {
        {"num_users", field(s.num_users)},
        {"num_clusters", field(s.num_clusters)},
        {"items_per_cluster", field(s.items_per_cluster)},
        {"num_events", field(s.num_events)},
        {"stickiness", field(s.stickiness)},
        {"transition", field(s.transition)},
        {"exposure_bias", field(s.exposure_bias)},
        {"base_rate", field(s.base_rate)},
        {"gap", field(s.gap)},
        {"signature_weight", field(s.signature_weight)},
        {"core_fraction", field(s.core_fraction)},
        {"engaged_core_prob", field(s.engaged_core_prob)},
        {"idle_core_prob", field(s.idle_core_prob)},
        {"mood_switch", field(s.mood_switch)},
        {"unique_items_per_user", field(s.unique_items_per_user)},
    };
}

}  // namespace

void ExperimentConfig::validate() const {
    auto wrap = [](const char* section, auto&& check) {
        try {
            check();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(section) + ": " + e.what());
        }
    };
    wrap("model", [&] { model.validate(); });
    wrap("stream", [&] { stream.validate(); });
    if (eval.window == 0) throw ConfigError("eval.window: must be >= 1");
    if (eval.sub_windows == 0) throw ConfigError("eval.sub_windows: must be >= 1");
    if (grid.L.empty() || grid.n.empty() || grid.d.empty() || grid.seeds.empty())
        throw ConfigError("grid: every axis needs at least one value");
    if (!(downsample.keep_fraction > 0.0 && downsample.keep_fraction <= 1.0))
        throw ConfigError("downsample.keep_fraction: must be in (0, 1]");
    if (downsample.curve_window == 0) throw ConfigError("downsample.curve_window: must be >= 1");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    ExperimentConfig c;
    read_section(root, "config",
                 {
                     {"model", [&](const json& j, const std::string& p) { read_section(j, p, model_keys(c.model)); }},
                     {"stream", [&](const json& j, const std::string& p) { read_section(j, p, stream_keys(c.stream)); }},
                     {"eval",
                      [&](const json& j, const std::string& p) {
                          read_section(j, p, {{"window", field(c.eval.window)}, {"sub_windows", field(c.eval.sub_windows)}});
                      }},
                     {"grid",
                      [&](const json& j, const std::string& p) {
                          read_section(j, p,
                                       {{"L", field(c.grid.L)},
                                        {"n", field(c.grid.n)},
                                        {"d", field(c.grid.d)},
                                        {"seeds", field(c.grid.seeds)}});
                      }},
                     {"max_cache_size", field(c.max_cache_size)},
                     {"downsample",
                      [&](const json& j, const std::string& p) {
                          read_section(j, p,
                                       {{"warmup_events", field(c.downsample.warmup_events)},
                                        {"keep_fraction", field(c.downsample.keep_fraction)},
                                        {"curve_window", field(c.downsample.curve_window)}});
                      }},
                 });
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream s;
    s << in.rdbuf();
    return parse_experiment_config(s.str());
}

std::string dump_experiment_config(const ExperimentConfig& c) {
    const auto& m = c.model;
    const auto& s = c.stream;
    json j;
    j["model"] = {{"L", m.L},
                  {"n", m.n},
                  {"d", m.d},
                  {"F", m.F},
                  {"d_ff", m.d_ff},
                  {"K", m.K},
                  {"learning_rate", m.learning_rate},
                  {"embedding_learning_rate", m.embedding_learning_rate},
                  {"grad_clip", m.grad_clip},
                  {"optimizer", to_string(m.optimizer)},
                  {"embedding_table_capacity", m.embedding_table_capacity},
                  {"n_retain", m.n_retain},
                  {"history_capacity", m.history_capacity},
                  {"seed", m.seed},
                  {"mode", to_string(m.mode)},
                  {"filter", to_string(m.filter)}};
    j["stream"] = {{"num_users", s.num_users},
                   {"num_clusters", s.num_clusters},
                   {"items_per_cluster", s.items_per_cluster},
                   {"num_events", s.num_events},
                   {"stickiness", s.stickiness},
                   {"transition", s.transition},
                   {"exposure_bias", s.exposure_bias},
                   {"base_rate", s.base_rate},
                   {"gap", s.gap},
                   {"signature_weight", s.signature_weight},
                   {"core_fraction", s.core_fraction},
                   {"engaged_core_prob", s.engaged_core_prob},
                   {"idle_core_prob", s.idle_core_prob},
                   {"mood_switch", s.mood_switch},
                   {"unique_items_per_user", s.unique_items_per_user}};
    j["eval"] = {{"window", c.eval.window}, {"sub_windows", c.eval.sub_windows}};
    j["grid"] = {{"L", c.grid.L}, {"n", c.grid.n}, {"d", c.grid.d}, {"seeds", c.grid.seeds}};
    j["max_cache_size"] = c.max_cache_size;
    j["downsample"] = {{"warmup_events", c.downsample.warmup_events},
                       {"keep_fraction", c.downsample.keep_fraction},
                       {"curve_window", c.downsample.curve_window}};
    return j.dump(2) + "\n";
}

}  // namespace marm
