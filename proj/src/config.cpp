#include "cesor/config.hpp"

#include <fstream>
#include <set>

namespace cesor {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

std::filesystem::path resolve(const std::string& path, const std::filesystem::path& base_dir) {
    std::filesystem::path p(path);
    if (p.is_relative() && !base_dir.empty() && std::filesystem::exists(base_dir / p)) return base_dir / p;
    return p;
}

}  // namespace

TrainConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    reject_unknown(j,
                   {"env", "algorithm", "alpha", "nu", "beta_smooth", "rho", "batch_size", "iterations",
                    "learning_rate", "weight_clip", "validation_interval", "validation_episodes", "seed",
                    "hidden_dims", "workers", "maze", "servers"},
                   "config");
    TrainConfig c;
    read(j, "env", c.env.id);
    if (c.env.id != "maze" && c.env.id != "servers") throw ConfigError("env must be \"maze\" or \"servers\"");
    if (j.contains("algorithm")) {
        try {
            c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    read(j, "alpha", c.alpha);
    read(j, "nu", c.nu);
    read(j, "beta_smooth", c.beta_smooth);
    read(j, "rho", c.rho);
    read(j, "batch_size", c.batch_size);
    read(j, "iterations", c.iterations);
    read(j, "learning_rate", c.learning_rate);
    if (j.contains("weight_clip")) {
        std::vector<double> clip;
        read(j, "weight_clip", clip);
        if (clip.size() != 2) throw ConfigError("weight_clip must be [low, high]");
        c.weight_clip = {clip[0], clip[1]};
    }
    read(j, "validation_interval", c.validation_interval);
    read(j, "validation_episodes", c.validation_episodes);
    read(j, "seed", c.seed);
    read(j, "hidden_dims", c.hidden_dims);
    read(j, "workers", c.workers);

    if (j.contains("maze")) {
        const json& m = j.at("maze");
        reject_unknown(m, {"layout", "layout_rows", "step_noise", "horizon", "guard_probability", "guard_mean_cost"},
                       "maze");
        try {
            if (m.contains("layout") && m.contains("layout_rows"))
                throw ConfigError("give either maze.layout or maze.layout_rows");
            if (m.contains("layout")) {
                c.env.maze_layout_path = m.at("layout").get<std::string>();
                c.env.maze = MazeConfig::load_layout(resolve(c.env.maze_layout_path, base_dir).string());
            } else if (m.contains("layout_rows")) {
                std::string text;
                for (const auto& row : m.at("layout_rows")) text += row.get<std::string>() + "\n";
                c.env.maze = MazeConfig::parse_layout(text);
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("maze layout: ") + e.what());
        }
        read(m, "step_noise", c.env.maze.step_noise);
        read(m, "horizon", c.env.maze.horizon);
        read(m, "guard_probability", c.env.maze.guard_probability);
        read(m, "guard_mean_cost", c.env.maze.guard_mean_cost);
    }
    if (j.contains("servers")) {
        const json& s = j.at("servers");
        reject_unknown(s, {"curriculum_minutes", "peak_probability", "peak_interest", "initial_servers"}, "servers");
        read(s, "curriculum_minutes", c.env.servers_curriculum_minutes);
        read(s, "peak_probability", c.env.servers.peak_probability);
        read(s, "peak_interest", c.env.servers.peak_interest);
        read(s, "initial_servers", c.env.servers.initial_servers);
    }
    if (c.env.id == "maze") {
        const LayoutReport rep = maze_validate_layout(c.env.maze);
        if (!rep.pass) {
            std::string msg = "maze layout fails validation";
            for (const auto& m : rep.messages) msg += "; " + m;
            throw ConfigError(msg);
        }
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["env"] = c.env.id;
    j["algorithm"] = to_string(c.algorithm);
    j["alpha"] = c.alpha;
    j["nu"] = c.nu;
    j["beta_smooth"] = c.beta_smooth;
    j["rho"] = c.rho;
    j["batch_size"] = c.batch_size;
    j["iterations"] = c.iterations;
    j["learning_rate"] = c.learning_rate;
    j["weight_clip"] = {c.weight_clip.low, c.weight_clip.high};
    j["validation_interval"] = c.validation_interval;
    j["validation_episodes"] = c.validation_episodes;
    j["seed"] = c.seed;
    j["hidden_dims"] = c.hidden_dims;
    j["workers"] = c.workers;
    if (c.env.id == "maze") {
        json rows = json::array();
        std::string text = c.env.maze.layout_string();
        for (std::size_t pos = 0, next; (next = text.find('\n', pos)) != std::string::npos; pos = next + 1)
            rows.push_back(text.substr(pos, next - pos));
        j["maze"] = {{"layout_rows", rows},
                     {"step_noise", c.env.maze.step_noise},
                     {"horizon", c.env.maze.horizon},
                     {"guard_probability", c.env.maze.guard_probability},
                     {"guard_mean_cost", c.env.maze.guard_mean_cost}};
    } else {
        j["servers"] = {{"curriculum_minutes", c.env.servers_curriculum_minutes},
                        {"peak_probability", c.env.servers.peak_probability},
                        {"peak_interest", c.env.servers.peak_interest},
                        {"initial_servers", c.env.servers.initial_servers}};
    }
    return j;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::size_t pos = 0;
    for (std::size_t dot; (dot = key.find('.', pos)) != std::string::npos; pos = dot + 1) {
        json& child = (*node)[key.substr(pos, dot - pos)];
        if (child.is_null()) child = json::object();
        if (!child.is_object()) throw ConfigError("override path crosses a non-object: " + key);
        node = &child;
    }
    (*node)[key.substr(pos)] = std::move(value);
}

TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
    for (const auto& o : overrides) apply_override(doc, o);
    return config_from_json(doc, path.parent_path());
}

}  // namespace cesor
