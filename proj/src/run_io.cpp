#include "cesor/run_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "cesor/config.hpp"

namespace cesor {

namespace fs = std::filesystem;

std::string format_number(double x) {
    if (std::isnan(x)) return "";
    return fmt::format("{}", x);
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return nlohmann::json::parse(in);
}

namespace {

std::string opt_int(int v) { return v < 0 ? "" : std::to_string(v); }

}  // namespace

std::string runlog_csv(const RunLog& log) {
    const bool maze = !log.rows.empty() && log.rows.front().n_short >= 0;
    const bool servers = !log.rows.empty() && log.rows.front().peak_episodes >= 0;
    std::ostringstream out;
    out << "iteration,horizon,alpha_prime,q_prime,ce_threshold";
    for (const auto& name : log.phi_names) out << ',' << name;
    out << ",train_mean,train_cvar,sample_mean,used_count,used_weight_fraction,n_eff_used,n_eff_batch,"
           "ce_selected,ce_warning,grad_norm";
    if (maze) out << ",n_short,n_long,n_stay,long_used,long_used_weight_fraction";
    if (servers) out << ",mean_servers,peak_episodes";
    out << '\n';
    for (const auto& r : log.rows) {
        out << r.iteration << ',' << r.horizon << ',' << format_number(r.alpha_prime) << ','
            << format_number(r.q_prime) << ',' << format_number(r.ce_threshold);
        for (double p : r.phi) out << ',' << format_number(p);
        out << ',' << format_number(r.train_mean) << ',' << format_number(r.train_cvar) << ','
            << format_number(r.sample_mean) << ',' << r.used_count << ',' << format_number(r.used_weight_fraction)
            << ',' << format_number(r.n_eff_used) << ',' << format_number(r.n_eff_batch) << ',' << r.ce_selected
            << ',' << (r.ce_warning ? 1 : 0) << ',' << format_number(r.grad_norm);
        if (maze)
            out << ',' << opt_int(r.n_short) << ',' << opt_int(r.n_long) << ',' << opt_int(r.n_stay) << ','
                << opt_int(r.long_used) << ',' << format_number(r.long_used_weight_fraction);
        if (servers) out << ',' << format_number(r.mean_servers) << ',' << opt_int(r.peak_episodes);
        out << '\n';
    }
    return out.str();
}

std::string validation_csv(const RunLog& log) {
    std::ostringstream out;
    out << "iteration,mean,cvar,best,n_short,n_long,n_stay,mean_servers\n";
    for (const auto& v : log.validations)
        out << v.iteration << ',' << format_number(v.mean) << ',' << format_number(v.cvar) << ','
            << (v.best ? 1 : 0) << ',' << opt_int(v.n_short) << ',' << opt_int(v.n_long) << ','
            << opt_int(v.n_stay) << ',' << format_number(v.mean_servers) << '\n';
    return out.str();
}

std::string phi_history_csv(const RunLog& log, const Vector& phi0) {
    std::ostringstream out;
    out << "iteration";
    for (const auto& name : log.phi_names) out << ',' << name;
    out << '\n';
    out << 0;
    for (double p : phi0) out << ',' << format_number(p);
    out << '\n';
    for (const auto& r : log.rows) {
        out << r.iteration;
        for (double p : r.phi) out << ',' << format_number(p);
        out << '\n';
    }
    return out.str();
}

void persist_run(const Trainer& trainer, const fs::path& dir) {
    const RunLog& log = trainer.log();
    write_text_file(dir / "state.json", trainer.snapshot().dump());
    write_text_file(dir / "runlog.csv", runlog_csv(log));
    write_text_file(dir / "validation.csv", validation_csv(log));
    write_text_file(dir / "phi_history.csv",
                    phi_history_csv(log, make_env(trainer.config().env, 0)->context_family().params()));
    write_text_file(dir / "checkpoints" / "final.json", params_to_json(trainer.policy()).dump(1));
    write_text_file(dir / "checkpoints" / "best.json", params_to_json(trainer.best_policy()).dump(1));
    if (!log.validations.empty()) {
        const int m = log.validations.back().iteration;
        const fs::path path = dir / "returns" / fmt::format("validation_{:04d}.csv", m);
        if (!fs::exists(path)) {
            std::ostringstream out;
            out << "episode,return\n";
            const Vector& returns = trainer.last_validation_returns();
            for (std::size_t i = 0; i < returns.size(); ++i) out << i << ',' << format_number(returns[i]) << '\n';
            write_text_file(path, out.str());
        }
    }
}

Trainer run_training(const TrainConfig& config, const fs::path& dir, bool resume) {
    fs::create_directories(dir);
    const nlohmann::json config_json = config_to_json(config);
    const fs::path state = dir / "state.json";
    Trainer trainer = [&] {
        if (resume && fs::exists(state)) {
            const nlohmann::json snap = read_json_file(state);
            if (snap.at("config") != config_json)
                throw std::runtime_error("cannot resume: configuration differs from " + state.string());
            spdlog::info("resuming {} after iteration {}", dir.string(), snap.at("completed").get<int>());
            return Trainer::restore(snap);
        }
        return Trainer(config);
    }();
    write_text_file(dir / "config.json", config_json.dump(2) + "\n");
    trainer.dump_dir = dir.string();
    trainer.on_progress = [&dir](const Trainer& t) { persist_run(t, dir); };
    trainer.run();
    persist_run(trainer, dir);
    trainer.on_progress = nullptr;
    return trainer;
}

PolicyParams load_checkpoint(const fs::path& path) { return params_from_json(read_json_file(path)); }

}  // namespace cesor
