#pragma once

// Run directory layout:
//   config.json            resolved configuration
//   state.json             resumable snapshot, rewritten after every iteration
//   runlog.csv             one row per iteration
//   validation.csv         one row per validation
//   phi_history.csv        sampler parameters per iteration (row 0: phi0)
//   returns/validation_<m>.csv   per-episode validation returns
//   checkpoints/{final,best}.json

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cesor/train.hpp"

namespace cesor {

std::string format_number(double x);  // shortest round-trip form, empty for NaN

void write_text_file(const std::filesystem::path& path, const std::string& text);  // via rename
nlohmann::json read_json_file(const std::filesystem::path& path);

std::string runlog_csv(const RunLog& log);
std::string validation_csv(const RunLog& log);
std::string phi_history_csv(const RunLog& log, const Vector& phi0);

// Writes every artifact of the run's current state.
void persist_run(const Trainer& trainer, const std::filesystem::path& dir);

// Fresh run, or a resumed one when `resume` is set and dir/state.json exists.
// A resumed run must have the same configuration.
Trainer run_training(const TrainConfig& config, const std::filesystem::path& dir, bool resume = false);

PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace cesor
