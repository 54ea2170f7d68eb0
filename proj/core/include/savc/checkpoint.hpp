#pragma once

#include <filesystem>
#include <string>

#include "savc/nets.hpp"
#include "savc/rng.hpp"
#include "savc/train_config.hpp"

namespace savc {

enum class Stage { teacher, main, finetuned };

std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct Checkpoint {
  Stage stage = Stage::teacher;
  SavcModel model;
  TrainConfig train;
  CounterRng::State rng;
  long step_count = 0;
};

// Directory layout: config.json (stage, configs, rng, parameter index) plus
// params/<name>.savt for each parameter, stored as float32.
void save_checkpoint(const std::filesystem::path& dir, Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Throws StageError unless `ckpt.stage` is one of the allowed stages.
void require_stage(const Checkpoint& ckpt, std::initializer_list<Stage> allowed, const std::string& what);

std::string checkpoint_summary(Checkpoint& ckpt);

}  // namespace savc
