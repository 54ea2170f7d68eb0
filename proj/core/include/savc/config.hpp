#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "savc/nets.hpp"
#include "savc/syndata.hpp"
#include "savc/train_config.hpp"

namespace savc {

struct EvalConfig {
  int pairs = 100;
  bool reconstruction = true;  // score held-out self-reconstruction too
  int probe_epochs = 200;
  double probe_lr = 0.1;
  double probe_test_fraction = 0.2;
  std::uint64_t seed = 1234;
  int jobs = 1;
};

struct PathConfig {
  std::string data_dir = "corpus";
  std::string teacher_dir = "runs/teacher";
  std::string main_dir = "runs/main";
  std::string finetune_dir = "runs/finetune";
  std::string report = "runs/report.json";
};

// Flat key = value file with [data] [model] [train] [eval] [paths] sections.
struct RunConfig {
  syndata::SynthSpec data;
  EncoderConfig model;
  TrainConfig train;
  EvalConfig eval;
  PathConfig paths;
  // Fully qualified keys ("train.seed") that were set by a file or override.
  std::set<std::string> explicit_keys;

  // Applies one "section.key" assignment; throws ConfigError on bad key/value.
  void set(const std::string& qualified_key, const std::string& value);
  // Applies a seed to data, train and eval.
  void set_seed(std::uint64_t seed);
  // Fills seeds not set explicitly (used for the SAVC_SEED fallback).
  void set_default_seed(std::uint64_t seed);
  void validate() const;
  // Canonical text form; parses back to the same values.
  std::string dump() const;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace savc
