#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stacklab/trainer.hpp"

namespace stacklab {

// Minimal strict INI: '[section]' headers, 'key = value' entries, '#'/';'
// comment lines. Duplicate keys, entries before any section, and malformed
// lines are errors; unknown sections/keys are rejected by the binders.
struct IniEntry {
  std::string key;
  std::string value;
  int line = 0;
};
struct IniSection {
  std::string name;
  std::vector<IniEntry> entries;
};
struct IniFile {
  std::vector<IniSection> sections;
};

IniFile parse_ini(const std::string& text);
IniFile parse_ini_file(const std::string& path);

TrainConfig train_config_from_ini(const IniFile& ini);
TrainConfig load_train_config(const std::string& path);

// Canonical round-trippable dump (all keys explicit); also the text that is
// hashed into the run manifest.
std::string dump_train_config(const TrainConfig& config);

// One [eval] tasks entry: "task:variant:depth:kshot:n[:calc]". The column
// name is derived from the fields; the seed is a stable hash of that name.
EvalTaskSpec parse_eval_task(const std::string& text);

struct FinetuneRunConfig {
  std::string checkpoint;
  std::string out_dir;
  std::string run_name = "finetune";
  FinetuneProtocol protocol;
};

FinetuneRunConfig finetune_config_from_ini(const IniFile& ini);
FinetuneRunConfig load_finetune_config(const std::string& path);

}  // namespace stacklab
