#include "stacklab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "stacklab/checkpoint.hpp"

namespace stacklab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

// Tracks which entries a binder consumed so leftovers can be reported as
// unknown keys.
class Reader {
 public:
  explicit Reader(const IniFile& ini) : ini_(ini) {
    used_.resize(ini.sections.size());
    for (size_t i = 0; i < ini.sections.size(); ++i) {
      used_[i].assign(ini.sections[i].entries.size(), false);
    }
  }

  bool has_section(const std::string& name) const { return find(name) >= 0; }

  void allow_section(const std::string& name) { allowed_.insert(name); }

  const std::string* find_value(const std::string& section, const std::string& key) {
    int si = find(section);
    if (si < 0) return nullptr;
    const IniSection& sec = ini_.sections[static_cast<size_t>(si)];
    for (size_t i = 0; i < sec.entries.size(); ++i) {
      if (sec.entries[i].key == key) {
        used_[static_cast<size_t>(si)][i] = true;
        return &sec.entries[i].value;
      }
    }
    return nullptr;
  }

  std::string require(const std::string& section, const std::string& key) {
    const std::string* v = find_value(section, key);
    if (v == nullptr) {
      throw ConfigError("missing required key '" + key + "' in section [" + section + "]");
    }
    return *v;
  }

  std::string get(const std::string& section, const std::string& key, const std::string& dflt) {
    const std::string* v = find_value(section, key);
    return v == nullptr ? dflt : *v;
  }

  // Anything not consumed is unknown.
  void finish() const {
    for (size_t si = 0; si < ini_.sections.size(); ++si) {
      const IniSection& sec = ini_.sections[si];
      if (allowed_.count(sec.name) == 0) {
        throw ConfigError("unknown section [" + sec.name + "]");
      }
      for (size_t i = 0; i < sec.entries.size(); ++i) {
        if (!used_[si][i]) {
          throw ConfigError("unknown key '" + sec.entries[i].key + "' in section [" + sec.name +
                            "]");
        }
      }
    }
  }

 private:
  int find(const std::string& name) const {
    for (size_t i = 0; i < ini_.sections.size(); ++i) {
      if (ini_.sections[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  const IniFile& ini_;
  std::vector<std::vector<bool>> used_;
  std::set<std::string> allowed_;
};

[[noreturn]] void bad_value(const std::string& section, const std::string& key,
                            const std::string& value, const std::string& want) {
  throw ConfigError("bad value '" + value + "' for " + section + "." + key + " (expected " +
                    want + ")");
}

int64_t to_i64(const std::string& section, const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) bad_value(section, key, value, "integer");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(section, key, value, "integer");
  }
}

int to_int(const std::string& section, const std::string& key, const std::string& value) {
  int64_t v = to_i64(section, key, value);
  if (v < INT32_MIN || v > INT32_MAX) bad_value(section, key, value, "32-bit integer");
  return static_cast<int>(v);
}

uint64_t to_u64(const std::string& section, const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    if (!value.empty() && value[0] == '-') bad_value(section, key, value, "unsigned integer");
    uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) bad_value(section, key, value, "unsigned integer");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(section, key, value, "unsigned integer");
  }
}

double to_f64(const std::string& section, const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) bad_value(section, key, value, "number");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(section, key, value, "number");
  }
}

bool to_bool(const std::string& section, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(section, key, value, "true/false");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

IniFile parse_ini(const std::string& text) {
  IniFile ini;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno += 1;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      }
      const std::string name = trim(t.substr(1, t.size() - 2));
      if (!valid_name(name)) {
        throw ConfigError("line " + std::to_string(lineno) + ": bad section name '" + name + "'");
      }
      for (const IniSection& s : ini.sections) {
        if (s.name == name) {
          throw ConfigError("line " + std::to_string(lineno) + ": duplicate section [" + name +
                            "]");
        }
      }
      ini.sections.push_back({name, {}});
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!valid_name(key)) {
      throw ConfigError("line " + std::to_string(lineno) + ": bad key '" + key + "'");
    }
    if (value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty value for '" + key + "'");
    }
    if (ini.sections.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key +
                        "' appears before any [section]");
    }
    for (const IniEntry& e : ini.sections.back().entries) {
      if (e.key == key) {
        throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key +
                          "' in section [" + ini.sections.back().name + "]");
      }
    }
    ini.sections.back().entries.push_back({key, value, lineno});
  }
  return ini;
}

IniFile parse_ini_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_ini(ss.str());
}

EvalTaskSpec parse_eval_task(const std::string& text) {
  const std::vector<std::string> f = split(text, ':');
  if (f.size() != 5 && !(f.size() == 6 && f[5] == "calc")) {
    throw ConfigError("bad eval task '" + text +
                      "' (expected task:variant:depth:kshot:n[:calc])");
  }
  EvalTaskSpec spec;
  spec.task = task_from_string(f[0]);
  spec.variant = variant_from_string(f[1]);
  spec.depth = to_int("eval", "tasks", f[2]);
  spec.k_shot = to_int("eval", "tasks", f[3]);
  spec.n_examples = to_int("eval", "tasks", f[4]);
  spec.calc_scoring = f.size() == 6;
  std::string name = task_name(spec.task);
  if (spec.variant != Variant::none) name += "_" + variant_name(spec.variant);
  name += "_d" + std::to_string(spec.depth) + "_k" + std::to_string(spec.k_shot);
  if (spec.calc_scoring) name += "_calc";
  spec.name = name;
  spec.seed = fnv1a64(name.data(), name.size());
  return spec;
}

TrainConfig train_config_from_ini(const IniFile& ini) {
  Reader r(ini);
  TrainConfig c;

  r.allow_section("model");
  c.model.n_layers = to_int("model", "n_layers", r.require("model", "n_layers"));
  c.model.d_model = to_int("model", "d_model", r.require("model", "d_model"));
  c.model.n_heads = to_int("model", "n_heads", r.require("model", "n_heads"));
  c.model.d_ff = to_int("model", "d_ff", r.require("model", "d_ff"));
  c.model.seq_len = to_int("model", "seq_len", r.require("model", "seq_len"));
  c.model.vocab_size =
      to_int("model", "vocab_size", r.get("model", "vocab_size", std::to_string(kByteVocab)));
  c.model.looped = to_bool("model", "looped", r.get("model", "looped", "false"));

  r.allow_section("growth");
  c.growth.kind = growth_kind_from_string(r.get("growth", "kind", "baseline"));
  if (const std::string* v = r.find_value("growth", "block_size")) {
    c.growth.block_size = to_int("growth", "block_size", *v);
  }

  r.allow_section("schedule");
  c.total_steps = to_i64("schedule", "total_steps", r.require("schedule", "total_steps"));
  c.alpha = to_f64("schedule", "alpha", r.require("schedule", "alpha"));

  r.allow_section("optimizer");
  if (const std::string* v = r.find_value("optimizer", "beta1")) {
    c.adam.beta1 = static_cast<float>(to_f64("optimizer", "beta1", *v));
  }
  if (const std::string* v = r.find_value("optimizer", "beta2")) {
    c.adam.beta2 = static_cast<float>(to_f64("optimizer", "beta2", *v));
  }
  if (const std::string* v = r.find_value("optimizer", "epsilon")) {
    c.adam.eps = static_cast<float>(to_f64("optimizer", "epsilon", *v));
  }
  c.reset_moments_on_growth = to_bool("optimizer", "reset_moments_on_growth",
                                      r.get("optimizer", "reset_moments_on_growth", "false"));

  r.allow_section("lr");
  const std::string lk = r.get("lr", "kind", "cosine");
  if (lk == "cosine") {
    c.lr_kind = LrKind::cosine;
  } else if (lk == "constant") {
    c.lr_kind = LrKind::constant;
  } else {
    bad_value("lr", "kind", lk, "cosine|constant");
  }
  c.lr_peak = static_cast<float>(to_f64("lr", "peak", r.get("lr", "peak", "0.01")));
  c.lr_floor = static_cast<float>(to_f64("lr", "floor", r.get("lr", "floor", "0.001")));

  r.allow_section("data");
  c.corpus_path = r.require("data", "corpus");
  c.batch_size = to_int("data", "batch_size", r.require("data", "batch_size"));
  c.data_seed = to_u64("data", "seed", r.get("data", "seed", "0"));

  r.allow_section("run");
  c.out_dir = r.get("run", "out_dir", "");
  c.run_name = r.get("run", "name", "run");
  c.init_seed = to_u64("run", "seed", r.get("run", "seed", "0"));
  c.eval_every = to_i64("run", "eval_every", r.require("run", "eval_every"));
  c.val_batches = to_int("run", "val_batches", r.get("run", "val_batches", "8"));
  c.emit_similarity =
      to_bool("run", "emit_similarity", r.get("run", "emit_similarity", "true"));

  r.allow_section("eval");
  if (const std::string* v = r.find_value("eval", "tasks")) {
    for (const std::string& part : split(*v, ';')) {
      const std::string t = trim(part);
      if (!t.empty()) c.eval_tasks.push_back(parse_eval_task(t));
    }
  }

  r.finish();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  return train_config_from_ini(parse_ini_file(path));
}

std::string dump_train_config(const TrainConfig& c) {
  std::ostringstream os;
  char buf[64];
  auto put_f = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s = %.17g\n", key, v);
    os << buf;
  };
  os << "[model]\n";
  os << "n_layers = " << c.model.n_layers << "\n";
  os << "d_model = " << c.model.d_model << "\n";
  os << "n_heads = " << c.model.n_heads << "\n";
  os << "d_ff = " << c.model.d_ff << "\n";
  os << "seq_len = " << c.model.seq_len << "\n";
  os << "vocab_size = " << c.model.vocab_size << "\n";
  os << "looped = " << (c.model.looped ? "true" : "false") << "\n";
  os << "\n[growth]\n";
  os << "kind = " << growth_kind_name(c.growth.kind) << "\n";
  os << "block_size = " << c.growth.block_size << "\n";
  os << "\n[schedule]\n";
  os << "total_steps = " << c.total_steps << "\n";
  put_f("alpha", c.alpha);
  os << "\n[optimizer]\n";
  put_f("beta1", c.adam.beta1);
  put_f("beta2", c.adam.beta2);
  put_f("epsilon", c.adam.eps);
  os << "reset_moments_on_growth = " << (c.reset_moments_on_growth ? "true" : "false") << "\n";
  os << "\n[lr]\n";
  os << "kind = " << (c.lr_kind == LrKind::cosine ? "cosine" : "constant") << "\n";
  put_f("peak", c.lr_peak);
  put_f("floor", c.lr_floor);
  os << "\n[data]\n";
  os << "corpus = " << c.corpus_path << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "seed = " << c.data_seed << "\n";
  os << "\n[run]\n";
  if (!c.out_dir.empty()) os << "out_dir = " << c.out_dir << "\n";
  os << "name = " << c.run_name << "\n";
  os << "seed = " << c.init_seed << "\n";
  os << "eval_every = " << c.eval_every << "\n";
  os << "val_batches = " << c.val_batches << "\n";
  os << "emit_similarity = " << (c.emit_similarity ? "true" : "false") << "\n";
  if (!c.eval_tasks.empty()) {
    os << "\n[eval]\n";
    os << "tasks = ";
    for (size_t i = 0; i < c.eval_tasks.size(); ++i) {
      const EvalTaskSpec& t = c.eval_tasks[i];
      if (i) os << "; ";
      os << task_name(t.task) << ":" << variant_name(t.variant) << ":" << t.depth << ":"
         << t.k_shot << ":" << t.n_examples;
      if (t.calc_scoring) os << ":calc";
    }
    os << "\n";
  }
  return os.str();
}

FinetuneRunConfig finetune_config_from_ini(const IniFile& ini) {
  Reader r(ini);
  FinetuneRunConfig c;

  r.allow_section("finetune");
  c.checkpoint = r.require("finetune", "checkpoint");
  c.protocol.n_seeds =
      to_int("finetune", "seeds", r.get("finetune", "seeds", std::to_string(c.protocol.n_seeds)));
  c.protocol.base_seed = to_u64("finetune", "base_seed",
                                r.get("finetune", "base_seed",
                                      std::to_string(c.protocol.base_seed)));
  c.protocol.examples_per_depth =
      to_int("finetune", "examples_per_depth",
             r.get("finetune", "examples_per_depth",
                   std::to_string(c.protocol.examples_per_depth)));
  if (const std::string* v = r.find_value("finetune", "depths")) {
    c.protocol.depths.clear();
    for (const std::string& part : split(*v, ',')) {
      c.protocol.depths.push_back(to_int("finetune", "depths", trim(part)));
    }
  }
  if (const std::string* v = r.find_value("finetune", "variant")) {
    c.protocol.variant = variant_from_string(*v);
  }
  c.protocol.lr =
      static_cast<float>(to_f64("finetune", "lr", r.get("finetune", "lr", "0.001")));
  c.protocol.window_start =
      to_int("finetune", "window_start",
             r.get("finetune", "window_start", std::to_string(c.protocol.window_start)));
  c.protocol.window_end =
      to_int("finetune", "window_end",
             r.get("finetune", "window_end", std::to_string(c.protocol.window_end)));
  c.protocol.holdout_per_depth =
      to_int("finetune", "holdout_per_depth",
             r.get("finetune", "holdout_per_depth",
                   std::to_string(c.protocol.holdout_per_depth)));

  r.allow_section("run");
  c.out_dir = r.get("run", "out_dir", "");
  c.run_name = r.get("run", "name", "finetune");

  r.finish();
  c.protocol.validate();
  return c;
}

FinetuneRunConfig load_finetune_config(const std::string& path) {
  return finetune_config_from_ini(parse_ini_file(path));
}

}  // namespace stacklab
