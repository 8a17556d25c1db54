#include "stacklab/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace stacklab {

namespace {

constexpr const char* kModelFormat = "stacklab-ckpt-v1";
constexpr const char* kAdamFormat = "stacklab-adam-v1";

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& is, const std::string& path, const char* what) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint " + path + ": truncated while reading " + what);
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_u64(os, name.size());
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(os, t.rank());
  for (size_t i = 0; i < t.rank(); ++i) write_u64(os, static_cast<uint64_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

std::pair<std::string, Tensor> read_tensor(std::istream& is, const std::string& path) {
  uint64_t name_len = read_u64(is, path, "tensor name length");
  if (name_len > 4096) throw IoError("checkpoint " + path + ": implausible tensor name length");
  std::string name(name_len, '\0');
  is.read(name.data(), static_cast<std::streamsize>(name_len));
  if (!is) throw IoError("checkpoint " + path + ": truncated while reading tensor name");
  uint64_t rank = read_u64(is, path, "tensor rank");
  if (rank > 8) throw IoError("checkpoint " + path + ": implausible tensor rank");
  Shape shape(rank);
  for (uint64_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int64_t>(read_u64(is, path, "tensor dimension"));
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!is) throw IoError("checkpoint " + path + ": truncated while reading data for " + name);
  return {std::move(name), std::move(t)};
}

std::string read_config_record(std::istream& is, const std::string& path) {
  uint64_t len = read_u64(is, path, "config record length");
  if (len > 1 << 20) throw IoError("checkpoint " + path + ": implausible config record length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint " + path + ": truncated config record");
  return text;
}

std::vector<std::pair<std::string, std::string>> parse_record(const std::string& text,
                                                              const std::string& path) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError("checkpoint " + path + ": malformed config line '" + line + "'");
    }
    kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

std::string record_value(const std::vector<std::pair<std::string, std::string>>& kv,
                         const std::string& key, const std::string& path) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  throw IoError("checkpoint " + path + ": missing config key '" + key + "'");
}

// The canonical tensor layout for a config; loads are validated against it.
std::vector<std::string> canonical_names(const ModelConfig& cfg) {
  std::vector<std::string> names = {"embed.tok", "embed.pos"};
  const int blocks = cfg.looped ? 1 : cfg.n_layers;
  for (int l = 0; l < blocks; ++l) {
    std::string pre = cfg.looped ? "shared." : layer_prefix(cfg, l);
    for (const char* s : {"attn_norm.gain", "attn_norm.bias", "attn.wq", "attn.wk", "attn.wv",
                          "attn.wo", "mlp_norm.gain", "mlp_norm.bias", "mlp.w1", "mlp.w2"}) {
      names.push_back(pre + s);
    }
  }
  names.push_back("final_norm.gain");
  names.push_back("final_norm.bias");
  names.push_back("head.w");
  return names;
}

}  // namespace

void save_checkpoint(const TransformerParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  std::ostringstream rec;
  const ModelConfig& c = params.config;
  rec << "format=" << kModelFormat << "\n"
      << "n_layers=" << c.n_layers << "\n"
      << "d_model=" << c.d_model << "\n"
      << "n_heads=" << c.n_heads << "\n"
      << "d_ff=" << c.d_ff << "\n"
      << "vocab_size=" << c.vocab_size << "\n"
      << "seq_len=" << c.seq_len << "\n"
      << "looped=" << (c.looped ? 1 : 0) << "\n";
  const std::string text = rec.str();
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.store) write_tensor(os, name, t);
  os.flush();
  if (!os) throw IoError("failed while writing checkpoint: " + path);
}

TransformerParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  auto kv = parse_record(read_config_record(is, path), path);
  if (record_value(kv, "format", path) != kModelFormat) {
    throw IoError("checkpoint " + path + ": unexpected format '" +
                  record_value(kv, "format", path) + "'");
  }
  TransformerParams p;
  p.config.n_layers = std::stoi(record_value(kv, "n_layers", path));
  p.config.d_model = std::stoi(record_value(kv, "d_model", path));
  p.config.n_heads = std::stoi(record_value(kv, "n_heads", path));
  p.config.d_ff = std::stoi(record_value(kv, "d_ff", path));
  p.config.vocab_size = std::stoi(record_value(kv, "vocab_size", path));
  p.config.seq_len = std::stoi(record_value(kv, "seq_len", path));
  p.config.looped = record_value(kv, "looped", path) == "1";
  p.config.validate();

  const std::vector<std::string> expect = canonical_names(p.config);
  for (const std::string& want : expect) {
    auto [name, t] = read_tensor(is, path);
    if (name != want) {
      throw IoError("checkpoint " + path + ": expected tensor '" + want + "', found '" + name +
                    "'");
    }
    p.store.add(name, std::move(t));
  }
  is.peek();
  if (!is.eof()) throw IoError("checkpoint " + path + ": trailing bytes after last tensor");
  return p;
}

void save_optimizer(const AdamState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open optimizer state for writing: " + path);
  char buf[128];
  std::ostringstream rec;
  rec << "format=" << kAdamFormat << "\n";
  std::snprintf(buf, sizeof(buf), "beta1=%.9g\nbeta2=%.9g\neps=%.9g\n",
                static_cast<double>(state.config.beta1), static_cast<double>(state.config.beta2),
                static_cast<double>(state.config.eps));
  rec << buf << "step=" << state.step << "\n";
  const std::string text = rec.str();
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : state.m) write_tensor(os, "m." + name, t);
  for (const auto& [name, t] : state.v) write_tensor(os, "v." + name, t);
  os.flush();
  if (!os) throw IoError("failed while writing optimizer state: " + path);
}

AdamState load_optimizer(const std::string& path, const TransformerParams& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open optimizer state: " + path);
  auto kv = parse_record(read_config_record(is, path), path);
  if (record_value(kv, "format", path) != kAdamFormat) {
    throw IoError("optimizer state " + path + ": unexpected format");
  }
  AdamState s;
  s.config.beta1 = std::stof(record_value(kv, "beta1", path));
  s.config.beta2 = std::stof(record_value(kv, "beta2", path));
  s.config.eps = std::stof(record_value(kv, "eps", path));
  s.step = std::stoll(record_value(kv, "step", path));
  for (const char* prefix : {"m.", "v."}) {
    ParamStore& dst = prefix[0] == 'm' ? s.m : s.v;
    for (size_t i = 0; i < params.store.size(); ++i) {
      auto [name, t] = read_tensor(is, path);
      std::string want = std::string(prefix) + params.store.name(i);
      if (name != want) {
        throw IoError("optimizer state " + path + ": expected tensor '" + want + "', found '" +
                      name + "'");
      }
      if (!t.same_shape(params.store.at(i))) {
        throw IoError("optimizer state " + path + ": shape mismatch for " + name);
      }
      dst.add(params.store.name(i), std::move(t));
    }
  }
  is.peek();
  if (!is.eof()) throw IoError("optimizer state " + path + ": trailing bytes");
  return s;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t file_fnv1a(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    std::streamsize got = is.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<size_t>(got), h);
  }
  return h;
}

}  // namespace stacklab
