#include "racs/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "racs/errors.hpp"

namespace racs::config {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

long long to_ll(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size())
    throw ConfigError("expected an integer for " + where + ", got '" + value + "'");
  return v;
}

int to_int(const std::string& value, const std::string& where) {
  return static_cast<int>(to_ll(value, where));
}

uint64_t to_u64(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    // stoull wraps negative input around instead of failing
    if (value.find('-') == std::string::npos) v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size())
    throw ConfigError("expected a non-negative integer for " + where + ", got '" + value + "'");
  return v;
}

double to_double(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size())
    throw ConfigError("expected a number for " + where + ", got '" + value + "'");
  return v;
}

bool to_bool(const std::string& value, const std::string& where) {
  if (value == "true" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "no" || value == "0") return false;
  throw ConfigError("expected a boolean for " + where + ", got '" + value + "'");
}

// Tracks which keys a loader consumed so leftovers can be reported.
struct DocReader {
  const IniDoc& doc;
  std::set<std::pair<std::string, std::string>> consumed;

  const std::string* get(const std::string& section, const std::string& key) {
    consumed.insert({section, key});
    auto sec = doc.find(section);
    if (sec == doc.end()) return nullptr;
    auto kv = sec->second.find(key);
    if (kv == sec->second.end()) return nullptr;
    return &kv->second;
  }

  void reject_leftovers() const {
    for (const auto& [section, entries] : doc)
      for (const auto& [key, value] : entries)
        if (!consumed.count({section, key}))
          throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
  }
};

}  // namespace

IniDoc parse_ini_text(const std::string& text) {
  IniDoc doc;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  long line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError("malformed section header at line " + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("malformed section header at line " + std::to_string(line_no));
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key at line " + std::to_string(line_no));
    doc[section][key] = trim(line.substr(eq + 1));
  }
  return doc;
}

IniDoc parse_ini(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_ini_text(text);
}

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::Vanilla: return "vanilla";
    case Mode::RateAdaptive: return "rate-adaptive";
    case Mode::GaussianFixed: return "gaussian-fixed";
  }
  throw ContractError("unknown mode");
}

Mode mode_from_name(const std::string& name) {
  if (name == "vanilla") return Mode::Vanilla;
  if (name == "rate-adaptive") return Mode::RateAdaptive;
  if (name == "gaussian-fixed") return Mode::GaussianFixed;
  throw ConfigError("unknown training mode '" + name + "'");
}

RunConfig load_run_config(const IniDoc& doc) {
  DocReader rd{doc, {}};
  RunConfig cfg;

  if (const auto* v = rd.get("run", "head")) cfg.head = training::head_from_name(*v);
  if (const auto* v = rd.get("run", "mode")) cfg.mode = mode_from_name(*v);
  if (const auto* v = rd.get("run", "out")) cfg.out_dir = *v;
  if (const auto* v = rd.get("run", "checkpoint")) cfg.checkpoint = *v;
  if (const auto* v = rd.get("run", "r_min")) cfg.r_min = to_int(*v, "run.r_min");
  if (const auto* v = rd.get("run", "r_max")) cfg.r_max = to_int(*v, "run.r_max");
  if (const auto* v = rd.get("run", "r")) cfg.r_eval = to_int(*v, "run.r");

  if (const auto* v = rd.get("train", "k_min")) cfg.train.k_min = to_int(*v, "train.k_min");
  if (const auto* v = rd.get("train", "m_max")) cfg.train.m_max = to_int(*v, "train.m_max");
  if (const auto* v = rd.get("train", "max_iters_1"))
    cfg.train.max_iters_1 = to_ll(*v, "train.max_iters_1");
  if (const auto* v = rd.get("train", "max_iters_2"))
    cfg.train.max_iters_2 = to_ll(*v, "train.max_iters_2");
  if (const auto* v = rd.get("train", "iters_per_row"))
    cfg.train.iters_per_row = to_ll(*v, "train.iters_per_row");
  if (const auto* v = rd.get("train", "lr")) cfg.train.lr = to_double(*v, "train.lr");
  if (const auto* v = rd.get("train", "batch_size"))
    cfg.train.batch_size = to_int(*v, "train.batch_size");
  if (const auto* v = rd.get("train", "seed")) cfg.train.seed = to_u64(*v, "train.seed");

  if (const auto* v = rd.get("data", "kind")) cfg.data_kind = *v;
  if (const auto* v = rd.get("data", "dir")) cfg.data_dir = *v;
  if (const auto* v = rd.get("data", "train_count"))
    cfg.train_count = to_int(*v, "data.train_count");
  if (const auto* v = rd.get("data", "test_count")) cfg.test_count = to_int(*v, "data.test_count");
  if (const auto* v = rd.get("data", "block")) cfg.block = to_int(*v, "data.block");
  if (const auto* v = rd.get("data", "classes")) cfg.classes = to_int(*v, "data.classes");

  if (const auto* v = rd.get("adapt", "policy")) cfg.adapt.policy = *v;
  if (const auto* v = rd.get("adapt", "alpha")) cfg.adapt.alpha = to_double(*v, "adapt.alpha");
  if (const auto* v = rd.get("adapt", "beta")) cfg.adapt.beta = to_double(*v, "adapt.beta");
  if (const auto* v = rd.get("adapt", "gamma")) cfg.adapt.gamma = to_double(*v, "adapt.gamma");
  if (const auto* v = rd.get("adapt", "delta")) cfg.adapt.delta = to_int(*v, "adapt.delta");
  if (const auto* v = rd.get("adapt", "r_start")) cfg.adapt.r_start = to_int(*v, "adapt.r_start");
  if (const auto* v = rd.get("adapt", "r_end")) cfg.adapt.r_end = to_int(*v, "adapt.r_end");
  if (const auto* v = rd.get("adapt", "frames")) cfg.adapt.frames = *v;
  if (const auto* v = rd.get("adapt", "confidence")) cfg.adapt.confidence = *v;
  if (const auto* v = rd.get("adapt", "ground_truth_diff"))
    cfg.adapt.ground_truth_diff = to_bool(*v, "adapt.ground_truth_diff");

  rd.reject_leftovers();
  return cfg;
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.data_kind != "dct-lowpass" && cfg.data_kind != "shapes" && cfg.data_kind != "dir")
    throw ConfigError("unknown dataset kind '" + cfg.data_kind + "'");
  if (cfg.data_kind == "dir" && cfg.data_dir.empty())
    throw ConfigError("dataset kind 'dir' needs data.dir");
  if (cfg.block < 1) throw ConfigError("block side must be positive");
  if (cfg.head == training::HeadKind::Classifier && cfg.classes < 2)
    throw ConfigError("classifier needs at least two classes");
  if (cfg.adapt.policy != "linear" && cfg.adapt.policy != "framediff" &&
      cfg.adapt.policy != "confidence")
    throw ConfigError("unknown adaptation policy '" + cfg.adapt.policy + "'");
  if (cfg.train_count < 0 || cfg.test_count < 0)
    throw ConfigError("dataset sizes must be non-negative");
  if (cfg.out_dir.empty()) throw ConfigError("output directory must not be empty");
}

training::ModelSpec model_spec(const RunConfig& cfg) {
  training::ModelSpec spec;
  spec.head = cfg.head;
  spec.b = cfg.block;
  spec.num_classes = cfg.head == training::HeadKind::Classifier ? cfg.classes : 0;
  return spec;
}

}  // namespace racs::config
