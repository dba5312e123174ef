#include "attnflow/config.hpp"

#include <array>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "attnflow/error.hpp"

namespace attnflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using AbFlagsArray = std::array<bool, kAttentionSites>;

enum class Kind { string, boolean, count, integer, real, int_list, bool_triple };

struct Field {
  std::string key;
  Kind kind;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

#define ATTNFLOW_FIELD(key, kind, type, member)                                     \
  Field {                                                                           \
    key, kind, [](RunConfig& c, const json& v) { c.member = v.get<type>(); },       \
        [](const RunConfig& c) { return json(c.member); }                           \
  }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f{
        ATTNFLOW_FIELD("run.seed", Kind::count, std::uint64_t, seed),
        ATTNFLOW_FIELD("run.out", Kind::string, std::string, out),
        ATTNFLOW_FIELD("run.allow_weights_mismatch", Kind::boolean, bool, allow_weights_mismatch),
        ATTNFLOW_FIELD("data.root", Kind::string, std::string, data_root),
        ATTNFLOW_FIELD("data.category", Kind::string, std::string, train.category),
        Field{"data.mode", Kind::string,
              [](RunConfig& c, const json& v) {
                const auto s = v.get<std::string>();
                if (s == "images") c.train.mode = TrainMode::images;
                else if (s == "embeddings") c.train.mode = TrainMode::embeddings;
                else throw ConfigError("data.mode: expected images or embeddings, got '" + s + "'");
              },
              [](const RunConfig& c) {
                return json(c.train.mode == TrainMode::images ? "images" : "embeddings");
              }},
        ATTNFLOW_FIELD("data.embeddings", Kind::string, std::string, data_embeddings),
        ATTNFLOW_FIELD("backbone.pretrained_path", Kind::string, std::string,
                       train.backbone.pretrained_path),
        ATTNFLOW_FIELD("backbone.scales", Kind::int_list, std::vector<int>, train.backbone.scales),
        ATTNFLOW_FIELD("backbone.channels", Kind::int_list, std::vector<std::size_t>,
                       train.backbone.channels),
        Field{"attention.kind", Kind::string,
              [](RunConfig& c, const json& v) {
                c.train.backbone.attention.kind = parse_attention_kind(v.get<std::string>());
              },
              [](const RunConfig& c) { return json(to_string(c.train.backbone.attention.kind)); }},
        ATTNFLOW_FIELD("attention.ab_flags", Kind::bool_triple, AbFlagsArray,
                       train.backbone.ab_flags),
        ATTNFLOW_FIELD("attention.reduction", Kind::count, int, train.backbone.attention.reduction),
        ATTNFLOW_FIELD("attention.spatial_kernel", Kind::count, int,
                       train.backbone.attention.spatial_kernel),
        ATTNFLOW_FIELD("attention.init_std", Kind::real, double, train.backbone.attention.init_std),
        ATTNFLOW_FIELD("attention.init_gate_bias", Kind::real, double,
                       train.backbone.attention.init_gate_bias),
        ATTNFLOW_FIELD("attention.saturate", Kind::boolean, bool, train.saturate_attention),
        ATTNFLOW_FIELD("flow.blocks", Kind::count, std::size_t, train.flow.blocks),
        ATTNFLOW_FIELD("flow.clamp", Kind::real, double, train.flow.clamp),
        ATTNFLOW_FIELD("flow.hidden_factor", Kind::count, std::size_t, train.flow.hidden_factor),
        ATTNFLOW_FIELD("train.epochs", Kind::count, std::size_t, train.epochs),
        ATTNFLOW_FIELD("train.runs", Kind::count, std::size_t, train.runs),
        ATTNFLOW_FIELD("train.batch_size", Kind::count, std::size_t, train.batch_size),
        ATTNFLOW_FIELD("train.learning_rate", Kind::real, double, train.optimizer.learning_rate),
        ATTNFLOW_FIELD("train.beta1", Kind::real, double, train.optimizer.beta1),
        ATTNFLOW_FIELD("train.beta2", Kind::real, double, train.optimizer.beta2),
        ATTNFLOW_FIELD("train.eps", Kind::real, double, train.optimizer.eps),
        ATTNFLOW_FIELD("train.weight_decay", Kind::real, double, train.optimizer.weight_decay),
        ATTNFLOW_FIELD("train.n_test_transforms", Kind::count, std::size_t,
                       train.n_test_transforms),
        ATTNFLOW_FIELD("train.finetune_backbone", Kind::boolean, bool, train.finetune_backbone),
        Field{"train.selection", Kind::string,
              [](RunConfig& c, const json& v) {
                const auto s = v.get<std::string>();
                if (s == "test") c.train.selection = Selection::test;
                else if (s == "holdout") c.train.selection = Selection::holdout;
                else throw ConfigError("train.selection: expected test or holdout, got '" + s + "'");
              },
              [](const RunConfig& c) {
                return json(c.train.selection == Selection::test ? "test" : "holdout");
              }},
        ATTNFLOW_FIELD("train.holdout_fraction", Kind::real, double, train.holdout_fraction),
        ATTNFLOW_FIELD("eval.n_transforms", Kind::count, std::size_t, eval_n_transforms),
        ATTNFLOW_FIELD("eval.method", Kind::string, std::string, eval_method),
        ATTNFLOW_FIELD("explain.scale_index", Kind::count, std::size_t, explain_scale_index),
        ATTNFLOW_FIELD("ablate.parallel", Kind::boolean, bool, ablate_parallel),
    };
    return f;
  }();
  return fields;
}

#undef ATTNFLOW_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : schema()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

bool type_matches(Kind kind, const json& v) {
  switch (kind) {
    case Kind::string: return v.is_string();
    case Kind::boolean: return v.is_boolean();
    case Kind::count: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::integer: return v.is_number_integer();
    case Kind::real: return v.is_number();
    case Kind::int_list:
      if (!v.is_array() || v.empty()) return false;
      for (const auto& e : v) {
        if (!e.is_number_integer() || e.get<long long>() <= 0) return false;
      }
      return true;
    case Kind::bool_triple:
      if (!v.is_array() || v.size() != kAttentionSites) return false;
      for (const auto& e : v) {
        if (!e.is_boolean()) return false;
      }
      return true;
  }
  return false;
}

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::string: return "a string";
    case Kind::boolean: return "true or false";
    case Kind::count: return "a non-negative integer";
    case Kind::integer: return "an integer";
    case Kind::real: return "a number";
    case Kind::int_list: return "a non-empty list of positive integers";
    case Kind::bool_triple: return "a list of three booleans";
  }
  return "?";
}

void assign(RunConfig& cfg, const std::string& key, const json& value) {
  const Field& f = find_field(key);
  if (!type_matches(f.kind, value)) {
    throw ConfigError("config key '" + key + "' expects " + kind_name(f.kind) + ", got " +
                      value.dump());
  }
  f.set(cfg, value);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

}  // namespace

std::string RunConfig::method_label() const {
  if (!eval_method.empty()) return eval_method;
  if (!train.backbone.any_attention()) return "baseline";
  return to_string(train.backbone.attention.kind);
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.train.backbone.attention.kind = AttentionKind::se;
  cfg.train.backbone.ab_flags = {true, true, true};
  return cfg;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig cfg = default_run_config();
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string name = trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    json value;
    try {
      value = json::parse(trim(line.substr(eq + 1)));
    } catch (const json::parse_error&) {
      throw ConfigError(where + ": cannot parse value of '" + key + "'");
    }
    try {
      assign(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string raw = trim(assignment.substr(eq + 1));
  const Field& f = find_field(key);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded() || (f.kind == Kind::string && !value.is_string())) {
    if (f.kind != Kind::string) {
      throw ConfigError("override '" + key + "' expects " + kind_name(f.kind) + ", got '" +
                        raw + "'");
    }
    value = raw;
  }
  assign(cfg, key, value);
}

void validate(const RunConfig& cfg) {
  cfg.train.validate();
  if (cfg.eval_n_transforms < 1) throw ConfigError("eval.n_transforms must be >= 1");
  if (cfg.explain_scale_index >= cfg.train.backbone.scales.size()) {
    throw ConfigError("explain.scale_index out of range for backbone.scales");
  }
}

json to_flat_json(const RunConfig& cfg) {
  json out = json::object();
  for (const auto& f : schema()) out[f.key] = f.get(cfg);
  return out;
}

std::string to_config_text(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : schema()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << "\n";
      out << "[" << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg).dump() << "\n";
  }
  return out.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : schema()) keys.push_back(f.key);
  return keys;
}

}  // namespace attnflow
