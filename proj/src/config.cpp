#include "fabr/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fabr/io.hpp"

namespace fabr {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::runtime_error("config: bad value for '" + key + "': " + value);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v);
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) parts.push_back(trim(cur));
  return parts;
}

template <std::size_t N>
void parse_int_list(const std::string& key, const std::string& v, std::array<int, N>& out) {
  auto parts = split_commas(v);
  if (parts.size() != N) bad_value(key, v);
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<int>(parse_int(key, parts[i]));
}

template <std::size_t N>
std::string join_ints(const std::array<int, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) s += ',';
    s += std::to_string(a[i]);
  }
  return s;
}

// One config key: how to apply a textual value and how to print the current
// value. Kept in one table so the parser and serializer cannot drift apart.
// `hashed` controls whether the key participates in config_hash; filesystem
// locations are excluded so that runs that differ only in where they read or
// write data still produce interchangeable checkpoints.
struct KeyDef {
  const char* name; // "section.key"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool hashed = true;
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"run.seed",
       [](RunConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int("run.seed", v));
         c.seed_set = true;
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"run.data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
       [](const RunConfig& c) { return c.data_dir; }, /*hashed=*/false},
      {"run.out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
       [](const RunConfig& c) { return c.out_dir; }, /*hashed=*/false},
      {"run.threshold",
       [](RunConfig& c, const std::string& v) {
         c.threshold = static_cast<float>(parse_real("run.threshold", v));
       },
       [](const RunConfig& c) { return format_float(c.threshold); }},

      {"phantom.count",
       [](RunConfig& c, const std::string& v) {
         c.data.count = static_cast<int>(parse_int("phantom.count", v));
       },
       [](const RunConfig& c) { return std::to_string(c.data.count); }},
      {"phantom.grid",
       [](RunConfig& c, const std::string& v) { parse_int_list("phantom.grid", v, c.phantom.grid); },
       [](const RunConfig& c) { return join_ints(c.phantom.grid); }},
      {"phantom.trunk_radius",
       [](RunConfig& c, const std::string& v) {
         c.phantom.trunk_radius = static_cast<float>(parse_real("phantom.trunk_radius", v));
       },
       [](const RunConfig& c) { return format_float(c.phantom.trunk_radius); }},
      {"phantom.depth",
       [](RunConfig& c, const std::string& v) {
         c.phantom.depth = static_cast<int>(parse_int("phantom.depth", v));
       },
       [](const RunConfig& c) { return std::to_string(c.phantom.depth); }},
      {"phantom.branch_angle_lo",
       [](RunConfig& c, const std::string& v) {
         c.phantom.branch_angle_lo = static_cast<float>(parse_real("phantom.branch_angle_lo", v));
       },
       [](const RunConfig& c) { return format_float(c.phantom.branch_angle_lo); }},
      {"phantom.branch_angle_hi",
       [](RunConfig& c, const std::string& v) {
         c.phantom.branch_angle_hi = static_cast<float>(parse_real("phantom.branch_angle_hi", v));
       },
       [](const RunConfig& c) { return format_float(c.phantom.branch_angle_hi); }},
      {"phantom.radius_decay",
       [](RunConfig& c, const std::string& v) {
         c.phantom.radius_decay = static_cast<float>(parse_real("phantom.radius_decay", v));
       },
       [](const RunConfig& c) { return format_float(c.phantom.radius_decay); }},
      {"phantom.seg_len_lo",
       [](RunConfig& c, const std::string& v) {
         c.phantom.seg_len_lo = static_cast<float>(parse_real("phantom.seg_len_lo", v));
       },
       [](const RunConfig& c) { return format_float(c.phantom.seg_len_lo); }},
      {"phantom.seg_len_hi",
       [](RunConfig& c, const std::string& v) {
         c.phantom.seg_len_hi = static_cast<float>(parse_real("phantom.seg_len_hi", v));
       },
       [](const RunConfig& c) { return format_float(c.phantom.seg_len_hi); }},
      {"phantom.train_ratio",
       [](RunConfig& c, const std::string& v) {
         c.data.train_ratio = parse_real("phantom.train_ratio", v);
       },
       [](const RunConfig& c) { return format_double(c.data.train_ratio); }},
      {"phantom.val_ratio",
       [](RunConfig& c, const std::string& v) {
         c.data.val_ratio = parse_real("phantom.val_ratio", v);
       },
       [](const RunConfig& c) { return format_double(c.data.val_ratio); }},
      {"phantom.test_ratio",
       [](RunConfig& c, const std::string& v) {
         c.data.test_ratio = parse_real("phantom.test_ratio", v);
       },
       [](const RunConfig& c) { return format_double(c.data.test_ratio); }},

      {"backbone.in_channels",
       [](RunConfig& c, const std::string& v) {
         c.backbone.in_channels = static_cast<int>(parse_int("backbone.in_channels", v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.in_channels); }},
      {"backbone.stage_channels",
       [](RunConfig& c, const std::string& v) {
         parse_int_list("backbone.stage_channels", v, c.backbone.stage_channels);
       },
       [](const RunConfig& c) { return join_ints(c.backbone.stage_channels); }},
      {"backbone.kernel",
       [](RunConfig& c, const std::string& v) {
         c.backbone.kernel = static_cast<int>(parse_int("backbone.kernel", v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.kernel); }},
      {"backbone.expansion",
       [](RunConfig& c, const std::string& v) {
         c.backbone.expansion = static_cast<int>(parse_int("backbone.expansion", v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.expansion); }},
      {"backbone.groups",
       [](RunConfig& c, const std::string& v) {
         c.backbone.groups = static_cast<int>(parse_int("backbone.groups", v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.groups); }},
      {"backbone.gmf_count",
       [](RunConfig& c, const std::string& v) {
         c.backbone.gmf_count = static_cast<int>(parse_int("backbone.gmf_count", v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.gmf_count); }},
      {"backbone.se_reduction",
       [](RunConfig& c, const std::string& v) {
         c.backbone.se_reduction = static_cast<int>(parse_int("backbone.se_reduction", v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.se_reduction); }},
      {"backbone.identity_gate",
       [](RunConfig& c, const std::string& v) {
         c.backbone.identity_gate = parse_bool("backbone.identity_gate", v);
       },
       [](const RunConfig& c) { return c.backbone.identity_gate ? "true" : "false"; }},
      {"backbone.gate_target",
       [](RunConfig& c, const std::string& v) {
         if (v == "encoder")
           c.backbone.gate_target = GateTarget::encoder;
         else if (v == "sum")
           c.backbone.gate_target = GateTarget::sum;
         else
           bad_value("backbone.gate_target", v);
       },
       [](const RunConfig& c) {
         return c.backbone.gate_target == GateTarget::encoder ? "encoder" : "sum";
       }},
      {"backbone.skip_fusion",
       [](RunConfig& c, const std::string& v) {
         if (v == "concat")
           c.backbone.skip_fusion = SkipFusion::concat;
         else if (v == "add")
           c.backbone.skip_fusion = SkipFusion::add;
         else
           bad_value("backbone.skip_fusion", v);
       },
       [](const RunConfig& c) {
         return c.backbone.skip_fusion == SkipFusion::concat ? "concat" : "add";
       }},

      {"glcf.fusion_dims",
       [](RunConfig& c, const std::string& v) {
         parse_int_list("glcf.fusion_dims", v, c.glcf.fusion_dims);
       },
       [](const RunConfig& c) { return join_ints(c.glcf.fusion_dims); }},
      {"glcf.two_stage",
       [](RunConfig& c, const std::string& v) { c.two_stage = parse_bool("glcf.two_stage", v); },
       [](const RunConfig& c) { return c.two_stage ? "true" : "false"; }},

      {"optim.lr",
       [](RunConfig& c, const std::string& v) {
         c.optim.lr = static_cast<float>(parse_real("optim.lr", v));
       },
       [](const RunConfig& c) { return format_float(c.optim.lr); }},
      {"optim.beta1",
       [](RunConfig& c, const std::string& v) {
         c.optim.beta1 = static_cast<float>(parse_real("optim.beta1", v));
       },
       [](const RunConfig& c) { return format_float(c.optim.beta1); }},
      {"optim.beta2",
       [](RunConfig& c, const std::string& v) {
         c.optim.beta2 = static_cast<float>(parse_real("optim.beta2", v));
       },
       [](const RunConfig& c) { return format_float(c.optim.beta2); }},
      {"optim.weight_decay",
       [](RunConfig& c, const std::string& v) {
         c.optim.weight_decay = static_cast<float>(parse_real("optim.weight_decay", v));
       },
       [](const RunConfig& c) { return format_float(c.optim.weight_decay); }},
      {"optim.epochs",
       [](RunConfig& c, const std::string& v) {
         c.optim.epochs = static_cast<int>(parse_int("optim.epochs", v));
       },
       [](const RunConfig& c) { return std::to_string(c.optim.epochs); }},
      {"optim.batch_size",
       [](RunConfig& c, const std::string& v) {
         c.optim.batch_size = static_cast<int>(parse_int("optim.batch_size", v));
       },
       [](const RunConfig& c) { return std::to_string(c.optim.batch_size); }},
  };
  return table;
}

} // namespace

void RunConfig::validate() const {
  if (!seed_set) throw std::runtime_error("config: run.seed is required");
  if (threshold <= 0.0f || threshold >= 1.0f)
    throw std::runtime_error("config: run.threshold must be in (0,1)");
  if (data.count < 0) throw std::runtime_error("config: phantom.count must be >= 0");
  const double ratio_sum = data.train_ratio + data.val_ratio + data.test_ratio;
  if (std::abs(ratio_sum - 1.0) > 1e-9)
    throw std::runtime_error("config: split ratios must sum to 1");
  if (optim.epochs < 1) throw std::runtime_error("config: optim.epochs must be >= 1");
  if (optim.batch_size < 1) throw std::runtime_error("config: optim.batch_size must be >= 1");
  if (!(optim.lr > 0.0f)) throw std::runtime_error("config: optim.lr must be positive");
  phantom.validate();
  backbone.validate();
  glcf.validate();
}

RunConfig parse_config(const std::string& text, bool require_seed) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error("config: malformed section at line " + std::to_string(line_no));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected 'key = value' at line " +
                               std::to_string(line_no));
    const std::string key = section + "." + trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    bool found = false;
    for (const KeyDef& def : key_table())
      if (key == def.name) {
        def.set(cfg, value);
        found = true;
        break;
      }
    if (!found) throw std::runtime_error("config: unknown key '" + key + "'");
  }
  if (require_seed && !cfg.seed_set) throw std::runtime_error("config: run.seed is required");
  return cfg;
}

RunConfig load_config(const std::string& path, bool require_seed) {
  return parse_config(read_text_file(path), require_seed);
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const KeyDef& def : key_table()) {
    const std::string name(def.name);
    const std::size_t dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + def.get(cfg) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::string out;
  for (const KeyDef& def : key_table()) {
    if (!def.hashed) continue;
    out += std::string(def.name) + " = " + def.get(cfg) + "\n";
  }
  return fnv1a64(out);
}

} // namespace fabr
