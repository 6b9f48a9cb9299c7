#include "duoformer/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "duoformer/errors.hpp"

namespace duo {

std::string to_string(ScaleTokenMode mode) {
  switch (mode) {
    case ScaleTokenMode::fused: return "fused";
    case ScaleTokenMode::learnable: return "learnable";
    case ScaleTokenMode::none: return "none";
  }
  return "?";
}

std::string to_string(Readout readout) {
  switch (readout) {
    case Readout::scale_token_patch_attn: return "scale_token_patch_attn";
    case Readout::first_token: return "first_token";
    case Readout::avg_tokens: return "avg_tokens";
    case Readout::scale_attn_only_fc: return "scale_attn_only_fc";
  }
  return "?";
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::duo: return "duo";
    case AttentionMode::scale_only: return "scale_only";
    case AttentionMode::patch_only: return "patch_only";
  }
  return "?";
}

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

ScaleTokenMode parse_scale_token_mode(const std::string& text) {
  for (auto m : {ScaleTokenMode::fused, ScaleTokenMode::learnable, ScaleTokenMode::none}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown scale_token_mode '" + text + "' (fused, learnable, none)");
}

Readout parse_readout(const std::string& text) {
  for (auto r : {Readout::scale_token_patch_attn, Readout::first_token, Readout::avg_tokens,
                 Readout::scale_attn_only_fc}) {
    if (to_string(r) == text) return r;
  }
  throw ConfigError("unknown readout '" + text +
                    "' (scale_token_patch_attn, first_token, avg_tokens, scale_attn_only_fc)");
}

AttentionMode parse_attention_mode(const std::string& text) {
  for (auto m : {AttentionMode::duo, AttentionMode::scale_only, AttentionMode::patch_only}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown attention_mode '" + text + "' (duo, scale_only, patch_only)");
}

DType parse_dtype(const std::string& text) {
  if (text == "f32") return DType::f32;
  if (text == "f64") return DType::f64;
  throw ConfigError("unknown dtype '" + text + "' (f32, f64)");
}

DuoFormerConfig DuoFormerConfig::toy() {
  DuoFormerConfig c;
  c.input_size = 32;
  c.patch_count = 4;
  c.embed_dim = 16;
  c.heads = 4;
  c.layers = 2;
  c.stages = {0, 1, 2};
  c.backbone_channels = {8, 16, 32, 64};
  c.baseline_layers = 2;
  return c;
}

int DuoFormerConfig::grid() const {
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patch_count))));
  return g * g == patch_count ? g : -1;
}

int DuoFormerConfig::stage_extent(int stage) const { return input_size / (4 << stage); }

int DuoFormerConfig::tokens_per_patch_side(int stage) const {
  return stage_extent(stage) / grid();
}

int DuoFormerConfig::scale_extent() const {
  int s = 0;
  for (int st : stages) s += tokens_per_patch_side(st) * tokens_per_patch_side(st);
  return s;
}

void DuoFormerConfig::validate() const {
  if (input_size <= 0) throw ConfigError("input_size must be positive");
  if (patch_count <= 0 || grid() < 0) {
    throw ConfigError("patch_count " + std::to_string(patch_count) + " is not a perfect square");
  }
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (baseline_layers < 1) throw ConfigError("baseline_layers must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (backbone_channels.size() != 4) {
    throw ConfigError("backbone_channels needs 4 entries, got " +
                      std::to_string(backbone_channels.size()));
  }
  for (int c : backbone_channels) {
    if (c <= 0) throw ConfigError("backbone_channels must be positive");
  }
  if (stages.empty()) throw ConfigError("stages must name at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] < 0 || stages[i] > 3) {
      throw ConfigError("stage " + std::to_string(stages[i]) + " outside 0..3");
    }
    if (i && stages[i] <= stages[i - 1]) {
      throw ConfigError("stages must be strictly increasing");
    }
  }
  const int g = grid();
  for (int st : stages) {
    const int denom = 4 * (1 << st) * g;
    if (input_size % denom != 0) {
      throw ConfigError("stage " + std::to_string(st) + ": P' = " + std::to_string(input_size) +
                        "/(4*2^" + std::to_string(st) + "*" + std::to_string(g) +
                        ") is not a positive integer");
    }
  }
  // The deepest stage anchors the fused token (its path is the identity) and
  // supplies the first scale entry, so it must sit exactly on the patch grid.
  if (tokens_per_patch_side(deepest_stage()) != 1) {
    throw ConfigError("stage " + std::to_string(deepest_stage()) +
                      ": deepest included stage must have P' = 1 (one token per patch), got P' = " +
                      std::to_string(tokens_per_patch_side(deepest_stage())) +
                      "; include a deeper stage");
  }
  for (int st : stages) {
    const int ratio = tokens_per_patch_side(st);
    if (ratio >= 3 && ratio % 2 != 0) {
      throw ConfigError("stage " + std::to_string(st) + ": extent " +
                        std::to_string(stage_extent(st)) + " not reducible to " +
                        std::to_string(g) + " by stride-2 convolution and pooling");
    }
  }

  const bool has_token = scale_token_mode != ScaleTokenMode::none;
  switch (attention_mode) {
    case AttentionMode::duo:
      if (has_token && readout != Readout::scale_token_patch_attn) {
        throw ConfigError("attention_mode=duo with a scale token requires readout=scale_token_patch_attn");
      }
      if (!has_token && readout != Readout::first_token && readout != Readout::avg_tokens) {
        throw ConfigError(
            "attention_mode=duo with scale_token_mode=none requires readout=first_token or avg_tokens");
      }
      break;
    case AttentionMode::scale_only:
      if (!has_token || readout != Readout::scale_attn_only_fc) {
        throw ConfigError(
            "attention_mode=scale_only requires a scale token and readout=scale_attn_only_fc");
      }
      break;
    case AttentionMode::patch_only:
      if (readout != Readout::scale_token_patch_attn) {
        throw ConfigError("attention_mode=patch_only requires readout=scale_token_patch_attn");
      }
      break;
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs) {
    throw ConfigError("patience must be in [1, max_epochs]");
  }
  if (!(max_lr > 0)) throw ConfigError("max_lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(pct_start > 0 && pct_start < 1)) throw ConfigError("pct_start must lie in (0, 1)");
  if (!(div_factor >= 1 && final_div_factor >= 1)) {
    throw ConfigError("div_factor and final_div_factor must be >= 1");
  }
}

// ---- key=value text ---------------------------------------------------------

namespace {

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string format_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + text + "' for key " + key);
  }
  return value;
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) {
    throw ConfigError("invalid value '" + text + "' for key " + key);
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + text + "' for key " + key);
}

std::vector<int> parse_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty list item for key " + key);
    out.push_back(parse_number<int>(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("empty list for key " + key);
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;

const FieldTable& model_fields() {
  static const FieldTable table = {
      {"input_size", {[](auto& c) { return std::to_string(c.model.input_size); },
                      [](auto& c, auto& k, auto& v) { c.model.input_size = parse_number<int>(k, v); }}},
      {"patch_count", {[](auto& c) { return std::to_string(c.model.patch_count); },
                       [](auto& c, auto& k, auto& v) { c.model.patch_count = parse_number<int>(k, v); }}},
      {"embed_dim", {[](auto& c) { return std::to_string(c.model.embed_dim); },
                     [](auto& c, auto& k, auto& v) { c.model.embed_dim = parse_number<int>(k, v); }}},
      {"heads", {[](auto& c) { return std::to_string(c.model.heads); },
                 [](auto& c, auto& k, auto& v) { c.model.heads = parse_number<int>(k, v); }}},
      {"layers", {[](auto& c) { return std::to_string(c.model.layers); },
                  [](auto& c, auto& k, auto& v) { c.model.layers = parse_number<int>(k, v); }}},
      {"stages", {[](auto& c) { return format_list(c.model.stages); },
                  [](auto& c, auto& k, auto& v) { c.model.stages = parse_list(k, v); }}},
      {"backbone_channels",
       {[](auto& c) { return format_list(c.model.backbone_channels); },
        [](auto& c, auto& k, auto& v) { c.model.backbone_channels = parse_list(k, v); }}},
      {"scale_token_mode",
       {[](auto& c) { return to_string(c.model.scale_token_mode); },
        [](auto& c, auto&, auto& v) { c.model.scale_token_mode = parse_scale_token_mode(v); }}},
      {"readout", {[](auto& c) { return to_string(c.model.readout); },
                   [](auto& c, auto&, auto& v) { c.model.readout = parse_readout(v); }}},
      {"attention_mode",
       {[](auto& c) { return to_string(c.model.attention_mode); },
        [](auto& c, auto&, auto& v) { c.model.attention_mode = parse_attention_mode(v); }}},
      {"num_classes", {[](auto& c) { return std::to_string(c.model.num_classes); },
                       [](auto& c, auto& k, auto& v) { c.model.num_classes = parse_number<int>(k, v); }}},
      {"scale_pos", {[](auto& c) { return std::string(c.model.scale_pos ? "true" : "false"); },
                     [](auto& c, auto& k, auto& v) { c.model.scale_pos = parse_bool(k, v); }}},
      {"patch_pos", {[](auto& c) { return std::string(c.model.patch_pos ? "true" : "false"); },
                     [](auto& c, auto& k, auto& v) { c.model.patch_pos = parse_bool(k, v); }}},
      {"dtype", {[](auto& c) { return to_string(c.model.dtype); },
                 [](auto& c, auto&, auto& v) { c.model.dtype = parse_dtype(v); }}},
      {"seed", {[](auto& c) { return std::to_string(c.model.seed); },
                [](auto& c, auto& k, auto& v) { c.model.seed = parse_number<std::uint64_t>(k, v); }}},
      {"baseline_layers",
       {[](auto& c) { return std::to_string(c.model.baseline_layers); },
        [](auto& c, auto& k, auto& v) { c.model.baseline_layers = parse_number<int>(k, v); }}},
      {"freeze_backbone",
       {[](auto& c) { return std::string(c.model.freeze_backbone ? "true" : "false"); },
        [](auto& c, auto& k, auto& v) { c.model.freeze_backbone = parse_bool(k, v); }}},
  };
  return table;
}

const FieldTable& train_fields() {
  static const FieldTable table = {
      {"batch_size", {[](auto& c) { return std::to_string(c.train.batch_size); },
                      [](auto& c, auto& k, auto& v) { c.train.batch_size = parse_number<int>(k, v); }}},
      {"max_epochs", {[](auto& c) { return std::to_string(c.train.max_epochs); },
                      [](auto& c, auto& k, auto& v) { c.train.max_epochs = parse_number<int>(k, v); }}},
      {"patience", {[](auto& c) { return std::to_string(c.train.patience); },
                    [](auto& c, auto& k, auto& v) { c.train.patience = parse_number<int>(k, v); }}},
      {"max_lr", {[](auto& c) { return format_double(c.train.max_lr); },
                  [](auto& c, auto& k, auto& v) { c.train.max_lr = parse_double(k, v); }}},
      {"beta1", {[](auto& c) { return format_double(c.train.beta1); },
                 [](auto& c, auto& k, auto& v) { c.train.beta1 = parse_double(k, v); }}},
      {"beta2", {[](auto& c) { return format_double(c.train.beta2); },
                 [](auto& c, auto& k, auto& v) { c.train.beta2 = parse_double(k, v); }}},
      {"adam_eps", {[](auto& c) { return format_double(c.train.adam_eps); },
                    [](auto& c, auto& k, auto& v) { c.train.adam_eps = parse_double(k, v); }}},
      {"weight_decay", {[](auto& c) { return format_double(c.train.weight_decay); },
                        [](auto& c, auto& k, auto& v) { c.train.weight_decay = parse_double(k, v); }}},
      {"pct_start", {[](auto& c) { return format_double(c.train.pct_start); },
                     [](auto& c, auto& k, auto& v) { c.train.pct_start = parse_double(k, v); }}},
      {"div_factor", {[](auto& c) { return format_double(c.train.div_factor); },
                      [](auto& c, auto& k, auto& v) { c.train.div_factor = parse_double(k, v); }}},
      {"final_div_factor",
       {[](auto& c) { return format_double(c.train.final_div_factor); },
        [](auto& c, auto& k, auto& v) { c.train.final_div_factor = parse_double(k, v); }}},
      {"train_seed",
       {[](auto& c) { return std::to_string(c.train.seed); },
        [](auto& c, auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }}},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

RunConfig parse_with(const std::string& text, bool allow_train) {
  RunConfig config;
  std::map<std::string, const Field*> lookup;
  for (const auto& [k, f] : model_fields()) lookup[k] = &f;
  if (allow_train) {
    for (const auto& [k, f] : train_fields()) lookup[k] = &f;
  }
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    it->second->set(config, key, value);
  }
  return config;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) { return parse_with(text, true); }

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, f] : model_fields()) out += k + "=" + f.get(config) + "\n";
  for (const auto& [k, f] : train_fields()) out += k + "=" + f.get(config) + "\n";
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

DuoFormerConfig parse_model_config(const std::string& text) {
  return parse_with(text, false).model;
}

std::string serialize_model_config(const DuoFormerConfig& config) {
  RunConfig rc;
  rc.model = config;
  std::string out;
  for (const auto& [k, f] : model_fields()) out += k + "=" + f.get(rc) + "\n";
  return out;
}

}  // namespace duo
