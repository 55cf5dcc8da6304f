#include "gmx/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "gmx/checkpoint.hpp"

namespace gmx {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw Error(Errc::InvalidConfig, "key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true|false");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_size(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    auto size_key = [&t](const std::string& name, auto member) {
      t[name] = {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_size(k, v); },
                 [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
    };
    auto double_key = [&t](const std::string& name, auto member) {
      t[name] = {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); },
                 [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
    };
    auto seed_key = [&t](const std::string& name, auto member) {
      t[name] = {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_u64(k, v); },
                 [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
    };

    t["data.dir"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
                     [](const RunConfig& c) { return c.data_dir.string(); }};
    t["run.dir"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.run_dir = v; },
                    [](const RunConfig& c) { return c.run_dir.string(); }};
    size_key("data.n_images", [](RunConfig& c) -> std::size_t& { return c.shapes.n_images; });
    size_key("data.size", [](RunConfig& c) -> std::size_t& { return c.shapes.size; });
    size_key("data.shapes_min", [](RunConfig& c) -> std::size_t& { return c.shapes.shapes_min; });
    size_key("data.shapes_max", [](RunConfig& c) -> std::size_t& { return c.shapes.shapes_max; });
    double_key("data.min_shape_frac", [](RunConfig& c) -> double& { return c.shapes.min_shape_frac; });
    double_key("data.max_shape_frac", [](RunConfig& c) -> double& { return c.shapes.max_shape_frac; });
    double_key("data.noise_std", [](RunConfig& c) -> double& { return c.shapes.noise_std; });
    seed_key("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.shapes.seed; });
    size_key("data.val_count", [](RunConfig& c) -> std::size_t& { return c.val_count; });
    double_key("data.labeled_fraction", [](RunConfig& c) -> double& { return c.labeled_fraction; });

    double_key("base_lr", [](RunConfig& c) -> double& { return c.train.base_lr; });
    double_key("momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    double_key("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    double_key("power", [](RunConfig& c) -> double& { return c.train.power; });
    size_key("max_iter", [](RunConfig& c) -> std::size_t& { return c.train.max_iter; });
    size_key("batch_labeled", [](RunConfig& c) -> std::size_t& { return c.train.batch_labeled; });
    size_key("batch_unlabeled", [](RunConfig& c) -> std::size_t& { return c.train.batch_unlabeled; });
    double_key("unsup_weight_max", [](RunConfig& c) -> double& { return c.train.unsup_weight_max; });
    size_key("ramp_len", [](RunConfig& c) -> std::size_t& { return c.train.ramp_len; });
    seed_key("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    size_key("crop", [](RunConfig& c) -> std::size_t& { return c.train.crop; });
    double_key("flip_prob", [](RunConfig& c) -> double& { return c.train.flip_prob; });
    size_key("eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; });
    double_key("mixed_weight", [](RunConfig& c) -> double& { return c.train.mixed_weight; });
    double_key("cls_weight", [](RunConfig& c) -> double& { return c.train.cls_weight; });

    double_key("mix.lambda_max", [](RunConfig& c) -> double& { return c.train.mix.lambda_max; });
    t["mix.pairing"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.train.mix.pairing = parse_pairing(v); },
        [](const RunConfig& c) { return std::string(to_string(c.train.mix.pairing)); }};
    t["mix.decouple_mode"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.train.mix.decouple_mode = parse_decouple_mode(v); },
        [](const RunConfig& c) { return std::string(to_string(c.train.mix.decouple_mode)); }};
    t["mix.mitrans"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mix.use_mitrans = to_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.train.mix.use_mitrans ? "true" : "false"); }};

    t["model.encoder_channels"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          const auto widths = to_size_list(k, v);
          if (widths.size() != c.model.encoder.size()) bad_value(k, v, "one width per encoder block");
          for (std::size_t i = 0; i < widths.size(); ++i) c.model.encoder[i].out_channels = widths[i];
        },
        [](const RunConfig& c) {
          std::vector<std::size_t> w;
          for (const auto& e : c.model.encoder) w.push_back(e.out_channels);
          return join(w);
        }};
    t["model.encoder_kernels"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          const auto kernels = to_size_list(k, v);
          if (kernels.size() != c.model.encoder.size()) bad_value(k, v, "one kernel size per encoder block");
          for (std::size_t i = 0; i < kernels.size(); ++i) c.model.encoder[i].kernel = kernels[i];
        },
        [](const RunConfig& c) {
          std::vector<std::size_t> k;
          for (const auto& e : c.model.encoder) k.push_back(e.kernel);
          return join(k);
        }};
    t["model.psp_bins"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.model.psp_bins = to_size_list(k, v); },
        [](const RunConfig& c) { return join(c.model.psp_bins); }};
    size_key("model.embed_dim", [](RunConfig& c) -> std::size_t& { return c.model.embed_dim; });
    size_key("model.decoder_channels", [](RunConfig& c) -> std::size_t& { return c.model.decoder_channels; });
    size_key("ablate.seeds", [](RunConfig& c) -> std::size_t& { return c.ablate_seeds; });
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  shapes.validate();
  train.validate();
  model.validate();
  if (val_count >= shapes.n_images) throw Error(Errc::InvalidConfig, "data.val_count must be below data.n_images");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw Error(Errc::InvalidConfig, "data.labeled_fraction must lie in (0,1]");
  }
  if (train.crop > shapes.size) throw Error(Errc::InvalidConfig, "crop exceeds data.size");
  if (ablate_seeds == 0) throw Error(Errc::InvalidConfig, "ablate.seeds must be positive");
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::InvalidConfig, origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(Errc::InvalidConfig, origin + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_settings(RunConfig& config, const KeyValues& settings) {
  const auto& table = key_table();
  for (const auto& [key, value] : settings) {
    auto it = table.find(key);
    if (it == table.end()) throw Error(Errc::InvalidConfig, "unknown config key '" + key + "'");
    it->second.set(config, key, value);
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  RunConfig config;
  if (file) {
    if (!std::filesystem::exists(*file)) throw Error(Errc::Io, "config file not found: " + file->string());
    apply_settings(config, parse_key_values(read_file_bytes(*file), file->string()));
  }
  KeyValues extra;
  for (const auto& o : overrides) {
    const auto parsed = parse_key_values(o, "--set " + o);
    if (parsed.size() != 1) throw Error(Errc::InvalidConfig, "--set expects exactly one key=value, got '" + o + "'");
    extra.push_back(parsed.front());
  }
  apply_settings(config, extra);
  config.data_dir = std::filesystem::absolute(config.data_dir).lexically_normal();
  config.run_dir = std::filesystem::absolute(config.run_dir).lexically_normal();
  config.validate();
  return config;
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, k] : key_table()) out += key + "=" + k.get(config) + "\n";
  return out;
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, k] : key_table()) keys.push_back(key);
  return keys;
}

}  // namespace gmx
