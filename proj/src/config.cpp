#include "unicon/config.hpp"

#include <zlib.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace unicon {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: " + key + " = '" + text + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("config: " + key + " = '" + text + "' must be true or false");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

AdapterConfig& adapter_of(RunConfig& c, const std::string& key) {
  if (!c.adapter) throw ConfigError("config: " + key + " needs an adapter");
  return *c.adapter;
}

template <typename Fn>
auto rethrow_as_config(const std::string& key, Fn fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config: " + key + ": " + e.what());
  }
}

}  // namespace

std::filesystem::path RunConfig::base_path() const {
  if (!base_checkpoint.empty()) return base_checkpoint;
  return std::filesystem::path(output_dir) / "base.uckp";
}

void RunConfig::validate() const {
  if (steps < 0) throw ConfigError("config: run.steps must be >= 0");
  if (batch < 1) throw ConfigError("config: run.batch must be >= 1");
  if (log_every < 1) throw ConfigError("config: run.log_every must be >= 1");
  if (output_dir.empty()) throw ConfigError("config: run.output_dir is empty");
  if (!(optim.lr > 0)) throw ConfigError("config: optim.lr must be > 0");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1) || !(optim.beta2 >= 0 && optim.beta2 < 1)) {
    throw ConfigError("config: optim betas must lie in [0, 1)");
  }
  if (!(optim.eps > 0)) throw ConfigError("config: optim.eps must be > 0");
  if (!(optim.weight_decay >= 0)) throw ConfigError("config: optim.weight_decay must be >= 0");
  if (sampler_steps < 1 || sampler_steps > 1000) throw ConfigError("config: sample.sampler_steps must be in [1, 1000]");
  if (eval_count < 1) throw ConfigError("config: sample.eval_count must be >= 1");
  if (eval_count > static_cast<int>(kTestSeedEnd - kTestSeedBegin)) {
    throw ConfigError("config: sample.eval_count exceeds the test set");
  }
  if (pretrain_steps < 0) throw ConfigError("config: pretrain.steps must be >= 0");
  if (!(pretrain_lr > 0)) throw ConfigError("config: pretrain.lr must be > 0");
  if (adapter) {
    if (adapter->backbone != backbone) throw ConfigError("config: adapter backbone differs from model.backbone");
    unicon::validate(*adapter);
  }
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& v) {
  if (key == "run.seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "run.steps") c.steps = parse_number<int>(key, v);
  else if (key == "run.batch") c.batch = parse_number<int>(key, v);
  else if (key == "run.log_every") c.log_every = parse_number<int>(key, v);
  else if (key == "run.output_dir") c.output_dir = v;
  else if (key == "run.base_checkpoint") c.base_checkpoint = v;
  else if (key == "model.backbone") {
    c.backbone = rethrow_as_config(key, [&] { return parse_backbone(v); });
    if (c.adapter) c.adapter->backbone = c.backbone;
  } else if (key == "model.adapter") {
    if (v == "none") {
      c.adapter.reset();
    } else {
      AdapterConfig a = rethrow_as_config(key, [&] { return parse_adapter_label(v); });
      if (c.adapter) {
        a.connector = c.adapter->connector;
        a.keep_cross_attention = c.adapter->keep_cross_attention;
        a.controller_sees_input = c.adapter->controller_sees_input;
        a.drop_base_decoder = c.adapter->drop_base_decoder;
      }
      a.backbone = c.backbone;
      c.adapter = a;
    }
  } else if (key == "model.connector") {
    adapter_of(c, key).connector = rethrow_as_config(key, [&] { return parse_connector(v); });
  } else if (key == "model.keep_cross_attention") {
    adapter_of(c, key).keep_cross_attention = parse_bool(key, v);
  } else if (key == "model.controller_sees_input") {
    adapter_of(c, key).controller_sees_input = parse_bool(key, v);
  } else if (key == "model.drop_base_decoder") {
    adapter_of(c, key).drop_base_decoder = parse_bool(key, v);
  } else if (key == "task.condition") {
    c.condition = rethrow_as_config(key, [&] { return parse_condition(v); });
  } else if (key == "optim.lr") c.optim.lr = parse_number<double>(key, v);
  else if (key == "optim.beta1") c.optim.beta1 = parse_number<double>(key, v);
  else if (key == "optim.beta2") c.optim.beta2 = parse_number<double>(key, v);
  else if (key == "optim.eps") c.optim.eps = parse_number<double>(key, v);
  else if (key == "optim.weight_decay") c.optim.weight_decay = parse_number<double>(key, v);
  else if (key == "sample.sampler_steps") c.sampler_steps = parse_number<int>(key, v);
  else if (key == "sample.eval_count") c.eval_count = parse_number<int>(key, v);
  else if (key == "sample.clip_x0") c.clip_x0 = parse_bool(key, v);
  else if (key == "pretrain.steps") c.pretrain_steps = parse_number<int>(key, v);
  else if (key == "pretrain.seed") c.pretrain_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "pretrain.lr") c.pretrain_lr = parse_number<double>(key, v);
  else throw ConfigError("config: unknown key " + key);
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) throw ConfigError("config: key " + section + " outside a section");
    for (const auto& [key, value] : keys) entries.emplace_back(section + "." + key, value.data());
  }
  const auto rank = [](const std::string& key) { return key == "model.backbone" ? 0 : key == "model.adapter" ? 1 : 2; };
  std::stable_sort(entries.begin(), entries.end(),
                   [&](const auto& a, const auto& b) { return rank(a.first) < rank(b.first); });
  // The adapter label resets the adapter fields, so it is applied before them.
  for (const auto& [key, value] : entries) set_config_value(c, key, value);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream out;
  out << "[run]\n"
      << "seed = " << c.seed << "\n"
      << "steps = " << c.steps << "\n"
      << "batch = " << c.batch << "\n"
      << "log_every = " << c.log_every << "\n"
      << "output_dir = " << c.output_dir << "\n"
      << "base_checkpoint = " << c.base_checkpoint << "\n\n";
  out << "[model]\n"
      << "backbone = " << backbone_name(c.backbone) << "\n"
      << "adapter = " << (c.adapter ? adapter_label(*c.adapter) : "none") << "\n";
  if (c.adapter) {
    out << "connector = " << connector_name(c.adapter->connector) << "\n"
        << "keep_cross_attention = " << bool_text(c.adapter->keep_cross_attention) << "\n"
        << "controller_sees_input = " << bool_text(c.adapter->controller_sees_input) << "\n"
        << "drop_base_decoder = " << bool_text(c.adapter->drop_base_decoder) << "\n";
  }
  out << "\n[task]\n"
      << "condition = " << condition_name(c.condition) << "\n\n";
  out << "[optim]\n"
      << "lr = " << format_double(c.optim.lr) << "\n"
      << "beta1 = " << format_double(c.optim.beta1) << "\n"
      << "beta2 = " << format_double(c.optim.beta2) << "\n"
      << "eps = " << format_double(c.optim.eps) << "\n"
      << "weight_decay = " << format_double(c.optim.weight_decay) << "\n\n";
  out << "[sample]\n"
      << "sampler_steps = " << c.sampler_steps << "\n"
      << "eval_count = " << c.eval_count << "\n"
      << "clip_x0 = " << bool_text(c.clip_x0) << "\n\n";
  out << "[pretrain]\n"
      << "steps = " << c.pretrain_steps << "\n"
      << "seed = " << c.pretrain_seed << "\n"
      << "lr = " << format_double(c.pretrain_lr) << "\n";
  return out.str();
}

std::string config_hash(const RunConfig& c) {
  const std::string text = to_ini(c);
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                         static_cast<uInt>(text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace unicon
