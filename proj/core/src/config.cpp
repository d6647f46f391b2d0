#include "pwtp/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pwtp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
    throw Error("expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw Error("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"pwtp.T", [](RunConfig& c, const std::string& v) { c.pwtp.frames = to_size(v); }},
      {"pwtp.D", [](RunConfig& c, const std::string& v) { c.pwtp.rank = to_size(v); }},
      {"pwtp.k", [](RunConfig& c, const std::string& v) { c.pwtp.kernel = to_size(v); }},
      {"pwtp.s", [](RunConfig& c, const std::string& v) { c.pwtp.stride = to_size(v); }},
      {"pwtp.c_prime", [](RunConfig& c, const std::string& v) { c.pwtp.agg_channels = to_size(v); }},
      {"pwtp.ridge", [](RunConfig& c, const std::string& v) { c.pwtp.ridge = to_double(v); }},
      {"pwtp.mlp.r", [](RunConfig& c, const std::string& v) { c.pwtp.mlp.expansion = to_double(v); }},
      {"pwtp.mlp.beta", [](RunConfig& c, const std::string& v) { c.pwtp.mlp.bottleneck = to_double(v); }},
      {"pwtp.mlp.blocks", [](RunConfig& c, const std::string& v) { c.pwtp.mlp.blocks = to_size(v); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_double(v); }},
      {"train.momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = to_double(v); }},
      {"train.steps", [](RunConfig& c, const std::string& v) { c.train.steps = to_size(v); }},
      {"train.batch", [](RunConfig& c, const std::string& v) { c.train.batch = to_size(v); }},
      {"train.warmup_steps", [](RunConfig& c, const std::string& v) { c.train.warmup_steps = to_size(v); }},
      {"train.weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); }},
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); }},
      {"train.grad_clip", [](RunConfig& c, const std::string& v) { c.train.grad_clip = to_double(v); }},
      {"train.label_smoothing", [](RunConfig& c, const std::string& v) { c.train.label_smoothing = to_double(v); }},
      {"joint.mode", [](RunConfig& c, const std::string& v) { c.joint.mode = JointMode::parse(v); }},
      {"joint.pretrain_steps", [](RunConfig& c, const std::string& v) { c.joint.pretrain_steps = to_size(v); }},
      {"joint.input", [](RunConfig& c, const std::string& v) { c.joint.input = parse_input_mode(v); }},
      {"data.H", [](RunConfig& c, const std::string& v) { c.data.height = to_size(v); }},
      {"data.W", [](RunConfig& c, const std::string& v) { c.data.width = to_size(v); }},
      {"data.S", [](RunConfig& c, const std::string& v) { c.data.segments = to_size(v); }},
      {"data.T", [](RunConfig& c, const std::string& v) { c.data.frames = to_size(v); }},
      {"data.K", [](RunConfig& c, const std::string& v) { c.data.classes = to_size(v); }},
      {"data.n_train", [](RunConfig& c, const std::string& v) { c.data.n_train = to_size(v); }},
      {"data.n_test", [](RunConfig& c, const std::string& v) { c.data.n_test = to_size(v); }},
      {"data.confound", [](RunConfig& c, const std::string& v) { c.data.confound = to_double(v); }},
      {"data.seed", [](RunConfig& c, const std::string& v) { c.data.seed = to_u64(v); }},
      {"data.backgrounds", [](RunConfig& c, const std::string& v) { c.data.backgrounds = to_size(v); }},
      {"data.square", [](RunConfig& c, const std::string& v) { c.data.square = to_size(v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  pwtp.validate();
  train.validate();
  joint.mode.validate();
  data.validate();
  if (data.frames != pwtp.frames) {
    throw Error("config: [data] T = " + std::to_string(data.frames) + " differs from [pwtp] T = " +
                std::to_string(pwtp.frames));
  }
  if (joint.mode.kind == JointMode::Kind::separate && joint.pretrain_steps > train.steps) {
    throw Error("config: [joint] pretrain_steps exceeds [train] steps");
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(where() + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "pwtp" && section != "train" && section != "joint" && section != "data") {
        throw Error(where() + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where() + "expected 'key = value'");
    if (section.empty()) throw Error(where() + "key outside of any section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw Error(where() + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw Error(where() + "duplicate key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const Error& e) {
      throw Error(where() + key + ": " + e.what());
    }
  }
  // A T given in only one section applies to both.
  if (seen.count("pwtp.T") && !seen.count("data.T")) cfg.data.frames = cfg.pwtp.frames;
  if (seen.count("data.T") && !seen.count("pwtp.T")) cfg.pwtp.frames = cfg.data.frames;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace pwtp
