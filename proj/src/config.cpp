#include "u2pl/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

namespace u2pl {
namespace {

using Field = std::variant<int RunConfig::*, double RunConfig::*, bool RunConfig::*,
                           std::uint64_t RunConfig::*, Regime RunConfig::*,
                           NegativeSource RunConfig::*>;

struct Entry {
  std::string_view key;
  Field field;
};

// Render order is the order of this table.
const std::array<Entry, 30> kEntries{{
    {"regime", &RunConfig::regime},
    {"seed", &RunConfig::seed},
    {"train.batch_size", &RunConfig::batch_size},
    {"train.total_epochs", &RunConfig::total_epochs},
    {"train.warm_start_epochs", &RunConfig::warm_start_epochs},
    {"train.use_unlabeled", &RunConfig::use_unlabeled},
    {"optim.lr_base", &RunConfig::lr_base},
    {"optim.momentum", &RunConfig::momentum},
    {"optim.weight_decay", &RunConfig::weight_decay},
    {"model.features", &RunConfig::features},
    {"model.repr_dim", &RunConfig::repr_dim},
    {"model.ema_momentum", &RunConfig::ema_momentum},
    {"pseudo.alpha0", &RunConfig::alpha0},
    {"pseudo.eta", &RunConfig::eta},
    {"pseudo.denoise", &RunConfig::denoise},
    {"loss.xi1", &RunConfig::xi1},
    {"loss.xi2", &RunConfig::xi2},
    {"loss.eps_floor", &RunConfig::eps_floor},
    {"contrast.lambda_c", &RunConfig::lambda_c},
    {"contrast.tau", &RunConfig::tau},
    {"contrast.delta_p", &RunConfig::delta_p},
    {"contrast.r_l", &RunConfig::r_l},
    {"contrast.r_h", &RunConfig::r_h},
    {"contrast.num_anchors", &RunConfig::num_anchors},
    {"contrast.num_negatives", &RunConfig::num_negatives},
    {"contrast.negative_source", &RunConfig::negative_source},
    {"proto.momentum", &RunConfig::proto_momentum},
    {"bank.capacity_fg", &RunConfig::bank_capacity_fg},
    {"bank.capacity_bg", &RunConfig::bank_capacity_bg},
    {"cam.beta", &RunConfig::beta},
}};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const Entry* find_entry(std::string_view key) {
  for (const auto& e : kEntries) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) +
                      "'");
  }
  return v;
}

std::string format_double(double v) {
  std::array<char, 64> buf;
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string format_value(const RunConfig& c, const Field& field) {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::decay_t<decltype(c.*member)>;
        const T& v = c.*member;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(v);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, Regime>) {
          return std::string(to_string(v));
        } else if constexpr (std::is_same_v<T, NegativeSource>) {
          return std::string(to_string(v));
        } else {
          return std::to_string(v);
        }
      },
      field);
}

}  // namespace

std::string_view to_string(NegativeSource s) {
  return s == NegativeSource::unreliable ? "unreliable" : "reliable";
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const Entry* e = find_entry(key);
  if (e == nullptr) throw ConfigError("unknown config key '" + std::string(key) + "'");
  std::visit(
      [&](auto member) {
        using T = std::decay_t<decltype(config.*member)>;
        T& dst = config.*member;
        if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") {
            dst = true;
          } else if (value == "false" || value == "0") {
            dst = false;
          } else {
            throw ConfigError("config key '" + std::string(key) + "': expected true or false");
          }
        } else if constexpr (std::is_same_v<T, Regime>) {
          try {
            dst = parse_regime(value);
          } catch (const ContractError& err) {
            throw ConfigError("config key '" + std::string(key) + "': " + err.what());
          }
        } else if constexpr (std::is_same_v<T, NegativeSource>) {
          if (value == "unreliable") {
            dst = NegativeSource::unreliable;
          } else if (value == "reliable") {
            dst = NegativeSource::reliable;
          } else {
            throw ConfigError("config key '" + std::string(key) +
                              "': expected unreliable or reliable");
          }
        } else {
          dst = parse_number<T>(key, value);
        }
      },
      e->field);
}

void validate_config(const RunConfig& c) {
  auto check = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + std::string(key) + "': " + what, key);
  };
  check(c.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(c.total_epochs >= 0, "train.total_epochs", "must be non-negative");
  check(c.warm_start_epochs >= 0, "train.warm_start_epochs", "must be non-negative");
  check(c.lr_base >= 0.0, "optim.lr_base", "must be non-negative");
  check(c.momentum >= 0.0 && c.momentum < 1.0, "optim.momentum", "must be in [0, 1)");
  check(c.weight_decay >= 0.0, "optim.weight_decay", "must be non-negative");
  check(c.features >= 2 && c.features % 2 == 0, "model.features", "must be a positive even number");
  check(c.repr_dim >= 2, "model.repr_dim", "must be at least 2");
  check(c.ema_momentum >= 0.0 && c.ema_momentum <= 1.0, "model.ema_momentum", "must be in [0, 1]");
  check(c.alpha0 > 0.0 && c.alpha0 < 1.0, "pseudo.alpha0", "must be in (0, 1)");
  check(c.eta > 0.0, "pseudo.eta", "must be positive");
  check(c.xi1 >= 0.0 && c.xi2 >= 0.0, "loss.xi1", "SCE weights must be non-negative");
  check(c.eps_floor > 0.0 && c.eps_floor < 1.0, "loss.eps_floor", "must be in (0, 1)");
  check(c.lambda_c >= 0.0, "contrast.lambda_c", "must be non-negative");
  check(c.tau > 0.0, "contrast.tau", "must be positive");
  check(c.delta_p >= 0.0 && c.delta_p < 1.0, "contrast.delta_p", "must be in [0, 1)");
  check(c.r_l >= 1, "contrast.r_l", "must be at least 1");
  check(c.r_l < c.r_h, "contrast.r_l", "must be below contrast.r_h (" + std::to_string(c.r_h) + ")");
  check(c.num_anchors >= 1, "contrast.num_anchors", "must be at least 1");
  check(c.num_negatives >= 1, "contrast.num_negatives", "must be at least 1");
  check(c.proto_momentum >= 0.0 && c.proto_momentum <= 1.0, "proto.momentum", "must be in [0, 1]");
  check(c.bank_capacity_fg >= 1, "bank.capacity_fg", "must be at least 1");
  check(c.bank_capacity_bg >= 1, "bank.capacity_bg", "must be at least 1");
  check(c.beta > 0.0 && c.beta < 1.0, "cam.beta", "must be in (0, 1)");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::map<std::string, std::size_t, std::less<>> key_lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what(), std::string(key));
    }
    key_lines[std::string(key)] = line_no;
  }
  try {
    validate_config(config);
  } catch (const ConfigError& e) {
    const auto it = key_lines.find(e.key());
    if (it == key_lines.end()) throw;
    throw ConfigError("line " + std::to_string(it->second) + ": " + e.what(), e.key());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is.is_open()) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : kEntries) {
    out += std::string(e.key) + " = " + format_value(config, e.field) + "\n";
  }
  return out;
}

}  // namespace u2pl
