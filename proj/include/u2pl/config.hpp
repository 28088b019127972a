#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "u2pl/datagen.hpp"

namespace u2pl {

/// Where unlabeled negative keys come from: the unreliable tail (H > gamma)
/// or, for the ablation, the reliable pixels (H < gamma).
enum class NegativeSource { unreliable, reliable };

std::string_view to_string(NegativeSource s);

/// Every knob of a training run. Defaults are the method's published
/// hyper-parameters where one exists and desk-scale choices elsewhere.
struct RunConfig {
  Regime regime = Regime::ss;
  std::uint64_t seed = 0;

  // train
  int batch_size = 4;
  int total_epochs = 40;
  int warm_start_epochs = 2;
  bool use_unlabeled = true;  // false: supervised-only / source-only baseline

  // optim
  double lr_base = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  // model
  int features = 16;
  int repr_dim = 16;
  double ema_momentum = 0.999;

  // pseudo
  double alpha0 = 0.2;
  double eta = 1.0;
  bool denoise = true;

  // loss
  double xi1 = 1.0;
  double xi2 = 0.1;
  double eps_floor = 1e-4;

  // contrast
  double lambda_c = 0.1;
  double tau = 0.5;
  double delta_p = 0.3;
  int r_l = 3;
  int r_h = 20;
  int num_anchors = 256;   // M
  int num_negatives = 50;  // N
  NegativeSource negative_source = NegativeSource::unreliable;

  // proto
  double proto_momentum = 0.999;

  // bank
  int bank_capacity_fg = 512;
  int bank_capacity_bg = 1024;

  // cam
  double beta = 0.7;

  bool operator==(const RunConfig&) const = default;
};

/// Raised for malformed or invalid configuration text; carries the key and
/// line where the problem was found.
class ConfigError : public ContractError {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : ContractError(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Parses `key = value` lines (`#` comments, dotted keys) on top of the
/// defaults and validates the result.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Canonical text form; parse_config(render_config(c)) == c.
std::string render_config(const RunConfig& config);

/// Checks the invariants that do not depend on the dataset.
void validate_config(const RunConfig& config);

/// Sets one field from its textual value (used by the parser and by CLI
/// overrides). Unknown keys and type errors throw ConfigError.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

}  // namespace u2pl
