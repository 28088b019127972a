#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "u2pl/benchmark.hpp"
#include "u2pl/checkpoint.hpp"
#include "u2pl/config.hpp"
#include "u2pl/datagen.hpp"
#include "u2pl/metrics.hpp"
#include "u2pl/pseudo.hpp"
#include "u2pl/trainer.hpp"

namespace {

using nlohmann::ordered_json;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> regime;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
  bool print_config = false;
};

u2pl::RunConfig resolve_config(const CommonOptions& o) {
  u2pl::RunConfig c = o.config_path.empty() ? u2pl::parse_config("") : u2pl::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.regime) {
    try {
      c.regime = u2pl::parse_regime(*o.regime);
    } catch (const u2pl::ContractError& e) {
      throw u2pl::ConfigError(e.what(), "regime");
    }
  }
  u2pl::validate_config(c);
  return c;
}

void add_config_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value lines)");
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--regime", o.regime, "Override the regime")->check(CLI::IsMember({"ss", "da", "ws"}));
  cmd->add_flag("--print-config", o.print_config, "Print the resolved config and exit");
}

u2pl::ModelParams load_student(const std::string& path, const u2pl::RunConfig& config, int classes) {
  u2pl::TrainState state = u2pl::init_state(config, classes);
  u2pl::restore_state(state, u2pl::read_checkpoint(path));
  return state.student;
}

int gen_data(const CommonOptions& o, const u2pl::DatasetSpec& base) {
  u2pl::DatasetSpec spec = base;
  if (o.seed) spec.seed = *o.seed;
  if (o.regime) spec.regime = u2pl::parse_regime(*o.regime);
  const u2pl::Dataset ds = u2pl::generate_dataset(spec);
  u2pl::write_dataset(o.out_dir, ds);
  std::cout << "wrote " << ds.scenes.size() << " scenes (" << u2pl::to_string(spec.regime) << ") to "
            << o.out_dir << "\n";
  return 0;
}

int train(const CommonOptions& o, const std::string& resume, std::optional<int> stop_after) {
  const u2pl::RunConfig config = resolve_config(o);
  if (o.print_config) {
    std::cout << u2pl::render_config(config);
    return 0;
  }
  const u2pl::Dataset ds = u2pl::read_dataset(o.data_dir);
  u2pl::RunOptions options;
  options.out_dir = o.out_dir;
  options.quiet = false;
  options.stop_after_epoch = stop_after;
  if (!resume.empty()) options.resume_from = resume;
  const auto result = u2pl::run(config, ds, options);
  ordered_json j;
  j["final_miou"] = result.final_miou;
  j["best_miou"] = result.best_miou;
  std::cout << j.dump() << "\n";
  return 0;
}

int eval(const CommonOptions& o) {
  const u2pl::RunConfig config = resolve_config(o);
  const u2pl::Dataset ds = u2pl::read_dataset(o.data_dir);
  const auto params = load_student(o.checkpoint, config, ds.num_classes());
  u2pl::ConfusionMatrix cm(static_cast<std::size_t>(ds.num_classes()));
  for (int id : ds.manifest.val_ids) {
    cm.add(u2pl::argmax_labels(u2pl::forward(params, ds.scene(id).image).logits), ds.scene(id).label);
  }
  const auto r = u2pl::miou(cm);
  ordered_json j;
  j["miou"] = r.miou;
  ordered_json per_class = ordered_json::array();
  for (double v : r.per_class_iou) per_class.push_back(std::isnan(v) ? ordered_json(nullptr) : ordered_json(v));
  j["per_class_iou"] = per_class;
  std::cout << j.dump() << "\n";
  return 0;
}

int inspect_reliability(const CommonOptions& o, int epoch) {
  const u2pl::RunConfig config = resolve_config(o);
  const u2pl::Dataset ds = u2pl::read_dataset(o.data_dir);
  const int classes = ds.num_classes();
  u2pl::TrainState state = u2pl::init_state(config, classes);
  if (!o.checkpoint.empty()) u2pl::restore_state(state, u2pl::read_checkpoint(o.checkpoint));
  const auto& ids = ds.manifest.unlabeled_ids.empty() ? ds.manifest.val_ids : ds.manifest.unlabeled_ids;

  std::vector<u2pl::FloatTensor> probs;
  for (int id : ids) probs.push_back(u2pl::forward(state.teacher, ds.scene(id).image).prob);
  u2pl::ProbMap all({probs.size() * probs[0].dim(0) * probs[0].dim(1), static_cast<std::size_t>(classes)});
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::copy(probs[i].data.begin(), probs[i].data.end(), all.data.begin() + i * probs[i].size());
  }
  const double alpha = u2pl::dpa_alpha(config.alpha0, epoch, config.total_epochs);
  const double gamma = u2pl::compute_gamma(u2pl::entropy_map(all).data, alpha);
  const auto stats = u2pl::reliability_stats(all, gamma);
  ordered_json j;
  j["epoch"] = epoch;
  j["alpha_t"] = alpha;
  j["gamma_t"] = std::isfinite(gamma) ? ordered_json(gamma) : ordered_json(nullptr);
  j["reliable"] = stats.reliable;
  j["unreliable"] = stats.unreliable;
  j["unreliable_fraction"] = stats.unreliable_fraction;
  std::cout << j.dump() << "\n";
  return 0;
}

int ablate_negatives(const CommonOptions& o) {
  const u2pl::RunConfig config = resolve_config(o);
  if (o.print_config) {
    std::cout << u2pl::render_config(config);
    return 0;
  }
  const u2pl::Dataset ds = u2pl::read_dataset(o.data_dir);
  const auto arms = u2pl::reliability_ablation(config, ds, o.out_dir);
  ordered_json j;
  for (const auto& a : arms) j[a.name] = a.final_miou;
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"u2pl: semi-supervised, domain-adaptive and weakly supervised segmentation with unreliable "
               "pseudo-labels"};
  app.require_subcommand(1);

  CommonOptions o;
  u2pl::DatasetSpec data_spec;
  std::string resume;
  std::optional<int> stop_after;
  int epoch = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--out", o.out_dir, "Output directory")->required();
  gen->add_option("--seed", o.seed, "Dataset seed");
  gen->add_option("--regime", o.regime, "ss|da|ws")->check(CLI::IsMember({"ss", "da", "ws"}));
  gen->add_option("--n-train", data_spec.n_train, "Training scenes")->check(CLI::PositiveNumber);
  gen->add_option("--n-val", data_spec.n_val, "Validation scenes")->check(CLI::PositiveNumber);
  gen->add_option("--labeled-fraction", data_spec.labeled_fraction, "Labeled share of training scenes")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--noise-std", data_spec.scene.noise_std, "Pixel noise standard deviation")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--color-jitter", data_spec.scene.color_jitter, "Per-scene palette jitter")
      ->check(CLI::NonNegativeNumber);

  auto* tr = app.add_subcommand("train", "Train a model");
  add_config_flags(tr, o);
  tr->add_option("--data", o.data_dir, "Dataset directory");
  tr->add_option("--out", o.out_dir, "Run directory");
  tr->add_option("--resume", resume, "Resume from a checkpoint");
  tr->add_option("--stop-after-epoch", stop_after, "Stop once this many epochs are complete");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation scenes");
  add_config_flags(ev, o);
  ev->add_option("--data", o.data_dir, "Dataset directory")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();

  auto* insp = app.add_subcommand("inspect-reliability", "Reliable/unreliable pixel counts of the teacher");
  add_config_flags(insp, o);
  insp->add_option("--data", o.data_dir, "Dataset directory")->required();
  insp->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: initialised model)");
  insp->add_option("--epoch", epoch, "Epoch used for the alpha schedule")->check(CLI::NonNegativeNumber);

  auto* abl = app.add_subcommand("ablate-negatives", "Unreliable vs reliable negatives vs supervised-only");
  add_config_flags(abl, o);
  abl->add_option("--data", o.data_dir, "Dataset directory");
  abl->add_option("--out", o.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (gen->parsed()) return gen_data(o, data_spec);
    if (tr->parsed() || abl->parsed()) {
      if (!o.print_config && (o.data_dir.empty() || o.out_dir.empty())) {
        std::cerr << "error: --data and --out are required\n";
        return kExitValidation;
      }
      return tr->parsed() ? train(o, resume, stop_after) : ablate_negatives(o);
    }
    if (ev->parsed()) return eval(o);
    if (insp->parsed()) return inspect_reliability(o, epoch);
  } catch (const u2pl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
