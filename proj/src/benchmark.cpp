#include "u2pl/benchmark.hpp"

#include "u2pl/metrics.hpp"
#include "u2pl/trainer.hpp"

namespace u2pl {

DatasetSpec benchmark_dataset(Regime regime, std::uint64_t seed) {
  DatasetSpec spec;
  spec.regime = regime;
  spec.seed = seed;
  return spec;
}

RunConfig benchmark_config(Regime regime, std::uint64_t seed) {
  RunConfig c;
  c.regime = regime;
  c.seed = seed;
  // Six labeled scenes give few optimizer steps per epoch; single-image
  // batches and a higher base rate let the warm start converge.
  c.batch_size = 1;
  c.lr_base = 0.05;
  c.warm_start_epochs = 10;
  c.ema_momentum = 0.99;
  c.proto_momentum = 0.9;
  // Unscaled distances between unnormalised representations make the
  // denoising weights near one-hot, so they override the teacher.
  c.denoise = false;
  return c;
}

namespace {

ArmResult train_arm(const std::string& name, const RunConfig& config, const Dataset& ds,
                    const std::filesystem::path& out_dir) {
  RunOptions options;
  options.out_dir = out_dir / name;
  return {name, run(config, ds, options).final_miou};
}

}  // namespace

std::vector<ArmResult> reliability_ablation(const RunConfig& base, const Dataset& ds,
                                            const std::filesystem::path& out_dir) {
  RunConfig unreliable = base;
  unreliable.use_unlabeled = true;
  unreliable.negative_source = NegativeSource::unreliable;
  RunConfig reliable = unreliable;
  reliable.negative_source = NegativeSource::reliable;
  RunConfig supervised = base;
  supervised.use_unlabeled = false;
  return {train_arm("unreliable", unreliable, ds, out_dir), train_arm("reliable", reliable, ds, out_dir),
          train_arm("supervised", supervised, ds, out_dir)};
}

std::vector<ArmResult> domain_adaptation_comparison(const RunConfig& base, const Dataset& ds,
                                                    const std::filesystem::path& out_dir) {
  RunConfig full = base;
  full.use_unlabeled = true;
  RunConfig source_only = base;
  source_only.use_unlabeled = false;
  return {train_arm("u2pl", full, ds, out_dir), train_arm("source_only", source_only, ds, out_dir)};
}

double all_background_miou(const Dataset& ds, const std::vector<int>& ids) {
  ConfusionMatrix cm(static_cast<std::size_t>(ds.num_classes()));
  for (int id : ids) {
    const LabelMap& gt = ds.scene(id).label;
    cm.add(LabelMap(gt.dims), gt);
  }
  return miou(cm).miou;
}

}  // namespace u2pl
