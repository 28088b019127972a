#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "u2pl/checkpoint.hpp"
#include "u2pl/config.hpp"
#include "u2pl/datagen.hpp"
#include "u2pl/model.hpp"
#include "u2pl/pairs.hpp"
#include "u2pl/proto.hpp"

namespace u2pl {

/// lr_base · (1 − iter / total_iter)^0.9
double poly_lr(double lr_base, long iter, long total_iter);

/// Teacher momentum for the step after `iter` completed steps:
/// min(m, 1 − 1/(k + 1)) with k the steps since warm start ended, so the
/// teacher starts as a copy of the warmed-up student and settles at m.
double ema_momentum_at(double m, long iter, long warm_iters);

/// Everything that evolves during training. The teacher only changes
/// through ema_update and the banks only through push/evict.
struct TrainState {
  ModelParams student;
  ModelParams teacher;
  ModelParams velocity;  // SGD momentum buffers
  PrototypeBank protos;
  MemoryBank bank;
  int epoch = 0;   // completed epochs
  long iter = 0;   // completed optimizer steps
  double best_miou = -1.0;
  Rng data_rng;
  Rng pair_rng;
};

TrainState init_state(const RunConfig& config, int num_classes);

/// Images of one stream. `labels` is empty for unlabeled and weakly
/// labeled batches; `image_labels` is only filled for weak batches.
struct Batch {
  std::vector<FloatTensor> images;
  std::vector<LabelMap> labels;
  std::vector<ByteTensor> image_labels;

  std::size_t size() const { return images.size(); }
};

/// One anchor/positive/negatives group of the contrastive loss. Anchor
/// indices address pixels of the concatenated batch (image · H·W + pixel).
struct ContrastTerm {
  int cls = 0;
  std::vector<std::size_t> anchors;
  std::vector<double> positive;
  FloatTensor negatives;  // (N, D)
};

/// The step objective with every non-differentiable choice (targets,
/// sampled anchors, keys) frozen, so it is a plain function of the student
/// parameters.
struct ObjectivePlan {
  enum class Kind { pixel, weak };

  Kind kind = Kind::pixel;
  std::vector<FloatTensor> images;
  /// Pixel: ground truth for images[0, n). Unused for weak batches.
  std::vector<LabelMap> sup_targets;
  /// Weak: image-level labels of every image.
  std::vector<ByteTensor> image_labels;
  /// Targets of the unsupervised term for images[unsup_offset, …).
  std::vector<LabelMap> unsup_targets;
  std::size_t unsup_offset = 0;
  bool unsup_symmetric = true;  // SCE for pixel batches, plain CE for weak

  double lambda_u = 0.0;
  double lambda_c = 0.0;
  double xi1 = 1.0;
  double xi2 = 0.1;
  double eps_floor = 1e-4;
  double tau = 0.5;
  std::vector<ContrastTerm> contrast;
};

struct ObjectiveValue {
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_c = 0.0;
  double total = 0.0;
  ModelParams grads;
};

ObjectiveValue evaluate_objective(const ModelParams& params, const ObjectivePlan& plan,
                                  const std::vector<ModelOutputs>* cached = nullptr);

struct StepMetrics {
  int epoch = 0;
  long iter = 0;
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_c = 0.0;
  double lambda_u = 0.0;
  double gamma_t = 0.0;
  double alpha_t = 0.0;
  double lr = 0.0;
  std::vector<std::size_t> bank_sizes;
  int contrast_classes = 0;
};

/// What was known about a key when it was pushed; lets tests re-check the
/// qualification predicate for anything later sampled from the bank.
struct KeyProvenance {
  int cls = 0;
  bool labeled = false;
  int label = kIgnore;
  std::vector<double> prob;  // distribution used for the rank
  double entropy = 0.0;
  double gamma = 0.0;
  std::vector<std::uint8_t> image_label;  // weak batches
  double cam_value = 0.0;                 // weak batches
};

struct StepContext {
  int epoch = 0;
  long total_iters = 1;
  /// Optimizer steps in the warm-start epochs; the teacher's EMA ramp
  /// restarts when they end.
  long warm_iters = 0;
  /// When set, bank pushes are tagged and recorded here.
  std::map<std::uint64_t, KeyProvenance>* provenance = nullptr;
  /// When set, a non-finite loss dumps the step's tensors here.
  std::optional<std::filesystem::path> dump_dir;
  /// Filled with the frozen objective of the step (for inspection).
  ObjectivePlan* plan_out = nullptr;
};

/// Raised when the step objective is not finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

StepMetrics train_step_ss(TrainState& state, const Batch& labeled, const Batch& unlabeled,
                          const RunConfig& config, const StepContext& ctx);

/// Supervised step on labeled data only (baselines: supervised-only and
/// source-only).
StepMetrics train_step_supervised(TrainState& state, const Batch& labeled, const RunConfig& config,
                                  const StepContext& ctx);

StepMetrics train_step_ws(TrainState& state, const Batch& batch, const RunConfig& config,
                          const StepContext& ctx);

/// Mean IoU of the model's argmax predictions over the given scenes.
double evaluate_miou(const ModelParams& params, const Dataset& ds, const std::vector<int>& ids);

NamedTensors state_tensors(const TrainState& state);
void restore_state(TrainState& state, const NamedTensors& tensors);

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  /// Stop (after checkpointing) once this many epochs are complete.
  std::optional<int> stop_after_epoch;
  bool quiet = true;
};

struct RunResult {
  double final_miou = 0.0;
  double best_miou = 0.0;
  std::vector<double> epoch_miou;
};

/// Full training loop: per-epoch validation, JSON-lines metrics,
/// last/best/final checkpoints and a resolved_config.txt.
RunResult run(const RunConfig& config, const Dataset& ds, const RunOptions& options);

/// Iterations per epoch: one pass over the larger training stream.
long iterations_per_epoch(const RunConfig& config, const SplitManifest& manifest);

}  // namespace u2pl
