#include "u2pl/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "json.hpp"

#include "u2pl/cam.hpp"
#include "u2pl/losses.hpp"
#include "u2pl/metrics.hpp"
#include "u2pl/pseudo.hpp"

namespace u2pl {
namespace {

// Below this norm a representation is treated as directionless.
constexpr double kMinNorm = 1e-12;

using ordered_json = nlohmann::ordered_json;

constexpr double kPolyPower = 0.9;

/// Concatenates same-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "stack: nothing to stack");
  std::vector<std::size_t> dims{parts.size()};
  dims.insert(dims.end(), parts[0].dims.begin(), parts[0].dims.end());
  Tensor<T> out(dims);
  const std::size_t block = parts[0].size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    require(parts[i].dims == parts[0].dims, "stack: shape mismatch");
    std::copy(parts[i].data.begin(), parts[i].data.end(), out.data.begin() + i * block);
  }
  return out;
}

std::vector<ModelOutputs> forward_all(const ModelParams& params, const std::vector<FloatTensor>& images) {
  std::vector<ModelOutputs> outs(images.size());
  parallel_for(images.size(), [&](std::size_t i) { outs[i] = forward(params, images[i]); });
  return outs;
}

// Stacks the (H·W, C) logits of images [first, first + count) into one
// (count·H·W, C) tensor.
FloatTensor stacked_logits(const std::vector<ModelOutputs>& outs, std::size_t first, std::size_t count) {
  const std::size_t px = outs[first].logits.dim(0) * outs[first].logits.dim(1);
  const std::size_t c = outs[first].logits.dim(2);
  FloatTensor s({count * px, c});
  for (std::size_t i = 0; i < count; ++i) {
    const auto& src = outs[first + i].logits.data;
    std::copy(src.begin(), src.end(), s.data.begin() + i * px * c);
  }
  return s;
}

void scatter_logit_grads(std::vector<UpstreamGrads>& up, const FloatTensor& grad, std::size_t first,
                         double scale) {
  const std::size_t block = up[first].logits.size();
  for (std::size_t i = 0; i * block < grad.size(); ++i) {
    auto& dst = up[first + i].logits.data;
    for (std::size_t k = 0; k < block; ++k) dst[k] += scale * grad[i * block + k];
  }
}

void apply_sgd(TrainState& state, const ModelParams& grads, double lr, const RunConfig& config) {
  auto params = state.student.named();
  auto vel = state.velocity.named();
  auto g = grads.named();
  for (std::size_t t = 0; t < params.size(); ++t) {
    FloatTensor& p = *params[t].second;
    FloatTensor& v = *vel[t].second;
    const FloatTensor& d = *g[t].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = config.momentum * v[i] + d[i] + config.weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  }
}

void dump_step(const std::filesystem::path& dir, const TrainState& state, const ObjectivePlan& plan) {
  std::filesystem::create_directories(dir);
  NamedTensors t;
  for (const auto& [name, tensor] : state.student.named()) t.emplace_back("student." + name, *tensor);
  for (std::size_t i = 0; i < plan.images.size(); ++i) t.emplace_back("image." + std::to_string(i), plan.images[i]);
  for (std::size_t i = 0; i < plan.unsup_targets.size(); ++i)
    t.emplace_back("unsup_target." + std::to_string(i), plan.unsup_targets[i]);
  write_checkpoint(dir / ("nonfinite_iter" + std::to_string(state.iter) + ".ckpt"), t);
}

[[noreturn]] void abort_step(const TrainState& state, const ObjectivePlan& plan, const StepContext& ctx,
                             const std::string& detail) {
  if (ctx.dump_dir) dump_step(*ctx.dump_dir, state, plan);
  throw NonFiniteLoss("non-finite objective at iter " + std::to_string(state.iter) + ": " + detail);
}

// Optimizer update shared by every regime; aborts on a non-finite objective.
ObjectiveValue optimize(TrainState& state, const ObjectivePlan& plan, const RunConfig& config,
                        const StepContext& ctx, StepMetrics& m,
                        const std::vector<ModelOutputs>* cached = nullptr) {
  ObjectiveValue v;
  try {
    v = evaluate_objective(state.student, plan, cached);
  } catch (const ContractError& e) {
    // Non-finite activations surface as contract violations inside softmax.
    abort_step(state, plan, ctx, e.what());
  }
  if (!std::isfinite(v.total)) {
    abort_step(state, plan, ctx,
               "loss_s=" + std::to_string(v.loss_s) + " loss_u=" + std::to_string(v.loss_u) +
                   " loss_c=" + std::to_string(v.loss_c));
  }
  m.lr = poly_lr(config.lr_base, state.iter, ctx.total_iters);
  apply_sgd(state, v.grads, m.lr, config);
  m.loss_s = v.loss_s;
  m.loss_u = v.loss_u;
  m.loss_c = v.loss_c;
  return v;
}

struct Candidate {
  std::size_t pixel;  // index into the concatenated batch
  KeyProvenance* record = nullptr;
};

// Shuffles each class's qualified keys and pushes them; only the tail that
// survives FIFO eviction is materialised.
void push_negatives(TrainState& state, std::vector<std::vector<std::size_t>>& per_class,
                    const std::function<std::span<const double>(std::size_t)>& key_of,
                    const std::function<KeyProvenance(std::size_t, int)>& describe,
                    const StepContext& ctx) {
  const std::size_t d = state.bank.dim();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& cand = per_class[c];
    std::erase_if(cand, [&](std::size_t g) { return !(l2_norm(key_of(g)) > kMinNorm); });
    state.pair_rng.shuffle(cand.begin(), cand.end());
    const std::size_t cap = state.bank.capacity(c);
    const std::size_t first = cand.size() > cap ? cand.size() - cap : 0;
    const std::size_t n = cand.size() - first;
    if (n == 0) continue;
    FloatTensor keys({n, d});
    std::vector<std::uint64_t> tags;
    for (std::size_t k = 0; k < n; ++k) {
      const auto key = key_of(cand[first + k]);
      std::copy(key.begin(), key.end(), keys.row(k).begin());
      if (ctx.provenance != nullptr) {
        const std::uint64_t tag = ctx.provenance->size() + 1;
        (*ctx.provenance)[tag] = describe(cand[first + k], static_cast<int>(c));
        tags.push_back(tag);
      }
    }
    state.bank.push(c, keys, tags);
  }
}

// Draws M anchors and N bank negatives for every class that has anchors, an
// initialised prototype and a non-empty bank.
std::vector<ContrastTerm> sample_contrast(TrainState& state,
                                          const std::vector<std::vector<std::size_t>>& anchors,
                                          const RunConfig& config) {
  std::vector<ContrastTerm> terms;
  const std::size_t d = state.bank.dim();
  for (std::size_t c = 0; c < anchors.size(); ++c) {
    if (anchors[c].empty() || !state.protos.initialized[c] || state.bank.size(c) == 0) continue;
    ContrastTerm t;
    t.cls = static_cast<int>(c);
    t.anchors = sample_anchors(anchors[c], static_cast<std::size_t>(config.num_anchors), state.pair_rng);
    t.positive = state.protos.protos[c];
    const auto neg = state.bank.sample(c, static_cast<std::size_t>(config.num_negatives), state.pair_rng);
    t.negatives = FloatTensor({neg.size(), d});
    for (std::size_t j = 0; j < neg.size(); ++j) {
      std::copy(neg[j].key.begin(), neg[j].key.end(), t.negatives.row(j).begin());
    }
    terms.push_back(std::move(t));
  }
  return terms;
}

// Warm start trains on the supervised term only; pseudo-labels, banks and
// prototypes keep updating underneath.
bool warm_start(const RunConfig& config, int epoch) { return epoch < config.warm_start_epochs; }

bool contrast_active(const RunConfig& config, int epoch) {
  return config.lambda_c > 0.0 && !warm_start(config, epoch);
}

}  // namespace

double poly_lr(double lr_base, long iter, long total_iter) {
  require(iter >= 0 && total_iter >= 0, "poly_lr: negative iteration");
  require(iter <= total_iter, "poly_lr: iter beyond total_iter");
  if (total_iter == 0) return lr_base;
  if (iter == total_iter) return 0.0;
  return lr_base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iter), kPolyPower);
}

double ema_momentum_at(double m, long iter, long warm_iters) {
  const long k = std::max(0L, iter - warm_iters);
  return std::min(m, 1.0 - 1.0 / static_cast<double>(k + 1));
}

TrainState init_state(const RunConfig& config, int num_classes) {
  const ModelSpec spec{config.features, num_classes, config.repr_dim};
  TrainState s;
  s.student = init_params(config.seed, spec);
  s.teacher = s.student;
  s.velocity = zero_params(spec);
  s.protos = PrototypeBank(static_cast<std::size_t>(num_classes), static_cast<std::size_t>(config.repr_dim));
  std::vector<std::size_t> caps(static_cast<std::size_t>(num_classes),
                                static_cast<std::size_t>(config.bank_capacity_fg));
  caps[0] = static_cast<std::size_t>(config.bank_capacity_bg);
  s.bank = MemoryBank(std::move(caps), static_cast<std::size_t>(config.repr_dim));
  s.data_rng = Rng(config.seed * 0x9E3779B97F4A7C15ull + 1);
  s.pair_rng = Rng(config.seed * 0xC2B2AE3D27D4EB4Full + 2);
  return s;
}

ObjectiveValue evaluate_objective(const ModelParams& params, const ObjectivePlan& plan,
                                  const std::vector<ModelOutputs>* cached) {
  const std::size_t n = plan.images.size();
  require(n > 0, "evaluate_objective: empty batch");
  std::vector<ModelOutputs> own;
  if (cached == nullptr) own = forward_all(params, plan.images);
  const std::vector<ModelOutputs>& outs = cached != nullptr ? *cached : own;
  require(outs.size() == n, "evaluate_objective: cached outputs do not match the batch");

  std::vector<UpstreamGrads> up(n);
  for (std::size_t i = 0; i < n; ++i) {
    up[i].logits = FloatTensor(outs[i].logits.dims);
    up[i].repr = FloatTensor(outs[i].repr.dims);
  }

  ObjectiveValue v;
  if (plan.kind == ObjectivePlan::Kind::pixel) {
    if (!plan.sup_targets.empty()) {
      const auto ce = cross_entropy(stacked_logits(outs, 0, plan.sup_targets.size()), stack(plan.sup_targets));
      v.loss_s = ce.value;
      scatter_logit_grads(up, ce.grad, 0, 1.0);
    }
  } else {
    require(plan.image_labels.size() == n, "evaluate_objective: one image label per image");
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto ml = multilabel_classification(outs[i].cls_logits, plan.image_labels[i].data);
      v.loss_s += inv * ml.value;
      for (double& g : ml.grad.data) g *= inv;
      up[i].cls_logits = std::move(ml.grad);
    }
  }

  if (plan.lambda_u > 0.0 && !plan.unsup_targets.empty()) {
    const auto logits = stacked_logits(outs, plan.unsup_offset, plan.unsup_targets.size());
    const auto target = stack(plan.unsup_targets);
    const auto lu = plan.unsup_symmetric
                        ? symmetric_cross_entropy(logits, target, plan.xi1, plan.xi2, plan.eps_floor)
                        : cross_entropy(logits, target);
    v.loss_u = lu.value;
    scatter_logit_grads(up, lu.grad, plan.unsup_offset, plan.lambda_u);
  }

  if (plan.lambda_c > 0.0 && !plan.contrast.empty()) {
    const std::size_t px = outs[0].repr.dim(0) * outs[0].repr.dim(1);
    const std::size_t d = outs[0].repr.dim(2);
    // A zero representation has no direction; such anchors drop out of the term.
    std::vector<std::vector<std::size_t>> kept(plan.contrast.size());
    std::vector<LossValue> parts(plan.contrast.size());
    std::size_t active = 0;
    for (std::size_t t = 0; t < plan.contrast.size(); ++t) {
      const auto& term = plan.contrast[t];
      if (term.negatives.empty() || !(l2_norm(term.positive) > kMinNorm)) continue;
      for (std::size_t g : term.anchors) {
        if (l2_norm(outs[g / px].repr.row(g % px)) > kMinNorm) kept[t].push_back(g);
      }
      if (kept[t].empty()) continue;
      FloatTensor anchors({kept[t].size(), d});
      for (std::size_t a = 0; a < kept[t].size(); ++a) {
        const auto src = outs[kept[t][a] / px].repr.row(kept[t][a] % px);
        std::copy(src.begin(), src.end(), anchors.row(a).begin());
      }
      parts[t] = infonce(anchors, term.positive, term.negatives, plan.tau);
      ++active;
    }
    if (active > 0) {
      const double inv = 1.0 / static_cast<double>(active);
      for (std::size_t t = 0; t < parts.size(); ++t) {
        if (kept[t].empty()) continue;
        v.loss_c += inv * parts[t].value;
        for (std::size_t a = 0; a < kept[t].size(); ++a) {
          auto dst = up[kept[t][a] / px].repr.row(kept[t][a] % px);
          const auto g = parts[t].grad.row(a);
          for (std::size_t k = 0; k < d; ++k) dst[k] += plan.lambda_c * inv * g[k];
        }
      }
    }
  }

  v.total = total_objective(v.loss_s, plan.lambda_u > 0.0 ? v.loss_u : 0.0, v.loss_c, plan.lambda_u,
                            plan.lambda_c);

  std::vector<ModelParams> per_image(n);
  parallel_for(n, [&](std::size_t i) { per_image[i] = backward(params, plan.images[i], outs[i], up[i]); });
  v.grads = zero_params(params.spec);
  for (const auto& g : per_image) add_scaled(v.grads, g, 1.0);
  return v;
}

StepMetrics train_step_supervised(TrainState& state, const Batch& labeled, const RunConfig& config,
                                  const StepContext& ctx) {
  require(labeled.size() > 0 && labeled.labels.size() == labeled.size(),
          "train_step_supervised: labeled batch needs images and labels");
  StepMetrics m;
  m.epoch = ctx.epoch;
  m.alpha_t = 0.0;
  m.gamma_t = std::numeric_limits<double>::quiet_NaN();

  ObjectivePlan plan;
  plan.images = labeled.images;
  plan.sup_targets = labeled.labels;
  optimize(state, plan, config, ctx, m);
  if (ctx.plan_out != nullptr) *ctx.plan_out = plan;
  ++state.iter;
  m.iter = state.iter;
  m.bank_sizes = state.bank.sizes();
  return m;
}

StepMetrics train_step_ss(TrainState& state, const Batch& labeled, const Batch& unlabeled,
                          const RunConfig& config, const StepContext& ctx) {
  require(labeled.size() > 0 && labeled.labels.size() == labeled.size(),
          "train_step_ss: labeled batch needs images and labels");
  require(unlabeled.size() > 0, "train_step_ss: empty unlabeled batch");
  const std::size_t bl = labeled.size();
  const std::size_t bu = unlabeled.size();
  const auto num_classes = static_cast<std::size_t>(state.student.spec.classes);
  const int r_h = std::min(config.r_h, static_cast<int>(num_classes));

  StepMetrics m;
  m.epoch = ctx.epoch;

  // (1) Teacher predictions for both streams.
  const auto teacher_l = forward_all(state.teacher, labeled.images);
  const auto teacher_u = forward_all(state.teacher, unlabeled.images);
  std::vector<FloatTensor> tmp;
  for (const auto& o : teacher_l) tmp.push_back(o.prob);
  const ProbMap prob_l = stack(tmp);
  tmp.clear();
  for (const auto& o : teacher_u) tmp.push_back(o.prob);
  const ProbMap prob_u = stack(tmp);
  tmp.clear();
  for (const auto& o : teacher_u) tmp.push_back(o.repr);
  const FloatTensor repr_u = stack(tmp);
  tmp.clear();
  for (const auto& o : teacher_l) tmp.push_back(o.repr);
  const FloatTensor repr_l = stack(tmp);
  const LabelMap labels_l = stack(labeled.labels);
  const std::size_t px = labels_l.size() / bl;

  // (2) Prototypical denoising once every prototype exists.
  ProbMap denoised = prob_u;
  if (config.denoise && state.protos.all_initialized()) {
    denoised = denoise_predictions(prob_u, denoise_weight_map(repr_u, state.protos));
  }

  // (3)-(4) Entropy partition, pseudo-labels and the adaptive weight.
  const FloatTensor ent = entropy_map(denoised);
  m.alpha_t = config.total_epochs > 0 ? dpa_alpha(config.alpha0, ctx.epoch, config.total_epochs) : 0.0;
  m.gamma_t = compute_gamma(ent.data, m.alpha_t);
  const LabelMap pseudo = assign_pseudo_labels(denoised, m.gamma_t);
  m.lambda_u = warm_start(config, ctx.epoch) ? 0.0 : adaptive_weight(pseudo, config.eta);

  // (7a) Negative keys from teacher representations.
  std::vector<std::vector<std::size_t>> negatives(num_classes);
  std::vector<int> rank;
  for (std::size_t p = 0; p < bl * px; ++p) {
    rank = category_order(prob_l.row(p));
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (qualify_negative_labeled_rank(labels_l[p], rank[c], static_cast<int>(c), config.r_l))
        negatives[c].push_back(p);
    }
  }
  for (std::size_t p = 0; p < bu * px; ++p) {
    rank = category_order(denoised.row(p));
    for (std::size_t c = 0; c < num_classes; ++c) {
      const bool ok = config.negative_source == NegativeSource::unreliable
                          ? qualify_negative_unlabeled_rank(ent[p], m.gamma_t, rank[c], config.r_l, r_h)
                          : qualify_negative_unlabeled_reliable_rank(ent[p], m.gamma_t, rank[c],
                                                                     config.r_l, r_h);
      if (ok) negatives[c].push_back(bl * px + p);
    }
  }
  push_negatives(
      state, negatives,
      [&](std::size_t g) { return g < bl * px ? repr_l.row(g) : repr_u.row(g - bl * px); },
      [&](std::size_t g, int c) {
        KeyProvenance k;
        k.cls = c;
        k.labeled = g < bl * px;
        k.gamma = m.gamma_t;
        if (k.labeled) {
          k.label = labels_l[g];
          const auto row = prob_l.row(g);
          k.prob.assign(row.begin(), row.end());
        } else {
          const auto row = denoised.row(g - bl * px);
          k.prob.assign(row.begin(), row.end());
          k.entropy = ent[g - bl * px];
        }
        return k;
      },
      ctx);
  m.bank_sizes = state.bank.sizes();

  // (5)-(7b) Frozen step objective.
  ObjectivePlan plan;
  plan.images = labeled.images;
  plan.images.insert(plan.images.end(), unlabeled.images.begin(), unlabeled.images.end());
  plan.sup_targets = labeled.labels;
  plan.unsup_offset = bl;
  plan.unsup_symmetric = true;
  for (std::size_t i = 0; i < bu; ++i) {
    LabelMap t(labeled.labels[0].dims);
    std::copy(pseudo.data.begin() + i * px, pseudo.data.begin() + (i + 1) * px, t.data.begin());
    plan.unsup_targets.push_back(std::move(t));
  }
  plan.lambda_u = m.lambda_u;
  plan.xi1 = config.xi1;
  plan.xi2 = config.xi2;
  plan.eps_floor = config.eps_floor;
  plan.tau = config.tau;

  if (contrast_active(config, ctx.epoch)) {
    auto anchors = collect_anchors_ss(labels_l, prob_l, config.delta_p, true);
    const auto anchors_u = collect_anchors_ss(pseudo, denoised, config.delta_p, false, &ent, m.gamma_t);
    for (std::size_t c = 0; c < num_classes; ++c) {
      for (std::size_t p : anchors_u[c]) anchors[c].push_back(bl * px + p);
    }
    plan.contrast = sample_contrast(state, anchors, config);
    plan.lambda_c = config.lambda_c;
  }
  m.contrast_classes = static_cast<int>(plan.contrast.size());

  // (8) Student update.
  optimize(state, plan, config, ctx, m);
  if (ctx.plan_out != nullptr) *ctx.plan_out = plan;

  // (9) Teacher follows the student.
  ema_update(state.teacher, state.student, ema_momentum_at(config.ema_momentum, state.iter, ctx.warm_iters));

  // (10) Prototypes from the teacher's reliable features.
  const std::size_t d = state.bank.dim();
  std::vector<CentroidAccumulator> acc(num_classes, CentroidAccumulator(d));
  for (std::size_t p = 0; p < bl * px; ++p) acc[labels_l[p]].add(repr_l.row(p));
  for (std::size_t p = 0; p < bu * px; ++p) {
    if (pseudo[p] != kIgnore) acc[pseudo[p]].add(repr_u.row(p));
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (const auto centroid = acc[c].mean()) momentum_update(state.protos, c, *centroid, config.proto_momentum);
  }

  ++state.iter;
  m.iter = state.iter;
  return m;
}

StepMetrics train_step_ws(TrainState& state, const Batch& batch, const RunConfig& config,
                          const StepContext& ctx) {
  require(batch.size() > 0 && batch.image_labels.size() == batch.size(),
          "train_step_ws: batch needs images and image-level labels");
  const std::size_t n = batch.size();
  const auto num_classes = static_cast<std::size_t>(state.student.spec.classes);

  StepMetrics m;
  m.epoch = ctx.epoch;
  m.gamma_t = std::numeric_limits<double>::quiet_NaN();

  std::vector<ModelOutputs> outs;
  try {
    outs = forward_all(state.student, batch.images);
  } catch (const ContractError& e) {
    ObjectivePlan inputs;
    inputs.images = batch.images;
    abort_step(state, inputs, ctx, e.what());
  }
  const std::size_t px = outs[0].repr.dim(0) * outs[0].repr.dim(1);

  // CAM pseudo-labels (detached) and the background complement map.
  std::vector<FloatTensor> cams(n);
  ObjectivePlan plan;
  plan.kind = ObjectivePlan::Kind::weak;
  plan.images = batch.images;
  plan.image_labels = batch.image_labels;
  plan.unsup_symmetric = false;
  plan.tau = config.tau;
  for (std::size_t i = 0; i < n; ++i) {
    cams[i] = compute_cam(outs[i].features, state.student.cls_w);
    plan.unsup_targets.push_back(cam_pseudo_labels(cams[i], batch.image_labels[i].data, config.beta));
    set_background_cam(cams[i], batch.image_labels[i].data);
  }
  m.lambda_u = warm_start(config, ctx.epoch) ? 0.0 : adaptive_weight(stack(plan.unsup_targets), config.eta);
  plan.lambda_u = m.lambda_u;

  // Negatives: image lacks the class, or the class CAM is below beta.
  std::vector<std::vector<std::size_t>> negatives(num_classes);
  std::vector<std::vector<std::size_t>> anchors(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& present = batch.image_labels[i].data;
    for (std::size_t p = 0; p < px; ++p) {
      const auto cam = cams[i].row(p);
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (qualify_negative_ws(present, cam[c], static_cast<int>(c), config.beta)) {
          negatives[c].push_back(i * px + p);
        } else if (present[c] != 0 && cam[c] > config.beta) {
          anchors[c].push_back(i * px + p);
        }
      }
    }
  }
  push_negatives(
      state, negatives,
      [&](std::size_t g) { return outs[g / px].repr.row(g % px); },
      [&](std::size_t g, int c) {
        KeyProvenance k;
        k.cls = c;
        k.image_label = batch.image_labels[g / px].data;
        k.cam_value = cams[g / px][(g % px) * num_classes + static_cast<std::size_t>(c)];
        return k;
      },
      ctx);
  m.bank_sizes = state.bank.sizes();

  if (contrast_active(config, ctx.epoch)) {
    plan.contrast = sample_contrast(state, anchors, config);
    plan.lambda_c = config.lambda_c;
  }
  m.contrast_classes = static_cast<int>(plan.contrast.size());

  optimize(state, plan, config, ctx, m, &outs);
  if (ctx.plan_out != nullptr) *ctx.plan_out = plan;

  // Batch centroids of the anchor candidates, momentum-blended.
  const std::size_t d = state.bank.dim();
  for (std::size_t c = 0; c < num_classes; ++c) {
    CentroidAccumulator acc(d);
    for (std::size_t g : anchors[c]) acc.add(outs[g / px].repr.row(g % px));
    if (const auto centroid = acc.mean()) momentum_update(state.protos, c, *centroid, config.proto_momentum);
  }

  ++state.iter;
  m.iter = state.iter;
  return m;
}

double evaluate_miou(const ModelParams& params, const Dataset& ds, const std::vector<int>& ids) {
  require(!ids.empty(), "evaluate_miou: no scenes to evaluate");
  std::vector<LabelMap> preds(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    preds[i] = argmax_labels(forward(params, ds.scene(ids[i]).image).logits);
  });
  ConfusionMatrix cm(static_cast<std::size_t>(params.spec.classes));
  for (std::size_t i = 0; i < ids.size(); ++i) cm.add(preds[i], ds.scene(ids[i]).label);
  return miou(cm).miou;
}

NamedTensors state_tensors(const TrainState& state) {
  NamedTensors t;
  for (const auto& [name, tensor] : state.student.named()) t.emplace_back("student." + name, *tensor);
  for (const auto& [name, tensor] : state.teacher.named()) t.emplace_back("teacher." + name, *tensor);
  for (const auto& [name, tensor] : state.velocity.named()) t.emplace_back("optim.velocity." + name, *tensor);
  for (std::size_t c = 0; c < state.protos.classes(); ++c) {
    if (!state.protos.initialized[c]) continue;
    FloatTensor z({state.protos.dim});
    z.data = state.protos.protos[c];
    t.emplace_back("proto." + std::to_string(c), std::move(z));
  }
  for (std::size_t c = 0; c < state.bank.classes(); ++c) {
    const auto& q = state.bank.entries(c);
    FloatTensor keys({q.size(), state.bank.dim()});
    for (std::size_t k = 0; k < q.size(); ++k) std::copy(q[k].key.begin(), q[k].key.end(), keys.row(k).begin());
    t.emplace_back("bank." + std::to_string(c), std::move(keys));
  }
  auto rng_tensor = [](const Rng& r) {
    const std::string s = r.save();
    ByteTensor b({s.size()});
    std::copy(s.begin(), s.end(), b.data.begin());
    return b;
  };
  t.emplace_back("rng.data", rng_tensor(state.data_rng));
  t.emplace_back("rng.pairs", rng_tensor(state.pair_rng));
  IntTensor counters({2});
  counters[0] = state.epoch;
  counters[1] = static_cast<std::int32_t>(state.iter);
  t.emplace_back("state.counters", counters);
  FloatTensor best({1});
  best[0] = state.best_miou;
  t.emplace_back("state.best_miou", best);
  return t;
}

void restore_state(TrainState& state, const NamedTensors& tensors) {
  auto load_model = [&](ModelParams& params, const std::string& prefix) {
    for (auto& [name, tensor] : params.named()) {
      auto loaded = tensor_as<double>(find_tensor(tensors, prefix + name));
      require(loaded.dims == tensor->dims, "checkpoint: shape mismatch for " + prefix + name);
      *tensor = std::move(loaded);
    }
  };
  load_model(state.student, "student.");
  load_model(state.teacher, "teacher.");
  load_model(state.velocity, "optim.velocity.");
  for (std::size_t c = 0; c < state.protos.classes(); ++c) {
    const std::string name = "proto." + std::to_string(c);
    state.protos.initialized[c] = has_tensor(tensors, name);
    if (state.protos.initialized[c]) state.protos.protos[c] = tensor_as<double>(find_tensor(tensors, name)).data;
  }
  std::vector<std::size_t> caps;
  for (std::size_t c = 0; c < state.bank.classes(); ++c) caps.push_back(state.bank.capacity(c));
  state.bank = MemoryBank(caps, state.bank.dim());
  for (std::size_t c = 0; c < caps.size(); ++c) {
    const std::string name = "bank." + std::to_string(c);
    if (has_tensor(tensors, name)) state.bank.push(c, tensor_as<double>(find_tensor(tensors, name)));
  }
  auto load_rng = [&](Rng& r, const std::string& name) {
    const auto b = tensor_as<std::uint8_t>(find_tensor(tensors, name));
    r.load(std::string(b.data.begin(), b.data.end()));
  };
  load_rng(state.data_rng, "rng.data");
  load_rng(state.pair_rng, "rng.pairs");
  const auto counters = tensor_as<std::int32_t>(find_tensor(tensors, "state.counters"));
  state.epoch = counters[0];
  state.iter = counters[1];
  state.best_miou = tensor_as<double>(find_tensor(tensors, "state.best_miou"))[0];
}

long iterations_per_epoch(const RunConfig& config, const SplitManifest& manifest) {
  const std::size_t stream = std::max(manifest.labeled_ids.size(), manifest.unlabeled_ids.size());
  require(stream > 0, "iterations_per_epoch: no training scenes");
  return static_cast<long>((stream + config.batch_size - 1) / config.batch_size);
}

namespace {

Batch load_batch(const Dataset& ds, const std::vector<int>& order, long start, int batch_size,
                 bool with_labels, bool with_image_labels, Rng& rng) {
  Batch b;
  for (int k = 0; k < batch_size; ++k) {
    const int id = order[static_cast<std::size_t>(start + k) % order.size()];
    const Scene& src = ds.scene(id);
    const bool flip = rng.uniform() < 0.5;
    if (flip) {
      Scene s = flip_horizontal(src);
      b.images.push_back(std::move(s.image));
      if (with_labels) b.labels.push_back(std::move(s.label));
    } else {
      b.images.push_back(src.image);
      if (with_labels) b.labels.push_back(src.label);
    }
    if (with_image_labels) b.image_labels.push_back(src.image_label);
  }
  return b;
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json step_record(const StepMetrics& m) {
  ordered_json j;
  j["epoch"] = m.epoch;
  j["iter"] = m.iter;
  j["loss_s"] = number_or_null(m.loss_s);
  j["loss_u"] = number_or_null(m.loss_u);
  j["loss_c"] = number_or_null(m.loss_c);
  j["lambda_u"] = number_or_null(m.lambda_u);
  j["gamma_t"] = number_or_null(m.gamma_t);
  j["alpha_t"] = number_or_null(m.alpha_t);
  j["lr"] = number_or_null(m.lr);
  j["bank_sizes"] = m.bank_sizes;
  return j;
}

}  // namespace

RunResult run(const RunConfig& config, const Dataset& ds, const RunOptions& options) {
  validate_config(config);
  if (ds.manifest.regime != config.regime) {
    throw ConfigError("dataset regime '" + std::string(to_string(ds.manifest.regime)) +
                          "' does not match config regime '" + std::string(to_string(config.regime)) + "'",
                      "regime");
  }
  const int num_classes = ds.num_classes();
  if (config.r_l >= num_classes) {
    throw ConfigError("config key 'contrast.r_l': must be below the class count " + std::to_string(num_classes),
                      "contrast.r_l");
  }
  require(!ds.manifest.val_ids.empty(), "dataset has no validation scenes");
  const bool weak = config.regime == Regime::ws;
  require(!ds.manifest.labeled_ids.empty(), "dataset has no labeled scenes");
  const bool semi = !weak && config.use_unlabeled;
  require(!semi || !ds.manifest.unlabeled_ids.empty(), "semi-supervised run needs unlabeled scenes");

  std::filesystem::create_directories(options.out_dir);
  {
    std::ofstream rc(options.out_dir / "resolved_config.txt", std::ios::trunc);
    rc << render_config(config);
  }

  TrainState state = init_state(config, num_classes);
  if (options.resume_from) restore_state(state, read_checkpoint(*options.resume_from));

  const long per_epoch = iterations_per_epoch(config, ds.manifest);
  const long total_iters = per_epoch * config.total_epochs;

  std::ofstream log(options.out_dir / "metrics.jsonl",
                    options.resume_from ? std::ios::app : std::ios::trunc);
  require(log.is_open(), "cannot open metrics log in " + options.out_dir.string());

  RunResult result;
  auto record_eval = [&]() {
    const double v = evaluate_miou(state.student, ds, ds.manifest.val_ids);
    ordered_json j;
    j["epoch"] = state.epoch;
    j["iter"] = state.iter;
    j["val_miou"] = v;
    log << j.dump() << "\n";
    result.epoch_miou.push_back(v);
    if (v > state.best_miou) {
      state.best_miou = v;
      write_checkpoint(options.out_dir / "best.ckpt", state_tensors(state));
    }
    return v;
  };

  if (!options.resume_from) result.final_miou = record_eval();

  StepContext ctx;
  ctx.total_iters = total_iters;
  ctx.warm_iters = per_epoch * std::min(config.warm_start_epochs, config.total_epochs);
  ctx.dump_dir = options.out_dir;
  while (state.epoch < config.total_epochs) {
    if (options.stop_after_epoch && state.epoch >= *options.stop_after_epoch) break;
    ctx.epoch = state.epoch;
    std::vector<int> order_l = ds.manifest.labeled_ids;
    std::vector<int> order_u = ds.manifest.unlabeled_ids;
    state.data_rng.shuffle(order_l.begin(), order_l.end());
    state.data_rng.shuffle(order_u.begin(), order_u.end());

    for (long it = 0; it < per_epoch; ++it) {
      const long start = it * config.batch_size;
      StepMetrics m;
      if (weak) {
        const Batch b = load_batch(ds, order_l, start, config.batch_size, false, true, state.data_rng);
        m = train_step_ws(state, b, config, ctx);
      } else if (semi) {
        const Batch bl = load_batch(ds, order_l, start, config.batch_size, true, false, state.data_rng);
        const Batch bu = load_batch(ds, order_u, start, config.batch_size, false, false, state.data_rng);
        m = train_step_ss(state, bl, bu, config, ctx);
      } else {
        const Batch bl = load_batch(ds, order_l, start, config.batch_size, true, false, state.data_rng);
        m = train_step_supervised(state, bl, config, ctx);
      }
      log << step_record(m).dump() << "\n";
    }
    ++state.epoch;
    result.final_miou = record_eval();
    if (!options.quiet) {
      std::cerr << "epoch " << state.epoch << "/" << config.total_epochs << " val_miou " << result.final_miou
                << "\n";
    }
    log.flush();
    write_checkpoint(options.out_dir / "last.ckpt", state_tensors(state));
  }

  write_checkpoint(options.out_dir / "final.ckpt", state_tensors(state));
  result.best_miou = state.best_miou;
  return result;
}

}  // namespace u2pl
