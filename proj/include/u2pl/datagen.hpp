#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "u2pl/numerics.hpp"

namespace u2pl {

enum class Regime { ss, da, ws };

std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 6;
  int max_shapes = 4;
  int min_shape_size = 10;
  int max_shape_size = 28;
  double noise_std = 0.12;
  /// Per-scene, per-class uniform offset applied to each base colour channel.
  double color_jitter = 0.12;

  bool operator==(const SceneSpec&) const = default;
};

enum class ShapeKind { rectangle, disc };

/// One foreground object. For rectangles `size` is the side length; for
/// discs it is the diameter.
struct Shape {
  ShapeKind kind = ShapeKind::rectangle;
  int cls = 1;
  int center_y = 0;
  int center_x = 0;
  int size = 8;
};

struct Scene {
  FloatTensor image;    // (H, W, 3) in [0, 1]
  LabelMap label;       // (H, W)
  ByteTensor image_label;  // (C) presence flags

  bool operator==(const Scene&) const = default;
};

/// Fixed per-class base colour; class 0 is the background.
std::array<double, 3> class_color(int cls, int num_classes);

Scene render_scene(const SceneSpec& spec, const std::vector<Shape>& shapes, std::uint64_t seed);
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec);

struct DomainShift {
  std::array<double, 3> channel_gain{1.0, 1.0, 1.0};
  double brightness = 0.0;
  double extra_noise = 0.0;

  bool operator==(const DomainShift&) const = default;
};

/// Source → target style used when no shift is configured explicitly.
DomainShift default_domain_shift();

Scene apply_domain_shift(const Scene& scene, const DomainShift& shift, std::uint64_t seed);

/// Random horizontal flip used as the weak augmentation at load time.
Scene flip_horizontal(const Scene& scene);

struct SplitManifest {
  Regime regime = Regime::ss;
  std::vector<int> labeled_ids;
  std::vector<int> unlabeled_ids;
  std::vector<int> val_ids;
  /// WS: pixel labels exist on disk for evaluation but the trainer must
  /// only read image-level labels.
  bool pixel_labels_withheld = false;

  bool operator==(const SplitManifest&) const = default;
};

/// Shuffles ids [0, n_train) and splits off floor(fraction · n_train) labeled
/// ids; ids [n_train, n_train + n_val) become the validation set.
SplitManifest make_splits(int n_train, int n_val, double labeled_fraction, Regime regime,
                          std::uint64_t seed);

struct DatasetSpec {
  SceneSpec scene;
  int n_train = 24;
  int n_val = 8;
  double labeled_fraction = 0.25;
  Regime regime = Regime::ss;
  std::uint64_t seed = 0;
  DomainShift shift = default_domain_shift();

  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  DatasetSpec spec;
  SplitManifest manifest;
  std::map<int, Scene> scenes;

  const Scene& scene(int id) const;
  int num_classes() const { return spec.scene.num_classes; }
};

/// Generates every scene of the dataset in memory. In the DA regime the
/// unlabeled and validation scenes receive the target-style shift.
Dataset generate_dataset(const DatasetSpec& spec);

std::string scene_file(int id, std::string_view kind);

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace u2pl
