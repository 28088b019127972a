#include "u2pl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "u2pl/tensor_io.hpp"

namespace u2pl {
namespace {

using json = nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, int id, std::uint64_t stream) {
  return splitmix64(splitmix64(dataset_seed ^ (stream << 48)) + static_cast<std::uint64_t>(id));
}

void validate(const SceneSpec& spec) {
  require(spec.height >= 16 && spec.width >= 16, "scene spec: H and W must be at least 16");
  require(spec.num_classes >= 3, "scene spec: need at least 3 classes");
  require(spec.max_shapes >= 1, "scene spec: max_shapes must be positive");
  require(spec.noise_std >= 0.0 && spec.color_jitter >= 0.0,
          "scene spec: noise_std and color_jitter must be non-negative");
  require(spec.min_shape_size >= 1 && spec.min_shape_size <= spec.max_shape_size,
          "scene spec: bad shape size range");
  require(spec.max_shape_size <= std::min(spec.height, spec.width),
          "scene spec: shape larger than canvas");
}

bool covers(const Shape& s, int y, int x) {
  if (s.kind == ShapeKind::rectangle) {
    const int y0 = s.center_y - s.size / 2;
    const int x0 = s.center_x - s.size / 2;
    return y >= y0 && y < y0 + s.size && x >= x0 && x < x0 + s.size;
  }
  const double r = 0.5 * s.size;
  const double dy = y + 0.5 - (s.center_y + 0.5);
  const double dx = x + 0.5 - (s.center_x + 0.5);
  return dy * dy + dx * dx <= r * r;
}

json to_json(const SceneSpec& s) {
  return {{"height", s.height},         {"width", s.width},
          {"num_classes", s.num_classes}, {"max_shapes", s.max_shapes},
          {"min_shape_size", s.min_shape_size}, {"max_shape_size", s.max_shape_size},
          {"noise_std", s.noise_std},   {"color_jitter", s.color_jitter}};
}

SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  s.height = j.at("height");
  s.width = j.at("width");
  s.num_classes = j.at("num_classes");
  s.max_shapes = j.at("max_shapes");
  s.min_shape_size = j.at("min_shape_size");
  s.max_shape_size = j.at("max_shape_size");
  s.noise_std = j.at("noise_std");
  s.color_jitter = j.at("color_jitter");
  return s;
}

}  // namespace

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::ss: return "ss";
    case Regime::da: return "da";
    case Regime::ws: return "ws";
  }
  return "?";
}

Regime parse_regime(std::string_view s) {
  if (s == "ss") return Regime::ss;
  if (s == "da") return Regime::da;
  if (s == "ws") return Regime::ws;
  throw ContractError("unknown regime '" + std::string(s) + "' (expected ss, da or ws)");
}

std::array<double, 3> class_color(int cls, int num_classes) {
  if (cls == 0) return {0.45, 0.45, 0.45};
  // Evenly spaced hues at fixed saturation/value.
  const double hue = 6.0 * static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
  const double sat = 0.55;
  const double val = 0.8;
  const double chroma = val * sat;
  const double x = chroma * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue) % 6) {
    case 0: rgb = {chroma, x, 0}; break;
    case 1: rgb = {x, chroma, 0}; break;
    case 2: rgb = {0, chroma, x}; break;
    case 3: rgb = {0, x, chroma}; break;
    case 4: rgb = {x, 0, chroma}; break;
    default: rgb = {chroma, 0, x}; break;
  }
  const double m = val - chroma;
  for (double& v : rgb) v += m;
  return rgb;
}

Scene render_scene(const SceneSpec& spec, const std::vector<Shape>& shapes, std::uint64_t seed) {
  validate(spec);
  const auto h = static_cast<std::size_t>(spec.height);
  const auto w = static_cast<std::size_t>(spec.width);
  const int num_classes = spec.num_classes;
  for (const Shape& s : shapes) {
    require(s.cls >= 1 && s.cls < num_classes, "render_scene: shape class out of range");
    require(s.size >= 1 && s.size <= std::min(spec.height, spec.width),
            "render_scene: shape larger than canvas");
  }

  Rng rng(seed);
  std::vector<std::array<double, 3>> palette(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    palette[c] = class_color(c, num_classes);
    for (double& v : palette[c]) v += rng.uniform(-spec.color_jitter, spec.color_jitter);
  }

  Scene scene;
  scene.label = LabelMap({h, w}, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (const Shape& s : shapes) {
        if (covers(s, static_cast<int>(y), static_cast<int>(x))) scene.label[y * w + x] = s.cls;
      }
    }
  }

  scene.image = FloatTensor({h, w, 3});
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto& base = palette[scene.label[i]];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double noise = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
      scene.image[i * 3 + ch] = std::clamp(base[ch] + noise, 0.0, 1.0);
    }
  }

  scene.image_label = ByteTensor({static_cast<std::size_t>(num_classes)}, 0);
  for (std::int32_t v : scene.label.data) scene.image_label[v] = 1;
  return scene;
}

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  validate(spec);
  Rng rng(seed);
  const int n_shapes = 1 + static_cast<int>(rng.below(spec.max_shapes));
  std::vector<Shape> shapes;
  for (int i = 0; i < n_shapes; ++i) {
    Shape s;
    s.kind = rng.below(2) == 0 ? ShapeKind::rectangle : ShapeKind::disc;
    s.cls = 1 + static_cast<int>(rng.below(spec.num_classes - 1));
    s.size = spec.min_shape_size +
             static_cast<int>(rng.below(spec.max_shape_size - spec.min_shape_size + 1));
    s.center_y = static_cast<int>(rng.below(spec.height));
    s.center_x = static_cast<int>(rng.below(spec.width));
    shapes.push_back(s);
  }
  return render_scene(spec, shapes, rng.next_u64());
}

DomainShift default_domain_shift() {
  DomainShift s;
  s.channel_gain = {1.25, 0.8, 0.9};
  s.brightness = -0.05;
  s.extra_noise = 0.05;
  return s;
}

Scene apply_domain_shift(const Scene& scene, const DomainShift& shift, std::uint64_t seed) {
  for (double g : shift.channel_gain) require(g > 0.0, "apply_domain_shift: gains must be positive");
  require(shift.extra_noise >= 0.0, "apply_domain_shift: negative noise level");
  Scene out = scene;
  Rng rng(seed);
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    double v = shift.channel_gain[i % 3] * out.image[i] + shift.brightness;
    if (shift.extra_noise > 0.0) v += shift.extra_noise * rng.normal();
    out.image[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Scene flip_horizontal(const Scene& scene) {
  Scene out = scene;
  const std::size_t h = scene.label.dim(0);
  const std::size_t w = scene.label.dim(1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = y * w + x;
      const std::size_t dst = y * w + (w - 1 - x);
      out.label[dst] = scene.label[src];
      for (std::size_t ch = 0; ch < 3; ++ch) out.image[dst * 3 + ch] = scene.image[src * 3 + ch];
    }
  }
  return out;
}

SplitManifest make_splits(int n_train, int n_val, double labeled_fraction, Regime regime,
                          std::uint64_t seed) {
  require(n_train >= 4, "make_splits: need at least 4 training scenes");
  require(n_val >= 0, "make_splits: negative validation count");
  require(labeled_fraction > 0.0 && labeled_fraction <= 1.0,
          "make_splits: labeled_fraction must be in (0, 1]");

  SplitManifest m;
  m.regime = regime;
  std::vector<int> ids(n_train);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(splitmix64(seed));
  rng.shuffle(ids.begin(), ids.end());

  if (regime == Regime::ws) {
    m.labeled_ids = ids;
    m.pixel_labels_withheld = true;
  } else {
    const auto n_labeled = static_cast<std::size_t>(std::floor(labeled_fraction * n_train + 1e-9));
    require(n_labeled > 0, "make_splits: labeled set would be empty");
    m.labeled_ids.assign(ids.begin(), ids.begin() + n_labeled);
    m.unlabeled_ids.assign(ids.begin() + n_labeled, ids.end());
  }
  for (int i = 0; i < n_val; ++i) m.val_ids.push_back(n_train + i);
  return m;
}

const Scene& Dataset::scene(int id) const {
  auto it = scenes.find(id);
  require(it != scenes.end(), "dataset: unknown scene id " + std::to_string(id));
  return it->second;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  validate(spec.scene);
  Dataset ds;
  ds.spec = spec;
  ds.manifest = make_splits(spec.n_train, spec.n_val, spec.labeled_fraction, spec.regime, spec.seed);

  std::vector<bool> target_style(spec.n_train + spec.n_val, false);
  if (spec.regime == Regime::da) {
    for (int id : ds.manifest.unlabeled_ids) target_style[id] = true;
    for (int id : ds.manifest.val_ids) target_style[id] = true;
  }
  for (int id = 0; id < spec.n_train + spec.n_val; ++id) {
    Scene s = generate_scene(scene_seed(spec.seed, id, 1), spec.scene);
    if (target_style[id]) s = apply_domain_shift(s, spec.shift, scene_seed(spec.seed, id, 2));
    ds.scenes.emplace(id, std::move(s));
  }
  return ds;
}

std::string scene_file(int id, std::string_view kind) {
  return "scene_" + std::to_string(id) + "_" + std::string(kind) + ".u2tn";
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, s] : ds.scenes) {
    save_tensor(dir / scene_file(id, "img"), s.image);
    save_tensor(dir / scene_file(id, "lab"), s.label);
    save_tensor(dir / scene_file(id, "cls"), s.image_label);
  }
  const auto& m = ds.manifest;
  json j;
  j["regime"] = std::string(to_string(m.regime));
  j["seed"] = ds.spec.seed;
  j["labeled_ids"] = m.labeled_ids;
  j["unlabeled_ids"] = m.unlabeled_ids;
  j["val_ids"] = m.val_ids;
  j["pixel_labels_withheld"] = m.pixel_labels_withheld;
  j["n_train"] = ds.spec.n_train;
  j["n_val"] = ds.spec.n_val;
  j["labeled_fraction"] = ds.spec.labeled_fraction;
  j["scene_spec"] = to_json(ds.spec.scene);
  j["shift"] = {{"channel_gain", ds.spec.shift.channel_gain},
                {"brightness", ds.spec.shift.brightness},
                {"extra_noise", ds.spec.shift.extra_noise}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  require(os.is_open(), "cannot write manifest in " + dir.string());
  os << j.dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  require(is.is_open(), "no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ContractError("malformed manifest.json: " + std::string(e.what()));
  }

  Dataset ds;
  try {
    ds.spec.regime = parse_regime(j.at("regime").get<std::string>());
    ds.spec.seed = j.at("seed");
    ds.spec.n_train = j.at("n_train");
    ds.spec.n_val = j.at("n_val");
    ds.spec.labeled_fraction = j.at("labeled_fraction");
    ds.spec.scene = scene_spec_from_json(j.at("scene_spec"));
    ds.spec.shift.channel_gain = j.at("shift").at("channel_gain");
    ds.spec.shift.brightness = j.at("shift").at("brightness");
    ds.spec.shift.extra_noise = j.at("shift").at("extra_noise");
    ds.manifest.regime = ds.spec.regime;
    ds.manifest.labeled_ids = j.at("labeled_ids").get<std::vector<int>>();
    ds.manifest.unlabeled_ids = j.at("unlabeled_ids").get<std::vector<int>>();
    ds.manifest.val_ids = j.at("val_ids").get<std::vector<int>>();
    ds.manifest.pixel_labels_withheld = j.at("pixel_labels_withheld");
  } catch (const json::exception& e) {
    throw ContractError("manifest.json: " + std::string(e.what()));
  }

  auto load_ids = [&](const std::vector<int>& ids) {
    for (int id : ids) {
      Scene s;
      s.image = tensor_as<double>(load_tensor(dir / scene_file(id, "img")));
      s.label = tensor_as<std::int32_t>(load_tensor(dir / scene_file(id, "lab")));
      s.image_label = tensor_as<std::uint8_t>(load_tensor(dir / scene_file(id, "cls")));
      ds.scenes.emplace(id, std::move(s));
    }
  };
  load_ids(ds.manifest.labeled_ids);
  load_ids(ds.manifest.unlabeled_ids);
  load_ids(ds.manifest.val_ids);
  return ds;
}

}  // namespace u2pl
