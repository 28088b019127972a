#include "u2pl/model.hpp"

#include <cmath>

namespace u2pl {
namespace {

void check_spec(const ModelSpec& spec) {
  require(spec.features >= 2 && spec.features % 2 == 0, "model: F must be a positive even number");
  require(spec.classes >= 2, "model: need at least 2 classes");
  require(spec.repr_dim >= 2, "model: need D >= 2");
}

// out(P, Cout) = in(P, Cin) · w(Cin, Cout) + b
void dense_forward(const double* in, std::size_t pixels, std::size_t cin, const FloatTensor& w,
                   const FloatTensor& b, double* out) {
  const std::size_t cout = b.size();
  for (std::size_t p = 0; p < pixels; ++p) {
    double* o = out + p * cout;
    const double* x = in + p * cin;
    for (std::size_t j = 0; j < cout; ++j) o[j] = b[j];
    for (std::size_t i = 0; i < cin; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      const double* wr = w.ptr() + i * cout;
      for (std::size_t j = 0; j < cout; ++j) o[j] += xi * wr[j];
    }
  }
}

// Accumulates weight/bias gradients and (optionally) the input gradient.
void dense_backward(const double* in, std::size_t pixels, std::size_t cin, const FloatTensor& w,
                    const double* d_out, FloatTensor& dw, FloatTensor& db, double* d_in) {
  const std::size_t cout = db.size();
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* g = d_out + p * cout;
    const double* x = in + p * cin;
    for (std::size_t j = 0; j < cout; ++j) db[j] += g[j];
    for (std::size_t i = 0; i < cin; ++i) {
      const double xi = x[i];
      const double* wr = w.ptr() + i * cout;
      double* dwr = dw.ptr() + i * cout;
      double acc = 0.0;
      for (std::size_t j = 0; j < cout; ++j) {
        dwr[j] += xi * g[j];
        acc += wr[j] * g[j];
      }
      if (d_in != nullptr) d_in[p * cin + i] += acc;
    }
  }
}

// 3×3 convolution with zero padding 1, kernel layout (3, 3, cin, cout).
void conv3_forward(const double* in, std::size_t h, std::size_t w, std::size_t cin,
                   const FloatTensor& k, const FloatTensor& b, double* out) {
  const std::size_t cout = b.size();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* o = out + (y * w + x) * cout;
      for (std::size_t j = 0; j < cout; ++j) o[j] = b[j];
      for (int ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(y) + ky - 1;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(x) + kx - 1;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* src = in + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const double* kk = k.ptr() + static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          for (std::size_t i = 0; i < cin; ++i) {
            const double xi = src[i];
            if (xi == 0.0) continue;
            const double* kr = kk + i * cout;
            for (std::size_t j = 0; j < cout; ++j) o[j] += xi * kr[j];
          }
        }
      }
    }
  }
}

void conv3_backward(const double* in, std::size_t h, std::size_t w, std::size_t cin,
                    const FloatTensor& k, const double* d_out, FloatTensor& dk, FloatTensor& db,
                    double* d_in) {
  const std::size_t cout = db.size();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double* g = d_out + (y * w + x) * cout;
      bool any = false;
      for (std::size_t j = 0; j < cout; ++j) {
        db[j] += g[j];
        any = any || g[j] != 0.0;
      }
      if (!any) continue;
      for (int ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(y) + ky - 1;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(x) + kx - 1;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const std::size_t src_off =
              (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const double* src = in + src_off;
          const std::size_t k_off = static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          const double* kk = k.ptr() + k_off;
          double* dkk = dk.ptr() + k_off;
          for (std::size_t i = 0; i < cin; ++i) {
            const double xi = src[i];
            const double* kr = kk + i * cout;
            double* dkr = dkk + i * cout;
            double acc = 0.0;
            for (std::size_t j = 0; j < cout; ++j) {
              dkr[j] += xi * g[j];
              acc += kr[j] * g[j];
            }
            if (d_in != nullptr) d_in[src_off + i] += acc;
          }
        }
      }
    }
  }
}

void relu_inplace(FloatTensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

// Zeroes gradient entries where the post-ReLU activation is not positive.
void relu_mask(const FloatTensor& activated, std::vector<double>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > 0.0)) grad[i] = 0.0;
  }
}

void check_finite(const FloatTensor& t, const char* what) {
  for (double v : t.data) require(std::isfinite(v), std::string("backward: non-finite ") + what);
}

}  // namespace

std::vector<std::pair<std::string, FloatTensor*>> ModelParams::named() {
  return {{"conv1.w", &conv1_w}, {"conv1.b", &conv1_b}, {"conv2.w", &conv2_w},
          {"conv2.b", &conv2_b}, {"seg.w", &seg_w},     {"seg.b", &seg_b},
          {"rep1.w", &rep1_w},   {"rep1.b", &rep1_b},   {"rep2.w", &rep2_w},
          {"rep2.b", &rep2_b},   {"cls.w", &cls_w},     {"cls.b", &cls_b}};
}

std::vector<std::pair<std::string, const FloatTensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const FloatTensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

ModelParams zero_params(const ModelSpec& spec) {
  check_spec(spec);
  const auto f = static_cast<std::size_t>(spec.features);
  const auto c = static_cast<std::size_t>(spec.classes);
  const auto d = static_cast<std::size_t>(spec.repr_dim);
  ModelParams p;
  p.spec = spec;
  p.conv1_w = FloatTensor({3, 3, 3, f});
  p.conv1_b = FloatTensor({f});
  p.conv2_w = FloatTensor({3, 3, f, f});
  p.conv2_b = FloatTensor({f});
  p.seg_w = FloatTensor({f, c});
  p.seg_b = FloatTensor({c});
  p.rep1_w = FloatTensor({f, f / 2});
  p.rep1_b = FloatTensor({f / 2});
  p.rep2_w = FloatTensor({f / 2, d});
  p.rep2_b = FloatTensor({d});
  p.cls_w = FloatTensor({c, f});
  p.cls_b = FloatTensor({c});
  return p;
}

ModelParams init_params(std::uint64_t seed, const ModelSpec& spec) {
  ModelParams p = zero_params(spec);
  Rng rng(seed);
  auto fill = [&](FloatTensor& t, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  };
  const auto f = static_cast<std::size_t>(spec.features);
  fill(p.conv1_w, 9 * 3);
  fill(p.conv2_w, 9 * f);
  fill(p.seg_w, f);
  fill(p.rep1_w, f);
  fill(p.rep2_w, f / 2);
  fill(p.cls_w, f);
  return p;
}

void add_scaled(ModelParams& dst, const ModelParams& src, double scale) {
  auto d = dst.named();
  auto s = src.named();
  for (std::size_t k = 0; k < d.size(); ++k) {
    FloatTensor& a = *d[k].second;
    const FloatTensor& b = *s[k].second;
    require(a.dims == b.dims, "add_scaled: shape mismatch in " + d[k].first);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  }
}

namespace {

// Inputs in [0, 1] are shifted to be zero-centred before the first conv, so
// zero padding reads as mid-grey.
std::vector<double> centred(const FloatTensor& image) {
  std::vector<double> x(image.data);
  for (double& v : x) v -= kInputMean;
  return x;
}

}  // namespace

ModelOutputs forward(const ModelParams& params, const FloatTensor& image) {
  require(image.rank() == 3 && image.dim(2) == 3, "forward: image must be (H, W, 3)");
  require(params.conv1_w.dims == std::vector<std::size_t>{3, 3, 3, params.conv1_b.size()},
          "forward: conv1 shape mismatch");
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  const std::size_t px = h * w;
  const auto f = static_cast<std::size_t>(params.spec.features);
  const auto c = static_cast<std::size_t>(params.spec.classes);
  const auto d = static_cast<std::size_t>(params.spec.repr_dim);

  ModelOutputs out;
  out.hidden1 = FloatTensor({h, w, f});
  const auto x = centred(image);
  conv3_forward(x.data(), h, w, 3, params.conv1_w, params.conv1_b, out.hidden1.ptr());
  relu_inplace(out.hidden1);

  out.features = FloatTensor({h, w, f});
  conv3_forward(out.hidden1.ptr(), h, w, f, params.conv2_w, params.conv2_b, out.features.ptr());
  relu_inplace(out.features);

  out.logits = FloatTensor({h, w, c});
  dense_forward(out.features.ptr(), px, f, params.seg_w, params.seg_b, out.logits.ptr());
  out.prob = FloatTensor({h, w, c});
  for (std::size_t p = 0; p < px; ++p) softmax_into(out.logits.row(p), out.prob.row(p));

  out.rep_hidden = FloatTensor({h, w, f / 2});
  dense_forward(out.features.ptr(), px, f, params.rep1_w, params.rep1_b, out.rep_hidden.ptr());
  relu_inplace(out.rep_hidden);
  out.repr = FloatTensor({h, w, d});
  dense_forward(out.rep_hidden.ptr(), px, f / 2, params.rep2_w, params.rep2_b, out.repr.ptr());

  out.pooled = FloatTensor({f});
  for (std::size_t p = 0; p < px; ++p) {
    for (std::size_t k = 0; k < f; ++k) out.pooled[k] += out.features[p * f + k];
  }
  for (double& v : out.pooled.data) v /= static_cast<double>(px);
  out.cls_logits = FloatTensor({c});
  for (std::size_t j = 0; j < c; ++j) {
    double s = params.cls_b[j];
    for (std::size_t k = 0; k < f; ++k) s += params.cls_w[j * f + k] * out.pooled[k];
    out.cls_logits[j] = s;
  }
  return out;
}

ModelParams backward(const ModelParams& params, const FloatTensor& image,
                     const ModelOutputs& out, const UpstreamGrads& up) {
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  const std::size_t px = h * w;
  const auto f = static_cast<std::size_t>(params.spec.features);
  const auto c = static_cast<std::size_t>(params.spec.classes);

  if (!up.logits.empty()) {
    require(up.logits.dims == out.logits.dims, "backward: logits gradient shape mismatch");
    check_finite(up.logits, "logits gradient");
  }
  if (!up.repr.empty()) {
    require(up.repr.dims == out.repr.dims, "backward: repr gradient shape mismatch");
    check_finite(up.repr, "repr gradient");
  }
  if (!up.cls_logits.empty()) {
    require(up.cls_logits.dims == out.cls_logits.dims, "backward: cls gradient shape mismatch");
    check_finite(up.cls_logits, "cls gradient");
  }

  ModelParams g = zero_params(params.spec);
  std::vector<double> d_feat(px * f, 0.0);

  if (!up.logits.empty()) {
    dense_backward(out.features.ptr(), px, f, params.seg_w, up.logits.ptr(), g.seg_w, g.seg_b,
                   d_feat.data());
  }
  if (!up.repr.empty()) {
    std::vector<double> d_rep_hidden(px * (f / 2), 0.0);
    dense_backward(out.rep_hidden.ptr(), px, f / 2, params.rep2_w, up.repr.ptr(), g.rep2_w,
                   g.rep2_b, d_rep_hidden.data());
    relu_mask(out.rep_hidden, d_rep_hidden);
    dense_backward(out.features.ptr(), px, f, params.rep1_w, d_rep_hidden.data(), g.rep1_w,
                   g.rep1_b, d_feat.data());
  }
  if (!up.cls_logits.empty()) {
    std::vector<double> d_pooled(f, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
      const double gj = up.cls_logits[j];
      g.cls_b[j] += gj;
      for (std::size_t k = 0; k < f; ++k) {
        g.cls_w[j * f + k] += gj * out.pooled[k];
        d_pooled[k] += gj * params.cls_w[j * f + k];
      }
    }
    const double inv = 1.0 / static_cast<double>(px);
    for (std::size_t p = 0; p < px; ++p) {
      for (std::size_t k = 0; k < f; ++k) d_feat[p * f + k] += d_pooled[k] * inv;
    }
  }

  relu_mask(out.features, d_feat);
  std::vector<double> d_hidden1(px * f, 0.0);
  conv3_backward(out.hidden1.ptr(), h, w, f, params.conv2_w, d_feat.data(), g.conv2_w, g.conv2_b,
                 d_hidden1.data());
  relu_mask(out.hidden1, d_hidden1);
  const auto x = centred(image);
  conv3_backward(x.data(), h, w, 3, params.conv1_w, d_hidden1.data(), g.conv1_w, g.conv1_b, nullptr);
  return g;
}

ModelParams backward(const ModelParams& params, const FloatTensor& image,
                     const UpstreamGrads& upstream) {
  return backward(params, image, forward(params, image), upstream);
}

void ema_update(ModelParams& teacher, const ModelParams& student, double momentum) {
  require(momentum >= 0.0 && momentum <= 1.0, "ema_update: momentum outside [0,1]");
  require(teacher.spec == student.spec, "ema_update: teacher/student shape mismatch");
  auto t = teacher.named();
  auto s = student.named();
  for (std::size_t k = 0; k < t.size(); ++k) {
    FloatTensor& a = *t[k].second;
    const FloatTensor& b = *s[k].second;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = momentum * a[i] + (1.0 - momentum) * b[i];
  }
}

}  // namespace u2pl
