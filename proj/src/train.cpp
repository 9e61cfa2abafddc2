#include "changer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace changer {

Batch collate(std::span<const Sample* const> samples) {
  if (samples.empty()) {
    throw std::invalid_argument("collate: empty batch");
  }
  const Shape s = samples.front()->x0.shape();
  const int b = static_cast<int>(samples.size());
  Batch batch{Tensor4(Shape{b, 3, s.h, s.w}), Tensor4(Shape{b, 3, s.h, s.w}), {}};
  batch.y.reserve(static_cast<std::size_t>(b) * s.plane());
  const std::size_t per = 3 * s.plane();
  for (int i = 0; i < b; ++i) {
    const Sample& smp = *samples[static_cast<std::size_t>(i)];
    if (!(smp.x0.shape() == s) || !(smp.x1.shape() == s) || smp.y.size() != s.plane()) {
      throw ShapeError("collate: sample " + smp.id + " does not match batch shape " + s.str());
    }
    std::copy_n(smp.x0.data(), per, batch.x0.plane(i, 0));
    std::copy_n(smp.x1.data(), per, batch.x1.plane(i, 0));
    batch.y.insert(batch.y.end(), smp.y.begin(), smp.y.end());
  }
  return batch;
}

Var ce_loss(Var logits, std::span<const std::uint8_t> labels) {
  const Tensor4& z = logits.value();
  const Shape& s = z.shape();
  if (s.c != 2 || labels.size() != static_cast<std::size_t>(s.n) * s.plane()) {
    throw ShapeError("ce_loss: logits " + s.str() + " incompatible with " + std::to_string(labels.size()) +
                     " labels");
  }
  for (std::uint8_t v : labels) {
    if (v > 1) throw std::invalid_argument("ce_loss: label " + std::to_string(v) + " outside {0, 1}");
  }
  const std::size_t hw = s.plane();
  const double inv_count = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const double* l0 = z.plane(n, 0);
    const double* l1 = z.plane(n, 1);
    for (std::size_t p = 0; p < hw; ++p) {
      const double m = std::max(l0[p], l1[p]);
      const double lse = m + std::log(std::exp(l0[p] - m) + std::exp(l1[p] - m));
      total += lse - (labels[n * hw + p] ? l1[p] : l0[p]);
    }
  }
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return logits.tape->record(Tensor4(Shape{1, 1, 1, 1}, total * inv_count), {logits},
                             [logits, y = std::move(y), inv_count](Tape& tp, const Tensor4& gy) {
                               Tensor4* gz = tp.grad_sink(logits);
                               if (!gz) return;
                               const Tensor4& z = tp.value(logits);
                               const Shape& s = z.shape();
                               const std::size_t hw = s.plane();
                               const double g = gy[0] * inv_count;
                               for (int n = 0; n < s.n; ++n) {
                                 const double* l0 = z.plane(n, 0);
                                 const double* l1 = z.plane(n, 1);
                                 double* g0 = gz->plane(n, 0);
                                 double* g1 = gz->plane(n, 1);
                                 for (std::size_t p = 0; p < hw; ++p) {
                                   // softmax of the change class, in logistic form
                                   const double d = l1[p] - l0[p];
                                   const double p1 = d >= 0 ? 1.0 / (1.0 + std::exp(-d))
                                                            : std::exp(d) / (1.0 + std::exp(d));
                                   const double r = p1 - (y[n * hw + p] ? 1.0 : 0.0);
                                   g1[p] += g * r;
                                   g0[p] -= g * r;
                                 }
                               }
                             });
}

void AdamW::step(Parameters& params, double lr) {
  for (const ParamEntry& e : params) {
    if (e.trainable && !e.grad.all_finite()) {
      throw NumericError("adamw: non-finite gradient in " + e.name);
    }
  }
  if (m_.empty()) {
    for (const ParamEntry& e : params) {
      m_.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(e.value.numel())));
      v_.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(e.value.numel())));
    }
  }
  if (m_.size() != params.size()) {
    throw std::logic_error("adamw: parameter set changed between steps");
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamEntry& e = params[i];
    if (!e.trainable) continue;
    auto theta = e.value.vec().array();
    const auto g = e.grad.vec().array();
    if (e.decay && options_.weight_decay != 0.0) {
      theta *= 1.0 - lr * options_.weight_decay;
    }
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.square();
    theta -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + options_.eps);
  }
}

double poly_lr(int iter, int max_iters, double lr0, double power) {
  if (max_iters <= 0 || iter < 0 || iter > max_iters) {
    throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(max_iters) + "]");
  }
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / max_iters, power);
}

Sample temporal_swap(const Sample& s) {
  Sample out = s;
  std::swap(out.x0, out.x1);
  return out;
}

namespace {

void flip_plane_h(double* p, int h, int w) {
  for (int i = 0; i < h; ++i) std::reverse(p + static_cast<std::ptrdiff_t>(i) * w, p + static_cast<std::ptrdiff_t>(i + 1) * w);
}

void flip_plane_v(double* p, int h, int w) {
  for (int i = 0; i < h / 2; ++i) {
    std::swap_ranges(p + static_cast<std::ptrdiff_t>(i) * w, p + static_cast<std::ptrdiff_t>(i + 1) * w,
                     p + static_cast<std::ptrdiff_t>(h - 1 - i) * w);
  }
}

template <class T>
void flip_labels(std::vector<T>& y, int h, int w, bool horizontal) {
  for (int i = 0; i < h; ++i) {
    if (horizontal) {
      std::reverse(y.begin() + static_cast<std::ptrdiff_t>(i) * w, y.begin() + static_cast<std::ptrdiff_t>(i + 1) * w);
    } else if (i < h / 2) {
      std::swap_ranges(y.begin() + static_cast<std::ptrdiff_t>(i) * w, y.begin() + static_cast<std::ptrdiff_t>(i + 1) * w,
                       y.begin() + static_cast<std::ptrdiff_t>(h - 1 - i) * w);
    }
  }
}

Sample flip(const Sample& s, bool horizontal) {
  Sample out = s;
  const int h = s.height(), w = s.width();
  for (Tensor4* t : {&out.x0, &out.x1}) {
    for (int c = 0; c < 3; ++c) {
      if (horizontal) flip_plane_h(t->plane(0, c), h, w);
      else flip_plane_v(t->plane(0, c), h, w);
    }
  }
  flip_labels(out.y, h, w, horizontal);
  return out;
}

Sample crop(const Sample& s, int top, int left, int size) {
  Sample out;
  out.id = s.id;
  out.x0 = Tensor4(Shape{1, 3, size, size});
  out.x1 = Tensor4(Shape{1, 3, size, size});
  out.y.resize(static_cast<std::size_t>(size) * size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      for (int c = 0; c < 3; ++c) {
        out.x0(0, c, i, j) = s.x0(0, c, top + i, left + j);
        out.x1(0, c, i, j) = s.x1(0, c, top + i, left + j);
      }
      out.y[static_cast<std::size_t>(i) * size + j] = s.y[static_cast<std::size_t>(top + i) * s.width() + left + j];
    }
  }
  return out;
}

void photometric(Tensor4& img, Rng& rng) {
  const double gain = rng.uniform(0.8, 1.25);
  const double bias = rng.uniform(-0.1, 0.1);
  for (int c = 0; c < 3; ++c) {
    const double tint = rng.uniform(0.95, 1.05);
    double* p = img.plane(0, c);
    for (std::size_t i = 0; i < img.shape().plane(); ++i) {
      p[i] = std::clamp(p[i] * gain * tint + bias, 0.0, 1.0);
    }
  }
}

} // namespace

Sample hflip(const Sample& s) { return flip(s, true); }

Sample augment(const Sample& s, const AugmentConfig& config, Rng& rng) {
  Sample out = s;
  if (config.crop) {
    const int size = config.crop_size;
    if (size < 1 || size > s.height() || size > s.width()) {
      throw std::invalid_argument("augment: crop size " + std::to_string(size) + " exceeds image " +
                                  s.x0.shape().str());
    }
    const int top = rng.uniform_int(0, s.height() - size);
    const int left = rng.uniform_int(0, s.width() - size);
    if (size != s.height() || size != s.width()) out = crop(out, top, left, size);
  }
  if (config.flip) {
    if (rng.bernoulli(0.5)) out = flip(out, true);
    if (rng.bernoulli(0.5)) out = flip(out, false);
  }
  if (config.photometric) {
    photometric(out.x0, rng);
    photometric(out.x1, rng);
  }
  if (config.temporal_swap && rng.bernoulli(0.5)) {
    std::swap(out.x0, out.x1);
  }
  return out;
}

EvalReport EvalReport::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  EvalReport r{tp, fp, fn, tn, 0.0, 0.0, 0.0};
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

void accumulate_counts(const Tensor4& logits, std::span<const std::uint8_t> labels, EvalReport& counts) {
  const Shape& s = logits.shape();
  if (s.c != 2 || labels.size() != static_cast<std::size_t>(s.n) * s.plane()) {
    throw ShapeError("evaluate: logits " + s.str() + " incompatible with labels");
  }
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const double* l0 = logits.plane(n, 0);
    const double* l1 = logits.plane(n, 1);
    for (std::size_t p = 0; p < hw; ++p) {
      const bool pred = l1[p] > l0[p];
      const bool truth = labels[n * hw + p] != 0;
      if (pred && truth) ++counts.tp;
      else if (pred) ++counts.fp;
      else if (truth) ++counts.fn;
      else ++counts.tn;
    }
  }
}

EvalReport evaluate(ChangerModel& model, const std::vector<Sample>& dataset, int batch_size) {
  if (dataset.empty()) {
    throw std::invalid_argument("evaluate: empty dataset");
  }
  EvalReport counts;
  for (std::size_t begin = 0; begin < dataset.size(); begin += static_cast<std::size_t>(batch_size)) {
    std::vector<const Sample*> chunk;
    for (std::size_t i = begin; i < std::min(dataset.size(), begin + static_cast<std::size_t>(batch_size)); ++i) {
      chunk.push_back(&dataset[i]);
    }
    const Batch b = collate(chunk);
    accumulate_counts(model.predict(b.x0, b.x1), b.y, counts);
  }
  return EvalReport::from_counts(counts.tp, counts.fp, counts.fn, counts.tn);
}

std::string csv_header() { return "iter,lr,loss,precision,recall,f1"; }

std::string csv_row(const TrainLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g", row.iter, row.lr, row.loss);
  std::string out = buf;
  if (row.eval) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f", row.eval->precision, row.eval->recall, row.eval->f1);
    out += buf;
  } else {
    out += ",,,";
  }
  return out;
}

std::string format_report(const EvalReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "P=%.6f R=%.6f F1=%.6f", r.precision, r.recall, r.f1);
  return buf;
}

TrainResult train_loop(ChangerModel& model, const TrainConfig& config, std::uint64_t seed,
                       const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set, std::ostream* csv) {
  if (train_set.empty()) {
    throw std::invalid_argument("train_loop: empty training set");
  }
  if (config.max_iters < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train_loop: max_iters and batch_size must be >= 1");
  }
  if (config.overfit && static_cast<std::size_t>(config.batch_size) > train_set.size()) {
    throw std::invalid_argument("train_loop: overfit batch larger than the training set");
  }
  AdamW optimizer(AdamWOptions{config.beta1, config.beta2, config.adam_eps, config.weight_decay});
  TrainResult result;
  if (csv) *csv << csv_header() << '\n';

  for (int iter = 0; iter < config.max_iters; ++iter) {
    Rng draw(seed, 0x626174636800ULL + static_cast<std::uint64_t>(iter));
    std::vector<Sample> picked;
    picked.reserve(static_cast<std::size_t>(config.batch_size));
    for (int slot = 0; slot < config.batch_size; ++slot) {
      if (config.overfit) {
        picked.push_back(train_set[static_cast<std::size_t>(slot)]);
        continue;
      }
      const auto idx = static_cast<std::size_t>(draw.bits() % train_set.size());
      Rng aug_rng(seed, derive_seed(static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(slot)));
      picked.push_back(augment(train_set[idx], config.aug, aug_rng));
    }
    std::vector<const Sample*> ptrs;
    for (const Sample& s : picked) ptrs.push_back(&s);
    const Batch batch = collate(ptrs);

    const double lr = poly_lr(iter, config.max_iters, config.lr, config.poly_power);
    model.params().zero_grad();
    double loss_value = 0.0;
    {
      Tape tape;
      const Var logits = model.forward(tape, tape.constant(batch.x0), tape.constant(batch.x1));
      const Var loss = ce_loss(logits, batch.y);
      loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) {
        std::ostringstream ids;
        for (const Sample& s : picked) ids << ' ' << s.id;
        throw NumericError("non-finite loss at iteration " + std::to_string(iter) + "; batch:" + ids.str());
      }
      tape.backward(loss);
    }
    optimizer.step(model.params(), lr);

    TrainLogRow row{iter, lr, loss_value, std::nullopt};
    const bool last = iter + 1 == config.max_iters;
    if (!eval_set.empty() && (last || (config.eval_every > 0 && (iter + 1) % config.eval_every == 0))) {
      row.eval = evaluate(model, eval_set);
    }
    if (csv) *csv << csv_row(row) << '\n' << std::flush;
    result.log.push_back(row);
  }
  if (result.log.back().eval) result.final_report = *result.log.back().eval;
  return result;
}

} // namespace changer
