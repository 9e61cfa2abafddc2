#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "changer/model.hpp"
#include "changer/rng.hpp"

namespace changer {

/// A bi-temporal pair with its binary change mask. Images are (1, 3, H, W) in [0, 1].
struct Sample {
  Tensor4 x0;
  Tensor4 x1;
  std::vector<std::uint8_t> y; // H * W, row-major, values in {0, 1}
  std::string id;

  int height() const { return x0.shape().h; }
  int width() const { return x0.shape().w; }
};

struct Batch {
  Tensor4 x0;
  Tensor4 x1;
  std::vector<std::uint8_t> y;
};

Batch collate(std::span<const Sample* const> samples);

/// Mean pixel cross-entropy of 2-class logits (n, 2, H, W) against labels in {0, 1}.
Var ce_loss(Var logits, std::span<const std::uint8_t> labels);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay. Entries with decay == false (biases, norm
/// affines) skip the decay term.
class AdamW {
public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// Applies one update from the gradients stored in params.
  /// Throws NumericError, leaving params untouched, if any gradient is non-finite.
  void step(Parameters& params, double lr);
  long steps() const { return t_; }

private:
  AdamWOptions options_;
  std::vector<Eigen::ArrayXd> m_;
  std::vector<Eigen::ArrayXd> v_;
  long t_ = 0;
};

/// lr0 * (1 - iter / max_iters)^power.
double poly_lr(int iter, int max_iters, double lr0, double power);

struct AugmentConfig {
  bool flip = true;
  bool crop = true;
  int crop_size = 64;
  bool photometric = true;
  bool temporal_swap = true;
  bool operator==(const AugmentConfig&) const = default;
};

Sample temporal_swap(const Sample& s);
Sample hflip(const Sample& s);
/// Shared geometry for both images and the label, independent photometric
/// distortion per image, then a fair-coin temporal swap (label unchanged).
Sample augment(const Sample& s, const AugmentConfig& config, Rng& rng);

/// Procedural scene pairs: value-noise background plus rectangular buildings;
/// the second image drops some buildings, adds new ones and receives a global
/// gain/bias/tint shift. difficulty 0 produces identical, unchanged pairs.
Sample synth_sample(std::uint64_t seed, std::uint64_t id, int size, double difficulty);
std::vector<Sample> synth_generate(std::uint64_t seed, int count, int size, double difficulty,
                                   std::uint64_t first_id = 0);

struct EvalReport {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static EvalReport from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn);
};

/// Accumulates confusion counts of argmax predictions (change class positive).
void accumulate_counts(const Tensor4& logits, std::span<const std::uint8_t> labels, EvalReport& counts);
EvalReport evaluate(ChangerModel& model, const std::vector<Sample>& dataset, int batch_size = 8);

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  int max_iters = 2000;
  int batch_size = 4;
  double poly_power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every = 500;
  /// Train on the first batch_size samples every iteration, without augmentation.
  bool overfit = false;
  AugmentConfig aug;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainLogRow {
  int iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<EvalReport> eval;
};

std::string csv_header();
std::string csv_row(const TrainLogRow& row);
std::string format_report(const EvalReport& r);

struct TrainResult {
  std::vector<TrainLogRow> log;
  EvalReport final_report;
};

/// Per iteration: draw batch, augment, forward, CE, backward, AdamW at poly lr.
/// Rows are streamed to `csv` (header included) when given. Throws NumericError on
/// a non-finite loss, naming the offending sample ids.
TrainResult train_loop(ChangerModel& model, const TrainConfig& config, std::uint64_t seed,
                       const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                       std::ostream* csv = nullptr);

} // namespace changer
