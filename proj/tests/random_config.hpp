#pragma once

#include <string>

#include "changer/config.hpp"
#include "changer/rng.hpp"

namespace test {

inline std::string random_path(changer::Rng& rng) {
  static const char* parts[] = {"runs", "data", "a b", "x-1", "level_2", "./t"};
  std::string p;
  for (int i = rng.uniform_int(0, 3); i > 0; --i) p += std::string(parts[rng.uniform_int(0, 5)]) + "/";
  return p + "end";
}

/// A config with every field drawn at random, including awkward doubles.
inline changer::RunConfig random_run_config(changer::Rng& rng) {
  using namespace changer;
  RunConfig c;
  const Variant variants[] = {Variant::Vanilla, Variant::Align, Variant::AD, Variant::Ex};
  const InteractKind kinds[] = {InteractKind::None, InteractKind::ChannelExchange, InteractKind::SpatialExchange,
                                InteractKind::AD};
  c.model = ModelConfig::preset(variants[rng.uniform_int(0, 3)]);
  for (StageSpec& s : c.model.stages) {
    s.out_channels = 4 * rng.uniform_int(1, 64);
    s.blocks = rng.uniform_int(1, 4);
    s.interact.kind = kinds[rng.uniform_int(0, 3)];
    s.interact.period = rng.uniform_int(2, 32);
    s.interact.window = rng.uniform_int(1, 16);
  }
  c.model.fusion = rng.bernoulli(0.5) ? FusionKind::FDAF : FusionKind::Concat;
  c.model.decoder_dim = rng.uniform_int(1, 256);
  c.model.ad_ratio = rng.uniform_int(1, 8);
  c.train.lr = rng.uniform(1e-6, 1e-1);
  c.train.weight_decay = rng.uniform(0.0, 0.3) * 1e-3;
  c.train.max_iters = rng.uniform_int(1, 100000);
  c.train.batch_size = rng.uniform_int(1, 64);
  c.train.poly_power = rng.uniform(0.1, 3.0);
  c.train.beta1 = rng.uniform();
  c.train.beta2 = 1.0 - rng.uniform() * 1e-3;
  c.train.adam_eps = rng.uniform() * 1e-7;
  c.train.eval_every = rng.uniform_int(1, 5000);
  c.train.overfit = rng.bernoulli(0.5);
  c.train.aug = {rng.bernoulli(0.5), rng.bernoulli(0.5), 16 * rng.uniform_int(1, 8), rng.bernoulli(0.5),
                 rng.bernoulli(0.5)};
  c.data.source = rng.bernoulli(0.5) ? DataSource::Synthetic : DataSource::Directory;
  c.data.dir = rng.bernoulli(0.3) ? "" : random_path(rng);
  c.data.eval_dir = rng.bernoulli(0.5) ? "" : random_path(rng);
  c.data.train_samples = rng.uniform_int(1, 10000);
  c.data.eval_samples = rng.uniform_int(1, 10000);
  c.data.size = 32 * rng.uniform_int(1, 8);
  c.data.difficulty = rng.uniform();
  c.seed = (static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30)) << 33) ^ static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30));
  c.out = random_path(rng);
  return c;
}

} // namespace test
