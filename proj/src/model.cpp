#include "changer/model.hpp"

#include <stdexcept>

namespace changer {

std::string to_string(Variant v) {
  switch (v) {
  case Variant::Vanilla: return "vanilla";
  case Variant::Align: return "align";
  case Variant::AD: return "ad";
  case Variant::Ex: return "ex";
  }
  return "?";
}

std::string to_string(InteractKind k) {
  switch (k) {
  case InteractKind::None: return "none";
  case InteractKind::AD: return "ad";
  case InteractKind::ChannelExchange: return "channel_ex";
  case InteractKind::SpatialExchange: return "spatial_ex";
  }
  return "?";
}

std::string to_string(FusionKind f) { return f == FusionKind::Concat ? "concat" : "fdaf"; }

Variant parse_variant(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "align") return Variant::Align;
  if (s == "ad") return Variant::AD;
  if (s == "ex") return Variant::Ex;
  throw std::invalid_argument("unknown variant '" + s + "' (expected vanilla, align, ad, ex)");
}

InteractKind parse_interact(const std::string& s) {
  if (s == "none") return InteractKind::None;
  if (s == "ad") return InteractKind::AD;
  if (s == "channel_ex") return InteractKind::ChannelExchange;
  if (s == "spatial_ex") return InteractKind::SpatialExchange;
  throw std::invalid_argument("unknown interaction '" + s + "' (expected none, ad, channel_ex, spatial_ex)");
}

FusionKind parse_fusion(const std::string& s) {
  if (s == "concat") return FusionKind::Concat;
  if (s == "fdaf") return FusionKind::FDAF;
  throw std::invalid_argument("unknown fusion '" + s + "' (expected concat, fdaf)");
}

ModelConfig ModelConfig::preset(Variant variant, std::array<int, 4> widths, int decoder_dim) {
  ModelConfig cfg;
  for (std::size_t i = 0; i < 4; ++i) {
    cfg.stages[i].out_channels = widths[i];
    cfg.stages[i].blocks = 2;
    cfg.stages[i].stride = i == 0 ? 4 : 2;
  }
  cfg.decoder_dim = decoder_dim;
  cfg.apply_variant(variant);
  return cfg;
}

void ModelConfig::apply_variant(Variant v) {
  variant = v;
  for (auto& s : stages) {
    s.interact = InteractSpec{};
  }
  fusion = v == Variant::Vanilla ? FusionKind::Concat : FusionKind::FDAF;
  if (v == Variant::AD) {
    for (std::size_t i = 1; i < 4; ++i) stages[i].interact.kind = InteractKind::AD;
  } else if (v == Variant::Ex) {
    stages[1].interact = InteractSpec{InteractKind::SpatialExchange, 2, 1};
    stages[2].interact = InteractSpec{InteractKind::ChannelExchange, 2, 1};
    stages[3].interact = InteractSpec{InteractKind::ChannelExchange, 2, 1};
  }
}

void ModelConfig::validate() const {
  if (decoder_dim < 1) throw std::invalid_argument("decoder_dim must be >= 1");
  for (std::size_t i = 0; i < 4; ++i) {
    const StageSpec& s = stages[i];
    const std::string tag = "stage" + std::to_string(i + 1);
    if (s.out_channels < 1 || s.blocks < 1) throw std::invalid_argument(tag + ": channels and blocks must be >= 1");
    if (s.stride != (i == 0 ? 4 : 2)) throw std::invalid_argument(tag + ": cumulative strides must be 4, 8, 16, 32");
    if (s.interact.kind == InteractKind::ChannelExchange || s.interact.kind == InteractKind::SpatialExchange) {
      if (s.interact.period < 2) throw std::invalid_argument(tag + ": exchange period must be >= 2");
      if (s.interact.window < 1) throw std::invalid_argument(tag + ": exchange window must be >= 1");
    }
    if (s.interact.kind == InteractKind::AD && (ad_ratio < 1 || s.out_channels % ad_ratio != 0)) {
      throw std::invalid_argument(tag + ": channels not divisible by ad_ratio " + std::to_string(ad_ratio));
    }
  }
}

ChangerModel::ChangerModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed, 0x696e6974ULL);
  const int c1 = config_.stages[0].out_channels;
  stem_conv_ = Conv2d::create(params_, "encoder.stem.conv", 3, c1, 7, 2, 3, 1, false, rng);
  stem_norm_ = InstanceNorm::create(params_, "encoder.stem.norm", c1);

  int in = c1;
  for (std::size_t i = 0; i < 4; ++i) {
    const StageSpec& spec = config_.stages[i];
    const std::string prefix = "encoder.stage" + std::to_string(i + 1);
    Stage& stage = stages_[i];
    for (int b = 0; b < spec.blocks; ++b) {
      const std::string name = prefix + ".block" + std::to_string(b);
      const int stride = (b == 0 && i > 0) ? 2 : 1;
      BasicBlock blk;
      blk.conv1 = Conv2d::create(params_, name + ".conv1", in, spec.out_channels, 3, stride, 1, 1, false, rng);
      blk.norm1 = InstanceNorm::create(params_, name + ".norm1", spec.out_channels);
      blk.conv2 = Conv2d::create(params_, name + ".conv2", spec.out_channels, spec.out_channels, 3, 1, 1, 1, false, rng);
      blk.norm2 = InstanceNorm::create(params_, name + ".norm2", spec.out_channels);
      if (stride != 1 || in != spec.out_channels) {
        blk.down = Conv2d::create(params_, name + ".down", in, spec.out_channels, 1, stride, 0, 1, false, rng);
        blk.down_norm = InstanceNorm::create(params_, name + ".down_norm", spec.out_channels);
      }
      stage.blocks.push_back(std::move(blk));
      in = spec.out_channels;
    }
    if (spec.interact.kind == InteractKind::AD) {
      stage.ad = ADLayer::create(params_, "interact.stage" + std::to_string(i + 1), spec.out_channels,
                                 config_.ad_ratio, rng);
    }
  }

  const int dim = config_.decoder_dim;
  for (std::size_t i = 0; i < 4; ++i) {
    decoder_linear_[i] = Conv2d::linear(params_, "decoder.linear" + std::to_string(i + 1),
                                        config_.stages[i].out_channels, dim, rng);
  }
  decoder_fuse_ = Conv2d::linear(params_, "decoder.fuse", 4 * dim, dim, rng);
  if (config_.fusion == FusionKind::FDAF) {
    fdaf_ = FDAFLayer::create(params_, "head.fdaf", dim, rng);
  }
  proj1_ = Conv2d::create(params_, "head.proj1", 2 * dim, dim, 3, 1, 1, 1, true, rng);
  proj2_ = Conv2d::create(params_, "head.proj2", dim, 2, 1, 1, 0, 1, true, rng);
}

void ChangerModel::check_input(const Shape& s) const {
  if (s.c != 3) {
    throw ShapeError("model input must have 3 channels, got " + s.str());
  }
  if (s.h < 32 || s.w < 32 || s.h % 32 != 0 || s.w % 32 != 0) {
    throw ShapeError("model input height and width must be positive multiples of 32, got " + s.str());
  }
}

Var ChangerModel::stem(Tape& tape, Var x) {
  // max-pool ahead of ReLU: identical output, no ties among clipped zeros
  return relu(max_pool2d(stem_norm_(tape, params_, stem_conv_(tape, params_, x)), 3, 2, 1));
}

Var ChangerModel::block(Tape& tape, const BasicBlock& b, Var x) {
  Var h = relu(b.norm1(tape, params_, b.conv1(tape, params_, x)));
  h = b.norm2(tape, params_, b.conv2(tape, params_, h));
  const Var shortcut = b.down ? (*b.down_norm)(tape, params_, (*b.down)(tape, params_, x)) : x;
  return relu(h + shortcut);
}

std::pair<Var, Var> ChangerModel::interact(const Stage& stage, const InteractSpec& spec, Tape& tape, Var x0,
                                           Var x1) {
  switch (spec.kind) {
  case InteractKind::None: return identity_interact(x0, x1);
  case InteractKind::AD: {
    const ADLayer::Output out = stage.ad->forward(tape, params_, x0, x1);
    return {out.out0, out.out1};
  }
  case InteractKind::ChannelExchange:
    return exchange(x0, x1, make_channel_mask(x0.shape().c, spec.period));
  case InteractKind::SpatialExchange:
    return exchange(x0, x1, make_spatial_mask(x0.shape().w, spec.period, spec.window));
  }
  throw std::logic_error("unhandled interaction kind");
}

std::pair<Pyramid, Pyramid> ChangerModel::encode(Tape& tape, Var x0, Var x1) {
  check_input(x0.shape());
  if (!(x0.shape() == x1.shape())) {
    throw ShapeError("encoder: temporal inputs differ in shape " + x0.shape().str() + " vs " + x1.shape().str());
  }
  Pyramid p0, p1;
  Var h0 = stem(tape, x0);
  Var h1 = stem(tape, x1);
  for (std::size_t i = 0; i < 4; ++i) {
    for (const BasicBlock& b : stages_[i].blocks) {
      h0 = block(tape, b, h0);
      h1 = block(tape, b, h1);
    }
    std::tie(h0, h1) = interact(stages_[i], config_.stages[i].interact, tape, h0, h1);
    p0[i] = h0;
    p1[i] = h1;
  }
  return {p0, p1};
}

Var ChangerModel::decode(Tape& tape, const Pyramid& pyramid) {
  std::array<Var, 4> levels;
  for (std::size_t i = 0; i < 4; ++i) {
    levels[i] = bilinear_upsample(decoder_linear_[i](tape, params_, pyramid[i]), 1 << i);
  }
  return decoder_fuse_(tape, params_, concat_c(std::span<const Var>(levels)));
}

Var ChangerModel::fuse(Tape& tape, Var f0, Var f1) {
  if (fdaf_) {
    return fdaf_->fuse(tape, params_, f0, f1);
  }
  return concat_fuse(f0, f1);
}

Var ChangerModel::head(Tape& tape, Var f0, Var f1) {
  const Var fused = fuse(tape, f0, f1);
  const Var logits = proj2_(tape, params_, relu(proj1_(tape, params_, fused)));
  return bilinear_upsample(logits, 4);
}

Var ChangerModel::forward(Tape& tape, Var x0, Var x1) {
  auto [p0, p1] = encode(tape, x0, x1);
  const Var f0 = decode(tape, p0);
  const Var f1 = decode(tape, p1);
  return head(tape, f0, f1);
}

Tensor4 ChangerModel::predict(const Tensor4& x0, const Tensor4& x1) {
  Tape tape;
  return forward(tape, tape.constant(x0), tape.constant(x1)).value();
}

std::uint64_t ChangerModel::mac_count(int batch, int height, int width) const {
  check_input(Shape{batch, 3, height, width});
  std::uint64_t macs = 0;
  Shape s{batch, 3, height, width};
  // one branch of the encoder, doubled below
  std::uint64_t encoder = stem_conv_.macs(params_, s);
  s = stem_conv_.output_shape(params_, s);
  s = Shape{s.n, s.c, (s.h + 2 - 3) / 2 + 1, (s.w + 2 - 3) / 2 + 1};
  std::uint64_t interaction = 0;
  std::array<Shape, 4> level{};
  for (std::size_t i = 0; i < 4; ++i) {
    for (const BasicBlock& b : stages_[i].blocks) {
      encoder += b.conv1.macs(params_, s);
      const Shape mid = b.conv1.output_shape(params_, s);
      encoder += b.conv2.macs(params_, mid);
      if (b.down) encoder += b.down->macs(params_, s);
      s = b.conv2.output_shape(params_, mid);
    }
    if (stages_[i].ad) interaction += stages_[i].ad->macs(batch);
    level[i] = s;
  }
  macs += 2 * encoder + interaction;

  std::uint64_t decoder = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    decoder += decoder_linear_[i].macs(params_, level[i]);
  }
  const Shape quarter{batch, 4 * config_.decoder_dim, height / 4, width / 4};
  decoder += decoder_fuse_.macs(params_, quarter);
  macs += 2 * decoder;

  if (fdaf_) macs += fdaf_->macs(batch, height / 4, width / 4);
  const Shape fused{batch, 2 * config_.decoder_dim, height / 4, width / 4};
  macs += proj1_.macs(params_, fused);
  macs += proj2_.macs(params_, proj1_.output_shape(params_, fused));
  return macs;
}

std::size_t param_count(const Parameters& params) { return params.count(); }

std::uint64_t mac_count(const ModelConfig& config, int batch, int height, int width) {
  return ChangerModel(config, 0).mac_count(batch, height, width);
}

} // namespace changer
