#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "changer/fusion.hpp"
#include "changer/interact.hpp"

namespace changer {

enum class InteractKind { None, AD, ChannelExchange, SpatialExchange };
enum class FusionKind { Concat, FDAF };
enum class Variant { Vanilla, Align, AD, Ex };

struct InteractSpec {
  InteractKind kind = InteractKind::None;
  int period = 2;
  int window = 1;
  bool operator==(const InteractSpec&) const = default;
};

struct StageSpec {
  int out_channels = 16;
  int blocks = 2;
  int stride = 2; // stage 1 reaches stride 4 through the stem
  InteractSpec interact;
  bool operator==(const StageSpec&) const = default;
};

struct ModelConfig {
  Variant variant = Variant::Ex;
  std::array<StageSpec, 4> stages{};
  int decoder_dim = 32;
  FusionKind fusion = FusionKind::FDAF;
  int ad_ratio = 4;

  /// Interaction schedule and fusion of one of the four named variants,
  /// on a ResNet-18-shaped encoder with the given widths.
  static ModelConfig preset(Variant variant, std::array<int, 4> widths = {16, 32, 64, 128}, int decoder_dim = 32);
  /// Re-applies the interaction schedule and fusion of `variant`, keeping widths.
  void apply_variant(Variant v);
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string to_string(Variant v);
std::string to_string(InteractKind k);
std::string to_string(FusionKind f);
Variant parse_variant(const std::string& s);
InteractKind parse_interact(const std::string& s);
FusionKind parse_fusion(const std::string& s);

using Pyramid = std::array<Var, 4>;

/// Siamese change detector: one parameter set serves both temporal branches.
class ChangerModel {
public:
  ChangerModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

  /// Runs the four stages on both branches, interacting after each stage.
  std::pair<Pyramid, Pyramid> encode(Tape& tape, Var x0, Var x1);
  /// Per-level linear to decoder_dim, upsample to 1/4, concat, linear 4C -> C.
  Var decode(Tape& tape, const Pyramid& pyramid);
  Var fuse(Tape& tape, Var f0, Var f1);
  /// Fuse -> conv3x3 + ReLU -> conv1x1 to 2 logits -> bilinear x4.
  Var head(Tape& tape, Var f0, Var f1);
  Var forward(Tape& tape, Var x0, Var x1);

  /// Forward-only convenience returning the (n, 2, H, W) logits.
  Tensor4 predict(const Tensor4& x0, const Tensor4& x1);

  std::uint64_t mac_count(int batch, int height, int width) const;

private:
  struct BasicBlock {
    Conv2d conv1;
    InstanceNorm norm1;
    Conv2d conv2;
    InstanceNorm norm2;
    std::optional<Conv2d> down;
    std::optional<InstanceNorm> down_norm;
  };
  struct Stage {
    std::vector<BasicBlock> blocks;
    std::optional<ADLayer> ad;
  };

  Var stem(Tape& tape, Var x);
  Var block(Tape& tape, const BasicBlock& b, Var x);
  std::pair<Var, Var> interact(const Stage& stage, const InteractSpec& spec, Tape& tape, Var x0, Var x1);
  void check_input(const Shape& s) const;

  ModelConfig config_;
  Parameters params_;
  Conv2d stem_conv_;
  InstanceNorm stem_norm_;
  std::array<Stage, 4> stages_;
  std::array<Conv2d, 4> decoder_linear_;
  Conv2d decoder_fuse_;
  std::optional<FDAFLayer> fdaf_;
  Conv2d proj1_;
  Conv2d proj2_;
};

std::size_t param_count(const Parameters& params);
std::uint64_t mac_count(const ModelConfig& config, int batch, int height, int width);

} // namespace changer
