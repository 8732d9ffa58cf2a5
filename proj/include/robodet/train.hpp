#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robodet/data.hpp"
#include "robodet/loss.hpp"
#include "robodet/network.hpp"

namespace robodet {

struct TrainConfig {
  double lr_max = 1e-3;
  double lr_min = 5e-5;
  int epochs = 125;
  int batch = 64;
  int finetune_epochs = 10;
  double finetune_lr = 5e-5;
  double prune_threshold = 0.01;
  std::uint64_t seed = 0;
  std::optional<int> transfer_layers;
  double transfer_lr_factor = 10.0;
  bool augment = true;
  int val_every = 5;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

void validate(const LossWeights& lw);

struct TrainSettings {
  TrainConfig train;
  LossWeights loss;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys are rejected.
/// Keys: the TrainConfig field names plus lambda_coord, lambda_obj, lambda_noobj, lambda_l1.
TrainSettings parse_train_settings(std::string_view text, TrainSettings base = {});
TrainSettings load_train_settings(const std::filesystem::path& path, TrainSettings base = {});
std::string format_train_settings(const TrainSettings& settings);

// --- augmentation ---

struct AugmentParams {
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue_degrees = 0.0;

  /// Flip with p = 0.5; photometric factors in [0.75, 1.25]; hue in [-18°, 18°].
  static AugmentParams sample(std::mt19937_64& rng);
};

/// Applies the flip and photometric jitter in RGB. Factors of exactly 1 (and a zero
/// hue shift) leave the image untouched.
void augment(Image& image, std::vector<Annotation>& boxes, const AugmentParams& params);

// --- training ---

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;  // rate used by the epoch's last step
  std::optional<double> val_map;
};

struct TrainLog {
  std::vector<EpochMetrics> epochs;
  std::vector<double> batch_losses;
  int collisions = 0;
};

/// Optional validation data and per-epoch callback.
struct TrainHooks {
  const Dataset* validation = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Adam with a per-step cosine schedule over `cfg.epochs`. Recomputes the anchors
/// from the training annotations before the first step.
TrainLog train_loop(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const LossWeights& lw,
                    const TrainHooks& hooks = {});

/// `cfg.finetune_epochs` at constant `cfg.finetune_lr`; masked weights are checked to be
/// exactly zero after every step.
TrainLog finetune_pruned(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const LossWeights& lw,
                         const TrainHooks& hooks = {});

/// Retrains backbone layers 1..k_t on the cosine schedule while later layers and the heads
/// train at lr / transfer_lr_factor. Anchors are kept from the pretrained network.
TrainLog transfer_finetune(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const LossWeights& lw,
                           const TrainHooks& hooks = {});

/// Per-layer learning-rate multipliers used by transfer_finetune.
std::vector<double> transfer_lr_scales(const ModelSpec& spec, int transfer_layers, double factor);

/// Weight + bias parameters of backbone layers 1..k_t (BN excluded, as in count_params).
std::int64_t retrainable_params(const ModelSpec& spec, int transfer_layers);

/// Writes the `epoch,loss,lr,val_map` header and one row per epoch.
void write_metrics_csv(std::ostream& out, std::span<const EpochMetrics> epochs);
void append_metrics_row(std::ostream& out, const EpochMetrics& m);

// --- pruning ---

struct LayerPruneStats {
  std::string label;
  std::size_t weights = 0;
  std::size_t pruned = 0;

  [[nodiscard]] double fraction() const {
    return weights == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(weights);
  }
};

struct PruneReport {
  std::vector<LayerPruneStats> layers;
  double global_fraction = 0.0;
  std::vector<std::string> warnings;
};

/// Masks every weight with |w| < θ·max|w| over its layer and zeroes it. Existing masks
/// are kept. A layer whose weights are all zero is masked entirely with a warning.
PruneReport prune(Network<float>& net, double theta);

/// Fraction of all convolution weights with |w| < θ·max|w| of their layer, without masking.
double prunable_fraction(const Network<float>& net, double theta);

/// Human-readable layer labels ("L1".."L15", "head_lo", "head_hi").
std::string layer_label(const Network<float>& net, std::size_t layer);

}  // namespace robodet
