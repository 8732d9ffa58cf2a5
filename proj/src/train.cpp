#include "robodet/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "robodet/error.hpp"
#include "robodet/eval.hpp"
#include "robodet/optim.hpp"

namespace robodet {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace

void TrainConfig::validate() const {
  require(lr_max > 0.0, "lr_max must be > 0");
  require(lr_min >= 0.0 && lr_min <= lr_max, "lr_min must lie in [0, lr_max]");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch >= 2, "batch must be >= 2 (batch norm needs two samples)");
  require(finetune_epochs >= 0, "finetune_epochs must be >= 0");
  require(finetune_lr > 0.0, "finetune_lr must be > 0");
  require(prune_threshold > 0.0 && prune_threshold < 1.0, "prune_threshold must lie in (0, 1)");
  require(!transfer_layers || *transfer_layers >= 0, "transfer_layers must be >= 0");
  require(transfer_lr_factor >= 1.0, "transfer_lr_factor must be >= 1");
  require(val_every >= 1, "val_every must be >= 1");
}

void validate(const LossWeights& lw) {
  require(lw.coord >= 0.0, "lambda_coord must be >= 0");
  require(lw.obj >= 0.0, "lambda_obj must be >= 0");
  require(lw.noobj >= 0.0, "lambda_noobj must be >= 0");
  require(lw.l1 >= 0.0, "lambda_l1 must be >= 0");
}

// ---------------------------------------------------------------------------
// config files

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view value, std::string_view key, int line) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("config line " + std::to_string(line) + ": '" + std::string(key) + "' expects a number, got '" +
                          std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view value, std::string_view key, int line) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValidationError("config line " + std::to_string(line) + ": '" + std::string(key) + "' expects true or false");
}

}  // namespace

TrainSettings parse_train_settings(std::string_view text, TrainSettings base) {
  TrainSettings s = base;
  TrainConfig& t = s.train;
  LossWeights& l = s.loss;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    auto num = [&]<typename T>(T& field) { field = parse_number<T>(value, key, line_no); };
    if (key == "lr_max") num(t.lr_max);
    else if (key == "lr_min") num(t.lr_min);
    else if (key == "epochs") num(t.epochs);
    else if (key == "batch") num(t.batch);
    else if (key == "finetune_epochs") num(t.finetune_epochs);
    else if (key == "finetune_lr") num(t.finetune_lr);
    else if (key == "prune_threshold") num(t.prune_threshold);
    else if (key == "seed") num(t.seed);
    else if (key == "transfer_layers") {
      if (value == "none" || value.empty()) {
        t.transfer_layers.reset();
      } else {
        t.transfer_layers = parse_number<int>(value, key, line_no);
      }
    } else if (key == "transfer_lr_factor") num(t.transfer_lr_factor);
    else if (key == "augment") t.augment = parse_bool(value, key, line_no);
    else if (key == "val_every") num(t.val_every);
    else if (key == "lambda_coord") num(l.coord);
    else if (key == "lambda_obj") num(l.obj);
    else if (key == "lambda_noobj") num(l.noobj);
    else if (key == "lambda_l1") num(l.l1);
    else {
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
  }
  s.train.validate();
  validate(s.loss);
  return s;
}

TrainSettings load_train_settings(const std::filesystem::path& path, TrainSettings base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_train_settings(text.str(), base);
}

std::string format_train_settings(const TrainSettings& s) {
  std::ostringstream out;
  out << std::setprecision(17);
  const TrainConfig& t = s.train;
  out << "lr_max = " << t.lr_max << "\n"
      << "lr_min = " << t.lr_min << "\n"
      << "epochs = " << t.epochs << "\n"
      << "batch = " << t.batch << "\n"
      << "finetune_epochs = " << t.finetune_epochs << "\n"
      << "finetune_lr = " << t.finetune_lr << "\n"
      << "prune_threshold = " << t.prune_threshold << "\n"
      << "seed = " << t.seed << "\n"
      << "transfer_layers = " << (t.transfer_layers ? std::to_string(*t.transfer_layers) : "none") << "\n"
      << "transfer_lr_factor = " << t.transfer_lr_factor << "\n"
      << "augment = " << (t.augment ? "true" : "false") << "\n"
      << "val_every = " << t.val_every << "\n"
      << "lambda_coord = " << s.loss.coord << "\n"
      << "lambda_obj = " << s.loss.obj << "\n"
      << "lambda_noobj = " << s.loss.noobj << "\n"
      << "lambda_l1 = " << s.loss.l1 << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// augmentation

AugmentParams AugmentParams::sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> factor(0.75, 1.25);
  std::uniform_real_distribution<double> hue(-18.0, 18.0);
  AugmentParams p;
  p.flip = std::bernoulli_distribution(0.5)(rng);
  p.brightness = factor(rng);
  p.contrast = factor(rng);
  p.saturation = factor(rng);
  p.hue_degrees = hue(rng);
  return p;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void flip_horizontal(Image& image) {
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width / 2; ++x) {
      for (int c = 0; c < 3; ++c) std::swap(image.at(x, y, c), image.at(image.width - 1 - x, y, c));
    }
  }
}

// Hue in degrees [0, 360), saturation and value in [0, 1].
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
  if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0.0;
  double g1 = 0.0;
  double b1 = 0.0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r1 = c, g1 = x; break;
    case 1: r1 = x, g1 = c; break;
    case 2: g1 = c, b1 = x; break;
    case 3: g1 = x, b1 = c; break;
    case 4: r1 = x, b1 = c; break;
    default: r1 = c, b1 = x; break;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

}  // namespace

void augment(Image& image, std::vector<Annotation>& boxes, const AugmentParams& p) {
  if (p.flip) {
    flip_horizontal(image);
    for (auto& a : boxes) a.box.cx = 1.0 - a.box.cx;
  }
  if (p.brightness != 1.0) {
    for (auto& v : image.rgb) v = to_byte(v * p.brightness);
  }
  if (p.contrast != 1.0) {
    // stretch around the mean luma
    double sum = 0.0;
    for (std::size_t i = 0; i < image.rgb.size(); i += 3) {
      sum += 0.299 * image.rgb[i] + 0.587 * image.rgb[i + 1] + 0.114 * image.rgb[i + 2];
    }
    const double mean = image.rgb.empty() ? 0.0 : sum / (image.rgb.size() / 3);
    for (auto& v : image.rgb) v = to_byte(mean + (v - mean) * p.contrast);
  }
  if (p.saturation != 1.0 || p.hue_degrees != 0.0) {
    for (std::size_t i = 0; i < image.rgb.size(); i += 3) {
      double h = 0.0;
      double s = 0.0;
      double v = 0.0;
      rgb_to_hsv(image.rgb[i] / 255.0, image.rgb[i + 1] / 255.0, image.rgb[i + 2] / 255.0, h, s, v);
      h = std::fmod(h + p.hue_degrees + 360.0, 360.0);
      s = std::clamp(s * p.saturation, 0.0, 1.0);
      double r = 0.0;
      double g = 0.0;
      double b = 0.0;
      hsv_to_rgb(h, s, v, r, g, b);
      image.rgb[i] = to_byte(r * 255.0);
      image.rgb[i + 1] = to_byte(g * 255.0);
      image.rgb[i + 2] = to_byte(b * 255.0);
    }
  }
}

// ---------------------------------------------------------------------------
// training

std::string layer_label(const Network<float>& net, std::size_t layer) {
  const auto backbone = static_cast<std::size_t>(net.backbone_size());
  if (layer < backbone) return "L" + std::to_string(layer + 1);
  return layer == backbone ? "head_lo" : "head_hi";
}

namespace {

struct EpochRunner {
  Network<float>& net;
  const Dataset& data;
  const TrainConfig& cfg;
  const LossWeights& lw;
  const TrainHooks& hooks;
  std::vector<double> lr_scales;  // per layer
  bool check_masks = false;

  [[nodiscard]] int batches_per_epoch() const {
    const int n = static_cast<int>(data.size());
    const int full = n / cfg.batch;
    return full + (n % cfg.batch >= 2 ? 1 : 0);
  }

  std::string layer_norms() const {
    std::ostringstream out;
    out << std::setprecision(4);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      out << (l ? ", " : "") << layer_label(net, l) << "=" << net.layers[l].conv.weights.values().norm();
    }
    return out.str();
  }

  void verify_masks(int epoch, int batch) const {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& layer = net.layers[l];
      const float* w = layer.conv.weights.data();
      for (std::size_t i = 0; i < layer.mask.size(); ++i) {
        if (layer.mask[i] == 0 && w[i] != 0.0f) {
          throw std::logic_error("pruned weight " + std::to_string(i) + " of " + layer_label(net, l) +
                                 " became nonzero at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch));
        }
      }
    }
  }

  TrainLog run(int epochs, const std::function<double(std::int64_t step, std::int64_t total)>& schedule) {
    cfg.validate();
    validate(lw);
    if (data.size() < 2) throw ValidationError("training needs at least 2 samples, got " + std::to_string(data.size()));
    TrainLog log;
    AdamState<float> adam;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const int per_epoch = batches_per_epoch();
    const std::int64_t total_steps = static_cast<std::int64_t>(per_epoch) * epochs;
    std::int64_t step = 0;

    for (int epoch = 1; epoch <= epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      double lr = 0.0;
      for (int b = 0; b < per_epoch; ++b) {
        const std::size_t begin = static_cast<std::size_t>(b) * cfg.batch;
        const std::size_t end = std::min(data.size(), begin + cfg.batch);
        std::vector<Image> images;
        std::vector<std::vector<Annotation>> targets;
        images.reserve(end - begin);
        targets.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          const Sample& s = data.samples[order[i]];
          images.push_back(s.image);
          targets.push_back(s.annotations);
          if (cfg.augment) augment(images.back(), targets.back(), AugmentParams::sample(rng));
        }
        std::vector<const Image*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);
        const Tensor<float> input = make_batch(ptrs, net.spec.height, net.spec.width);

        ForwardCache<float> cache;
        const auto raw = forward(net, input, Mode::train, &cache);
        auto loss = detection_loss(raw, std::span<const std::vector<Annotation>>(targets), net, lw);
        if (!std::isfinite(loss.total)) {
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b + 1) + "; weight norms: " + layer_norms());
        }
        log.collisions += loss.collisions;
        auto grads = backward(net, cache, loss.grad_lo, loss.grad_hi);

        std::vector<ParamSlot<float>> slots;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
          auto& layer = net.layers[l];
          auto& g = grads.layers[l];
          if (lw.l1 > 0.0) {
            // subgradient of λ·|w|, zero at w = 0 so pruned weights stay put
            const auto lambda = static_cast<float>(lw.l1);
            g.weights.values().array() += lambda * layer.conv.weights.values().array().sign();
          }
          const double scale = lr_scales.empty() ? 1.0 : lr_scales[l];
          slots.push_back({layer.conv.weights.data(), g.weights.data(), layer.conv.weights.size(), layer.mask.data(),
                           scale});
          slots.push_back({layer.conv.bias.data(), g.bias.data(), layer.conv.bias.size(), nullptr, scale});
          if (layer.bn) {
            slots.push_back({layer.bn->gamma.data(), g.gamma.data(), layer.bn->gamma.size(), nullptr, scale});
            slots.push_back({layer.bn->beta.data(), g.beta.data(), layer.bn->beta.size(), nullptr, scale});
          }
        }
        lr = schedule(step, total_steps);
        adam_step<float>(slots, adam, lr);
        ++step;
        if (check_masks) verify_masks(epoch, b + 1);
        loss_sum += loss.total;
        log.batch_losses.push_back(loss.total);
      }
      EpochMetrics m{epoch, loss_sum / per_epoch, lr, std::nullopt};
      if (hooks.validation != nullptr && epoch % cfg.val_every == 0) {
        m.val_map = map_at_distance(net, *hooks.validation, 16.0);
      }
      log.epochs.push_back(m);
      if (hooks.on_epoch) hooks.on_epoch(m);
    }
    return log;
  }
};

}  // namespace

TrainLog train_loop(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const LossWeights& lw,
                    const TrainHooks& hooks) {
  net.anchors = compute_anchors(data.all_annotations());
  EpochRunner runner{net, data, cfg, lw, hooks, {}};
  return runner.run(cfg.epochs, [&](std::int64_t t, std::int64_t total) {
    return cosine_lr(t, total, cfg.lr_max, cfg.lr_min);
  });
}

TrainLog finetune_pruned(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const LossWeights& lw,
                         const TrainHooks& hooks) {
  net.apply_masks();
  EpochRunner runner{net, data, cfg, lw, hooks, {}, true};
  return runner.run(cfg.finetune_epochs, [&](std::int64_t, std::int64_t) { return cfg.finetune_lr; });
}

std::vector<double> transfer_lr_scales(const ModelSpec& spec, int transfer_layers, double factor) {
  if (transfer_layers < 0 || transfer_layers > spec.backbone_size()) {
    throw ValidationError("transfer_layers must lie in [0, " + std::to_string(spec.backbone_size()) + "], got " +
                          std::to_string(transfer_layers));
  }
  std::vector<double> scales(spec.backbone_size() + 2, 1.0 / factor);
  for (int l = 0; l < transfer_layers; ++l) scales[l] = 1.0;
  return scales;
}

std::int64_t retrainable_params(const ModelSpec& spec, int transfer_layers) {
  transfer_lr_scales(spec, transfer_layers, 10.0);
  return transfer_layers == 0 ? 0 : count_params(spec, transfer_layers);
}

TrainLog transfer_finetune(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const LossWeights& lw,
                           const TrainHooks& hooks) {
  if (!cfg.transfer_layers) throw ValidationError("transfer_finetune needs transfer_layers");
  EpochRunner runner{net, data, cfg, lw, hooks,
                     transfer_lr_scales(net.spec, *cfg.transfer_layers, cfg.transfer_lr_factor)};
  net.apply_masks();
  return runner.run(cfg.epochs, [&](std::int64_t t, std::int64_t total) {
    return cosine_lr(t, total, cfg.lr_max, cfg.lr_min);
  });
}

void append_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << "," << std::setprecision(8) << m.loss << "," << m.lr << ",";
  if (m.val_map) out << *m.val_map;
  out << "\n";
}

void write_metrics_csv(std::ostream& out, std::span<const EpochMetrics> epochs) {
  out << "epoch,loss,lr,val_map\n";
  for (const auto& m : epochs) append_metrics_row(out, m);
}

// ---------------------------------------------------------------------------
// pruning

PruneReport prune(Network<float>& net, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("prune threshold must lie in (0, 1)");
  PruneReport report;
  std::size_t total = 0;
  std::size_t pruned = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const auto& w = layer.conv.weights.values();
    const float max_abs = w.size() ? w.cwiseAbs().maxCoeff() : 0.0f;
    const float cut = static_cast<float>(theta) * max_abs;
    if (max_abs == 0.0f) report.warnings.push_back(layer_label(net, l) + " has all-zero weights; masked entirely");
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (max_abs == 0.0f || std::abs(w[i]) < cut) layer.mask[i] = 0;
    }
    layer.apply_mask();
    LayerPruneStats stats{layer_label(net, l), layer.mask.size(), layer.mask.size() - layer.kept()};
    total += stats.weights;
    pruned += stats.pruned;
    report.layers.push_back(std::move(stats));
  }
  report.global_fraction = total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
  return report;
}

double prunable_fraction(const Network<float>& net, double theta) {
  std::size_t total = 0;
  std::size_t below = 0;
  for (const auto& layer : net.layers) {
    const auto& w = layer.conv.weights.values();
    if (w.size() == 0) continue;
    const float cut = static_cast<float>(theta) * w.cwiseAbs().maxCoeff();
    below += static_cast<std::size_t>((w.array().abs() < cut).count());
    total += static_cast<std::size_t>(w.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(total);
}

}  // namespace robodet
