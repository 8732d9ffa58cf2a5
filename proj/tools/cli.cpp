#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "robodet/data.hpp"
#include "robodet/error.hpp"
#include "robodet/eval.hpp"
#include "robodet/perf.hpp"
#include "robodet/render.hpp"
#include "robodet/train.hpp"
#include "robodet/weights_io.hpp"

namespace robodet::cli {

namespace fs = std::filesystem;

namespace {

// Training-related flags. Each flag is optional on the command line; when present it
// overrides the value from --config, which in turn overrides the built-in defaults.
class SettingFlags {
 public:
  explicit SettingFlags(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_, "key = value training config file (flags take precedence)")
        ->check(CLI::ExistingFile);
  }

  template <typename T>
  void bind(const std::string& name, T TrainConfig::*field, const std::string& help) {
    CLI::Option* opt = app_->add_option(name, parsed_.train.*field, help);
    bindings_.emplace_back(opt, [this, field](TrainSettings& s) { s.train.*field = parsed_.train.*field; });
  }

  void bind(const std::string& name, double LossWeights::*field, const std::string& help) {
    CLI::Option* opt = app_->add_option(name, parsed_.loss.*field, help);
    bindings_.emplace_back(opt, [this, field](TrainSettings& s) { s.loss.*field = parsed_.loss.*field; });
  }

  void bind_transfer_layers(const std::string& help) {
    CLI::Option* opt = app_->add_option("--layers", transfer_layers_, help)->default_str("none");
    bindings_.emplace_back(opt, [this](TrainSettings& s) { s.train.transfer_layers = transfer_layers_; });
  }

  void bind_common() {
    bind("--epochs", &TrainConfig::epochs, "training epochs");
    bind("--batch", &TrainConfig::batch, "minibatch size");
    bind("--lr-max", &TrainConfig::lr_max, "initial learning rate of the cosine schedule");
    bind("--lr-min", &TrainConfig::lr_min, "final learning rate of the cosine schedule");
    bind("--seed", &TrainConfig::seed, "seed for initialization, shuffling and augmentation");
    bind("--augment", &TrainConfig::augment, "random flip and color jitter (true|false)");
    bind("--val-every", &TrainConfig::val_every, "validate every N epochs when --val is given");
    bind("--lambda-coord", &LossWeights::coord, "box regression loss weight");
    bind("--lambda-obj", &LossWeights::obj, "objectness loss weight for responsible slots");
    bind("--lambda-noobj", &LossWeights::noobj, "objectness loss weight for empty slots");
    bind("--lambda-l1", &LossWeights::l1, "L1 weight regularization");
  }

  [[nodiscard]] TrainSettings resolve() const {
    TrainSettings s = config_.empty() ? TrainSettings{} : load_train_settings(config_);
    for (const auto& [opt, apply] : bindings_) {
      if (opt->count() > 0) apply(s);
    }
    s.train.validate();
    validate(s.loss);
    return s;
  }

 private:
  CLI::App* app_;
  std::string config_;
  TrainSettings parsed_;
  int transfer_layers_ = 0;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainSettings&)>>> bindings_;
};

Dataset load_filtered(const std::string& path, double min_size_px, Split split = Split::train) {
  const DatasetIndex index = read_index(path, split);
  std::optional<double> min_wh;
  if (min_size_px > 0.0) min_wh = min_size_px / index.image_width;
  return load_dataset(index, min_wh);
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string model_label(const fs::path& weights) { return weights.stem().string(); }

// Writes the CSV header once, then one row per epoch as training progresses.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) {
    if (path.empty()) return;
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    file_.open(path, std::ios::app);
    if (!file_) throw std::runtime_error("cannot open '" + path + "' for writing");
    if (fresh) file_ << "epoch,loss,lr,val_map\n";
  }

  void add(const EpochMetrics& m) {
    if (!file_.is_open()) return;
    append_metrics_row(file_, m);
    file_.flush();
  }

 private:
  std::ofstream file_;
};

void print_epoch(std::ostream& out, const EpochMetrics& m) {
  out << "epoch " << m.epoch << " loss " << fixed(m.loss) << " lr " << std::setprecision(3) << std::scientific << m.lr
      << std::defaultfloat;
  if (m.val_map) out << " val_map@dist16 " << fixed(*m.val_map, 4);
  out << "\n";
}

TrainHooks make_hooks(const Dataset* val, MetricsLog& metrics, std::ostream& out) {
  TrainHooks hooks;
  hooks.validation = val;
  hooks.on_epoch = [&metrics, &out](const EpochMetrics& m) {
    metrics.add(m);
    print_epoch(out, m);
  };
  return hooks;
}

void print_prune_report(std::ostream& out, const PruneReport& report) {
  out << std::left << std::setw(9) << "layer" << std::right << std::setw(10) << "weights" << std::setw(10) << "pruned"
      << std::setw(10) << "fraction" << "\n";
  for (const auto& l : report.layers) {
    out << std::left << std::setw(9) << l.label << std::right << std::setw(10) << l.weights << std::setw(10)
        << l.pruned << std::setw(10) << fixed(l.fraction(), 4) << "\n";
  }
  out << "global pruned fraction " << fixed(report.global_fraction, 4) << "\n";
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";
}

Tensor<float> bench_input(const ModelSpec& spec, std::uint64_t seed) {
  const Dataset scene = generate_toy_samples(1, ToyStyle::A, seed);
  const std::vector<const Image*> images{&scene.samples[0].image};
  return make_batch(images, spec.height, spec.width);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"robodet: ROBO single-shot detector for robot-soccer scenes"};
  app.name("robodet");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a deterministic toy soccer dataset");
  int gen_n = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_style = "A";
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of images")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--style", gen_style, "palette style")->check(CLI::IsMember({"A", "B"}));
  gen->add_option("--out", gen_out, "output directory")->required();

  // anchors
  auto* anchors_cmd = app.add_subcommand("anchors", "compute per-class anchors from a dataset's annotations");
  std::string anchors_data;
  std::string anchors_out;
  double anchors_min_size = 8.0;
  anchors_cmd->add_option("--data", anchors_data, "dataset directory or index file")
      ->required()
      ->check(CLI::ExistingPath);
  anchors_cmd->add_option("--out", anchors_out, "anchors file (default: <data>/anchors.txt)");
  anchors_cmd->add_option("--min-size", anchors_min_size, "drop boxes narrower or shorter than this many pixels");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a detector from scratch");
  std::string train_data;
  std::string train_val;
  std::string train_model = "robo";
  int train_k = 1;
  std::string train_out = "robo.rbw";
  std::string train_metrics = "metrics.csv";
  double train_min_size = 8.0;
  train_cmd->add_option("--data", train_data, "training dataset directory or index file")
      ->required()
      ->check(CLI::ExistingPath);
  train_cmd->add_option("--val", train_val, "validation dataset for periodic mAP@dist16")->check(CLI::ExistingPath);
  train_cmd->add_option("--model", train_model, "architecture")->check(CLI::IsMember({"robo", "robo_bn", "robo_hr"}));
  train_cmd->add_option("--k", train_k, "input scale factor (input k*192 x k*256)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", train_out, "output weight file");
  train_cmd->add_option("--metrics", train_metrics, "per-epoch metrics CSV (appended)");
  train_cmd->add_option("--min-size", train_min_size, "drop boxes narrower or shorter than this many pixels");
  SettingFlags train_flags(train_cmd);
  train_flags.bind_common();

  // transfer
  auto* transfer_cmd = app.add_subcommand("transfer", "fine-tune a pretrained detector on a new dataset");
  std::string transfer_weights;
  std::string transfer_data;
  std::string transfer_val;
  std::string transfer_out = "transfer.rbw";
  std::string transfer_metrics = "transfer_metrics.csv";
  double transfer_min_size = 8.0;
  transfer_cmd->add_option("--weights", transfer_weights, "pretrained weight file")
      ->required()
      ->check(CLI::ExistingFile);
  transfer_cmd->add_option("--data", transfer_data, "target dataset directory or index file")
      ->required()
      ->check(CLI::ExistingPath);
  transfer_cmd->add_option("--val", transfer_val, "validation dataset")->check(CLI::ExistingPath);
  transfer_cmd->add_option("--out", transfer_out, "output weight file");
  transfer_cmd->add_option("--metrics", transfer_metrics, "per-epoch metrics CSV (appended)");
  transfer_cmd->add_option("--min-size", transfer_min_size, "drop boxes narrower or shorter than this many pixels");
  SettingFlags transfer_flags(transfer_cmd);
  transfer_flags.bind_common();
  transfer_flags.bind_transfer_layers("backbone layers 1..k train at the full rate (0 = whole net at the reduced rate)");
  transfer_flags.bind("--transfer-lr-factor", &TrainConfig::transfer_lr_factor,
                      "learning-rate divisor for layers past --layers and the heads");

  // prune
  auto* prune_cmd = app.add_subcommand("prune", "magnitude-prune a trained detector, optionally fine-tuning");
  std::string prune_weights;
  std::string prune_data;
  std::string prune_val;
  std::string prune_out = "pruned.rbw";
  std::string prune_metrics = "prune_metrics.csv";
  double prune_min_size = 8.0;
  prune_cmd->add_option("--weights", prune_weights, "trained weight file")->required()->check(CLI::ExistingFile);
  prune_cmd->add_option("--data", prune_data, "fine-tune on this dataset after pruning")->check(CLI::ExistingPath);
  prune_cmd->add_option("--val", prune_val, "validation dataset")->check(CLI::ExistingPath);
  prune_cmd->add_option("--out", prune_out, "output weight file");
  prune_cmd->add_option("--metrics", prune_metrics, "per-epoch fine-tune metrics CSV (appended)");
  prune_cmd->add_option("--min-size", prune_min_size, "drop boxes narrower or shorter than this many pixels");
  SettingFlags prune_flags(prune_cmd);
  prune_flags.bind("--threshold", &TrainConfig::prune_threshold, "prune |w| < threshold * max|w| per layer");
  prune_flags.bind("--finetune-epochs", &TrainConfig::finetune_epochs, "fine-tuning epochs with masks frozen");
  prune_flags.bind("--finetune-lr", &TrainConfig::finetune_lr, "constant fine-tuning learning rate");
  prune_flags.bind("--batch", &TrainConfig::batch, "minibatch size");
  prune_flags.bind("--seed", &TrainConfig::seed, "seed for shuffling and augmentation");
  prune_flags.bind("--augment", &TrainConfig::augment, "random flip and color jitter (true|false)");
  prune_flags.bind("--val-every", &TrainConfig::val_every, "validate every N epochs when --val is given");
  prune_flags.bind("--lambda-l1", &LossWeights::l1, "L1 weight regularization during fine-tuning");

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "run a detector on PPM images");
  std::string detect_weights;
  std::vector<std::string> detect_images;
  double detect_conf = 0.5;
  double detect_nms = 0.0;
  std::string detect_out_dir = ".";
  bool detect_sparse = false;
  detect_cmd->add_option("--weights", detect_weights, "weight file")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--image", detect_images, "input PPM image (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  detect_cmd->add_option("--conf", detect_conf, "confidence threshold")->check(CLI::Range(0.0, 1.0));
  auto* nms_opt = detect_cmd->add_option("--nms", detect_nms, "per-class NMS IoU threshold (off when omitted)")
                      ->check(CLI::Range(0.0, 1.0));
  detect_cmd->add_option("--out-dir", detect_out_dir, "directory for detection dumps and overlays");
  detect_cmd->add_flag("--sparse", detect_sparse, "use the sparse execution path for pruned layers");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "mAP over the IoU and center-distance sweep");
  std::vector<std::string> eval_weights;
  std::string eval_data;
  double eval_conf = 0.01;
  double eval_nms = 0.0;
  double eval_min_size = 8.0;
  std::string eval_csv;
  std::string eval_per_class;
  eval_cmd->add_option("--weights", eval_weights, "weight file (repeatable, one row per model)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "evaluation dataset directory or index file")
      ->required()
      ->check(CLI::ExistingPath);
  eval_cmd->add_option("--conf", eval_conf, "confidence threshold")->check(CLI::Range(0.0, 1.0));
  auto* eval_nms_opt = eval_cmd->add_option("--nms", eval_nms, "per-class NMS IoU threshold (off when omitted)")
                           ->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--min-size", eval_min_size, "drop boxes narrower or shorter than this many pixels");
  eval_cmd->add_option("--csv", eval_csv, "write the mAP table as CSV");
  eval_cmd->add_option("--per-class", eval_per_class, "write per-class AP and counts as CSV");

  // ops
  auto* ops_cmd = app.add_subcommand("ops", "multiply-accumulate counts per layer");
  std::string ops_model = "robo";
  int ops_k = 2;
  std::string ops_weights;
  std::string ops_csv;
  bool ops_compare = false;
  ops_cmd->add_option("--model", ops_model, "architecture")->check(CLI::IsMember({"robo", "robo_bn", "robo_hr"}));
  ops_cmd->add_option("--k", ops_k, "input scale factor")->check(CLI::PositiveNumber);
  ops_cmd->add_option("--weights", ops_weights, "count effective MACs from this weight file's nonzero weights")
      ->check(CLI::ExistingFile);
  ops_cmd->add_option("--csv", ops_csv, "also write the table as CSV");
  ops_cmd->add_flag("--compare", ops_compare, "compare against Tiny-YOLOv3 at 416x416 and the other ROBO variants");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "single-threaded forward-pass timing");
  std::string bench_model = "robo";
  int bench_k = 1;
  std::string bench_weights;
  int bench_repeats = 20;
  bool bench_sparse = false;
  std::uint64_t bench_seed = 0;
  bench_cmd->add_option("--model", bench_model, "architecture")->check(CLI::IsMember({"robo", "robo_bn", "robo_hr"}));
  bench_cmd->add_option("--k", bench_k, "input scale factor")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--weights", bench_weights, "weight file (randomly initialized when omitted)")
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--repeats", bench_repeats, "timed runs after one warmup")->check(CLI::Range(3, 1000000));
  bench_cmd->add_flag("--sparse", bench_sparse, "use the sparse execution path for pruned layers");
  bench_cmd->add_option("--seed", bench_seed, "seed for random weights and the input scene");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (gen->parsed()) {
      const auto style = parse_toy_style(gen_style);
      const DatasetIndex index = generate_toy_dataset(gen_n, *style, gen_seed, gen_out);
      out << "wrote " << index.entries.size() << " images to " << gen_out << "\n";
    } else if (anchors_cmd->parsed()) {
      const DatasetIndex index = read_index(anchors_data);
      std::vector<Annotation> all;
      for (const auto& entry : index.entries) {
        auto boxes = load_annotations(index.root / entry.annotation);
        if (anchors_min_size > 0.0) boxes = filter_min_size(boxes, anchors_min_size / index.image_width);
        all.insert(all.end(), boxes.begin(), boxes.end());
      }
      const AnchorSet anchors = compute_anchors(all);
      const fs::path path = anchors_out.empty() ? index.root / "anchors.txt" : fs::path(anchors_out);
      std::ofstream file(path);
      if (!file) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
      for (int c = 0; c < kNumClasses; ++c) {
        file << c << " " << fixed(anchors[c].w) << " " << fixed(anchors[c].h) << "\n";
        out << class_name(c) << " " << fixed(anchors[c].w) << " " << fixed(anchors[c].h) << "\n";
      }
      out << "wrote " << path.string() << "\n";
    } else if (train_cmd->parsed()) {
      const TrainSettings s = train_flags.resolve();
      const ModelSpec spec = build_model(train_model, train_k);
      const Dataset data = load_filtered(train_data, train_min_size);
      std::optional<Dataset> val;
      if (!train_val.empty()) val = load_filtered(train_val, train_min_size, Split::val);
      Network<float> net = init_network<float>(spec, s.train.seed);
      MetricsLog metrics(train_metrics);
      const TrainLog log = train_loop(net, data, s.train, s.loss, make_hooks(val ? &*val : nullptr, metrics, out));
      if (log.collisions > 0) out << "note: " << log.collisions << " same-cell same-class target collisions\n";
      save_weights(net, train_out);
      out << "wrote " << train_out << "\n";
    } else if (transfer_cmd->parsed()) {
      const TrainSettings s = transfer_flags.resolve();
      if (!s.train.transfer_layers) throw ValidationError("transfer needs --layers (or transfer_layers in --config)");
      Network<float> net = load_weights(transfer_weights);
      const Dataset data = load_filtered(transfer_data, transfer_min_size);
      std::optional<Dataset> val;
      if (!transfer_val.empty()) val = load_filtered(transfer_val, transfer_min_size, Split::val);
      out << "retraining layers 1.." << *s.train.transfer_layers << " at the full rate ("
          << retrainable_params(net.spec, *s.train.transfer_layers) << " parameters)\n";
      MetricsLog metrics(transfer_metrics);
      transfer_finetune(net, data, s.train, s.loss, make_hooks(val ? &*val : nullptr, metrics, out));
      save_weights(net, transfer_out);
      out << "wrote " << transfer_out << "\n";
    } else if (prune_cmd->parsed()) {
      const TrainSettings s = prune_flags.resolve();
      Network<float> net = load_weights(prune_weights);
      print_prune_report(out, prune(net, s.train.prune_threshold));
      if (!prune_data.empty() && s.train.finetune_epochs > 0) {
        const Dataset data = load_filtered(prune_data, prune_min_size);
        std::optional<Dataset> val;
        if (!prune_val.empty()) val = load_filtered(prune_val, prune_min_size, Split::val);
        MetricsLog metrics(prune_metrics);
        finetune_pruned(net, data, s.train, s.loss, make_hooks(val ? &*val : nullptr, metrics, out));
      }
      save_weights(net, prune_out);
      out << "wrote " << prune_out << "\n";
    } else if (detect_cmd->parsed()) {
      const Network<float> net = load_weights(detect_weights);
      const auto plan = compile(net, {detect_sparse});
      const std::optional<double> nms_iou = nms_opt->count() > 0 ? std::optional(detect_nms) : std::nullopt;
      fs::create_directories(detect_out_dir);
      for (const auto& path : detect_images) {
        const Image image = read_ppm(path);
        const std::vector<const Image*> batch{&image};
        const auto raw = infer(plan, make_batch(batch, net.spec.height, net.spec.width));
        const auto dets = detections_from(raw, net.spec, net.anchors, detect_conf, nms_iou);
        const fs::path stem = fs::path(detect_out_dir) / fs::path(path).stem();
        std::ofstream dump(stem.string() + ".txt");
        if (!dump) throw std::runtime_error("cannot open '" + stem.string() + ".txt' for writing");
        out << "# " << path << ": " << dets.size() << " detections\n";
        for (const auto& d : dets) {
          const std::string line = std::to_string(d.class_id) + " " + fixed(d.confidence) + " " + fixed(d.box.cx) + " " +
                                   fixed(d.box.cy) + " " + fixed(d.box.w) + " " + fixed(d.box.h) + "\n";
          dump << line;
          out << line;
        }
        render_overlay(image, dets, stem.string() + "_overlay.ppm");
      }
    } else if (eval_cmd->parsed()) {
      const Dataset data = load_filtered(eval_data, eval_min_size, Split::val);
      EvalOptions options;
      options.conf_threshold = eval_conf;
      if (eval_nms_opt->count() > 0) options.nms_iou = eval_nms;
      const auto sweep = default_sweep();
      std::vector<ModelReports> rows;
      for (const auto& path : eval_weights) {
        const Network<float> net = load_weights(path);
        rows.push_back({model_label(path), evaluate(net, data, sweep, options)});
      }
      out << std::left << std::setw(16) << "model";
      for (const auto& c : sweep) out << std::right << std::setw(11) << c.label();
      out << "\n";
      for (const auto& row : rows) {
        out << std::left << std::setw(16) << row.model;
        for (const auto& r : row.reports) out << std::right << std::setw(11) << fixed(r.map, 4);
        out << "\n";
        for (const auto& w : row.reports.front().warnings) out << "warning: " << w << "\n";
      }
      if (!eval_csv.empty()) {
        std::ofstream csv(eval_csv);
        if (!csv) throw std::runtime_error("cannot open '" + eval_csv + "' for writing");
        write_report_csv(csv, rows);
      }
      if (!eval_per_class.empty()) {
        std::ofstream csv(eval_per_class);
        if (!csv) throw std::runtime_error("cannot open '" + eval_per_class + "' for writing");
        write_per_class_csv(csv, rows);
      }
    } else if (ops_cmd->parsed()) {
      OpReport report;
      if (ops_weights.empty()) {
        report = count_macs(build_model(ops_model, ops_k));
      } else {
        const Network<float> net = load_weights(ops_weights);
        report = count_macs(net);
        report.model += "_" + model_label(ops_weights);
      }
      print_op_table(out, report);
      if (!ops_csv.empty()) {
        std::ofstream csv(ops_csv);
        if (!csv) throw std::runtime_error("cannot open '" + ops_csv + "' for writing");
        write_op_csv(csv, report);
      }
      if (ops_compare) {
        std::vector<OpReport> reports{tiny_yolo_v3_report(), count_macs(build_robo(ops_k)),
                                      count_macs(build_robo_bn(ops_k)), count_macs(build_robo_hr())};
        if (!ops_weights.empty()) reports.push_back(report);
        out << "\n";
        print_comparison(out, reports);
      }
    } else if (bench_cmd->parsed()) {
      const Network<float> net = bench_weights.empty()
                                     ? init_network<float>(build_model(bench_model, bench_k), bench_seed)
                                     : load_weights(bench_weights);
      const auto plan = compile(net, {bench_sparse});
      const auto result = benchmark(plan, bench_input(net.spec, bench_seed), bench_repeats);
      out << net.spec.name << " " << net.spec.width << "x" << net.spec.height << (bench_sparse ? " sparse" : " dense")
          << " (" << plan.sparse_layers() << " sparse layers): " << fixed(result.mean_ms, 3) << " +- "
          << fixed(result.std_ms, 3) << " ms, " << fixed(result.fps(), 1) << " FPS over " << bench_repeats
          << " runs\n";
    }
  } catch (const std::invalid_argument& e) {  // ValidationError, ShapeError
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace robodet::cli
