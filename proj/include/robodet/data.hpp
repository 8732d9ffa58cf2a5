#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "robodet/detect.hpp"
#include "robodet/tensor.hpp"

namespace robodet {

/// 8-bit interleaved RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int channel) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
  }
  std::uint8_t at(int x, int y, int channel) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// --- image files (binary PPM, P6, maxval 255) ---
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);
/// Width and height from a PPM header without decoding the pixels.
std::pair<int, int> ppm_size(const std::filesystem::path& path);

// --- annotations: one `class_id cx cy w h` line per box, normalized ---
std::vector<Annotation> parse_annotations(std::string_view text, std::string_view source = "<memory>");
std::vector<Annotation> load_annotations(const std::filesystem::path& path);
std::string format_annotations(std::span<const Annotation> annotations);
void save_annotations(const std::filesystem::path& path, std::span<const Annotation> annotations);

/// Drops boxes narrower or shorter than `min_wh` (normalized).
std::vector<Annotation> filter_min_size(std::span<const Annotation> annotations, double min_wh);
/// 8 px expressed relative to the image width.
inline double default_min_size(int image_width) { return 8.0 / image_width; }

// --- color ---

/// BT.601 full-range RGB → YUV as a (1, 3, h, w) tensor scaled to [0, 1], chroma centered on 128/255.
Tensor<float> rgb_to_yuv(const Image& image);
/// Writes the YUV planes of `image` into sample `n` of `batch`.
void rgb_to_yuv(const Image& image, Tensor<float>& batch, int n);
/// Inverse of rgb_to_yuv (rounded and clamped to 8 bits).
Image yuv_to_rgb(const Tensor<float>& yuv, int n = 0);

/// Bilinear resize (box-filtered when shrinking by an integer factor).
Image resize(const Image& image, int width, int height);

// --- datasets ---

enum class Split { train, val };

struct DatasetEntry {
  std::filesystem::path image;       // relative to the index root
  std::filesystem::path annotation;  // relative to the index root
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
  Split split = Split::train;
  int image_width = 640;
  int image_height = 480;
};

/// Reads `index.txt` (or the given file). Image dimensions come from the first image.
DatasetIndex read_index(const std::filesystem::path& path, Split split = Split::train);
void write_index(const DatasetIndex& index);

struct Sample {
  Image image;
  std::vector<Annotation> annotations;
};

struct Dataset {
  std::vector<Sample> samples;
  int image_width = 640;
  int image_height = 480;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] std::vector<Annotation> all_annotations() const;
};

/// Loads every entry, optionally discarding small boxes. Files are decoded in
/// parallel, capped by ROBODET_THREADS.
Dataset load_dataset(const DatasetIndex& index, std::optional<double> min_wh = std::nullopt);

/// Worker count for data loading: ROBODET_THREADS if set, else hardware concurrency.
int loader_threads();

/// Converts images to a network input batch, resizing to (height, width) when needed.
Tensor<float> make_batch(std::span<const Image* const> images, int height, int width);

// --- toy soccer scenes ---

enum class ToyStyle { A, B };

std::optional<ToyStyle> parse_toy_style(std::string_view text);

inline constexpr int kToyWidth = 256;
inline constexpr int kToyHeight = 192;

/// Renders `n` deterministic scenes with exact annotations.
Dataset generate_toy_samples(int n, ToyStyle style, std::uint64_t seed);

/// Renders scenes to `out_dir/images`, `out_dir/labels` and writes `out_dir/index.txt`.
DatasetIndex generate_toy_dataset(int n, ToyStyle style, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace robodet
