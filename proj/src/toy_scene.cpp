#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "robodet/data.hpp"
#include "robodet/error.hpp"

namespace robodet {

namespace fs = std::filesystem;

namespace {

using Rgb = std::array<int, 3>;

struct Palette {
  Rgb field;
  Rgb field_far;  // color at the top edge; the field is a vertical gradient
  Rgb ball;
  Rgb ball_spot;
  Rgb crossing;
  Rgb goalpost;
  Rgb robot;
  Rgb robot_band;
  int noise;
};

// Style B shifts every color so that low-level features learned on A do not transfer as-is.
constexpr Palette kStyleA{{45, 140, 55}, {30, 105, 40}, {240, 120, 30}, {150, 60, 10}, {235, 235, 235},
                          {245, 245, 240}, {50, 50, 60}, {200, 50, 50}, 8};
constexpr Palette kStyleB{{105, 110, 150}, {140, 130, 110}, {225, 215, 60}, {120, 110, 20}, {175, 240, 240},
                          {250, 210, 150}, {35, 90, 45}, {60, 190, 230}, 14};

const Palette& palette(ToyStyle style) { return style == ToyStyle::A ? kStyleA : kStyleB; }

// Pixel extents [x0, x1) × [y0, y1).
struct PixelBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  [[nodiscard]] double cx() const { return 0.5 * (x0 + x1); }
  [[nodiscard]] double cy() const { return 0.5 * (y0 + y1); }
};

class SceneRenderer {
 public:
  SceneRenderer(Image& image, std::mt19937_64& rng, double light) : image_(image), rng_(rng), light_(light) {}

  void put(int x, int y, const Rgb& color, double shade = 1.0) {
    if (x < 0 || y < 0 || x >= image_.width || y >= image_.height) return;
    for (int c = 0; c < 3; ++c) {
      image_.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(static_cast<int>(color[c] * shade * light_), 0, 255));
    }
  }

  void field(const Palette& p, const Rgb& jitter) {
    for (int y = 0; y < image_.height; ++y) {
      const double t = static_cast<double>(y) / (image_.height - 1);
      Rgb row;
      for (int c = 0; c < 3; ++c) row[c] = static_cast<int>(p.field_far[c] + t * (p.field[c] - p.field_far[c])) + jitter[c];
      for (int x = 0; x < image_.width; ++x) put(x, y, row);
    }
  }

  void ball(const PixelBox& b, const Palette& p) {
    const int r = (b.x1 - b.x0 - 1) / 2;
    const int cx = b.x0 + r;
    const int cy = b.y0 + r;
    for (int y = -r; y <= r; ++y) {
      for (int x = -r; x <= r; ++x) {
        if (x * x + y * y > r * r) continue;
        const bool spot = (x - r / 3) * (x - r / 3) + (y - r / 3) * (y - r / 3) <= (r * r) / 6;
        put(cx + x, cy + y, spot ? p.ball_spot : p.ball, 1.0 - 0.15 * (x + y) / (2.0 * r));
      }
    }
  }

  void crossing(const PixelBox& b, const Palette& p) {
    const int arm = (b.x1 - b.x0 - 1) / 2;
    const int cx = b.x0 + arm;
    const int cy = b.y0 + arm;
    for (int d = -arm; d <= arm; ++d) {
      for (int t = -1; t <= 0; ++t) {
        put(cx + d, cy + t, p.crossing);
        put(cx + t, cy + d, p.crossing);
      }
    }
  }

  void goalpost(const PixelBox& b, const Palette& p) {
    const int w = b.x1 - b.x0;
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) put(x, y, p.goalpost, 0.8 + 0.2 * (x - b.x0) / std::max(1, w - 1));
    }
  }

  void robot(const PixelBox& b, const Palette& p) {
    const int w = b.x1 - b.x0;
    const int h = b.y1 - b.y0;
    const int radius = std::min(5, std::min(w, h) / 4);
    const int band0 = b.y0 + h / 3;
    const int band1 = band0 + std::max(3, h / 8);
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        // rounded corners: skip pixels outside the corner circles
        const int dx = std::max({b.x0 + radius - x, x - (b.x1 - 1 - radius), 0});
        const int dy = std::max({b.y0 + radius - y, y - (b.y1 - 1 - radius), 0});
        if (dx * dx + dy * dy > radius * radius) continue;
        put(x, y, (y >= band0 && y < band1) ? p.robot_band : p.robot);
      }
    }
  }

  void noise(int amplitude) {
    std::uniform_int_distribution<int> dist(-amplitude, amplitude);
    for (auto& v : image_.rgb) v = static_cast<std::uint8_t>(std::clamp(v + dist(rng_), 0, 255));
  }

 private:
  Image& image_;
  std::mt19937_64& rng_;
  double light_;
};

int uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Box extents for a class, placed at a random position fully inside the image.
PixelBox sample_box(int cls, std::mt19937_64& rng, int width, int height) {
  int w = 0;
  int h = 0;
  switch (cls) {
    case kBall: w = h = 2 * uniform(rng, 4, 9) + 1; break;
    case kCrossing: w = h = 2 * uniform(rng, 5, 10) + 1; break;
    case kGoalpost:
      w = uniform(rng, 6, 12);
      h = uniform(rng, 40, 90);
      break;
    default:
      w = uniform(rng, 18, 34);
      h = uniform(rng, 30, 60);
      break;
  }
  const int x0 = uniform(rng, 1, width - 1 - w);
  const int y0 = uniform(rng, 1, height - 1 - h);
  return {x0, y0, x0 + w, y0 + h};
}

bool overlaps(const PixelBox& a, const PixelBox& b, int margin) {
  return a.x0 < b.x1 + margin && b.x0 < a.x1 + margin && a.y0 < b.y1 + margin && b.y0 < a.y1 + margin;
}

constexpr int kMaxObjects = 4;
constexpr int kPlacementAttempts = 60;
constexpr int kBoxMargin = 3;
// Same-class objects are kept far enough apart that no coarse grid cell holds two.
constexpr double kSameClassSpacing = 96.0;

Sample render_scene(std::mt19937_64& rng, const Palette& p, std::vector<int>& deck, std::size_t& deck_pos) {
  Image image(kToyWidth, kToyHeight);
  const double light = std::uniform_real_distribution<double>(0.85, 1.15)(rng);
  SceneRenderer draw(image, rng, light);
  draw.field(p, {uniform(rng, -10, 10), uniform(rng, -10, 10), uniform(rng, -10, 10)});

  auto next_class = [&] {
    if (deck_pos == deck.size()) {
      std::shuffle(deck.begin(), deck.end(), rng);
      deck_pos = 0;
    }
    return deck[deck_pos++];
  };

  Sample sample;
  std::vector<std::pair<int, PixelBox>> placed;
  const int objects = uniform(rng, 0, kMaxObjects);
  for (int o = 0; o < objects; ++o) {
    const int cls = next_class();
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      const PixelBox box = sample_box(cls, rng, kToyWidth, kToyHeight);
      const bool blocked = std::any_of(placed.begin(), placed.end(), [&](const auto& other) {
        if (overlaps(box, other.second, kBoxMargin)) return true;
        return other.first == cls &&
               std::hypot(box.cx() - other.second.cx(), box.cy() - other.second.cy()) < kSameClassSpacing;
      });
      if (!blocked) {
        placed.emplace_back(cls, box);
        break;
      }
    }
  }
  for (const auto& [cls, box] : placed) {
    switch (cls) {
      case kBall: draw.ball(box, p); break;
      case kCrossing: draw.crossing(box, p); break;
      case kGoalpost: draw.goalpost(box, p); break;
      default: draw.robot(box, p); break;
    }
    Annotation a;
    a.class_id = cls;
    a.box = {box.cx() / kToyWidth, box.cy() / kToyHeight, static_cast<double>(box.x1 - box.x0) / kToyWidth,
             static_cast<double>(box.y1 - box.y0) / kToyHeight};
    sample.annotations.push_back(a);
  }
  draw.noise(p.noise);
  sample.image = std::move(image);
  return sample;
}

}  // namespace

Dataset generate_toy_samples(int n, ToyStyle style, std::uint64_t seed) {
  if (n < 1) throw ValidationError("toy dataset needs n >= 1, got " + std::to_string(n));
  std::mt19937_64 rng(seed);
  std::vector<int> deck;
  for (int c = 0; c < kNumClasses; ++c) deck.insert(deck.end(), 4, c);
  std::size_t deck_pos = deck.size();
  Dataset data;
  data.image_width = kToyWidth;
  data.image_height = kToyHeight;
  data.samples.reserve(n);
  for (int i = 0; i < n; ++i) data.samples.push_back(render_scene(rng, palette(style), deck, deck_pos));
  return data;
}

DatasetIndex generate_toy_dataset(int n, ToyStyle style, std::uint64_t seed, const fs::path& out_dir) {
  const Dataset data = generate_toy_samples(n, style, seed);
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "labels");
  DatasetIndex index;
  index.root = out_dir;
  index.image_width = kToyWidth;
  index.image_height = kToyHeight;
  for (int i = 0; i < n; ++i) {
    std::ostringstream stem;
    stem << std::setw(6) << std::setfill('0') << i;
    DatasetEntry entry{fs::path("images") / (stem.str() + ".ppm"), fs::path("labels") / (stem.str() + ".txt")};
    write_ppm(data.samples[i].image, out_dir / entry.image);
    save_annotations(out_dir / entry.annotation, data.samples[i].annotations);
    index.entries.push_back(std::move(entry));
  }
  write_index(index);
  return index;
}

}  // namespace robodet
