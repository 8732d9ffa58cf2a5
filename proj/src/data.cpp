#include "robodet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>
#include <tuple>

#include "robodet/error.hpp"

namespace robodet {

namespace fs = std::filesystem;

namespace {

// Reads the next header token, skipping whitespace and `#` comments.
std::string ppm_token(std::istream& in) {
  std::string token;
  while (in) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) break;
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

struct PpmHeader {
  int width = 0;
  int height = 0;
};

PpmHeader read_ppm_header(std::istream& in, const fs::path& path) {
  if (ppm_token(in) != "P6") throw ValidationError("'" + path.string() + "' is not a binary PPM (P6)");
  PpmHeader h;
  try {
    h.width = std::stoi(ppm_token(in));
    h.height = std::stoi(ppm_token(in));
    if (std::stoi(ppm_token(in)) != 255) throw ValidationError("'" + path.string() + "': maxval must be 255");
  } catch (const std::logic_error&) {
    throw ValidationError("'" + path.string() + "': malformed PPM header");
  }
  if (h.width <= 0 || h.height <= 0) throw ValidationError("'" + path.string() + "': bad PPM dimensions");
  return h;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path.string() + "'");
  const auto header = read_ppm_header(in, path);
  Image image(header.width, header.height);
  in.read(reinterpret_cast<char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.rgb.size())) {
    throw ValidationError("'" + path.string() + "': truncated pixel data");
  }
  return image;
}

void write_ppm(const Image& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::pair<int, int> ppm_size(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path.string() + "'");
  const auto header = read_ppm_header(in, path);
  return {header.width, header.height};
}

std::vector<Annotation> parse_annotations(std::string_view text, std::string_view source) {
  std::vector<Annotation> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first)) continue;
    Annotation a;
    std::string extra;
    try {
      std::size_t used = 0;
      a.class_id = std::stoi(first, &used);
      if (used != first.size()) throw std::invalid_argument(first);
    } catch (const std::logic_error&) {
      throw ValidationError(where + "malformed class id '" + first + "'");
    }
    if (!(fields >> a.box.cx >> a.box.cy >> a.box.w >> a.box.h) || (fields >> extra)) {
      throw ValidationError(where + "expected `class_id cx cy w h`");
    }
    if (a.class_id < 0 || a.class_id >= kNumClasses) {
      throw ValidationError(where + "class id " + std::to_string(a.class_id) + " outside 0.." +
                            std::to_string(kNumClasses - 1));
    }
    const auto& b = a.box;
    if (!(b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 && b.cy <= 1.0)) {
      throw ValidationError(where + "box center outside [0, 1]");
    }
    if (!(b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0)) {
      throw ValidationError(where + "box size outside (0, 1]");
    }
    out.push_back(a);
  }
  return out;
}

std::vector<Annotation> load_annotations(const fs::path& path) {
  return parse_annotations(read_text(path), path.string());
}

std::string format_annotations(std::span<const Annotation> annotations) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  for (const auto& a : annotations) {
    out << a.class_id << " " << a.box.cx << " " << a.box.cy << " " << a.box.w << " " << a.box.h << "\n";
  }
  return out.str();
}

void save_annotations(const fs::path& path, std::span<const Annotation> annotations) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << format_annotations(annotations);
}

std::vector<Annotation> filter_min_size(std::span<const Annotation> annotations, double min_wh) {
  std::vector<Annotation> out;
  for (const auto& a : annotations) {
    if (a.box.w >= min_wh && a.box.h >= min_wh) out.push_back(a);
  }
  return out;
}

void rgb_to_yuv(const Image& image, Tensor<float>& batch, int n) {
  const Shape& s = batch.shape();
  if (s.c != 3 || s.h != image.height || s.w != image.width || n < 0 || n >= s.n) {
    throw ShapeError("rgb_to_yuv: image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " does not fit batch " + to_string(s));
  }
  const int plane = image.width * image.height;
  float* y = batch.sample(n).data();
  float* u = y + plane;
  float* v = u + plane;
  constexpr float kScale = 1.0f / 255.0f;
  const std::uint8_t* px = image.rgb.data();
  for (int i = 0; i < plane; ++i, px += 3) {
    const float r = px[0];
    const float g = px[1];
    const float b = px[2];
    y[i] = (0.299f * r + 0.587f * g + 0.114f * b) * kScale;
    u[i] = (-0.168736f * r - 0.331264f * g + 0.5f * b + 128.0f) * kScale;
    v[i] = (0.5f * r - 0.418688f * g - 0.081312f * b + 128.0f) * kScale;
  }
}

Tensor<float> rgb_to_yuv(const Image& image) {
  Tensor<float> out(Shape{1, 3, image.height, image.width});
  rgb_to_yuv(image, out, 0);
  return out;
}

Image yuv_to_rgb(const Tensor<float>& yuv, int n) {
  const Shape& s = yuv.shape();
  if (s.c != 3) throw ShapeError("yuv_to_rgb expects 3 channels, got " + to_string(s));
  Image image(s.w, s.h);
  const int plane = s.plane();
  const float* y = yuv.sample(n).data();
  const float* u = y + plane;
  const float* v = u + plane;
  for (int i = 0; i < plane; ++i) {
    const double yy = 255.0 * y[i];
    const double uu = 255.0 * u[i] - 128.0;
    const double vv = 255.0 * v[i] - 128.0;
    image.rgb[3 * i + 0] = to_byte(yy + 1.402 * vv);
    image.rgb[3 * i + 1] = to_byte(yy - 0.344136 * uu - 0.714136 * vv);
    image.rgb[3 * i + 2] = to_byte(yy + 1.772 * uu);
  }
  return image;
}

Image resize(const Image& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  Image out(width, height);
  if (image.width % width == 0 && image.height % height == 0) {
    const int fx = image.width / width;
    const int fy = image.height / height;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          int sum = 0;
          for (int dy = 0; dy < fy; ++dy) {
            for (int dx = 0; dx < fx; ++dx) sum += image.at(x * fx + dx, y * fy + dy, ch);
          }
          out.at(x, y, ch) = static_cast<std::uint8_t>((sum + fx * fy / 2) / (fx * fy));
        }
      }
    }
    return out;
  }
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(src_y);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = src_y - y0;
    for (int x = 0; x < width; ++x) {
      const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(src_x);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = src_x - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1 - wx) * image.at(x0, y0, ch) + wx * image.at(x1, y0, ch);
        const double bottom = (1 - wx) * image.at(x0, y1, ch) + wx * image.at(x1, y1, ch);
        out.at(x, y, ch) = to_byte((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

DatasetIndex read_index(const fs::path& path, Split split) {
  const fs::path file = fs::is_directory(path) ? path / "index.txt" : path;
  DatasetIndex index;
  index.root = file.parent_path();
  index.split = split;
  std::istringstream in(read_text(file));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string image;
    std::string label;
    if (!(fields >> image)) continue;
    if (!(fields >> label)) {
      throw ValidationError(file.string() + ":" + std::to_string(line_no) + ": expected `image annotation`");
    }
    index.entries.push_back({image, label});
  }
  if (!index.entries.empty()) {
    std::tie(index.image_width, index.image_height) = ppm_size(index.root / index.entries.front().image);
  }
  return index;
}

void write_index(const DatasetIndex& index) {
  std::ofstream out(index.root / "index.txt");
  if (!out) throw std::runtime_error("cannot write index in '" + index.root.string() + "'");
  for (const auto& e : index.entries) out << e.image.generic_string() << " " << e.annotation.generic_string() << "\n";
}

std::vector<Annotation> Dataset::all_annotations() const {
  std::vector<Annotation> out;
  for (const auto& s : samples) out.insert(out.end(), s.annotations.begin(), s.annotations.end());
  return out;
}

int loader_threads() {
  if (const char* env = std::getenv("ROBODET_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset load_dataset(const DatasetIndex& index, std::optional<double> min_wh) {
  Dataset data;
  data.image_width = index.image_width;
  data.image_height = index.image_height;
  data.samples.resize(index.entries.size());
  const int workers = std::max(1, std::min<int>(loader_threads(), static_cast<int>(index.entries.size())));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](int worker) {
    try {
      for (std::size_t i = worker; i < index.entries.size(); i += workers) {
        const auto& e = index.entries[i];
        auto& s = data.samples[i];
        s.image = read_ppm(index.root / e.image);
        s.annotations = load_annotations(index.root / e.annotation);
        if (min_wh) s.annotations = filter_min_size(s.annotations, *min_wh);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work, t);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return data;
}

Tensor<float> make_batch(std::span<const Image* const> images, int height, int width) {
  Tensor<float> batch(Shape{static_cast<int>(images.size()), 3, height, width});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.width == width && img.height == height) {
      rgb_to_yuv(img, batch, static_cast<int>(i));
    } else {
      rgb_to_yuv(resize(img, width, height), batch, static_cast<int>(i));
    }
  }
  return batch;
}

std::optional<ToyStyle> parse_toy_style(std::string_view text) {
  if (text == "A" || text == "a") return ToyStyle::A;
  if (text == "B" || text == "b") return ToyStyle::B;
  return std::nullopt;
}

}  // namespace robodet
