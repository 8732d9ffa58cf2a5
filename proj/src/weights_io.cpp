#include "robodet/weights_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace robodet {

namespace {

constexpr std::array<char, 4> kMagic{'R', 'O', 'B', 'O'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) u8(static_cast<std::uint8_t>((v >> shift) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  template <typename Range>
  void f32s(const Range& values) {
    for (Eigen::Index i = 0; i < values.size(); ++i) f32(values[i]);
  }
  void bytes(const char* data, std::size_t size) { out_.write(data, static_cast<std::streamsize>(size)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void set_context(std::string context) { context_ = std::move(context); }

  std::uint8_t u8() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw TruncatedError("weight file truncated " + context_);
    return static_cast<std::uint8_t>(c);
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (u8() << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int shift = 0; shift < 32; shift += 8) v |= static_cast<std::uint32_t>(u8()) << shift;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void f32s(float* dst, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) dst[i] = f32();
  }

 private:
  std::istream& in_;
  std::string context_ = "in header";
};

std::vector<std::uint8_t> pack_mask(const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> packed((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return packed;
}

void check_field(bool ok, const std::string& what) {
  if (!ok) throw SpecMismatchError(what);
}

}  // namespace

void write_weights(std::ostream& out, const Network<float>& net) {
  Writer w(out);
  w.bytes(kMagic.data(), kMagic.size());
  w.u16(kWeightFormatVersion);
  w.u16(static_cast<std::uint16_t>(net.spec.name.size()));
  w.bytes(net.spec.name.data(), net.spec.name.size());
  w.u16(static_cast<std::uint16_t>(net.spec.k));
  w.u16(static_cast<std::uint16_t>(net.layers.size()));
  for (const auto& layer : net.layers) {
    const auto& c = layer.conv;
    w.u16(static_cast<std::uint16_t>(c.kernel));
    w.u16(static_cast<std::uint16_t>(c.stride));
    w.u16(static_cast<std::uint16_t>(c.in_ch));
    w.u16(static_cast<std::uint16_t>(c.out_ch));
    w.u32(static_cast<std::uint32_t>(c.weights.size()));
    w.f32s(c.weights.values());
    w.f32s(c.bias);
    w.u8(layer.bn ? 1 : 0);
    if (layer.bn) {
      w.f32s(layer.bn->gamma);
      w.f32s(layer.bn->beta);
      w.f32s(layer.bn->running_mean);
      w.f32s(layer.bn->running_var);
    }
    const auto packed = pack_mask(layer.mask);
    w.u32(static_cast<std::uint32_t>(packed.size()));
    w.bytes(reinterpret_cast<const char*>(packed.data()), packed.size());
  }
  for (const auto& anchor : net.anchors.per_class) {
    w.f32(anchor.w);
    w.f32(anchor.h);
  }
  if (!out) throw std::runtime_error("failed writing weight stream");
}

void save_weights(const Network<float>& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_weights(out, net);
}

Network<float> read_weights(std::istream& in, const std::optional<ModelSpec>& spec) {
  Reader r(in);
  std::array<char, 4> magic{};
  for (auto& ch : magic) ch = static_cast<char>(r.u8());
  if (magic != kMagic) throw BadMagicError("not a ROBO weight file (bad magic)");
  const auto version = r.u16();
  if (version != kWeightFormatVersion) {
    throw VersionError("weight file version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kWeightFormatVersion) + ")");
  }
  std::string name(r.u16(), '\0');
  for (auto& ch : name) ch = static_cast<char>(r.u8());
  const int k = r.u16();
  const int layer_count = r.u16();

  ModelSpec model;
  if (spec) {
    model = *spec;
  } else {
    try {
      model = build_model(name, k);
    } catch (const ValidationError& e) {
      throw SpecMismatchError("weight file names model '" + name + "': " + e.what());
    }
  }
  Network<float> net = make_network<float>(model);
  check_field(static_cast<int>(net.layers.size()) == layer_count,
              "weight file has " + std::to_string(layer_count) + " layers, model '" + model.name + "' has " +
                  std::to_string(net.layers.size()));

  for (int l = 0; l < layer_count; ++l) {
    r.set_context("in layer " + std::to_string(l + 1));
    auto& layer = net.layers[l];
    auto& c = layer.conv;
    const std::string where = "layer " + std::to_string(l + 1) + ": ";
    const int kernel = r.u16();
    const int stride = r.u16();
    const int in_ch = r.u16();
    const int out_ch = r.u16();
    check_field(kernel == c.kernel && stride == c.stride && in_ch == c.in_ch && out_ch == c.out_ch,
                where + "conv geometry does not match model '" + model.name + "'");
    const auto count = r.u32();
    check_field(count == static_cast<std::uint32_t>(c.weights.size()), where + "weight count mismatch");
    r.f32s(c.weights.data(), count);
    r.f32s(c.bias.data(), static_cast<std::size_t>(c.bias.size()));
    const bool has_bn = r.u8() != 0;
    check_field(has_bn == layer.bn.has_value(), where + "batch-norm presence mismatch");
    if (layer.bn) {
      for (auto* v : {&layer.bn->gamma, &layer.bn->beta, &layer.bn->running_mean, &layer.bn->running_var}) {
        r.f32s(v->data(), static_cast<std::size_t>(v->size()));
      }
    }
    const auto mask_bytes = r.u32();
    check_field(mask_bytes == (layer.mask.size() + 7) / 8, where + "mask length mismatch");
    for (std::uint32_t b = 0; b < mask_bytes; ++b) {
      const auto byte = r.u8();
      for (std::size_t bit = 0; bit < 8 && b * 8 + bit < layer.mask.size(); ++bit) {
        layer.mask[b * 8 + bit] = (byte >> bit) & 1u;
      }
    }
  }
  r.set_context("in anchors");
  for (auto& anchor : net.anchors.per_class) {
    anchor.w = r.f32();
    anchor.h = r.f32();
  }
  return net;
}

Network<float> load_weights(const std::filesystem::path& path, const std::optional<ModelSpec>& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file '" + path.string() + "'");
  return read_weights(in, spec);
}

}  // namespace robodet
