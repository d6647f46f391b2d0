#include "pwtp/datagen.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace pwtp {

namespace {

constexpr std::uint64_t kBackgroundStream = 0xB6;
constexpr std::uint64_t kTrainStream = 0x7261;
constexpr std::uint64_t kTestStream = 0x7465;
constexpr std::size_t kRectangles = 6;

// Intensity bands 0.2, 0.3, ..., 0.9. Static scenery draws from the lower
// half, the moving square from the upper half, glyphs from either.
enum class Band { low, high, any };

double palette(Rng& rng, Band band) {
  const std::size_t level = band == Band::any ? rng.below(8) : rng.below(4) + (band == Band::high ? 4 : 0);
  return 0.2 + 0.1 * static_cast<double>(level);
}

std::array<double, kChannels> palette_color(Rng& rng, Band band) {
  std::array<double, kChannels> c{};
  for (auto& v : c) v = palette(rng, band);
  return c;
}

using GlyphMask = std::array<std::array<bool, kGlyphSize>, kGlyphSize>;

GlyphMask glyph_mask(std::size_t kind) {
  GlyphMask m{};
  for (std::size_t r = 0; r < kGlyphSize; ++r)
    for (std::size_t c = 0; c < kGlyphSize; ++c) {
      switch (kind) {
        case 0: m[r][c] = r == 2 || c == 2; break;                          // plus
        case 1: m[r][c] = r == c || r + c == kGlyphSize - 1; break;          // cross
        case 2: m[r][c] = r == 0 || c == 0 || r == 4 || c == 4; break;       // ring
        default: m[r][c] = r % 2 == 0; break;                                // bars
      }
    }
  return m;
}

// (dy, dx) per class.
constexpr std::array<std::array<int, 2>, 4> kDirections{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

}  // namespace

void SynthSpec::validate() const {
  if (classes < 2 || classes > 4) throw Error("synth: K must lie in [2, 4]");
  if (frames < 2 || segments < 1) throw Error("synth: need T >= 2 and S >= 1");
  if (square < 1) throw Error("synth: square side must be positive");
  const std::size_t streak = square + frames - 1;
  if (streak > height || streak > width) throw Error("synth: the moving square does not fit in the frame");
  if (height < kGlyphSize || width < kGlyphSize) throw Error("synth: frame smaller than the glyph");
  if (!(confound >= 0.0 && confound <= 1.0)) throw Error("synth: confound strength must lie in [0, 1]");
  if (backgrounds < 1) throw Error("synth: background pool must not be empty");
}

Tensor render_background(const SynthSpec& spec, std::size_t background_id) {
  Rng rng(mix_seed(mix_seed(spec.seed, kBackgroundStream), background_id));
  const std::size_t h = spec.height, w = spec.width;
  Tensor bg(Shape{h, w, kChannels}, 0.0);
  const auto base = palette_color(rng, Band::low);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < kChannels; ++c) bg[i * kChannels + c] = base[c];
  for (std::size_t r = 0; r < kRectangles; ++r) {
    const std::size_t rh = 4 + rng.below(std::min<std::size_t>(11, h - 3));
    const std::size_t rw = 4 + rng.below(std::min<std::size_t>(11, w - 3));
    const std::size_t y0 = rng.below(h - std::min(rh, h) + 1);
    const std::size_t x0 = rng.below(w - std::min(rw, w) + 1);
    const auto color = palette_color(rng, Band::low);
    for (std::size_t y = y0; y < std::min(h, y0 + rh); ++y)
      for (std::size_t x = x0; x < std::min(w, x0 + rw); ++x)
        for (std::size_t c = 0; c < kChannels; ++c) bg[(y * w + x) * kChannels + c] = color[c];
  }
  return bg;
}

LabeledClip render_clip(const SynthSpec& spec, Rng& rng, std::size_t label) {
  spec.validate();
  if (label >= spec.classes) throw Error("synth: label out of range");
  const std::size_t h = spec.height, w = spec.width, t = spec.frames, segs = spec.segments;
  LabeledClip out;
  out.label = label;
  out.background_id = rng.below(spec.backgrounds);
  Tensor scene = render_background(spec, out.background_id);

  if (rng.uniform() < spec.confound) {
    const std::size_t kind = rng.below(kGlyphKinds);
    out.glyph_id = static_cast<int>(kind);
    const auto mask = glyph_mask(kind);
    const std::size_t y0 = rng.below(h - kGlyphSize + 1), x0 = rng.below(w - kGlyphSize + 1);
    const auto color = palette_color(rng, Band::any);
    for (std::size_t r = 0; r < kGlyphSize; ++r)
      for (std::size_t c = 0; c < kGlyphSize; ++c)
        if (mask[r][c])
          for (std::size_t ch = 0; ch < kChannels; ++ch) scene[((y0 + r) * w + x0 + c) * kChannels + ch] = color[ch];
  }

  const auto [dy, dx] = kDirections[label];
  const std::size_t side = spec.square, streak = side + t - 1;
  out.clip = Tensor(Shape{segs, t, h, w, kChannels}, 0.0);
  const std::size_t frame_size = h * w * kChannels;
  for (std::size_t s = 0; s < segs; ++s) {
    // The swept region is placed uniformly; the direction only decides which end the square starts from.
    SegmentMotion m;
    m.dy = dy;
    m.dx = dx;
    const std::size_t extent_y = dy != 0 ? streak : side, extent_x = dx != 0 ? streak : side;
    const std::size_t top = rng.below(h - extent_y + 1), left = rng.below(w - extent_x + 1);
    m.row = dy < 0 ? top + t - 1 : top;
    m.col = dx < 0 ? left + t - 1 : left;
    const auto color = palette_color(rng, Band::high);
    for (std::size_t f = 0; f < t; ++f) {
      double* frame = out.clip.ptr() + (s * t + f) * frame_size;
      std::copy(scene.data().begin(), scene.data().end(), frame);
      const auto y0 = static_cast<std::size_t>(static_cast<long>(m.row) + dy * static_cast<long>(f));
      const auto x0 = static_cast<std::size_t>(static_cast<long>(m.col) + dx * static_cast<long>(f));
      for (std::size_t y = y0; y < y0 + side; ++y)
        for (std::size_t x = x0; x < x0 + side; ++x)
          for (std::size_t c = 0; c < kChannels; ++c) frame[(y * w + x) * kChannels + c] = color[c];
    }
    out.motion.push_back(m);
  }
  return out;
}

Dataset make_dataset(const SynthSpec& spec) {
  spec.validate();
  if (spec.n_train < spec.classes || spec.n_test < spec.classes) {
    throw Error("synth: n_train and n_test must be at least K");
  }
  Dataset ds;
  const auto build = [&](std::size_t count, std::uint64_t stream, std::vector<LabeledClip>& dst) {
    dst.reserve(count);
    const std::uint64_t base = mix_seed(spec.seed, stream);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(mix_seed(base, i));
      dst.push_back(render_clip(spec, rng, i % spec.classes));
    }
  };
  build(spec.n_train, kTrainStream, ds.train);
  build(spec.n_test, kTestStream, ds.test);
  return ds;
}

std::vector<std::uint8_t> swept_mask(const SynthSpec& spec, const SegmentMotion& m) {
  std::vector<std::uint8_t> mask(spec.height * spec.width, 0);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const auto y0 = static_cast<std::size_t>(static_cast<long>(m.row) + m.dy * static_cast<long>(f));
    const auto x0 = static_cast<std::size_t>(static_cast<long>(m.col) + m.dx * static_cast<long>(f));
    for (std::size_t y = y0; y < y0 + spec.square; ++y)
      for (std::size_t x = x0; x < x0 + spec.square; ++x) mask[y * spec.width + x] = 1;
  }
  return mask;
}

Tensor stack_clips(const std::vector<LabeledClip>& clips) {
  if (clips.empty()) throw Error("stack_clips: no clips");
  Shape shape = clips.front().clip.shape();
  const std::size_t each = clips.front().clip.size();
  std::vector<double> data;
  data.reserve(each * clips.size());
  for (const auto& c : clips) {
    if (c.clip.shape() != shape) throw Error("stack_clips: clips differ in shape");
    data.insert(data.end(), c.clip.data().begin(), c.clip.data().end());
  }
  shape.insert(shape.begin(), clips.size());
  return Tensor(std::move(shape), std::move(data));
}

std::string manifest(const std::vector<LabeledClip>& clips) {
  std::ostringstream os;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    os << i << '\t' << clips[i].label << '\t' << clips[i].background_id << '\t' << clips[i].glyph_id << '\n';
  }
  return os.str();
}

}  // namespace pwtp
