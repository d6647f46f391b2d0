#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pwtp/rng.hpp"
#include "pwtp/tensor.hpp"

namespace pwtp {

/// Synthetic "same environment, different action" clips: a static cluttered
/// background shared across classes, one square per segment translating one
/// pixel per frame in a class-specific direction, and an optional static
/// distractor glyph unrelated to the label.
struct SynthSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t segments = 4;  // S
  std::size_t frames = 8;    // T
  std::size_t classes = 4;   // K: up, down, left, right
  std::size_t n_train = 40;
  std::size_t n_test = 40;
  double confound = 0.0;     // probability of stamping a distractor glyph
  std::uint64_t seed = 0;
  std::size_t backgrounds = 8;  // size of the shared background pool
  std::size_t square = 6;       // side of the moving square

  void validate() const;
};

constexpr std::size_t kChannels = 3;
constexpr std::size_t kGlyphKinds = 4;
constexpr std::size_t kGlyphSize = 5;

struct SegmentMotion {
  std::size_t row = 0;  // top-left corner at the first frame
  std::size_t col = 0;
  int dy = 0;           // displacement per frame
  int dx = 0;
};

struct LabeledClip {
  Tensor clip;  // S x T x H x W x C
  std::size_t label = 0;
  std::size_t background_id = 0;
  int glyph_id = -1;  // -1 when no glyph was stamped
  std::vector<SegmentMotion> motion;  // one per segment
};

struct Dataset {
  std::vector<LabeledClip> train;
  std::vector<LabeledClip> test;
};

/// Static background for a pool id: H x W x C. Depends only on (spec.seed, id).
Tensor render_background(const SynthSpec& spec, std::size_t background_id);

LabeledClip render_clip(const SynthSpec& spec, Rng& rng, std::size_t label);

/// Class-balanced train/test sets; label = index mod K. Every clip draws from
/// its own substream, so generation order does not matter.
Dataset make_dataset(const SynthSpec& spec);

/// H x W mask (1 = covered at some frame) of the pixels the square sweeps in one segment.
std::vector<std::uint8_t> swept_mask(const SynthSpec& spec, const SegmentMotion& motion);

/// Stacks clips to N x S x T x H x W x C.
Tensor stack_clips(const std::vector<LabeledClip>& clips);

/// `index\tlabel\tbackground_id\tglyph_id` per clip, one line each.
std::string manifest(const std::vector<LabeledClip>& clips);

}  // namespace pwtp
