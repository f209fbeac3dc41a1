#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

/// Binary sprite bitmap, row-major, 1 = lit pixel.
struct Glyph {
  int id = 0;
  int h = 0, w = 0;
  std::vector<std::uint8_t> mask;
};

/// Four visually distinct 8x8 shapes (square, plus, saltire, ring).
std::vector<Glyph> default_glyphs();

struct SpriteSpec {
  int canvas_h = 32;
  int canvas_w = 32;
  std::vector<Glyph> glyphs = default_glyphs();
  int sprites_per_clip = 2;
  std::vector<int> speed_set = {-2, -1, 1, 2};
  int frames_per_clip = 20;
  // When set, initial positions are confined so no sprite reaches a canvas
  // edge within the clip; the launch-direction labels then hold for every
  // frame instead of just the first few.
  bool bounce_free = false;

  void validate() const;
};

struct VideoClip {
  std::string clip_id;
  std::vector<Tensor<float>> frames;  // each [C,H,W] in [0,1]
  std::string motion_label;
  std::string content_label;
};

struct ClipInfo {
  std::string id;
  std::string path;  // clip directory, relative to the dataset root
  int num_frames = 0;
  std::string motion_label;
  std::string content_label;
  std::string split;  // "train" or "test"
};

struct ClipManifest {
  int version = 1;
  std::array<int, 3> image_shape{0, 0, 0};
  std::uint64_t seed = 0;
  bool generated = false;  // seed is meaningful only for generated datasets
  std::vector<ClipInfo> clips;
};

/// A dataset directory: manifest plus per-clip frame files read on demand.
class Dataset {
 public:
  /// Parses <dir>/manifest.json and validates its invariants.
  static Dataset load(const std::string& dir);

  const std::string& root() const { return root_; }
  const ClipManifest& manifest() const { return manifest_; }

  std::vector<int> indices(const std::string& split) const;

  /// Reads and validates a clip's frames from disk.
  VideoClip load_clip(int index) const;

 private:
  std::string root_;
  ClipManifest manifest_;
};

/// Writes `num_clips` bouncing-sprite clips plus a manifest under `out_dir`.
/// The final `num_test` clips are assigned to the test split. Deterministic
/// in (spec, num_clips, seed).
ClipManifest generate_bouncing_sprites(const SpriteSpec& spec, int num_clips, std::uint64_t seed,
                                       const std::string& out_dir, int num_test = 0);

/// One step of the reflecting sprite dynamics on the interval [0, limit]:
/// position advances by velocity and folds back at the walls, negating the
/// velocity on each wall hit.
void reflect_step(int& pos, int& vel, int limit);

// -- sampling ---------------------------------------------------------------

struct TripleSample {
  Tensor<float> x_t, x_t1, x_tk;
  int k = 0;
};

/// Draws (t, k) uniformly with rejection so that t, t+1 and t+k all index
/// into the clip.
TripleSample sample_reproduction_triple(const VideoClip& clip, int k_max, Rng& rng);

struct FramePair {
  Tensor<float> a, b;
};

/// Two adjacent frame pairs, each (x_a, x_{a+1}), for the content
/// discriminator's motion-pair inputs.
struct MotionPairSample {
  FramePair first, second;
};

struct DiscriminatorBatches {
  std::vector<MotionPairSample> same_video;
  std::vector<MotionPairSample> cross_video;
  std::vector<FramePair> sequential;      // b = a+1
  std::vector<FramePair> non_sequential;  // |a-b| >= 2
};

/// Draws `batch` items of each of the four kinds the stage-1 discriminators
/// consume. Requires at least two clips (for cross-video negatives).
DiscriminatorBatches sample_discriminator_batches(const std::vector<VideoClip>& clips, int batch, Rng& rng);

}  // namespace msnet
