#include "msnet/dataset.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "msnet/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace msnet {

namespace {

Glyph glyph_from_rows(int id, const std::vector<std::string>& rows) {
  Glyph g;
  g.id = id;
  g.h = static_cast<int>(rows.size());
  g.w = static_cast<int>(rows.front().size());
  for (const auto& row : rows)
    for (char ch : row) g.mask.push_back(ch == '#' ? 1 : 0);
  return g;
}

std::string frame_filename(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.png", t);
  return buf;
}

}  // namespace

std::vector<Glyph> default_glyphs() {
  return {
      glyph_from_rows(0, {"########",
                          "########",
                          "########",
                          "########",
                          "########",
                          "########",
                          "########",
                          "########"}),
      glyph_from_rows(1, {"...##...",
                          "...##...",
                          "...##...",
                          "########",
                          "########",
                          "...##...",
                          "...##...",
                          "...##..."}),
      glyph_from_rows(2, {"##....##",
                          "###..###",
                          ".######.",
                          "..####..",
                          "..####..",
                          ".######.",
                          "###..###",
                          "##....##"}),
      glyph_from_rows(3, {"########",
                          "########",
                          "##....##",
                          "##....##",
                          "##....##",
                          "##....##",
                          "########",
                          "########"}),
  };
}

void SpriteSpec::validate() const {
  require(canvas_h >= 1 && canvas_w >= 1, Errc::invalid_config, "sprite canvas must be non-empty");
  require(!glyphs.empty(), Errc::invalid_config, "sprite spec needs at least one glyph");
  for (const auto& g : glyphs) {
    require(g.h >= 1 && g.w >= 1 && static_cast<int>(g.mask.size()) == g.h * g.w, Errc::invalid_config,
            "malformed glyph bitmap");
    require(g.h <= canvas_h && g.w <= canvas_w, Errc::invalid_config, "glyph larger than canvas");
  }
  require(sprites_per_clip >= 1, Errc::invalid_config, "need at least one sprite per clip");
  require(!speed_set.empty(), Errc::invalid_config, "speed set must be non-empty");
  for (int v : speed_set) require(v != 0, Errc::invalid_config, "speed set entries must be nonzero");
  require(frames_per_clip >= 3, Errc::invalid_config, "clips need at least 3 frames");
  if (bounce_free) {
    int max_speed = 0;
    for (int v : speed_set) max_speed = std::max(max_speed, std::abs(v));
    for (const auto& g : glyphs) {
      int travel = max_speed * (frames_per_clip - 1);
      require(travel <= canvas_h - g.h && travel <= canvas_w - g.w, Errc::invalid_config,
              "bounce_free needs slower speeds, fewer frames, or a larger canvas");
    }
  }
}

void reflect_step(int& pos, int& vel, int limit) {
  if (limit == 0) {  // sprite fills the axis; it can only sit at 0
    pos = 0;
    vel = -vel;
    return;
  }
  pos += vel;
  while (pos < 0 || pos > limit) {
    if (pos < 0) pos = -pos;
    if (pos > limit) pos = 2 * limit - pos;
    vel = -vel;
  }
}

namespace {

struct Sprite {
  int glyph_index;
  int y, x;    // top-left position
  int vy, vx;  // pixels per frame
};

void composite(Tensor<float>& frame, const Glyph& g, int top, int left, int w) {
  for (int gy = 0; gy < g.h; ++gy)
    for (int gx = 0; gx < g.w; ++gx)
      if (g.mask[static_cast<std::size_t>(gy * g.w + gx)]) {
        std::int64_t idx = static_cast<std::int64_t>(top + gy) * w + (left + gx);
        frame[idx] = std::max(frame[idx], 1.0f);
      }
}

}  // namespace

ClipManifest generate_bouncing_sprites(const SpriteSpec& spec, int num_clips, std::uint64_t seed,
                                       const std::string& out_dir, int num_test) {
  spec.validate();
  require(num_clips >= 1, Errc::invalid_argument, "num_clips must be >= 1");
  require(num_test >= 0 && num_test < num_clips, Errc::invalid_argument,
          "num_test must leave at least one training clip");
  fs::create_directories(out_dir);

  ClipManifest manifest;
  manifest.image_shape = {1, spec.canvas_h, spec.canvas_w};
  manifest.seed = seed;
  manifest.generated = true;

  Rng base(seed);
  for (int ci = 0; ci < num_clips; ++ci) {
    Rng rng = base.derive(static_cast<std::uint64_t>(ci));
    std::vector<Sprite> sprites;
    for (int s = 0; s < spec.sprites_per_clip; ++s) {
      Sprite sp;
      sp.glyph_index = rng.uniform_int(static_cast<int>(spec.glyphs.size()));
      const Glyph& g = spec.glyphs[static_cast<std::size_t>(sp.glyph_index)];
      sp.vy = spec.speed_set[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(spec.speed_set.size())))];
      sp.vx = spec.speed_set[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(spec.speed_set.size())))];
      // With bounce_free the start is confined to the window from which the
      // whole trajectory stays inside the canvas, so reflection never fires.
      auto place = [&](int vel, int limit) {
        if (!spec.bounce_free) return rng.uniform_int(limit + 1);
        int travel = std::abs(vel) * (spec.frames_per_clip - 1);
        int offset = rng.uniform_int(limit - travel + 1);
        return vel > 0 ? offset : limit - offset;
      };
      sp.y = place(sp.vy, spec.canvas_h - g.h);
      sp.x = place(sp.vx, spec.canvas_w - g.w);
      sprites.push_back(sp);
    }

    // Labels come from the initial state: the fastest sprite names the motion
    // class by its velocity quadrant, the glyph multiset names the content.
    int dominant = 0;
    for (int s = 1; s < spec.sprites_per_clip; ++s) {
      auto speed2 = [&](const Sprite& sp) { return sp.vy * sp.vy + sp.vx * sp.vx; };
      if (speed2(sprites[static_cast<std::size_t>(s)]) > speed2(sprites[static_cast<std::size_t>(dominant)]))
        dominant = s;
    }
    const Sprite& dom = sprites[static_cast<std::size_t>(dominant)];
    std::string motion_label = std::string(dom.vy < 0 ? "N" : "S") + (dom.vx > 0 ? "E" : "W");
    std::vector<int> glyph_ids;
    for (const auto& sp : sprites)
      glyph_ids.push_back(spec.glyphs[static_cast<std::size_t>(sp.glyph_index)].id);
    std::sort(glyph_ids.begin(), glyph_ids.end());
    std::string content_label;
    for (std::size_t i = 0; i < glyph_ids.size(); ++i)
      content_label += (i ? "+" : "") + std::to_string(glyph_ids[i]);

    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "clip_%04d", ci);
    std::string clip_id = idbuf;
    fs::create_directories(fs::path(out_dir) / clip_id);

    for (int t = 0; t < spec.frames_per_clip; ++t) {
      Tensor<float> frame({1, spec.canvas_h, spec.canvas_w});
      for (const auto& sp : sprites)
        composite(frame, spec.glyphs[static_cast<std::size_t>(sp.glyph_index)], sp.y, sp.x, spec.canvas_w);
      write_png((fs::path(out_dir) / clip_id / frame_filename(t)).string(), frame);
      for (auto& sp : sprites) {
        const Glyph& g = spec.glyphs[static_cast<std::size_t>(sp.glyph_index)];
        reflect_step(sp.y, sp.vy, spec.canvas_h - g.h);
        reflect_step(sp.x, sp.vx, spec.canvas_w - g.w);
      }
    }

    ClipInfo info;
    info.id = clip_id;
    info.path = clip_id;
    info.num_frames = spec.frames_per_clip;
    info.motion_label = motion_label;
    info.content_label = content_label;
    info.split = ci < num_clips - num_test ? "train" : "test";
    manifest.clips.push_back(std::move(info));
  }

  json j;
  j["version"] = manifest.version;
  j["image_shape"] = manifest.image_shape;
  j["seed"] = manifest.seed;
  json jclips = json::array();
  for (const auto& c : manifest.clips) {
    jclips.push_back({{"id", c.id},
                      {"path", c.path},
                      {"num_frames", c.num_frames},
                      {"motion_label", c.motion_label},
                      {"content_label", c.content_label},
                      {"split", c.split}});
  }
  j["clips"] = std::move(jclips);
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  require(out.good(), Errc::io_error, "cannot write manifest under " + out_dir);
  out << j.dump(2) << "\n";
  return manifest;
}

Dataset Dataset::load(const std::string& dir) {
  fs::path manifest_path = fs::path(dir) / "manifest.json";
  require(fs::exists(manifest_path), Errc::missing_manifest, "no manifest.json under " + dir);
  std::ifstream in(manifest_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(Errc::corrupt_manifest, std::string("manifest parse error: ") + e.what());
  }

  Dataset ds;
  ds.root_ = dir;
  try {
    ds.manifest_.version = j.at("version").get<int>();
    auto shape = j.at("image_shape").get<std::vector<int>>();
    require(shape.size() == 3, Errc::corrupt_manifest, "image_shape must have 3 entries");
    ds.manifest_.image_shape = {shape[0], shape[1], shape[2]};
    if (j.contains("seed")) {
      ds.manifest_.seed = j.at("seed").get<std::uint64_t>();
      ds.manifest_.generated = true;
    }
    for (const auto& jc : j.at("clips")) {
      ClipInfo c;
      c.id = jc.at("id").get<std::string>();
      c.path = jc.at("path").get<std::string>();
      c.num_frames = jc.at("num_frames").get<int>();
      c.motion_label = jc.value("motion_label", "");
      c.content_label = jc.value("content_label", "");
      c.split = jc.at("split").get<std::string>();
      ds.manifest_.clips.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    fail(Errc::corrupt_manifest, std::string("manifest field error: ") + e.what());
  }

  require(!ds.manifest_.clips.empty(), Errc::dataset_too_small, "manifest lists no clips");
  std::set<std::string> ids;
  for (const auto& c : ds.manifest_.clips) {
    require(ids.insert(c.id).second, Errc::corrupt_manifest, "duplicate clip id " + c.id);
    require(c.split == "train" || c.split == "test", Errc::corrupt_manifest,
            "clip " + c.id + " has unknown split '" + c.split + "'");
    require(c.num_frames >= 3, Errc::frame_count_mismatch,
            "clip " + c.id + " has fewer than the 3-frame minimum");
    require(fs::is_directory(fs::path(dir) / c.path), Errc::missing_frame,
            "clip directory missing for " + c.id);
  }
  return ds;
}

std::vector<int> Dataset::indices(const std::string& split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < manifest_.clips.size(); ++i)
    if (manifest_.clips[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

VideoClip Dataset::load_clip(int index) const {
  require(index >= 0 && index < static_cast<int>(manifest_.clips.size()), Errc::invalid_argument,
          "clip index out of range");
  const ClipInfo& info = manifest_.clips[static_cast<std::size_t>(index)];
  VideoClip clip;
  clip.clip_id = info.id;
  clip.motion_label = info.motion_label;
  clip.content_label = info.content_label;
  for (int t = 0; t < info.num_frames; ++t) {
    fs::path p = fs::path(root_) / info.path / frame_filename(t);
    require(fs::exists(p), Errc::missing_frame, "missing frame file " + p.string());
    Tensor<float> frame = read_png(p.string());
    require(frame.shape(0) == manifest_.image_shape[0] && frame.shape(1) == manifest_.image_shape[1] &&
                frame.shape(2) == manifest_.image_shape[2],
            Errc::heterogeneous_shapes,
            "frame shape " + shape_string(frame) + " does not match manifest for clip " + info.id);
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

TripleSample sample_reproduction_triple(const VideoClip& clip, int k_max, Rng& rng) {
  int T = static_cast<int>(clip.frames.size());
  require(k_max >= 0, Errc::invalid_argument, "k_max must be >= 0");
  require(T >= 2, Errc::dataset_too_small, "clip too short for a reproduction triple");
  while (true) {
    int t = rng.uniform_int(T - 1);  // t+1 must exist
    int k = rng.uniform_int(k_max + 1);
    if (t + k <= T - 1) {
      return {clip.frames[static_cast<std::size_t>(t)], clip.frames[static_cast<std::size_t>(t + 1)],
              clip.frames[static_cast<std::size_t>(t + k)], k};
    }
  }
}

namespace {

FramePair adjacent_pair(const VideoClip& clip, Rng& rng) {
  int T = static_cast<int>(clip.frames.size());
  int a = rng.uniform_int(T - 1);
  return {clip.frames[static_cast<std::size_t>(a)], clip.frames[static_cast<std::size_t>(a + 1)]};
}

}  // namespace

DiscriminatorBatches sample_discriminator_batches(const std::vector<VideoClip>& clips, int batch, Rng& rng) {
  require(clips.size() >= 2, Errc::dataset_too_small,
          "discriminator sampling needs at least two clips for cross-video pairs");
  require(batch >= 1, Errc::invalid_argument, "batch must be >= 1");
  for (const auto& c : clips)
    require(c.frames.size() >= 3, Errc::dataset_too_small,
            "clip " + c.clip_id + " too short for non-sequential pairs");

  int n = static_cast<int>(clips.size());
  DiscriminatorBatches out;
  for (int i = 0; i < batch; ++i) {
    const VideoClip& same = clips[static_cast<std::size_t>(rng.uniform_int(n))];
    out.same_video.push_back({adjacent_pair(same, rng), adjacent_pair(same, rng)});

    int c1 = rng.uniform_int(n);
    int c2 = rng.uniform_int(n - 1);
    if (c2 >= c1) ++c2;  // distinct second clip, uniform over the rest
    out.cross_video.push_back({adjacent_pair(clips[static_cast<std::size_t>(c1)], rng),
                               adjacent_pair(clips[static_cast<std::size_t>(c2)], rng)});

    out.sequential.push_back(adjacent_pair(clips[static_cast<std::size_t>(rng.uniform_int(n))], rng));

    const VideoClip& ns = clips[static_cast<std::size_t>(rng.uniform_int(n))];
    int T = static_cast<int>(ns.frames.size());
    while (true) {
      int a = rng.uniform_int(T);
      int b = rng.uniform_int(T);
      if (std::abs(a - b) >= 2) {
        out.non_sequential.push_back(
            {ns.frames[static_cast<std::size_t>(a)], ns.frames[static_cast<std::size_t>(b)]});
        break;
      }
    }
  }
  return out;
}

}  // namespace msnet
