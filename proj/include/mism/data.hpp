#pragma once

#include "mism/geometry.hpp"
#include "mism/image_io.hpp"
#include "mism/ops.hpp"
#include "mism/random.hpp"
#include "mism/tensor.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace mism {

/// One monocular training sample: frames t-1, t, t+1 with shared intrinsics.
/// Ground-truth fields are only populated by the synthetic generator or a
/// depth/ directory on disk.
template <typename S>
struct Triplet {
  Tensor<S> prev, target, next;              // (3,H,W), values in [0,1]
  std::optional<Tensor<S>> feat_prev;        // context copy fed to Feat-Net (may be masked)
  Intrinsics<S> K;
  std::optional<Tensor<S>> gt_depth;         // target frame, (1,H,W); 0 = invalid
  std::optional<RigidTransform<S>> gt_T_prev;  // T_{t -> t-1}
  std::optional<RigidTransform<S>> gt_T_next;  // T_{t -> t+1}
  std::string sequence;
  long index = 0;

  Index height() const { return target.shape()[1]; }
  Index width() const { return target.shape()[2]; }

  void validate() const {
    MISM_CHECK(prev.shape() == target.shape() && next.shape() == target.shape(),
               "Triplet: inconsistent frame shapes");
    MISM_CHECK(all_finite(prev) && all_finite(target) && all_finite(next),
               "Triplet: non-finite pixels");
    MISM_CHECK(target.values().minCoeff() >= S(0) && target.values().maxCoeff() <= S(1),
               "Triplet: pixels must lie in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Image <-> tensor conversions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> image_to_tensor(const RgbImage8& img) {
  const Index H = img.height, W = img.width;
  Vec<S> v(3 * H * W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c)
        v[(c * H + y) * W + x] =
            static_cast<S>(img.data[static_cast<size_t>((y * W + x) * 3 + c)]) / S(255);
  return Tensor<S>::from(Shape{3, H, W}, std::move(v));
}

template <typename S>
RgbImage8 tensor_to_image(const Tensor<S>& t) {
  MISM_CHECK(t.rank() == 3 && t.shape()[0] == 3, "tensor_to_image: expects (3,H,W)");
  RgbImage8 img;
  img.height = static_cast<int>(t.shape()[1]);
  img.width = static_cast<int>(t.shape()[2]);
  img.data.resize(static_cast<size_t>(3 * img.width * img.height));
  const Index H = t.shape()[1], W = t.shape()[2];
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) {
        S v = std::min(std::max(t.values()[(c * H + y) * W + x], S(0)), S(1));
        img.data[static_cast<size_t>((y * W + x) * 3 + c)] =
            static_cast<uint8_t>(std::lround(static_cast<double>(v) * 255.0));
      }
  return img;
}

/// 16-bit KITTI-style depth: meters = raw/256, 0 = invalid.
template <typename S>
Tensor<S> depth_from_png(const GrayImage16& img) {
  const Index H = img.height, W = img.width;
  Vec<S> v(H * W);
  for (Index i = 0; i < H * W; ++i)
    v[i] = static_cast<S>(img.data[static_cast<size_t>(i)]) / S(256);
  return Tensor<S>::from(Shape{1, H, W}, std::move(v));
}

template <typename S>
GrayImage16 depth_to_png(const Tensor<S>& depth) {
  MISM_CHECK(depth.rank() == 3 && depth.shape()[0] == 1, "depth_to_png: expects (1,H,W)");
  GrayImage16 img;
  img.height = static_cast<int>(depth.shape()[1]);
  img.width = static_cast<int>(depth.shape()[2]);
  img.data.resize(static_cast<size_t>(img.width * img.height));
  for (Index i = 0; i < depth.numel(); ++i) {
    double raw = std::lround(static_cast<double>(depth.values()[i]) * 256.0);
    img.data[static_cast<size_t>(i)] = static_cast<uint16_t>(std::min(raw, 65535.0));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic scenes: textured fronto-parallel plane stacks under a moving
// pinhole camera. Texture is a procedural function of world coordinates, so
// co-visible points are photometrically consistent across views by
// construction; depth and poses are exact.
// ---------------------------------------------------------------------------

struct TextureComponent {
  double fx, fy, phase, amp;
};

struct PlaneSpec {
  double depth = 10.0;           // world z, meters
  bool infinite = false;         // background plane
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // world-rectangle extent
  std::array<std::vector<TextureComponent>, 3> texture;  // per RGB channel
};

template <typename S>
struct SyntheticScene {
  std::vector<PlaneSpec> planes;               // sorted by depth, background last
  std::vector<RigidTransform<S>> cam_to_world; // per frame
  Intrinsics<S> K;
  Index width = 0, height = 0;

  Index num_frames() const { return static_cast<Index>(cam_to_world.size()); }
};

namespace detail {

inline double plane_color(const PlaneSpec& p, int channel, double wx, double wy) {
  double v = 0.5;
  for (const auto& c : p.texture[static_cast<size_t>(channel)])
    v += c.amp * std::sin(c.fx * wx + c.fy * wy + c.phase);
  return std::min(std::max(v, 0.0), 1.0);
}

}  // namespace detail

/// Render one frame: exact image and ground-truth depth.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> render_scene(const SyntheticScene<S>& scene, Index frame) {
  MISM_CHECK(frame >= 0 && frame < scene.num_frames(), "render_scene: frame out of range");
  const Index H = scene.height, W = scene.width;
  const RigidTransform<S>& c2w = scene.cam_to_world[static_cast<size_t>(frame)];
  Vec<S> img(3 * H * W);
  Vec<S> dep(H * W);
  const Mat3<S>& Ki = scene.K.inverse();
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Vec3<S> ray_cam = Ki * Vec3<S>(static_cast<S>(x), static_cast<S>(y), S(1));
      const Vec3<S> ray_w = c2w.rotation * ray_cam;
      bool hit = false;
      for (const auto& p : scene.planes) {
        if (ray_w.z() <= S(1e-9)) break;
        const S s = (static_cast<S>(p.depth) - c2w.translation.z()) / ray_w.z();
        if (s <= S(0)) continue;
        const Vec3<S> X = c2w.translation + s * ray_w;
        if (!p.infinite && (X.x() < p.x0 || X.x() > p.x1 || X.y() < p.y0 || X.y() > p.y1))
          continue;
        for (int c = 0; c < 3; ++c)
          img[(c * H + y) * W + x] = static_cast<S>(detail::plane_color(
              p, c, static_cast<double>(X.x()), static_cast<double>(X.y())));
        dep[y * W + x] = s;  // camera-frame z equals the ray parameter here
        hit = true;
        break;
      }
      MISM_CHECK(hit, "render_scene: ray escaped the plane stack");
    }
  return {Tensor<S>::from(Shape{3, H, W}, std::move(img)),
          Tensor<S>::from(Shape{1, H, W}, std::move(dep))};
}

/// Build a random scene: a far background plane plus a few floating
/// rectangles, viewed by a camera that translates (mostly forward/lateral)
/// and rotates slightly. Deterministic per seed.
template <typename S>
SyntheticScene<S> generate_synthetic(uint64_t seed, Index n_frames, double motion_mag,
                                     Index width = 192, Index height = 64) {
  MISM_CHECK(n_frames >= 3, "generate_synthetic: need at least 3 frames");
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 12345);
  SyntheticScene<S> scene;
  scene.width = width;
  scene.height = height;
  const double f = 0.55 * static_cast<double>(width);
  scene.K = Intrinsics<S>::from_focal(static_cast<S>(f), static_cast<S>(f),
                                      static_cast<S>(width) / S(2) - S(0.5),
                                      static_cast<S>(height) / S(2) - S(0.5));

  auto make_texture = [&](double depth) {
    std::array<std::vector<TextureComponent>, 3> tex;
    // wavelengths chosen to land at roughly 8..40 screen pixels
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 5; ++k) {
        const double lam_px = rng.uniform(8.0, 40.0);
        const double lam_world = lam_px * depth / f;
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        const double w = 2.0 * M_PI / lam_world;
        tex[static_cast<size_t>(c)].push_back(
            {w * std::cos(ang), w * std::sin(ang), rng.uniform(0.0, 2.0 * M_PI),
             rng.uniform(0.05, 0.14)});
      }
    return tex;
  };

  // background
  PlaneSpec bg;
  bg.depth = rng.uniform(35.0, 50.0);
  bg.infinite = true;
  bg.texture = make_texture(bg.depth);

  // foreground rectangles, near to far within [4, 28] m
  const int n_fg = 3 + static_cast<int>(rng.uniform_int(3));
  std::vector<double> depths;
  for (int i = 0; i < n_fg; ++i) depths.push_back(rng.uniform(4.0, 28.0));
  std::sort(depths.begin(), depths.end());
  for (double d : depths) {
    PlaneSpec p;
    p.depth = d;
    // extent sized to a fraction of the view at that depth
    const double half_w_view = 0.5 * static_cast<double>(width) * d / f;
    const double half_h_view = 0.5 * static_cast<double>(height) * d / f;
    const double cw = rng.uniform(0.25, 0.6) * half_w_view;
    const double ch = rng.uniform(0.3, 0.8) * half_h_view;
    const double cx = rng.uniform(-0.8, 0.8) * half_w_view;
    const double cy = rng.uniform(-0.6, 0.6) * half_h_view;
    p.x0 = cx - cw;
    p.x1 = cx + cw;
    p.y0 = cy - ch;
    p.y1 = cy + ch;
    p.texture = make_texture(d);
    scene.planes.push_back(p);
  }
  scene.planes.push_back(bg);

  // trajectory: smooth forward-plus-lateral walk with tiny rotations
  RigidTransform<S> pose = RigidTransform<S>::identity();
  for (Index fidx = 0; fidx < n_frames; ++fidx) {
    scene.cam_to_world.push_back(pose);
    PoseParams<S> step;
    step.translation =
        Vec3<S>(static_cast<S>(motion_mag * rng.uniform(-0.6, 0.6)),
                static_cast<S>(motion_mag * rng.uniform(-0.25, 0.25)),
                static_cast<S>(motion_mag * rng.uniform(0.4, 1.0)));
    step.axis_angle = Vec3<S>(static_cast<S>(0.02 * motion_mag * rng.normal()),
                              static_cast<S>(0.03 * motion_mag * rng.normal()),
                              static_cast<S>(0.01 * motion_mag * rng.normal()));
    pose = pose * pose_from_params(step);
  }
  return scene;
}

/// All consecutive triplets of a scene, with ground truth attached.
template <typename S>
std::vector<Triplet<S>> synthetic_triplets(const SyntheticScene<S>& scene) {
  std::vector<Triplet<S>> out;
  std::vector<std::pair<Tensor<S>, Tensor<S>>> frames;
  for (Index f = 0; f < scene.num_frames(); ++f) frames.push_back(render_scene(scene, f));
  for (Index t = 1; t + 1 < scene.num_frames(); ++t) {
    Triplet<S> tr;
    tr.prev = frames[static_cast<size_t>(t - 1)].first;
    tr.target = frames[static_cast<size_t>(t)].first;
    tr.next = frames[static_cast<size_t>(t + 1)].first;
    tr.K = scene.K;
    tr.gt_depth = frames[static_cast<size_t>(t)].second;
    const auto& c2w = scene.cam_to_world;
    tr.gt_T_prev = c2w[static_cast<size_t>(t - 1)].inverse() * c2w[static_cast<size_t>(t)];
    tr.gt_T_next = c2w[static_cast<size_t>(t + 1)].inverse() * c2w[static_cast<size_t>(t)];
    tr.sequence = "synthetic";
    tr.index = t;
    out.push_back(std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation (jitter shared across the triplet; flip mirrors cx; optional
// rectangle zero-mask on the Feat-Net copy of the context frame).
// ---------------------------------------------------------------------------

struct AugmentConfig {
  bool jitter = true;
  bool flip = true;
  bool feat_mask = false;  // teacher training only
  double brightness = 0.2, contrast = 0.2, saturation = 0.2, hue = 0.05;
  double flip_prob = 0.5;
  double mask_prob = 0.5;
  double mask_area_lo = 0.1, mask_area_hi = 0.3;
};

namespace detail {

template <typename S>
Tensor<S> jitter_image(const Tensor<S>& img, double br, double ct, double sat, double hue_rot) {
  const Index H = img.shape()[1], W = img.shape()[2];
  Vec<S> v = img.values();
  const Index P = H * W;
  const double ch = std::cos(hue_rot), sh = std::sin(hue_rot);
  for (Index p = 0; p < P; ++p) {
    double r = v[p], g = v[P + p], b = v[2 * P + p];
    // brightness / contrast about mid-gray, shared across the triplet
    r = (r * br - 0.5) * ct + 0.5;
    g = (g * br - 0.5) * ct + 0.5;
    b = (b * br - 0.5) * ct + 0.5;
    // saturation: blend with the pixel's gray value
    const double gray = (r + g + b) / 3.0;
    r = gray + (r - gray) * sat;
    g = gray + (g - gray) * sat;
    b = gray + (b - gray) * sat;
    // hue: rotate the IQ chroma plane
    const double Y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double I = 0.596 * r - 0.274 * g - 0.322 * b;
    const double Q = 0.211 * r - 0.523 * g + 0.312 * b;
    const double I2 = I * ch - Q * sh, Q2 = I * sh + Q * ch;
    r = Y + 0.956 * I2 + 0.621 * Q2;
    g = Y - 0.272 * I2 - 0.647 * Q2;
    b = Y - 1.106 * I2 + 1.703 * Q2;
    v[p] = static_cast<S>(std::min(std::max(r, 0.0), 1.0));
    v[P + p] = static_cast<S>(std::min(std::max(g, 0.0), 1.0));
    v[2 * P + p] = static_cast<S>(std::min(std::max(b, 0.0), 1.0));
  }
  return Tensor<S>::from(img.shape(), std::move(v));
}

template <typename S>
Tensor<S> hflip(const Tensor<S>& img) {
  const Index C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  Vec<S> v(img.numel());
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        v[(c * H + y) * W + x] = img.values()[(c * H + y) * W + (W - 1 - x)];
  return Tensor<S>::from(img.shape(), std::move(v));
}

}  // namespace detail

/// Augment a triplet deterministically from the given seed.
template <typename S>
Triplet<S> augment(const Triplet<S>& in, uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(seed ^ 0xa5a5a5a35ULL);
  Triplet<S> out = in;

  if (cfg.jitter) {
    const double br = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness);
    const double ct = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast);
    const double sat = 1.0 + rng.uniform(-cfg.saturation, cfg.saturation);
    const double hue = rng.uniform(-cfg.hue, cfg.hue) * 2.0 * M_PI;
    out.prev = detail::jitter_image(out.prev, br, ct, sat, hue);
    out.target = detail::jitter_image(out.target, br, ct, sat, hue);
    out.next = detail::jitter_image(out.next, br, ct, sat, hue);
  }
  if (cfg.flip && rng.bernoulli(cfg.flip_prob)) {
    out.prev = detail::hflip(out.prev);
    out.target = detail::hflip(out.target);
    out.next = detail::hflip(out.next);
    if (out.gt_depth) out.gt_depth = detail::hflip(*out.gt_depth);
    const S W = static_cast<S>(in.width());
    out.K = Intrinsics<S>::from_focal(in.K.fx(), in.K.fy(), W - S(1) - in.K.cx(), in.K.cy());
    // mirrored ground-truth poses are not representable by a flip of t alone
    out.gt_T_prev.reset();
    out.gt_T_next.reset();
  }
  out.feat_prev = out.prev;
  if (cfg.feat_mask && rng.bernoulli(cfg.mask_prob)) {
    const Index H = in.height(), W = in.width();
    const double area = rng.uniform(cfg.mask_area_lo, cfg.mask_area_hi);
    const double aspect = rng.uniform(0.5, 2.0);
    Index mh = static_cast<Index>(std::sqrt(area * static_cast<double>(H * W) * aspect));
    Index mw = static_cast<Index>(std::sqrt(area * static_cast<double>(H * W) / aspect));
    mh = std::min(mh, H);
    mw = std::min(mw, W);
    const Index y0 = static_cast<Index>(rng.uniform_int(static_cast<uint64_t>(H - mh + 1)));
    const Index x0 = static_cast<Index>(rng.uniform_int(static_cast<uint64_t>(W - mw + 1)));
    Tensor<S> masked = out.feat_prev->detach();
    for (Index c = 0; c < 3; ++c)
      for (Index y = y0; y < y0 + mh; ++y)
        masked.values().segment((c * H + y) * W + x0, mw).setZero();
    out.feat_prev = masked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout:  <root>/<sequence>/<frame>.png
//               <root>/<sequence>/intrinsics.txt      (9 reals, row-major K)
//               <root>/<sequence>/depth/<frame>.png   (optional, 16-bit /256)
// Split/exclusion files: lines of "<sequence> <frame_index>".
// ---------------------------------------------------------------------------

template <typename S>
struct LoadOptions {
  Index height = 192, width = 640;  // resize target; 0 keeps native size
  std::string split_file;           // optional: only these samples
  std::string exclude_file;         // optional: never these samples
};

Intrinsics<double> read_intrinsics_file(const std::string& path);

template <typename S>
std::optional<Triplet<S>> load_triplet(const std::string& root, const std::string& sequence,
                                       long index, const LoadOptions<S>& opt = {}) {
  namespace fs = std::filesystem;
  const fs::path seq_dir = fs::path(root) / sequence;
  auto frame_path = [&](long i) { return seq_dir / (std::to_string(i) + ".png"); };
  if (!fs::exists(frame_path(index)))
    fail("load_triplet: missing target frame " + frame_path(index).string());
  if (!fs::exists(frame_path(index - 1)) || !fs::exists(frame_path(index + 1))) {
    std::cerr << "mism: warning: skipping " << sequence << " " << index
              << " (missing neighbor frame)\n";
    return std::nullopt;
  }

  Intrinsics<double> K0 = read_intrinsics_file((seq_dir / "intrinsics.txt").string());

  auto load_frame = [&](long i) {
    Tensor<S> img = image_to_tensor<S>(read_png_rgb8(frame_path(i).string()));
    if (opt.height > 0 && (img.shape()[1] != opt.height || img.shape()[2] != opt.width))
      img = resize_bilinear(img, opt.height, opt.width);
    return img;
  };

  Triplet<S> t;
  t.prev = load_frame(index - 1);
  t.target = load_frame(index);
  t.next = load_frame(index + 1);
  const RgbImage8 native = read_png_rgb8(frame_path(index).string());
  const S sx = static_cast<S>(t.width()) / static_cast<S>(native.width);
  const S sy = static_cast<S>(t.height()) / static_cast<S>(native.height);
  t.K = Intrinsics<S>::from_focal(static_cast<S>(K0.fx()) * sx, static_cast<S>(K0.fy()) * sy,
                                  static_cast<S>(K0.cx()) * sx, static_cast<S>(K0.cy()) * sy);
  const fs::path dpath = seq_dir / "depth" / (std::to_string(index) + ".png");
  if (fs::exists(dpath)) {
    Tensor<S> d = depth_from_png<S>(read_png_gray16(dpath.string()));
    // nearest-style resize keeps invalid zeros from bleeding; gt is only used
    // at native-or-target resolution in the desk-scale pipeline
    if (d.shape()[1] != t.height() || d.shape()[2] != t.width())
      d = resize_bilinear(d, t.height(), t.width());
    t.gt_depth = d;
  }
  t.sequence = sequence;
  t.index = index;
  t.validate();
  return t;
}

struct SampleId {
  std::string sequence;
  long index;
  bool operator==(const SampleId& o) const { return sequence == o.sequence && index == o.index; }
};

std::vector<SampleId> read_sample_list(const std::string& path);

/// Enumerate loadable samples under a dataset root, honoring split and
/// exclusion files.
template <typename S>
std::vector<SampleId> list_samples(const std::string& root, const LoadOptions<S>& opt = {}) {
  namespace fs = std::filesystem;
  std::vector<SampleId> out;
  std::vector<SampleId> excluded;
  if (!opt.exclude_file.empty()) excluded = read_sample_list(opt.exclude_file);
  auto is_excluded = [&](const SampleId& id) {
    for (const auto& e : excluded)
      if (e == id) return true;
    return false;
  };
  if (!opt.split_file.empty()) {
    for (const auto& id : read_sample_list(opt.split_file))
      if (!is_excluded(id)) out.push_back(id);
    return out;
  }
  std::vector<std::string> sequences;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) sequences.push_back(e.path().filename().string());
  std::sort(sequences.begin(), sequences.end());
  for (const auto& seq : sequences) {
    std::vector<long> frames;
    for (const auto& e : fs::directory_iterator(fs::path(root) / seq)) {
      if (!e.is_regular_file() || e.path().extension() != ".png") continue;
      try {
        frames.push_back(std::stol(e.path().stem().string()));
      } catch (...) {
        continue;
      }
    }
    std::sort(frames.begin(), frames.end());
    for (size_t i = 0; i + 2 < frames.size(); ++i) {
      // consecutive frames only
      if (frames[i + 1] == frames[i] + 1 && frames[i + 2] == frames[i] + 2) {
        SampleId id{seq, frames[i + 1]};
        if (!is_excluded(id)) out.push_back(id);
      }
    }
  }
  return out;
}

/// Write a synthetic scene to disk in the dataset layout (images, intrinsics,
/// ground-truth depth).
template <typename S>
void write_synthetic_dataset(const SyntheticScene<S>& scene, const std::string& root,
                             const std::string& sequence = "seq0") {
  namespace fs = std::filesystem;
  const fs::path seq_dir = fs::path(root) / sequence;
  fs::create_directories(seq_dir / "depth");
  {
    std::ofstream os(seq_dir / "intrinsics.txt");
    MISM_CHECK(os.good(), "write_synthetic_dataset: cannot write intrinsics");
    const auto& K = scene.K.matrix();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) os << static_cast<double>(K(r, c)) << (c == 2 ? "\n" : " ");
  }
  for (Index f = 0; f < scene.num_frames(); ++f) {
    auto [img, dep] = render_scene(scene, f);
    write_png_rgb8((seq_dir / (std::to_string(f) + ".png")).string(), tensor_to_image(img));
    write_png_gray16((seq_dir / "depth" / (std::to_string(f) + ".png")).string(),
                     depth_to_png(dep));
  }
}

}  // namespace mism
