#pragma once

#include "mism/checkpoint.hpp"
#include "mism/data.hpp"
#include "mism/losses.hpp"
#include "mism/matching.hpp"
#include "mism/networks.hpp"
#include "mism/pads.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace mism {

// ---------------------------------------------------------------------------
// Training configuration (key-value text file; MISM_SEED env overrides seed)
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::string stage = "teacher";
  int epochs = 2;
  int steps_per_epoch = 0;  // 0: one pass over the dataset
  double lr_initial = 2e-4;
  int lr_drop_epoch = 1;  // Q
  double lr_drop_factor = 10.0;
  int batch_size = 1;
  uint64_t seed = 1;
  Index height = 64, width = 192;

  // ablation switches (PADS / Distill / Min. Reproj.)
  bool pads_enabled = true;
  double fixed_delta_value = 0.3;
  bool distill_enabled = true;
  bool min_reproj_mask_enabled = true;

  // model family
  std::string variant = "tiny";
  int n_hypotheses = 16;
  int groups = 16;
  int feature_channels = 32;
  int reg_base = 8;
  int local_max_radius = 1;
  double beta = 1.2;
  int warm_start_steps = 0;

  // augmentation
  bool aug_jitter = true;
  bool aug_flip = true;
  bool aug_feat_mask = true;

  std::string teacher_ckpt;  // required for stage=student

  void validate() const {
    MISM_CHECK(stage == "teacher" || stage == "student", "config: stage must be teacher|student");
    MISM_CHECK(epochs >= 1, "config: epochs must be >= 1");
    MISM_CHECK(lr_drop_epoch < epochs, "config: lr_drop_epoch must be < epochs");
    MISM_CHECK(lr_initial > 0, "config: lr_initial must be positive");
    MISM_CHECK(batch_size >= 1, "config: batch_size >= 1");
    MISM_CHECK(height % 4 == 0 && width % 4 == 0, "config: resolution must be divisible by 4");
    MISM_CHECK(feature_channels % groups == 0, "config: C must be divisible by G");
    MISM_CHECK(n_hypotheses >= 2, "config: need at least 2 depth hypotheses");
    MISM_CHECK(fixed_delta_value >= 0, "config: fixed_delta_value must be >= 0");
  }

  NetworkConfig network_config() const {
    NetworkConfig nc = NetworkConfig::for_variant(variant_from_name(variant));
    nc.feature_channels = feature_channels;
    return nc;
  }
};

TrainConfig parse_train_config(const std::string& path);
void apply_env_seed(TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
class Adam {
 public:
  explicit Adam(ParamRegistry<S> params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params_.items) {
      m_.push_back(Vec<S>::Zero(t.numel()));
      v_.push_back(Vec<S>::Zero(t.numel()));
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto& [name, t] : params_.items) t.zero_grad();
  }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S bias1 = S(1) - static_cast<S>(std::pow(beta1_, t_));
    const S bias2 = S(1) - static_cast<S>(std::pow(beta2_, t_));
    const S alpha = static_cast<S>(lr_) * static_cast<S>(std::sqrt(static_cast<double>(bias2))) / bias1;
    for (size_t i = 0; i < params_.items.size(); ++i) {
      auto& t = params_.items[i].second;
      if (t.grad().size() == 0) continue;
      m_[i] = b1 * m_[i] + (S(1) - b1) * t.grad();
      v_[i] = b2 * v_[i] + (S(1) - b2) * t.grad().square();
      t.values() -= alpha * m_[i] / (v_[i].sqrt() + static_cast<S>(eps_));
    }
  }

 private:
  ParamRegistry<S> params_;
  std::vector<Vec<S>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

template <typename S>
struct TeacherModel {
  TrainConfig cfg;
  SDepthNet<S> s_depth;
  PoseNet<S> pose;
  FeatNet<S> feat;
  CostRegularizer<S> reg;
  UpsampleHead<S> up_head;
  UncertaintyMap<S> delta;

  TeacherModel(const TrainConfig& c, Rng& rng)
      : cfg(c),
        s_depth(c.network_config(), rng),
        pose(c.network_config(), rng),
        feat(c.network_config(), rng),
        reg(c.groups, c.reg_base, rng),
        up_head(c.feature_channels, 2 * c.reg_base, rng),
        delta(c.pads_enabled
                  ? UncertaintyMap<S>::ones(c.height / 4, c.width / 4)
                  : UncertaintyMap<S>::fixed(c.height / 4, c.width / 4,
                                             static_cast<S>(c.fixed_delta_value))) {}

  ParamRegistry<S> params() const {
    ParamRegistry<S> r;
    s_depth.register_params(r, "s_depth");
    pose.register_params(r, "pose");
    feat.register_params(r, "feat");
    reg.register_params(r, "reg");
    up_head.register_params(r, "up_head");
    return r;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : params().items) t.set_requires_grad(on);
  }
};

template <typename S>
struct StudentModel {
  TrainConfig cfg;
  SDepthNet<S> s_depth;
  PoseNet<S> pose;

  StudentModel(const TrainConfig& c, Rng& rng)
      : cfg(c), s_depth(c.network_config(), rng), pose(c.network_config(), rng) {}

  ParamRegistry<S> params() const {
    ParamRegistry<S> r;
    s_depth.register_params(r, "s_depth");
    pose.register_params(r, "pose");
    return r;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : params().items) t.set_requires_grad(on);
  }
};

/// FNV-1a over all parameter bytes, for frozen-weights assertions.
template <typename S>
uint64_t param_hash(const ParamRegistry<S>& r) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : r.items) {
    const auto* bytes = reinterpret_cast<const uint8_t*>(t.values().data());
    for (Index i = 0; i < t.numel() * static_cast<Index>(sizeof(S)); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint glue
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, std::string>> config_echo(const TrainConfig& c) {
  auto s = [](auto v) { std::ostringstream os; os << v; return os.str(); };
  return {
      {"variant", c.variant},
      {"height", s(c.height)},
      {"width", s(c.width)},
      {"n_hypotheses", s(c.n_hypotheses)},
      {"groups", s(c.groups)},
      {"feature_channels", s(c.feature_channels)},
      {"reg_base", s(c.reg_base)},
      {"local_max_radius", s(c.local_max_radius)},
      {"beta", s(c.beta)},
      {"pads_enabled", s(int(c.pads_enabled))},
      {"fixed_delta_value", s(c.fixed_delta_value)},
  };
}

inline TrainConfig config_from_echo(const CheckpointData& d) {
  TrainConfig c;
  auto get = [&](const char* k) {
    const std::string* v = d.config_value(k);
    MISM_CHECK(v != nullptr, std::string("checkpoint: missing config key ") + k);
    return *v;
  };
  c.variant = get("variant");
  c.height = std::stol(get("height"));
  c.width = std::stol(get("width"));
  c.n_hypotheses = std::stoi(get("n_hypotheses"));
  c.groups = std::stoi(get("groups"));
  c.feature_channels = std::stoi(get("feature_channels"));
  c.reg_base = std::stoi(get("reg_base"));
  c.local_max_radius = std::stoi(get("local_max_radius"));
  c.beta = std::stod(get("beta"));
  c.pads_enabled = std::stoi(get("pads_enabled")) != 0;
  c.fixed_delta_value = std::stod(get("fixed_delta_value"));
  c.stage = d.stage;
  return c;
}

template <typename S>
void load_params(const CheckpointData& d, ParamRegistry<S> reg, size_t extra_arrays) {
  MISM_CHECK(d.arrays.size() == reg.items.size() + extra_arrays,
             "checkpoint: unexpected array count");
  for (auto& [name, t] : reg.items) {
    Tensor<S> loaded = ckpt_get<S>(d, name);
    MISM_CHECK(loaded.shape() == t.shape(), "checkpoint: shape mismatch for " + name);
    t.values() = loaded.values();
  }
}

}  // namespace detail

template <typename S>
void save_teacher_checkpoint(const TeacherModel<S>& m, const std::string& path) {
  CheckpointData d;
  d.dtype = dtype_name<S>();
  d.stage = "teacher";
  d.config = detail::config_echo(m.cfg);
  for (const auto& [name, t] : m.params().items) ckpt_put(d, name, t);
  ckpt_put(d, "pads.delta", m.delta.delta);
  write_checkpoint_file(path, d);
}

template <typename S>
void save_student_checkpoint(const StudentModel<S>& m, const std::string& path) {
  CheckpointData d;
  d.dtype = dtype_name<S>();
  d.stage = "student";
  d.config = detail::config_echo(m.cfg);
  for (const auto& [name, t] : m.params().items) ckpt_put(d, name, t);
  write_checkpoint_file(path, d);
}

template <typename S>
TeacherModel<S> load_teacher_checkpoint(const std::string& path) {
  CheckpointData d = read_checkpoint_file(path);
  MISM_CHECK(d.stage == "teacher", "checkpoint: expected a teacher checkpoint");
  MISM_CHECK(d.find("pads.delta") != nullptr, "checkpoint: teacher file is missing delta");
  TrainConfig cfg = detail::config_from_echo(d);
  Rng rng(0);  // architecture only; weights are overwritten below
  TeacherModel<S> m(cfg, rng);
  detail::load_params<S>(d, m.params(), /*extra_arrays=*/1);
  Tensor<S> delta = ckpt_get<S>(d, "pads.delta");
  m.delta.delta = delta;
  return m;
}

template <typename S>
StudentModel<S> load_student_checkpoint(const std::string& path) {
  CheckpointData d = read_checkpoint_file(path);
  MISM_CHECK(d.stage == "student", "checkpoint: expected a student checkpoint");
  TrainConfig cfg = detail::config_from_echo(d);
  Rng rng(0);
  StudentModel<S> m(cfg, rng);
  detail::load_params<S>(d, m.params(), /*extra_arrays=*/0);
  return m;
}

// ---------------------------------------------------------------------------
// Data sources
// ---------------------------------------------------------------------------

template <typename S>
struct DataSource {
  virtual ~DataSource() = default;
  virtual Index size() const = 0;
  virtual Triplet<S> get(Index i) = 0;
};

template <typename S>
class MemorySource final : public DataSource<S> {
 public:
  explicit MemorySource(std::vector<Triplet<S>> items) : items_(std::move(items)) {
    MISM_CHECK(!items_.empty(), "MemorySource: empty dataset");
  }
  Index size() const override { return static_cast<Index>(items_.size()); }
  Triplet<S> get(Index i) override { return items_[static_cast<size_t>(i)]; }

 private:
  std::vector<Triplet<S>> items_;
};

template <typename S>
class DiskSource final : public DataSource<S> {
 public:
  DiskSource(std::string root, LoadOptions<S> opt) : root_(std::move(root)), opt_(std::move(opt)) {
    samples_ = list_samples<S>(root_, opt_);
    MISM_CHECK(!samples_.empty(), "DiskSource: no samples under " + root_);
  }
  Index size() const override { return static_cast<Index>(samples_.size()); }
  Triplet<S> get(Index i) override {
    const auto& id = samples_[static_cast<size_t>(i)];
    auto t = load_triplet<S>(root_, id.sequence, id.index, opt_);
    MISM_CHECK(t.has_value(), "DiskSource: sample vanished: " + id.sequence);
    return *t;
  }

 private:
  std::string root_;
  LoadOptions<S> opt_;
  std::vector<SampleId> samples_;
};

// ---------------------------------------------------------------------------
// Forward compositions
// ---------------------------------------------------------------------------

template <typename S>
struct MultiFrameResult {
  Tensor<S> depth_full;   // (1,H,W)
  Tensor<S> depth_low;    // (1,h,w)
  Tensor<S> prior_low;    // (1,h,w), downsampled single-frame prior
};

/// The multi-frame branch: PADS sampling around the prior, plane-sweep cost
/// volume, regularization, local-max regression, convex upsampling.
template <typename S>
MultiFrameResult<S> multi_frame_depth(const TeacherModel<S>& m, const Tensor<S>& target,
                                      const Tensor<S>& context, const Tensor<S>& prior_full,
                                      const Tensor<S>& pose_t_to_c, const Intrinsics<S>& K,
                                      const UncertaintyMap<S>& delta) {
  const Index H = target.shape()[1], W = target.shape()[2];
  Tensor<S> prior_low = downsample_depth(prior_full);
  UncertaintyMap<S> delta_used = delta;
  if (delta.h() != H / 4 || delta.w() != W / 4) {
    std::cerr << "mism: warning: rescaling delta from " << delta.h() << "x" << delta.w()
              << " to " << H / 4 << "x" << W / 4 << "\n";
    delta_used.delta = resize_bilinear(delta.delta, H / 4, W / 4).detach();
  }
  DepthRange<S> range = compute_range(prior_low, delta_used);
  Tensor<S> hypoth = sample_hypotheses(range, m.cfg.n_hypotheses);

  Tensor<S> f_t = m.feat.forward(target);
  Tensor<S> f_c = m.feat.forward(context);
  const Intrinsics<S> Kq = K.scaled(S(0.25), S(0.25));
  Tensor<S> fv = build_feature_volume(f_c, hypoth, Kq, pose_t_to_c);
  Tensor<S> cv = groupwise_correlation(f_t, fv, m.cfg.groups);
  Tensor<S> prob = regularize(cv, m.reg);
  Tensor<S> d_low = local_max_regress(prob, hypoth, m.cfg.local_max_radius);
  Tensor<S> weights = m.up_head.forward(f_t);
  Tensor<S> d_full = convex_upsample(d_low, weights);
  return {d_full, d_low, prior_low};
}

template <typename S>
struct TeacherForward {
  Tensor<S> loss;
  Tensor<S> d_s_full;
  Tensor<S> d_m_full;
  Tensor<S> d_s_low;  // detached copies for the delta update
  Tensor<S> d_m_low;
};

/// One teacher step graph: Eq-8 joint loss over the single- and multi-frame
/// branches (multi-frame branch skipped during warm start).
template <typename S>
TeacherForward<S> teacher_forward(const TeacherModel<S>& m, const Triplet<S>& t,
                                  const LossWeights<S>& w, bool with_multi = true) {
  std::vector<Tensor<S>> contexts{t.prev, t.next};
  std::vector<Tensor<S>> depths = m.s_depth.forward(t.target);
  Tensor<S> pose_prev = pose_matrix(m.pose.forward(t.prev, t.target), false);
  Tensor<S> pose_next = pose_matrix(m.pose.forward(t.target, t.next), true);
  std::vector<Tensor<S>> poses{pose_prev, pose_next};

  Tensor<S> loss = self_supervised_loss(depths, t.target, contexts, t.K, poses, w);
  TeacherForward<S> out;
  out.d_s_full = depths[0];
  if (with_multi) {
    const Tensor<S>& feat_context = t.feat_prev ? *t.feat_prev : t.prev;
    MultiFrameResult<S> mf =
        multi_frame_depth(m, t.target, feat_context, depths[0], pose_prev, t.K, m.delta);
    loss = loss + self_supervised_loss<S>({mf.depth_full}, t.target, contexts, t.K, poses, w);
    out.d_m_full = mf.depth_full;
    out.d_s_low = mf.prior_low.detach();
    out.d_m_low = mf.depth_low.detach();
  }
  out.loss = loss;
  return out;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainStats {
  std::vector<double> step_losses;
  double first_loss = 0, last_loss = 0;
};

namespace detail {

[[noreturn]] inline void divergence_abort(const std::string& stage, int epoch, int step,
                                          double loss_value, const std::string& sample) {
  std::ostringstream os;
  os << "mism: divergence in " << stage << " training at epoch " << epoch << " step " << step
     << ": loss=" << loss_value << " sample=" << sample;
  std::ofstream dump("mism_divergence_dump.txt");
  dump << os.str() << "\n";
  fail(os.str());
}

inline double schedule_lr(const TrainConfig& cfg, int epoch) {
  return epoch >= cfg.lr_drop_epoch ? cfg.lr_initial / cfg.lr_drop_factor : cfg.lr_initial;
}

template <typename S>
Triplet<S> draw_sample(DataSource<S>& data, Rng& rng, const TrainConfig& cfg, bool teacher_stage) {
  const Index i = static_cast<Index>(rng.uniform_int(static_cast<uint64_t>(data.size())));
  Triplet<S> t = data.get(i);
  AugmentConfig ac;
  ac.jitter = cfg.aug_jitter;
  ac.flip = cfg.aug_flip;
  ac.feat_mask = teacher_stage && cfg.aug_feat_mask;
  return augment(t, rng.next_u64(), ac);
}

}  // namespace detail

template <typename S>
TrainStats train_teacher(const TrainConfig& cfg, DataSource<S>& data, TeacherModel<S>& model) {
  MISM_CHECK(cfg.stage == "teacher", "train_teacher: wrong stage");
  cfg.validate();
  LossWeights<S> w;
  Adam<S> opt(model.params(), cfg.lr_initial);
  Rng rng(cfg.seed);
  TrainStats stats;
  const int steps =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : static_cast<int>(data.size());
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(detail::schedule_lr(cfg, epoch));
    for (int step = 0; step < steps; ++step, ++global_step) {
      opt.zero_grad();
      const bool with_multi = global_step >= cfg.warm_start_steps;
      Tensor<S> batch_loss = Tensor<S>::scalar(S(0));
      std::vector<std::pair<Tensor<S>, Tensor<S>>> delta_updates;
      std::string sample_tag;
      for (int b = 0; b < cfg.batch_size; ++b) {
        Triplet<S> t = detail::draw_sample(data, rng, cfg, true);
        sample_tag += t.sequence + ":" + std::to_string(t.index) + " ";
        TeacherForward<S> f = teacher_forward(model, t, w, with_multi);
        batch_loss = batch_loss + f.loss;
        if (with_multi && cfg.pads_enabled) delta_updates.emplace_back(f.d_s_low, f.d_m_low);
      }
      batch_loss = batch_loss * (S(1) / static_cast<S>(cfg.batch_size));
      const double loss_value = static_cast<double>(batch_loss.value());
      if (!std::isfinite(loss_value))
        detail::divergence_abort("teacher", epoch, step, loss_value, sample_tag);
      batch_loss.backward();
      opt.step();
      for (const auto& [ds, dm] : delta_updates)
        update_uncertainty(model.delta, ds, dm, static_cast<S>(cfg.beta));
      stats.step_losses.push_back(loss_value);
    }
  }
  stats.first_loss = stats.step_losses.front();
  stats.last_loss = stats.step_losses.back();
  return stats;
}

template <typename S>
TrainStats train_student(const TrainConfig& cfg, const TeacherModel<S>& teacher,
                         DataSource<S>& data, StudentModel<S>& model) {
  MISM_CHECK(cfg.stage == "student", "train_student: wrong stage");
  cfg.validate();
  MISM_CHECK(!teacher.params().items.front().second.requires_grad(),
             "train_student: teacher must be frozen");
  LossWeights<S> w;
  if (!cfg.distill_enabled) w.lambda_si = S(0);
  Adam<S> opt(model.params(), cfg.lr_initial);
  Rng rng(cfg.seed);
  TrainStats stats;
  const int steps =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : static_cast<int>(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(detail::schedule_lr(cfg, epoch));
    for (int step = 0; step < steps; ++step) {
      opt.zero_grad();
      Tensor<S> batch_loss = Tensor<S>::scalar(S(0));
      std::string sample_tag;
      for (int b = 0; b < cfg.batch_size; ++b) {
        Triplet<S> t = detail::draw_sample(data, rng, cfg, false);
        sample_tag += t.sequence + ":" + std::to_string(t.index) + " ";

        StudentOutputs<S> so;
        so.depths = model.s_depth.forward(t.target);
        so.poses = {pose_matrix(model.pose.forward(t.prev, t.target), false),
                    pose_matrix(model.pose.forward(t.target, t.next), true)};

        Tensor<S> loss;
        if (cfg.distill_enabled) {
          // pseudo label from the frozen teacher's own prior and pose
          Tensor<S> teacher_prior = teacher.s_depth.forward(t.target).front();
          Tensor<S> teacher_pose =
              pose_matrix(teacher.pose.forward(t.prev, t.target), false);
          MultiFrameResult<S> mf = multi_frame_depth(teacher, t.target, t.prev, teacher_prior,
                                                     teacher_pose, t.K, teacher.delta);
          Tensor<S> pseudo = mf.depth_full.detach();
          loss = distillation_loss(so, pseudo, t.target, {t.prev, t.next}, t.K, w,
                                   cfg.min_reproj_mask_enabled);
        } else {
          loss = self_supervised_loss(so.depths, t.target, {t.prev, t.next}, t.K, so.poses, w);
        }
        batch_loss = batch_loss + loss;
      }
      batch_loss = batch_loss * (S(1) / static_cast<S>(cfg.batch_size));
      const double loss_value = static_cast<double>(batch_loss.value());
      if (!std::isfinite(loss_value))
        detail::divergence_abort("student", epoch, step, loss_value, sample_tag);
      batch_loss.backward();
      opt.step();
      stats.step_losses.push_back(loss_value);
    }
  }
  stats.first_loss = stats.step_losses.front();
  stats.last_loss = stats.step_losses.back();
  return stats;
}

// ---------------------------------------------------------------------------
// Inference: student prior + teacher matching stack, delta frozen.
// ---------------------------------------------------------------------------

template <typename S>
struct InferResult {
  Tensor<S> depth_multi;   // final D^m (equals depth_single when no prev frame)
  Tensor<S> depth_single;  // student prior
  bool used_multi = false;
};

template <typename S>
InferResult<S> infer(const StudentModel<S>& student, const TeacherModel<S>& teacher,
                     const std::optional<Tensor<S>>& prev, const Tensor<S>& target,
                     const Intrinsics<S>& K) {
  Tensor<S> d_single = student.s_depth.forward(target).front().detach();
  if (!prev.has_value()) return {d_single, d_single, false};
  Tensor<S> pose = pose_matrix(student.pose.forward(*prev, target), false);
  MultiFrameResult<S> mf =
      multi_frame_depth(teacher, target, *prev, d_single, pose, K, teacher.delta);
  return {mf.depth_full.detach(), d_single, true};
}

}  // namespace mism
