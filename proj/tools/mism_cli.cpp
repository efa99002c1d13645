#include "mism/data.hpp"
#include "mism/eval.hpp"
#include "mism/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using Scalar = float;

namespace {

using namespace mism;

// inverse-depth preview, near = warm
RgbImage8 depth_preview(const Tensor<Scalar>& depth) {
  const Index H = depth.shape()[1], W = depth.shape()[2];
  float lo = 1e30f, hi = -1e30f;
  for (Index i = 0; i < H * W; ++i) {
    const float inv = 1.0f / std::max(depth.values()[i], 1e-3f);
    lo = std::min(lo, inv);
    hi = std::max(hi, inv);
  }
  RgbImage8 img;
  img.width = static_cast<int>(W);
  img.height = static_cast<int>(H);
  img.data.resize(static_cast<size_t>(3 * W * H));
  for (Index i = 0; i < H * W; ++i) {
    const float inv = 1.0f / std::max(depth.values()[i], 1e-3f);
    const float t = (hi > lo) ? (inv - lo) / (hi - lo) : 0.0f;
    double r, g, b;
    if (t < 0.5) {
      r = t * 2.0;
      g = t * 1.6;
      b = 1.0 - t;
    } else {
      r = 1.0;
      g = 1.6 - t * 1.6;
      b = 0.5 - t * 0.5;
    }
    img.data[static_cast<size_t>(3 * i)] = static_cast<uint8_t>(std::min(r, 1.0) * 255);
    img.data[static_cast<size_t>(3 * i + 1)] = static_cast<uint8_t>(std::min(g, 1.0) * 255);
    img.data[static_cast<size_t>(3 * i + 2)] = static_cast<uint8_t>(std::min(b, 1.0) * 255);
  }
  return img;
}

int run_train(const std::string& config_path, const std::string& data_root,
              const std::string& out_path, const std::string& stage_flag,
              const std::string& teacher_path_flag) {
  TrainConfig cfg = parse_train_config(config_path);
  if (!stage_flag.empty()) cfg.stage = stage_flag;
  if (!teacher_path_flag.empty()) cfg.teacher_ckpt = teacher_path_flag;
  apply_env_seed(cfg);
  cfg.validate();

  LoadOptions<Scalar> opt;
  opt.height = cfg.height;
  opt.width = cfg.width;
  DiskSource<Scalar> data(data_root, opt);
  std::cout << "dataset: " << data.size() << " samples\n";

  if (cfg.stage == "teacher") {
    Rng rng(cfg.seed);
    TeacherModel<Scalar> model(cfg, rng);
    TrainStats stats = train_teacher(cfg, data, model);
    save_teacher_checkpoint(model, out_path);
    std::cout << "teacher: loss " << stats.first_loss << " -> " << stats.last_loss << "\n"
              << "saved " << out_path << "\n";
  } else {
    MISM_CHECK(!cfg.teacher_ckpt.empty(),
               "student training needs --teacher or a teacher_ckpt config entry");
    TeacherModel<Scalar> teacher = load_teacher_checkpoint<Scalar>(cfg.teacher_ckpt);
    teacher.set_trainable(false);
    Rng rng(cfg.seed);
    StudentModel<Scalar> model(cfg, rng);
    TrainStats stats = train_student(cfg, teacher, data, model);
    save_student_checkpoint(model, out_path);
    std::cout << "student: loss " << stats.first_loss << " -> " << stats.last_loss << "\n"
              << "saved " << out_path << "\n";
  }
  return 0;
}

int run_infer(const std::string& student_path, const std::string& teacher_path,
              const std::string& input_dir, const std::string& out_dir) {
  StudentModel<Scalar> student = load_student_checkpoint<Scalar>(student_path);
  student.set_trainable(false);
  TeacherModel<Scalar> teacher = load_teacher_checkpoint<Scalar>(teacher_path);
  teacher.set_trainable(false);

  LoadOptions<Scalar> opt;
  opt.height = student.cfg.height;
  opt.width = student.cfg.width;
  Intrinsics<double> K0 = read_intrinsics_file((fs::path(input_dir) / "intrinsics.txt").string());

  std::vector<long> frames;
  for (const auto& e : fs::directory_iterator(input_dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    try {
      frames.push_back(std::stol(e.path().stem().string()));
    } catch (...) {
    }
  }
  std::sort(frames.begin(), frames.end());
  MISM_CHECK(!frames.empty(), "infer: no frames in " + input_dir);
  fs::create_directories(out_dir);

  for (size_t i = 0; i < frames.size(); ++i) {
    auto load = [&](long idx) {
      auto img = image_to_tensor<Scalar>(
          read_png_rgb8((fs::path(input_dir) / (std::to_string(idx) + ".png")).string()));
      if (img.shape()[1] != opt.height || img.shape()[2] != opt.width)
        img = resize_bilinear(img, opt.height, opt.width);
      return img;
    };
    Tensor<Scalar> target = load(frames[i]);
    std::optional<Tensor<Scalar>> prev;
    if (i > 0 && frames[i - 1] == frames[i] - 1) prev = load(frames[i - 1]);

    const RgbImage8 native =
        read_png_rgb8((fs::path(input_dir) / (std::to_string(frames[i]) + ".png")).string());
    const Scalar sx = static_cast<Scalar>(opt.width) / static_cast<Scalar>(native.width);
    const Scalar sy = static_cast<Scalar>(opt.height) / static_cast<Scalar>(native.height);
    auto K = Intrinsics<Scalar>::from_focal(
        static_cast<Scalar>(K0.fx()) * sx, static_cast<Scalar>(K0.fy()) * sy,
        static_cast<Scalar>(K0.cx()) * sx, static_cast<Scalar>(K0.cy()) * sy);

    InferResult<Scalar> r = infer(student, teacher, prev, target, K);
    const std::string stem = std::to_string(frames[i]);
    write_png_gray16((fs::path(out_dir) / (stem + ".png")).string(), depth_to_png(r.depth_multi));
    write_png_gray16((fs::path(out_dir) / (stem + "_single.png")).string(),
                     depth_to_png(r.depth_single));
    write_png_rgb8((fs::path(out_dir) / (stem + "_preview.png")).string(),
                   depth_preview(r.depth_multi));
    std::cout << stem << (r.used_multi ? "" : " (single-frame fallback)") << "\n";
  }
  return 0;
}

int run_synth(uint64_t seed, const std::string& out_root, int frames, double motion, long width,
              long height) {
  auto scene = generate_synthetic<Scalar>(seed, frames, motion, width, height);
  write_synthetic_dataset(scene, out_root);
  std::cout << "wrote " << frames << " frames to " << out_root << "/seq0\n";
  return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, bool no_median_scale,
             double cap, const std::string& report) {
  MetricReport r = evaluate_run<Scalar>(pred_dir, gt_dir, report, cap, !no_median_scale);
  std::cout << "images " << r.n_images << "  abs_rel " << r.abs_rel << "  sq_rel " << r.sq_rel
            << "  rmse " << r.rmse << "  rmse_log " << r.rmse_log << "  d1 " << r.delta1
            << "  d2 " << r.delta2 << "  d3 " << r.delta3 << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mism: two-stage self-supervised single/multi-frame depth"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train the teacher or the student stage");
  std::string stage, cfg_path, data_root, out_path, teacher_path;
  train->add_option("--stage", stage, "teacher|student")
      ->check(CLI::IsMember({"teacher", "student"}));
  train->add_option("--config", cfg_path, "key-value config file")->required();
  train->add_option("--data", data_root, "dataset root")->required();
  train->add_option("--out", out_path, "output checkpoint")->required();
  train->add_option("--teacher", teacher_path, "teacher checkpoint (student stage)");

  auto* infer_cmd = app.add_subcommand("infer", "run two-frame inference over a sequence");
  std::string student_ck, teacher_ck, input_dir, out_dir;
  infer_cmd->add_option("--student", student_ck)->required();
  infer_cmd->add_option("--teacher", teacher_ck)->required();
  infer_cmd->add_option("--input", input_dir, "sequence directory")->required();
  infer_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  uint64_t seed = 1;
  std::string synth_out;
  int synth_frames = 12;
  double synth_motion = 0.4;
  long synth_w = 192, synth_h = 64;
  synth->add_option("--seed", seed)->required();
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--frames", synth_frames);
  synth->add_option("--motion", synth_motion);
  synth->add_option("--width", synth_w);
  synth->add_option("--height", synth_h);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate predicted depth against ground truth");
  std::string pred_dir, gt_dir, report;
  bool no_median = false;
  double cap = 80.0;
  eval_cmd->add_option("--pred", pred_dir)->required();
  eval_cmd->add_option("--gt", gt_dir)->required();
  eval_cmd->add_flag("--no-median-scale", no_median);
  eval_cmd->add_option("--cap", cap);
  eval_cmd->add_option("--report", report);

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return run_train(cfg_path, data_root, out_path, stage, teacher_path);
    if (infer_cmd->parsed()) return run_infer(student_ck, teacher_ck, input_dir, out_dir);
    if (synth->parsed())
      return run_synth(seed, synth_out, synth_frames, synth_motion, synth_w, synth_h);
    if (eval_cmd->parsed()) return run_eval(pred_dir, gt_dir, no_median, cap, report);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
