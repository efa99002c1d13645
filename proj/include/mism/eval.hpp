#pragma once

#include "mism/data.hpp"
#include "mism/image_io.hpp"
#include "mism/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace mism {

struct MetricReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  long n_images = 0, n_pixels = 0;
};

/// Standard depth metrics under an 80 m cap with optional per-image median
/// scaling. Valid pixels are gt in (1e-3, cap]; pred is clamped to the same
/// interval after scaling.
template <typename S>
MetricReport compute_metrics(const Tensor<S>& pred, const Tensor<S>& gt, double cap = 80.0,
                             bool median_scale = true) {
  MISM_CHECK(pred.shape() == gt.shape(), "compute_metrics: shape mismatch");
  std::vector<double> pv, gv;
  pv.reserve(static_cast<size_t>(pred.numel()));
  for (Index i = 0; i < pred.numel(); ++i) {
    const double g = static_cast<double>(gt.values()[i]);
    if (g > 1e-3 && g <= cap) {
      pv.push_back(static_cast<double>(pred.values()[i]));
      gv.push_back(g);
    }
  }
  MISM_CHECK(!pv.empty(), "compute_metrics: no valid ground-truth pixels");

  if (median_scale) {
    auto median = [](std::vector<double> v) {
      const size_t m = v.size() / 2;
      std::nth_element(v.begin(), v.begin() + static_cast<long>(m), v.end());
      return v[m];
    };
    const double ratio = median(gv) / median(pv);
    for (double& p : pv) p *= ratio;
  }
  for (double& p : pv) p = std::min(std::max(p, 1e-3), cap);

  MetricReport r;
  r.n_images = 1;
  r.n_pixels = static_cast<long>(pv.size());
  for (size_t i = 0; i < pv.size(); ++i) {
    const double p = pv[i], g = gv[i], d = p - g;
    r.abs_rel += std::abs(d) / g;
    r.sq_rel += d * d / g;
    r.rmse += d * d;
    const double dl = std::log(p) - std::log(g);
    r.rmse_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) r.delta1 += 1;
    if (ratio < 1.25 * 1.25) r.delta2 += 1;
    if (ratio < 1.25 * 1.25 * 1.25) r.delta3 += 1;
  }
  const double n = static_cast<double>(pv.size());
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.rmse = std::sqrt(r.rmse / n);
  r.rmse_log = std::sqrt(r.rmse_log / n);
  r.delta1 /= n;
  r.delta2 /= n;
  r.delta3 /= n;
  return r;
}

/// Abs-Rel error map, blue (0) to red (clamped at 0.25), invalid gt black.
template <typename S>
void emit_error_map(const Tensor<S>& pred, const Tensor<S>& gt, const std::string& path,
                    double cap = 80.0) {
  MISM_CHECK(pred.shape() == gt.shape(), "emit_error_map: shape mismatch");
  const Index H = pred.shape()[1], W = pred.shape()[2];
  bool any_valid = false;
  RgbImage8 img;
  img.width = static_cast<int>(W);
  img.height = static_cast<int>(H);
  img.data.assign(static_cast<size_t>(3 * W * H), 0);
  for (Index i = 0; i < H * W; ++i) {
    const double g = static_cast<double>(gt.values()[i]);
    if (!(g > 1e-3 && g <= cap)) continue;  // invalid stays black
    any_valid = true;
    const double err = std::abs(static_cast<double>(pred.values()[i]) - g) / g;
    const double t = std::min(err / 0.25, 1.0);
    // blue -> cyan -> yellow -> red ramp
    double rr, gg, bb;
    if (t < 1.0 / 3.0) {
      const double u = t * 3.0;
      rr = 0.0; gg = u; bb = 1.0;
    } else if (t < 2.0 / 3.0) {
      const double u = (t - 1.0 / 3.0) * 3.0;
      rr = u; gg = 1.0; bb = 1.0 - u;
    } else {
      const double u = (t - 2.0 / 3.0) * 3.0;
      rr = 1.0; gg = 1.0 - u; bb = 0.0;
    }
    img.data[static_cast<size_t>(3 * i)] = static_cast<uint8_t>(std::lround(rr * 255));
    img.data[static_cast<size_t>(3 * i + 1)] = static_cast<uint8_t>(std::lround(gg * 255));
    img.data[static_cast<size_t>(3 * i + 2)] = static_cast<uint8_t>(std::lround(bb * 255));
  }
  MISM_CHECK(any_valid, "emit_error_map: no valid pixels");
  write_png_rgb8(path, img);
}

namespace detail {

inline void write_report_files(const std::vector<std::pair<std::string, MetricReport>>& rows,
                               const MetricReport& mean, const std::string& table_path) {
  std::ofstream os(table_path);
  MISM_CHECK(os.good(), "evaluate_run: cannot write " + table_path);
  os << "image,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,n_pixels\n";
  for (const auto& [name, r] : rows)
    os << name << ',' << r.abs_rel << ',' << r.sq_rel << ',' << r.rmse << ',' << r.rmse_log
       << ',' << r.delta1 << ',' << r.delta2 << ',' << r.delta3 << ',' << r.n_pixels << '\n';
  os << "\n# summary over " << rows.size() << " images\n";
  os << "# abs_rel=" << mean.abs_rel << " sq_rel=" << mean.sq_rel << " rmse=" << mean.rmse
     << " rmse_log=" << mean.rmse_log << " delta1=" << mean.delta1 << " delta2=" << mean.delta2
     << " delta3=" << mean.delta3 << "\n";
}

}  // namespace detail

/// Evaluate a directory of predicted depth PNGs against ground truth with the
/// same filenames; per-image metrics averaged across images.
template <typename S>
MetricReport evaluate_run(const std::string& pred_dir, const std::string& gt_dir,
                          const std::string& table_path = "", double cap = 80.0,
                          bool median_scale = true) {
  namespace fs = std::filesystem;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  size_t gt_count = 0;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") ++gt_count;
  MISM_CHECK(!names.empty(), "evaluate_run: no predictions in " + pred_dir);
  MISM_CHECK(names.size() == gt_count, "evaluate_run: prediction/ground-truth count mismatch");

  std::vector<std::pair<std::string, MetricReport>> rows;
  MetricReport mean;
  for (const auto& name : names) {
    auto pred = depth_from_png<S>(read_png_gray16((fs::path(pred_dir) / name).string()));
    auto gt = depth_from_png<S>(read_png_gray16((fs::path(gt_dir) / name).string()));
    MetricReport r = compute_metrics(pred, gt, cap, median_scale);
    mean.abs_rel += r.abs_rel;
    mean.sq_rel += r.sq_rel;
    mean.rmse += r.rmse;
    mean.rmse_log += r.rmse_log;
    mean.delta1 += r.delta1;
    mean.delta2 += r.delta2;
    mean.delta3 += r.delta3;
    mean.n_pixels += r.n_pixels;
    rows.emplace_back(name, r);
  }
  const double n = static_cast<double>(rows.size());
  mean.abs_rel /= n;
  mean.sq_rel /= n;
  mean.rmse /= n;
  mean.rmse_log /= n;
  mean.delta1 /= n;
  mean.delta2 /= n;
  mean.delta3 /= n;
  mean.n_images = static_cast<long>(rows.size());
  if (!table_path.empty()) detail::write_report_files(rows, mean, table_path);
  return mean;
}

}  // namespace mism
