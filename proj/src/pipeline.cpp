#include "mism/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mism {

namespace {

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail("config: bad boolean value '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream is(path);
  MISM_CHECK(is.good(), "config: cannot open " + path);
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::string eq_or_val;
    ls >> eq_or_val;
    std::string val = eq_or_val == "=" ? "" : eq_or_val;
    if (val.empty()) ls >> val;
    MISM_CHECK(!val.empty(), "config: missing value at line " + std::to_string(lineno));

    if (key == "stage") c.stage = val;
    else if (key == "epochs") c.epochs = std::stoi(val);
    else if (key == "steps_per_epoch") c.steps_per_epoch = std::stoi(val);
    else if (key == "lr_initial") c.lr_initial = std::stod(val);
    else if (key == "lr_drop_epoch") c.lr_drop_epoch = std::stoi(val);
    else if (key == "lr_drop_factor") c.lr_drop_factor = std::stod(val);
    else if (key == "batch_size") c.batch_size = std::stoi(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "height") c.height = std::stol(val);
    else if (key == "width") c.width = std::stol(val);
    else if (key == "pads_enabled") c.pads_enabled = parse_bool(val);
    else if (key == "fixed_delta_value") c.fixed_delta_value = std::stod(val);
    else if (key == "distill_enabled") c.distill_enabled = parse_bool(val);
    else if (key == "min_reproj_mask_enabled") c.min_reproj_mask_enabled = parse_bool(val);
    else if (key == "variant") c.variant = val;
    else if (key == "n_hypotheses") c.n_hypotheses = std::stoi(val);
    else if (key == "groups") c.groups = std::stoi(val);
    else if (key == "feature_channels") c.feature_channels = std::stoi(val);
    else if (key == "reg_base") c.reg_base = std::stoi(val);
    else if (key == "local_max_radius") c.local_max_radius = std::stoi(val);
    else if (key == "beta") c.beta = std::stod(val);
    else if (key == "warm_start_steps") c.warm_start_steps = std::stoi(val);
    else if (key == "aug_jitter") c.aug_jitter = parse_bool(val);
    else if (key == "aug_flip") c.aug_flip = parse_bool(val);
    else if (key == "aug_feat_mask") c.aug_feat_mask = parse_bool(val);
    else if (key == "teacher_ckpt") c.teacher_ckpt = val;
    else fail("config: unknown key '" + key + "' at line " + std::to_string(lineno));
  }
  return c;
}

void apply_env_seed(TrainConfig& cfg) {
  if (const char* env = std::getenv("MISM_SEED")) cfg.seed = std::stoull(env);
}

}  // namespace mism
