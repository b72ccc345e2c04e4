#pragma once

// Run configuration: one YAML document with nested sections. Every field
// has a default except the top-level seed.

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "reidkit/error.hpp"
#include "reidkit/fields.hpp"
#include "reidkit/net.hpp"
#include "reidkit/objectives.hpp"
#include "reidkit/synthgen.hpp"

namespace reidkit::harness {

struct CorpusSection {
  std::string path = "data/default";
  bool generate_if_missing = true;
  std::uint64_t seed = 7;
  synth::CorpusConfig spec;
};

struct OptimConfig {
  double base_lr = 1e-2;
  double warmup_start_lr = 1e-3;
  int warmup_epochs = 3;
  std::vector<int> decay_epochs = {10, 18};
  double decay_factor = 0.1;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AugmentConfig {
  int pad = 3;
  double erase_prob = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
};

struct TrainSection {
  int epochs = 30;
  int P = 16;
  int Kinst = 4;
  int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
};

struct AblationFlags {
  bool fixed_attention = false;
  bool no_visibility = false;
  bool per_part_triplet = false;
};

struct InferenceSection {
  int batch_size = 64;
  std::vector<int> ranks = {1, 5, 10};
};

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusSection corpus;
  nn::ModelConfig model;
  double lambda_t = 0.5;
  objectives::LossConfig loss = objectives::LossConfig::gilt();
  objectives::LossHyperParams hp{0.1, 0.3, 10.0};
  OptimConfig optim;
  AugmentConfig augment;
  TrainSection train;
  AblationFlags ablation;
  InferenceSection inference;
  std::string output_dir = "runs/default";

  /// Effective loss placement after ablation flags.
  objectives::LossConfig effective_loss() const {
    auto l = loss;
    if (ablation.per_part_triplet) l.part_triplet_mode = objectives::PartTripletMode::kPerPart;
    return l;
  }

  synth::CorpusConfig corpus_spec() const {
    auto c = corpus.spec;
    c.K = model.K;
    c.height = model.backbone.input_height;
    c.width = model.backbone.input_width;
    return c;
  }

  void validate() const {
    (void)fields::grouping_preset(model.K);
    require(model.backbone.widths.size() == model.backbone.strides.size() && !model.backbone.widths.empty(),
            ErrorCode::kInvalidConfig, "model.widths and model.strides must have equal non-zero length");
    int div = 1;
    for (int s : model.backbone.strides) {
      require(s == 1 || s == 2, ErrorCode::kInvalidConfig, "model.strides entries must be 1 or 2");
      div *= s;
    }
    require(model.backbone.input_height % div == 0 && model.backbone.input_width % div == 0,
            ErrorCode::kInvalidConfig, "input size must be divisible by the stride product");
    require(model.lambda_v > 0 && model.lambda_v < 1, ErrorCode::kInvalidConfig, "lambda_v must lie in (0,1)");
    require(lambda_t > 0 && lambda_t < 1, ErrorCode::kInvalidConfig, "lambda_t must lie in (0,1)");
    loss.validate();
    hp.validate();
    require(optim.base_lr > 0 && optim.warmup_start_lr >= 0 && optim.warmup_epochs >= 0, ErrorCode::kInvalidConfig,
            "learning rates must be positive");
    require(optim.decay_factor > 0 && optim.decay_factor <= 1, ErrorCode::kInvalidConfig,
            "decay_factor must lie in (0,1]");
    require(augment.pad >= 0 && augment.erase_prob >= 0 && augment.erase_prob <= 1, ErrorCode::kInvalidConfig,
            "augment.pad >= 0 and erase_prob in [0,1] required");
    require(augment.erase_area_min > 0 && augment.erase_area_min <= augment.erase_area_max &&
                augment.erase_area_max <= 1 && augment.erase_aspect_min > 0 &&
                augment.erase_aspect_min <= augment.erase_aspect_max,
            ErrorCode::kInvalidConfig, "invalid random erasing ranges");
    require(train.epochs >= 1 && train.P >= 2 && train.Kinst >= 1 && train.checkpoint_every >= 0,
            ErrorCode::kInvalidConfig, "train.epochs >= 1, P >= 2, Kinst >= 1 required");
    require(inference.batch_size >= 1, ErrorCode::kInvalidConfig, "inference.batch_size must be positive");
    synth::validate(corpus_spec());
  }

  /// The 120-epoch schedule of the original recipe with 10-pixel padding.
  void apply_paper_schedule() {
    optim.base_lr = 3.5e-4;
    optim.warmup_start_lr = 3.5e-5;
    hp.lambda_pa = 0.35;
    train.epochs = 120;
    optim.warmup_epochs = 10;
    optim.decay_epochs = {40, 70};
    augment.pad = 10;
  }
};

namespace detail {

template <class T>
void read(const YAML::Node& n, const char* key, T& out) {
  if (!n || !n[key]) return;
  try {
    out = n[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("bad value for '") + key + "': " + e.what());
  }
}

inline void check_keys(const YAML::Node& n, const std::string& section, std::initializer_list<const char*> keys) {
  if (!n) return;
  require(n.IsMap(), ErrorCode::kInvalidConfig, "section '" + section + "' must be a mapping");
  for (const auto& kv : n) {
    const auto k = kv.first.as<std::string>();
    bool known = false;
    for (const char* allowed : keys) known |= k == allowed;
    require(known, ErrorCode::kInvalidConfig, "unknown key '" + k + "' in section '" + section + "'");
  }
}

inline std::vector<std::string> target_names(const std::set<objectives::Target>& ts) {
  std::vector<std::string> out;
  for (auto t : ts) out.emplace_back(objectives::to_string(t));
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const YAML::Node& root) {
  using detail::check_keys;
  using detail::read;
  require(root && root.IsMap(), ErrorCode::kInvalidConfig, "run config must be a mapping");
  check_keys(root, "<root>",
             {"seed", "schedule_preset", "corpus", "model", "labels", "loss", "optim", "augment", "train",
              "ablation", "inference", "output"});
  require(static_cast<bool>(root["seed"]), ErrorCode::kInvalidConfig, "run config must set 'seed'");
  RunConfig c;
  read(root, "seed", c.seed);
  std::string preset = "toy";
  read(root, "schedule_preset", preset);
  if (preset == "paper") c.apply_paper_schedule();
  else require(preset == "toy", ErrorCode::kInvalidConfig, "schedule_preset must be 'toy' or 'paper'");

  const auto corpus = root["corpus"];
  check_keys(corpus, "corpus",
             {"path", "generate_if_missing", "seed", "num_train_ids", "num_test_ids", "images_per_id",
              "query_per_id", "num_cams", "occlusion_prob", "occluder_min_frac", "occluder_max_frac",
              "pedestrian_share", "noise_sigma", "camera_gain_spread", "visibility_fraction"});
  read(corpus, "path", c.corpus.path);
  read(corpus, "generate_if_missing", c.corpus.generate_if_missing);
  read(corpus, "seed", c.corpus.seed);
  auto& s = c.corpus.spec;
  read(corpus, "num_train_ids", s.num_train_ids);
  read(corpus, "num_test_ids", s.num_test_ids);
  read(corpus, "images_per_id", s.images_per_id);
  read(corpus, "query_per_id", s.query_per_id);
  read(corpus, "num_cams", s.num_cams);
  read(corpus, "occlusion_prob", s.occlusion_prob);
  read(corpus, "occluder_min_frac", s.occluder_min_frac);
  read(corpus, "occluder_max_frac", s.occluder_max_frac);
  read(corpus, "pedestrian_share", s.pedestrian_share);
  read(corpus, "noise_sigma", s.noise_sigma);
  read(corpus, "camera_gain_spread", s.camera_gain_spread);
  read(corpus, "visibility_fraction", s.visibility_fraction);

  const auto model = root["model"];
  check_keys(model, "model", {"K", "input_height", "input_width", "widths", "strides", "lambda_v"});
  read(model, "K", c.model.K);
  read(model, "input_height", c.model.backbone.input_height);
  read(model, "input_width", c.model.backbone.input_width);
  read(model, "widths", c.model.backbone.widths);
  read(model, "strides", c.model.backbone.strides);
  read(model, "lambda_v", c.model.lambda_v);

  const auto labels = root["labels"];
  check_keys(labels, "labels", {"lambda_t"});
  read(labels, "lambda_t", c.lambda_t);

  const auto loss = root["loss"];
  check_keys(loss, "loss", {"row", "id_on", "tri_on", "part_triplet_mode", "epsilon", "margin", "lambda_pa"});
  if (loss && loss["row"]) c.loss = objectives::loss_grid_row(loss["row"].as<std::string>());
  if (loss && (loss["id_on"] || loss["tri_on"])) {
    std::vector<std::string> id_on, tri_on;
    read(loss, "id_on", id_on);
    read(loss, "tri_on", tri_on);
    c.loss.id_on.clear();
    c.loss.tri_on.clear();
    for (const auto& n : id_on) c.loss.id_on.insert(objectives::parse_target(n));
    for (const auto& n : tri_on) c.loss.tri_on.insert(objectives::parse_target(n));
  }
  std::string mode = "averaged";
  read(loss, "part_triplet_mode", mode);
  require(mode == "averaged" || mode == "per_part", ErrorCode::kInvalidConfig,
          "part_triplet_mode must be 'averaged' or 'per_part'");
  c.loss.part_triplet_mode =
      mode == "averaged" ? objectives::PartTripletMode::kAveraged : objectives::PartTripletMode::kPerPart;
  read(loss, "epsilon", c.hp.epsilon);
  read(loss, "margin", c.hp.margin);
  read(loss, "lambda_pa", c.hp.lambda_pa);

  const auto optim = root["optim"];
  check_keys(optim, "optim",
             {"base_lr", "warmup_start_lr", "warmup_epochs", "decay_epochs", "decay_factor", "weight_decay",
              "beta1", "beta2", "eps"});
  read(optim, "base_lr", c.optim.base_lr);
  read(optim, "warmup_start_lr", c.optim.warmup_start_lr);
  read(optim, "warmup_epochs", c.optim.warmup_epochs);
  read(optim, "decay_epochs", c.optim.decay_epochs);
  read(optim, "decay_factor", c.optim.decay_factor);
  read(optim, "weight_decay", c.optim.weight_decay);
  read(optim, "beta1", c.optim.beta1);
  read(optim, "beta2", c.optim.beta2);
  read(optim, "eps", c.optim.eps);

  const auto aug = root["augment"];
  check_keys(aug, "augment",
             {"pad", "erase_prob", "erase_area_min", "erase_area_max", "erase_aspect_min", "erase_aspect_max"});
  read(aug, "pad", c.augment.pad);
  read(aug, "erase_prob", c.augment.erase_prob);
  read(aug, "erase_area_min", c.augment.erase_area_min);
  read(aug, "erase_area_max", c.augment.erase_area_max);
  read(aug, "erase_aspect_min", c.augment.erase_aspect_min);
  read(aug, "erase_aspect_max", c.augment.erase_aspect_max);

  const auto train = root["train"];
  check_keys(train, "train", {"epochs", "P", "Kinst", "checkpoint_every"});
  read(train, "epochs", c.train.epochs);
  read(train, "P", c.train.P);
  read(train, "Kinst", c.train.Kinst);
  read(train, "checkpoint_every", c.train.checkpoint_every);

  const auto abl = root["ablation"];
  check_keys(abl, "ablation", {"fixed_attention", "no_visibility", "per_part_triplet"});
  read(abl, "fixed_attention", c.ablation.fixed_attention);
  read(abl, "no_visibility", c.ablation.no_visibility);
  read(abl, "per_part_triplet", c.ablation.per_part_triplet);

  const auto inf = root["inference"];
  check_keys(inf, "inference", {"batch_size", "ranks"});
  read(inf, "batch_size", c.inference.batch_size);
  read(inf, "ranks", c.inference.ranks);

  const auto out = root["output"];
  check_keys(out, "output", {"dir"});
  read(out, "dir", c.output_dir);

  c.validate();
  return c;
}

inline RunConfig parse_config_string(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config is not valid YAML: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_string(ss.str());
}

/// Fully resolved configuration as YAML (the run manifest format).
inline std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  const auto& s = c.corpus.spec;
  e << YAML::Key << "corpus" << YAML::Value << YAML::BeginMap
    << YAML::Key << "path" << YAML::Value << c.corpus.path
    << YAML::Key << "generate_if_missing" << YAML::Value << c.corpus.generate_if_missing
    << YAML::Key << "seed" << YAML::Value << c.corpus.seed
    << YAML::Key << "num_train_ids" << YAML::Value << s.num_train_ids
    << YAML::Key << "num_test_ids" << YAML::Value << s.num_test_ids
    << YAML::Key << "images_per_id" << YAML::Value << s.images_per_id
    << YAML::Key << "query_per_id" << YAML::Value << s.query_per_id
    << YAML::Key << "num_cams" << YAML::Value << s.num_cams
    << YAML::Key << "occlusion_prob" << YAML::Value << s.occlusion_prob
    << YAML::Key << "occluder_min_frac" << YAML::Value << s.occluder_min_frac
    << YAML::Key << "occluder_max_frac" << YAML::Value << s.occluder_max_frac
    << YAML::Key << "pedestrian_share" << YAML::Value << s.pedestrian_share
    << YAML::Key << "noise_sigma" << YAML::Value << s.noise_sigma
    << YAML::Key << "camera_gain_spread" << YAML::Value << s.camera_gain_spread
    << YAML::Key << "visibility_fraction" << YAML::Value << s.visibility_fraction
    << YAML::EndMap;
  const auto& b = c.model.backbone;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap
    << YAML::Key << "K" << YAML::Value << c.model.K
    << YAML::Key << "input_height" << YAML::Value << b.input_height
    << YAML::Key << "input_width" << YAML::Value << b.input_width
    << YAML::Key << "widths" << YAML::Value << YAML::Flow << b.widths
    << YAML::Key << "strides" << YAML::Value << YAML::Flow << b.strides
    << YAML::Key << "lambda_v" << YAML::Value << c.model.lambda_v
    << YAML::EndMap;
  e << YAML::Key << "labels" << YAML::Value << YAML::BeginMap
    << YAML::Key << "lambda_t" << YAML::Value << c.lambda_t << YAML::EndMap;
  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap
    << YAML::Key << "id_on" << YAML::Value << YAML::Flow << detail::target_names(c.loss.id_on)
    << YAML::Key << "tri_on" << YAML::Value << YAML::Flow << detail::target_names(c.loss.tri_on)
    << YAML::Key << "part_triplet_mode" << YAML::Value
    << (c.loss.part_triplet_mode == objectives::PartTripletMode::kAveraged ? "averaged" : "per_part")
    << YAML::Key << "epsilon" << YAML::Value << c.hp.epsilon
    << YAML::Key << "margin" << YAML::Value << c.hp.margin
    << YAML::Key << "lambda_pa" << YAML::Value << c.hp.lambda_pa
    << YAML::EndMap;
  const auto& o = c.optim;
  e << YAML::Key << "optim" << YAML::Value << YAML::BeginMap
    << YAML::Key << "base_lr" << YAML::Value << o.base_lr
    << YAML::Key << "warmup_start_lr" << YAML::Value << o.warmup_start_lr
    << YAML::Key << "warmup_epochs" << YAML::Value << o.warmup_epochs
    << YAML::Key << "decay_epochs" << YAML::Value << YAML::Flow << o.decay_epochs
    << YAML::Key << "decay_factor" << YAML::Value << o.decay_factor
    << YAML::Key << "weight_decay" << YAML::Value << o.weight_decay
    << YAML::Key << "beta1" << YAML::Value << o.beta1
    << YAML::Key << "beta2" << YAML::Value << o.beta2
    << YAML::Key << "eps" << YAML::Value << o.eps
    << YAML::EndMap;
  const auto& a = c.augment;
  e << YAML::Key << "augment" << YAML::Value << YAML::BeginMap
    << YAML::Key << "pad" << YAML::Value << a.pad
    << YAML::Key << "erase_prob" << YAML::Value << a.erase_prob
    << YAML::Key << "erase_area_min" << YAML::Value << a.erase_area_min
    << YAML::Key << "erase_area_max" << YAML::Value << a.erase_area_max
    << YAML::Key << "erase_aspect_min" << YAML::Value << a.erase_aspect_min
    << YAML::Key << "erase_aspect_max" << YAML::Value << a.erase_aspect_max
    << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap
    << YAML::Key << "epochs" << YAML::Value << c.train.epochs
    << YAML::Key << "P" << YAML::Value << c.train.P
    << YAML::Key << "Kinst" << YAML::Value << c.train.Kinst
    << YAML::Key << "checkpoint_every" << YAML::Value << c.train.checkpoint_every
    << YAML::EndMap;
  e << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap
    << YAML::Key << "fixed_attention" << YAML::Value << c.ablation.fixed_attention
    << YAML::Key << "no_visibility" << YAML::Value << c.ablation.no_visibility
    << YAML::Key << "per_part_triplet" << YAML::Value << c.ablation.per_part_triplet
    << YAML::EndMap;
  e << YAML::Key << "inference" << YAML::Value << YAML::BeginMap
    << YAML::Key << "batch_size" << YAML::Value << c.inference.batch_size
    << YAML::Key << "ranks" << YAML::Value << YAML::Flow << c.inference.ranks
    << YAML::EndMap;
  e << YAML::Key << "output" << YAML::Value << YAML::BeginMap
    << YAML::Key << "dir" << YAML::Value << c.output_dir << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace reidkit::harness
