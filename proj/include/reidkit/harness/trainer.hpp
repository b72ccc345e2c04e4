#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "reidkit/fields.hpp"
#include "reidkit/harness/checkpoint.hpp"
#include "reidkit/harness/config.hpp"
#include "reidkit/harness/optim.hpp"
#include "reidkit/harness/schedule.hpp"
#include "reidkit/net.hpp"
#include "reidkit/objectives.hpp"
#include "reidkit/retrieval.hpp"
#include "reidkit/synthgen.hpp"

namespace reidkit::harness {

using synth::SampleRecord;

/// Backbone output size (height, width) for a configuration.
inline std::pair<int, int> feature_size(const nn::BackboneConfig& b) {
  int d = 1;
  for (int s : b.strides) d *= s;
  return {b.input_height / d, b.input_width / d};
}

/// Rounds pixel values to 8 bits so in-memory corpora match what a PNG
/// round trip would give.
inline void quantize_images(std::vector<SampleRecord>& samples) {
  for (auto& s : samples)
    for (auto& v : s.image.data) v = png::detail::to_byte(v) / 255.0f;
}

inline synth::DatasetSplit generate_corpus(const RunConfig& cfg) {
  auto split = synth::generate_dataset(cfg.corpus_spec(), cfg.corpus.seed);
  quantize_images(split.train);
  quantize_images(split.query);
  quantize_images(split.gallery);
  return split;
}

/// Reads the corpus at cfg.corpus.path, generating (and writing) it first
/// when it is missing and generation is allowed.
inline synth::DatasetSplit load_corpus(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path root(cfg.corpus.path);
  if (!fs::exists(root / "corpus.json")) {
    require(cfg.corpus.generate_if_missing, ErrorCode::kIo, "no corpus at " + root.string());
    auto split = generate_corpus(cfg);
    synth::write_corpus(root, split);
    return split;
  }
  auto split = synth::read_corpus(root, true);
  require(split.config.K == cfg.model.K, ErrorCode::kInvalidConfig,
          "corpus was generated with K=" + std::to_string(split.config.K) + " but the model uses K=" +
              std::to_string(cfg.model.K));
  require(split.config.height == cfg.model.backbone.input_height &&
              split.config.width == cfg.model.backbone.input_width,
          ErrorCode::kInvalidConfig, "corpus image size differs from the model input size");
  return split;
}

/// Field-derived supervision for one sample at image resolution.
struct SampleTargets {
  fields::ParsingLabelMap labels;
  fields::GroupedFields grouped;
};

inline SampleTargets sample_targets(const SampleRecord& s, const fields::PartGrouping& grouping, double lambda_t) {
  require(!s.fields.data.data.empty(), ErrorCode::kInvalidConfig, "sample " + s.file + " has no field stack");
  const auto& st = s.fields;
  fields::GroupedFields g = (st.height() == s.image.height && st.width() == s.image.width)
                                ? fields::group_max(st, grouping)
                                : fields::group_max(fields::FieldStack{fields::resize_bilinear(
                                                                           st.data, s.image.height, s.image.width),
                                                                       st.field_names},
                                                    grouping);
  return {fields::labels_from_fields(g, lambda_t), std::move(g)};
}

/// Softmax of the grouped fields resized to hb x wb, as K x pixels.
template <class T>
nn::Mat<T> fixed_attention_matrix(const Array3<float>& E, int hb, int wb) {
  const auto A = fields::fixed_attention(fields::GroupedFields{fields::resize_bilinear(E, hb, wb)});
  nn::Mat<T> m(A.channels, hb * wb);
  for (int y = 0; y < hb; ++y)
    for (int x = 0; x < wb; ++x)
      for (int k = 0; k < A.channels; ++k) m(k, y * wb + x) = static_cast<T>(A(y, x, k));
  return m;
}

struct StepLog {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0;
  double total = 0, attention = 0;
  std::map<std::string, double> identity, triplet;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  int steps = 0;
  double total = 0, attention = 0, identity = 0, triplet = 0;  // means over steps
};

/// Copies "model/" tensors of a checkpoint into a model.
template <class T>
void load_model(const Checkpoint& ck, nn::ReidModel<T>& model) {
  for (auto* p : model.params()) restore(ck, "model/" + p->name, p->shape, p->value);
}

template <class T>
class Trainer {
 public:
  Trainer(RunConfig cfg, const std::vector<SampleRecord>& train) : cfg_(std::move(cfg)), train_(&train) {
    cfg_.validate();
    require(!train.empty(), ErrorCode::kInvalidConfig, "training split is empty");
    model_ = nn::ReidModel<T>(cfg_.model);
    std::set<int> ids;
    for (const auto& s : train) ids.insert(s.id);
    for (int id : ids) label_of_.emplace(id, static_cast<int>(label_of_.size()));
    std::vector<std::pair<int, int>> labels;
    for (std::size_t i = 0; i < train.size(); ++i) labels.emplace_back(static_cast<int>(i), label_of_.at(train[i].id));
    sampler_.emplace(labels, cfg_.train.P, cfg_.train.Kinst, derive_seed(cfg_.seed, {3}));

    objective_ = objectives::Objective<T>(cfg_.effective_loss(), cfg_.hp, cfg_.model.K, model_.C(),
                                          static_cast<int>(ids.size()));
    model_.init(derive_seed(cfg_.seed, {1}));
    objective_.init(derive_seed(cfg_.seed, {2}));

    const auto grouping = fields::grouping_preset(cfg_.model.K);
    for (const auto& s : train) {
      require(s.image.height == cfg_.model.backbone.input_height && s.image.width == cfg_.model.backbone.input_width,
              ErrorCode::kShape, "sample " + s.file + " does not match the model input size");
      targets_.push_back(sample_targets(s, grouping, cfg_.lambda_t));
      if (!cfg_.ablation.fixed_attention) targets_.back().grouped = {};
    }

    std::vector<nn::Param<T>*> params;
    for (auto* p : model_.params())
      if (!(cfg_.ablation.fixed_attention && p == &model_.classifier_param())) params.push_back(p);
    for (auto* p : objective_.params()) params.push_back(p);
    adam_ = Adam<T>(cfg_.optim, params);
  }

  const RunConfig& config() const { return cfg_; }
  nn::ReidModel<T>& model() { return model_; }
  objectives::Objective<T>& objective() { return objective_; }
  int epoch() const { return epoch_; }
  std::int64_t step() const { return step_; }
  bool done() const { return epoch_ >= cfg_.train.epochs; }

  void on_step(std::function<void(const StepLog&)> f) { step_cb_ = std::move(f); }
  /// Directory for the diagnostic dump written when a loss turns non-finite.
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  EpochStats run_epoch() {
    const auto batches = sampler_->epoch(epoch_);
    const double lr = lr_schedule(cfg_.optim, epoch_);
    const auto [hb, wb] = feature_size(cfg_.model.backbone);
    const int H = cfg_.model.backbone.input_height, W = cfg_.model.backbone.input_width;
    const bool fixed = cfg_.ablation.fixed_attention;
    EpochStats st;
    st.epoch = epoch_;
    st.lr = lr;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      std::vector<Image> images;
      std::vector<fields::ParsingLabelMap> labels;
      std::vector<nn::Mat<T>> attention;
      std::vector<int> ids;
      images.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = (*train_)[batch[i]];
        const auto& t = targets_[batch[i]];
        const auto draw = draw_augment(
            cfg_.augment, H, W,
            derive_seed(cfg_.seed, {4, static_cast<std::uint64_t>(epoch_), b, i}));
        images.push_back(apply_augment(s.image, draw));
        if (fixed) {
          attention.push_back(fixed_attention_matrix<T>(shift_like(t.grouped.E, draw, 0.0f), hb, wb));
        } else {
          labels.push_back(fields::downsample_labels(shift_like(t.labels, draw), hb, wb));
        }
        ids.push_back(label_of_.at(s.id));
      }
      std::vector<const Image*> ptrs;
      for (const auto& im : images) ptrs.push_back(&im);
      const auto fb = nn::to_batch<T>(ptrs);

      adam_.zero_grad();
      auto out = model_.forward(fb, nn::Mode::kTrain, fixed ? &attention : nullptr);
      nn::OutputGrad<T> grad;
      objectives::LossBreakdown<T> r;
      try {
        r = objective_.compute(out, ids, fixed ? nullptr : &labels, nn::Mode::kTrain, &grad);
        require(std::isfinite(static_cast<double>(r.total)), ErrorCode::kNonFinite, "loss is not finite");
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kNonFinite, dump_batch(batch, static_cast<int>(b), e.what()));
      }
      model_.backward(out, grad);
      adam_.step(lr);
      ++step_;

      StepLog log;
      log.epoch = epoch_;
      log.step = step_;
      log.lr = lr;
      log.total = static_cast<double>(r.total);
      log.attention = static_cast<double>(r.attention);
      double id_sum = 0, tri_sum = 0;
      for (const auto& [t, v] : r.identity) id_sum += log.identity[objectives::to_string(t)] = static_cast<double>(v);
      for (const auto& [t, v] : r.triplet) tri_sum += log.triplet[objectives::to_string(t)] = static_cast<double>(v);
      st.total += log.total;
      st.attention += log.attention;
      st.identity += id_sum;
      st.triplet += tri_sum;
      ++st.steps;
      if (step_cb_) step_cb_(log);
    }
    if (st.steps) {
      st.total /= st.steps;
      st.attention /= st.steps;
      st.identity /= st.steps;
      st.triplet /= st.steps;
    }
    ++epoch_;
    return st;
  }

  Checkpoint checkpoint() {
    Checkpoint ck;
    ck.fingerprint = model_fingerprint(cfg_.model);
    ck.config_yaml = to_yaml(cfg_);
    ck.epoch = epoch_;
    ck.step = step_;
    for (auto* p : model_.params()) store(ck, "model/" + p->name, p->shape, p->value);
    for (auto* p : objective_.params()) store(ck, "objective/" + p->name, p->shape, p->value);
    const auto& ps = adam_.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      store(ck, "adam.m/" + ps[i]->name, ps[i]->shape, adam_.first_moments()[i]);
      store(ck, "adam.v/" + ps[i]->name, ps[i]->shape, adam_.second_moments()[i]);
    }
    ck.tensors["adam.t"] = Tensor{{1}, {static_cast<double>(adam_.steps())}};
    return ck;
  }

  /// Restores parameters, optimizer moments and counters for resuming.
  void restore_from(const Checkpoint& ck) {
    check_fingerprint(ck, cfg_);
    load_model(ck, model_);
    for (auto* p : objective_.params()) restore(ck, "objective/" + p->name, p->shape, p->value);
    const auto& ps = adam_.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      restore(ck, "adam.m/" + ps[i]->name, ps[i]->shape, adam_.first_moments()[i]);
      restore(ck, "adam.v/" + ps[i]->name, ps[i]->shape, adam_.second_moments()[i]);
    }
    auto it = ck.tensors.find("adam.t");
    require(it != ck.tensors.end() && it->second.values.size() == 1, ErrorCode::kShape,
            "checkpoint lacks optimizer step count");
    adam_.steps() = static_cast<long long>(it->second.values[0]);
    epoch_ = ck.epoch;
    step_ = ck.step;
  }

 private:
  std::string dump_batch(const std::vector<int>& batch, int batch_index, const std::string& why) {
    nlohmann::json j;
    j["error"] = why;
    j["epoch"] = epoch_;
    j["batch_in_epoch"] = batch_index;
    j["step"] = step_;
    j["indices"] = batch;
    std::vector<std::string> files;
    for (int i : batch) files.push_back((*train_)[i].file);
    j["files"] = files;
    std::string where = "(no dump directory)";
    if (dump_dir_) {
      std::filesystem::create_directories(*dump_dir_);
      const auto path = *dump_dir_ / "nonfinite_batch.json";
      std::ofstream(path) << j.dump(2) << '\n';
      where = path.string();
    }
    return why + " at epoch " + std::to_string(epoch_) + " batch " + std::to_string(batch_index) +
           "; batch dumped to " + where;
  }

  RunConfig cfg_;
  const std::vector<SampleRecord>* train_;
  nn::ReidModel<T> model_;
  objectives::Objective<T> objective_;
  Adam<T> adam_;
  std::optional<synth::PkSampler> sampler_;
  std::map<int, int> label_of_;
  std::vector<SampleTargets> targets_;
  std::function<void(const StepLog&)> step_cb_;
  std::optional<std::filesystem::path> dump_dir_;
  int epoch_ = 0;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Inference.

/// Runs eval-mode forward passes in batches and hands each output to `f`
/// together with the index of its first sample.
template <class T, class F>
void forward_eval(nn::ReidModel<T>& model, const std::vector<SampleRecord>& samples, const RunConfig& cfg, F&& f) {
  const auto [hb, wb] = feature_size(cfg.model.backbone);
  const auto grouping = fields::grouping_preset(cfg.model.K);
  const std::size_t bs = static_cast<std::size_t>(cfg.inference.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const std::size_t end = std::min(samples.size(), start + bs);
    std::vector<const Image*> ptrs;
    std::vector<nn::Mat<T>> attention;
    for (std::size_t i = start; i < end; ++i) {
      ptrs.push_back(&samples[i].image);
      if (cfg.ablation.fixed_attention) {
        attention.push_back(
            fixed_attention_matrix<T>(sample_targets(samples[i], grouping, cfg.lambda_t).grouped.E, hb, wb));
      }
    }
    auto out = model.forward(nn::to_batch<T>(ptrs), nn::Mode::kEval,
                             cfg.ablation.fixed_attention ? &attention : nullptr);
    f(start, out);
  }
}

/// Embedding records (f_f, f_1..f_K with visibility) for a split. With
/// `keep_global` the in-memory f_g is filled too.
template <class T>
std::vector<retrieval::EmbeddingRecord> embed_samples(nn::ReidModel<T>& model, const std::vector<SampleRecord>& samples,
                                                      const RunConfig& cfg, bool keep_global = false) {
  std::vector<retrieval::EmbeddingRecord> out;
  out.reserve(samples.size());
  const int K = model.K(), C = model.C();
  forward_eval(model, samples, cfg, [&](std::size_t start, const nn::ModelOutput<T>& o) {
    for (std::size_t n = 0; n < o.batch(); ++n) {
      const auto& s = samples[start + n];
      retrieval::EmbeddingRecord r;
      r.file = s.file;
      r.id = s.id;
      r.cam = s.cam;
      r.K = K;
      r.C = C;
      r.emb.reserve(static_cast<std::size_t>(K + 1) * C);
      const auto col = static_cast<Eigen::Index>(n);
      for (int c = 0; c < C; ++c) r.emb.push_back(static_cast<double>(o.fg(c, col)));
      for (int i = 0; i < K * C; ++i) r.emb.push_back(static_cast<double>(o.concat(i, col)));
      r.vis.push_back(o.visible(1, col));
      for (int k = 0; k < K; ++k) r.vis.push_back(o.visible(3 + k, col));
      if (cfg.ablation.no_visibility) std::fill(r.vis.begin(), r.vis.end(), std::uint8_t{1});
      if (keep_global)
        for (int c = 0; c < C; ++c) r.global.push_back(static_cast<double>(o.global(c, col)));
      out.push_back(std::move(r));
    }
  });
  return out;
}

/// Attention scores ((K+1) x pixels at backbone resolution) per sample.
template <class T>
std::vector<nn::Mat<double>> attention_scores(nn::ReidModel<T>& model, const std::vector<SampleRecord>& samples,
                                              const RunConfig& cfg) {
  std::vector<nn::Mat<double>> out;
  forward_eval(model, samples, cfg, [&](std::size_t, const nn::ModelOutput<T>& o) {
    for (const auto& s : o.scores) out.push_back(s.template cast<double>());
  });
  return out;
}

/// Fraction of backbone-resolution pixels whose argmax attention class
/// (background included) equals the downsampled ground-truth parsing.
template <class T>
double attention_pixel_accuracy(nn::ReidModel<T>& model, const std::vector<SampleRecord>& samples,
                                const RunConfig& cfg) {
  const auto [hb, wb] = feature_size(cfg.model.backbone);
  long hit = 0, total = 0;
  const auto scores = attention_scores(model, samples, cfg);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto gt = fields::downsample_labels(samples[i].parsing_gt, hb, wb);
    for (int p = 0; p < hb * wb; ++p) {
      Eigen::Index arg = 0;
      scores[i].col(p).maxCoeff(&arg);
      hit += static_cast<int>(arg) == gt.Y.data[static_cast<std::size_t>(p)];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / total : 0.0;
}

}  // namespace reidkit::harness
