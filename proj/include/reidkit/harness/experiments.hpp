#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "yaml-cpp/yaml.h"

#include "reidkit/harness/trainer.hpp"

namespace reidkit::harness {

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Model trained in memory plus its per-epoch statistics.
struct TrainedModel {
  RunConfig config;
  nn::ReidModel<float> model;
  std::vector<EpochStats> history;
};

inline TrainedModel train_in_memory(const RunConfig& cfg, const synth::DatasetSplit& corpus,
                                    std::ostream* progress = nullptr) {
  Trainer<float> tr(cfg, corpus.train);
  TrainedModel out{cfg, {}, {}};
  while (!tr.done()) {
    out.history.push_back(tr.run_epoch());
    if (progress) {
      const auto& s = out.history.back();
      *progress << "epoch " << s.epoch << " lr " << s.lr << " loss " << s.total << "\n";
    }
  }
  out.model = tr.model();
  return out;
}

/// Query and gallery embeddings of a corpus.
struct TestEmbeddings {
  std::vector<retrieval::EmbeddingRecord> query, gallery;
};

inline TestEmbeddings embed_test(TrainedModel& m, const synth::DatasetSplit& corpus) {
  return {embed_samples(m.model, corpus.query, m.config, true), embed_samples(m.model, corpus.gallery, m.config, true)};
}

// ---------------------------------------------------------------------------
// Ablation grids.

struct AblationRow {
  std::string name;
  std::string detail;
  std::vector<double> rank1, mAP;  // one value per seed
};

struct AblationTable {
  std::string grid;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorCode::kEmptyEvaluation, "median of no values");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double spread(const std::vector<double>& v) {
  if (v.empty()) return 0;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

inline const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names = {"loss_grid", "embedding_study", "components"};
  return names;
}

namespace detail {

inline std::string describe(const objectives::LossConfig& l) {
  auto join = [](const std::set<objectives::Target>& ts) {
    std::string s;
    for (auto t : ts) s += (s.empty() ? "" : ",") + std::string(objectives::to_string(t));
    return s.empty() ? std::string("-") : s;
  };
  return "id=" + join(l.id_on) + " tri=" + join(l.tri_on);
}

inline void add(AblationRow& row, const retrieval::EvalResult& r) {
  row.rank1.push_back(r.cmc.at(1));
  row.mAP.push_back(r.mAP);
}

}  // namespace detail

/// Trains and evaluates every configuration of a grid once per seed. The
/// corpus is shared by all runs; the seed changes initialisation, sampling
/// and augmentation.
inline AblationTable ablate(const RunConfig& base, const synth::DatasetSplit& corpus, const std::string& grid,
                            const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr,
                            const std::vector<std::string>& only_rows = {}) {
  using retrieval::Selector;
  require(std::find(grid_names().begin(), grid_names().end(), grid) != grid_names().end(),
          ErrorCode::kInvalidConfig, "unknown grid '" + grid + "'");
  require(!seeds.empty(), ErrorCode::kInvalidConfig, "ablation needs at least one seed");
  const int K = base.model.K;
  AblationTable table{grid, seeds, {}};
  auto wanted = [&](const std::string& name) {
    return only_rows.empty() || std::find(only_rows.begin(), only_rows.end(), name) != only_rows.end();
  };
  auto row = [&](const std::string& name, const std::string& detail) -> AblationRow& {
    for (auto& r : table.rows)
      if (r.name == name) return r;
    table.rows.push_back({name, detail, {}, {}});
    return table.rows.back();
  };
  auto run = [&](RunConfig cfg, std::uint64_t seed, const std::string& label) {
    cfg.seed = seed;
    if (progress) *progress << "[" << grid << "] " << label << " seed " << seed << "\n";
    return train_in_memory(cfg, corpus);
  };
  const auto ranks = std::vector<int>{1};

  if (grid == "loss_grid") {
    for (const auto& [name, loss] : objectives::loss_grid_rows()) {
      if (!wanted(name)) continue;
      auto& r = row(name, detail::describe(loss));
      for (auto seed : seeds) {
        auto cfg = base;
        cfg.loss = loss;
        auto m = run(cfg, seed, name);
        auto e = embed_test(m, corpus);
        detail::add(r, retrieval::evaluate(e.query, e.gallery, Selector::all(K), ranks));
      }
    }
  } else if (grid == "embedding_study") {
    std::vector<std::pair<std::string, Selector>> sels = {
        {"f_g", Selector::global()}, {"f_f", Selector::only(0)}, {"f_c", Selector::concat()}};
    for (int k = 1; k <= K; ++k) sels.push_back({"f_" + std::to_string(k), Selector::only(k)});
    sels.push_back({"{f_1..f_" + std::to_string(K) + "}", Selector::parts(K)});
    sels.push_back({"{f_f,f_1..f_" + std::to_string(K) + "}", Selector::all(K)});
    const auto part_names = fields::grouping_preset(K).part_names;
    for (auto seed : seeds) {
      auto m = run(base, seed, "shared model");
      auto e = embed_test(m, corpus);
      for (const auto& [name, sel] : sels) {
        if (!wanted(name)) continue;
        std::string detail = "holistic";
        if (sel.kind == Selector::Kind::kMembers && sel.members.size() == 1 && sel.members[0] > 0)
          detail = part_names[static_cast<std::size_t>(sel.members[0] - 1)];
        else if (sel.kind == Selector::Kind::kMembers && sel.members.size() > 1)
          detail = "visibility-gated";
        detail::add(row(name, detail), retrieval::evaluate(e.query, e.gallery, sel, ranks));
      }
    }
  } else {
    for (auto seed : seeds) {
      if (wanted("baseline")) {
        auto cfg = base;
        cfg.loss.id_on = {objectives::Target::kGlobal};
        cfg.loss.tri_on = {objectives::Target::kGlobal};
        auto m = run(cfg, seed, "baseline");
        auto e = embed_test(m, corpus);
        detail::add(row("baseline", "global embedding, id+tri on f_g"),
                    retrieval::evaluate(e.query, e.gallery, Selector::global(), ranks));
      }
      if (wanted("full") || wanted("w/o visibility scores")) {
        auto m = run(base, seed, "full");
        auto e = embed_test(m, corpus);
        if (wanted("full"))
          detail::add(row("full", detail::describe(base.loss)),
                      retrieval::evaluate(e.query, e.gallery, Selector::all(K), ranks));
        if (wanted("w/o visibility scores")) {
          retrieval::ignore_visibility(e.query);
          retrieval::ignore_visibility(e.gallery);
          detail::add(row("w/o visibility scores", "all v = 1"),
                      retrieval::evaluate(e.query, e.gallery, Selector::all(K), ranks));
        }
      }
      if (wanted("w/o learnable attention")) {
        auto cfg = base;
        cfg.ablation.fixed_attention = true;
        auto m = run(cfg, seed, "fixed attention");
        auto e = embed_test(m, corpus);
        detail::add(row("w/o learnable attention", "softmax of grouped fields"),
                    retrieval::evaluate(e.query, e.gallery, Selector::all(K), ranks));
      }
      if (wanted("w/o part-avgd triplet loss")) {
        auto cfg = base;
        cfg.ablation.per_part_triplet = true;
        auto m = run(cfg, seed, "per-part triplet");
        auto e = embed_test(m, corpus);
        detail::add(row("w/o part-avgd triplet loss", "one triplet loss per part"),
                    retrieval::evaluate(e.query, e.gallery, Selector::all(K), ranks));
      }
    }
  }
  return table;
}

/// Tab-separated table: medians, spreads and per-seed values.
inline std::string table_tsv(const AblationTable& t) {
  std::ostringstream os;
  os << "# grid: " << t.grid << "; checkpoint: last epoch; seeds:";
  for (auto s : t.seeds) os << " " << s;
  os << "\n";
  os << "row\tdetail\trank1_median\tmAP_median\trank1_spread\tmAP_spread\trank1_per_seed\tmAP_per_seed\n";
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : ",") + format_metric(x);
    return s;
  };
  for (const auto& r : t.rows) {
    os << r.name << "\t" << r.detail << "\t" << format_metric(median(r.rank1)) << "\t" << format_metric(median(r.mAP))
       << "\t" << format_metric(spread(r.rank1)) << "\t" << format_metric(spread(r.mAP)) << "\t" << list(r.rank1)
       << "\t" << list(r.mAP) << "\n";
  }
  return os.str();
}

/// Metric table for one evaluation.
inline std::string eval_tsv(const retrieval::EvalResult& r, const std::string& selector,
                            const std::string& checkpoint = {}) {
  std::ostringstream os;
  os << "metric\tvalue\n";
  for (const auto& [k, v] : r.cmc) os << "rank" << k << "\t" << format_metric(v) << "\n";
  os << "mAP\t" << format_metric(r.mAP) << "\n";
  os << "valid_queries\t" << r.valid_queries << "\n";
  os << "skipped_queries\t" << r.skipped_queries << "\n";
  os << "selector\t" << selector << "\n";
  os << "checkpoint_selection\tlast-epoch\n";
  if (!checkpoint.empty()) os << "checkpoint\t" << checkpoint << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Full training runs with files on disk.

/// Resolved configuration plus checkpoint facts, written next to each
/// checkpoint.
inline std::string manifest_yaml(const RunConfig& cfg, const Checkpoint& ck, const std::string& checkpoint_file) {
  YAML::Node n;
  n["checkpoint"] = checkpoint_file;
  n["fingerprint"] = ck.fingerprint;
  n["epoch"] = ck.epoch;
  n["step"] = ck.step;
  n["checkpoint_selection"] = "last-epoch";
  n["optimizer"] = "adam";
  n["config"] = YAML::Load(to_yaml(cfg));
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << n;
  return std::string(e.c_str()) + "\n";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + path.string());
  f << text;
}

inline std::filesystem::path save_with_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                                                const Checkpoint& ck) {
  save_checkpoint(path, ck);
  write_text(path.string() + ".manifest.yaml", manifest_yaml(cfg, ck, path.filename().string()));
  return path;
}

struct TrainRunResult {
  std::filesystem::path checkpoint;
  std::vector<EpochStats> history;
};

/// Trains into cfg.output_dir: step log, epoch log, periodic checkpoints
/// and the final model.rkck, each with its manifest. With `resume` the run
/// continues from that checkpoint.
template <class T = float>
TrainRunResult run_training(const RunConfig& cfg, const synth::DatasetSplit& corpus,
                            const std::optional<std::filesystem::path>& resume = std::nullopt,
                            std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  Trainer<T> tr(cfg, corpus.train);
  tr.set_dump_dir(out);
  if (resume) tr.restore_from(load_checkpoint(*resume));

  const bool fresh = !resume;
  std::ofstream steps(out / "train_log.tsv", fresh ? std::ios::trunc : std::ios::app);
  std::ofstream epochs(out / "epochs.tsv", fresh ? std::ios::trunc : std::ios::app);
  require(steps && epochs, ErrorCode::kIo, "cannot write logs in " + out.string());
  if (fresh) {
    steps << "epoch\tstep\tlr\ttotal\tattention";
    for (auto t : cfg.loss.id_on) steps << "\tid_" << objectives::to_string(t);
    for (auto t : cfg.loss.tri_on) steps << "\ttri_" << objectives::to_string(t);
    steps << "\n";
    epochs << "epoch\tlr\tsteps\ttotal\tattention\tidentity\ttriplet\n";
  }
  tr.on_step([&](const StepLog& s) {
    steps << s.epoch << "\t" << s.step << "\t" << format_metric(s.lr) << "\t" << format_metric(s.total) << "\t"
          << format_metric(s.attention);
    for (const auto& [_, v] : s.identity) steps << "\t" << format_metric(v);
    for (const auto& [_, v] : s.triplet) steps << "\t" << format_metric(v);
    steps << "\n";
  });

  TrainRunResult res;
  while (!tr.done()) {
    const auto st = tr.run_epoch();
    res.history.push_back(st);
    epochs << st.epoch << "\t" << format_metric(st.lr) << "\t" << st.steps << "\t" << format_metric(st.total) << "\t"
           << format_metric(st.attention) << "\t" << format_metric(st.identity) << "\t"
           << format_metric(st.triplet) << "\n";
    epochs.flush();
    steps.flush();
    if (progress)
      *progress << "epoch " << st.epoch << "  lr " << st.lr << "  loss " << st.total << "  (attention "
                << st.attention << ", identity " << st.identity << ", triplet " << st.triplet << ")\n";
    if (cfg.train.checkpoint_every > 0 && tr.epoch() % cfg.train.checkpoint_every == 0 && !tr.done()) {
      std::ostringstream name;
      name << "ckpt_epoch_" << std::setw(3) << std::setfill('0') << tr.epoch() << ".rkck";
      save_with_manifest(out / name.str(), cfg, tr.checkpoint());
    }
  }
  res.checkpoint = save_with_manifest(out / "model.rkck", cfg, tr.checkpoint());
  return res;
}

/// Loads a checkpoint's model; with `cfg` given its fingerprint must match.
inline std::pair<RunConfig, nn::ReidModel<float>> model_from_checkpoint(const std::filesystem::path& path,
                                                                        const RunConfig* cfg = nullptr) {
  const auto ck = load_checkpoint(path);
  RunConfig c = cfg ? *cfg : ck.config();
  check_fingerprint(ck, c);
  nn::ReidModel<float> model(c.model);
  load_model(ck, model);
  return {c, std::move(model)};
}

/// Embeds one split of the configured corpus into an archive.
inline retrieval::Archive embed_split(const std::filesystem::path& checkpoint, const std::string& split,
                                      const RunConfig* override_cfg = nullptr, bool no_visibility = false,
                                      const std::string& corpus_override = {}) {
  auto [cfg, model] = model_from_checkpoint(checkpoint, override_cfg);
  if (!corpus_override.empty()) cfg.corpus.path = corpus_override;
  if (no_visibility) cfg.ablation.no_visibility = true;
  const auto& names = synth::split_names();
  require(std::find(names.begin(), names.end(), split) != names.end(), ErrorCode::kLookup,
          "unknown split '" + split + "'");
  const std::filesystem::path root(cfg.corpus.path);
  require(std::filesystem::exists(root / "corpus.json"), ErrorCode::kIo, "no corpus at " + root.string());
  const auto samples = synth::read_split(root / split, cfg.model.K, cfg.ablation.fixed_attention);
  retrieval::Archive a;
  a.K = model.K();
  a.C = model.C();
  a.fingerprint = model_fingerprint(cfg.model);
  a.corpus = std::filesystem::absolute(root).lexically_normal().string();
  a.split = split;
  a.checkpoint = std::filesystem::absolute(checkpoint).lexically_normal().string();
  a.records = embed_samples(model, samples, cfg);
  return a;
}

}  // namespace reidkit::harness
