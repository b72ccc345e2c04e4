#pragma once

// Visibility-gated part-to-part matching, distance matrices, CMC/mAP
// evaluation and the embedding archive format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "reidkit/error.hpp"

namespace reidkit::retrieval {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Inference-time embeddings of one image: f_f then f_1..f_K, each C long,
/// with visibility bits in the same order. `global` and `concat_visible`
/// are in-memory extras used by the embedding study and never archived.
struct EmbeddingRecord {
  std::string file;
  int id = 0;
  int cam = 0;
  int K = 0;
  int C = 0;
  std::vector<double> emb;          // (K+1) * C
  std::vector<std::uint8_t> vis;    // K+1
  std::vector<double> global;       // optional f_g

  const double* embedding(int i) const { return emb.data() + static_cast<std::size_t>(i) * C; }
};

inline void check_record(const EmbeddingRecord& r) {
  require(r.K >= 1 && r.C >= 1, ErrorCode::kShape, "embedding record needs K, C >= 1");
  require(r.emb.size() == static_cast<std::size_t>(r.K + 1) * r.C && r.vis.size() == static_cast<std::size_t>(r.K + 1),
          ErrorCode::kShape, "embedding record " + r.file + " has inconsistent sizes");
}

inline double euclidean(const double* a, const double* b, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Which embeddings a distance uses: a subset of {0 = f, 1..K} combined
/// with visibility gating, or one of the holistic vectors alone.
struct Selector {
  enum class Kind { kMembers, kGlobal, kConcat };
  Kind kind = Kind::kMembers;
  std::vector<int> members;

  static Selector all(int K) {
    Selector s;
    s.members.resize(K + 1);
    std::iota(s.members.begin(), s.members.end(), 0);
    return s;
  }
  static Selector parts(int K) {
    Selector s;
    for (int k = 1; k <= K; ++k) s.members.push_back(k);
    return s;
  }
  static Selector only(int i) { return Selector{Kind::kMembers, {i}}; }
  static Selector global() { return Selector{Kind::kGlobal, {}}; }
  static Selector concat() { return Selector{Kind::kConcat, {}}; }
};

/// Visibility-weighted mean of per-embedding Euclidean distances over the
/// selected members; +inf when no selected embedding is visible in both.
inline double pair_distance(const EmbeddingRecord& q, const EmbeddingRecord& g, const Selector& sel) {
  require(q.K == g.K && q.C == g.C, ErrorCode::kShape, "query and gallery embeddings disagree in K or C");
  switch (sel.kind) {
    case Selector::Kind::kGlobal:
      require(!q.global.empty() && q.global.size() == g.global.size(), ErrorCode::kShape,
              "global embeddings missing from records");
      return euclidean(q.global.data(), g.global.data(), static_cast<int>(q.global.size()));
    case Selector::Kind::kConcat:
      return euclidean(q.embedding(1), g.embedding(1), q.K * q.C);
    case Selector::Kind::kMembers:
      break;
  }
  require(!sel.members.empty(), ErrorCode::kInvalidConfig, "empty embedding selector");
  double num = 0;
  int den = 0;
  for (int i : sel.members) {
    require(i >= 0 && i <= q.K, ErrorCode::kInvalidConfig, "selector index out of range");
    if (!(q.vis[i] && g.vis[i])) continue;
    num += euclidean(q.embedding(i), g.embedding(i), q.C);
    ++den;
  }
  return den == 0 ? kInf : num / den;
}

inline double pair_distance(const EmbeddingRecord& q, const EmbeddingRecord& g) {
  return pair_distance(q, g, Selector::all(q.K));
}

/// |Q| x |G| distances, row-major.
struct DistanceMatrix {
  int rows = 0, cols = 0;
  std::vector<double> values;
  double operator()(int q, int g) const { return values[static_cast<std::size_t>(q) * cols + g]; }
  double& operator()(int q, int g) { return values[static_cast<std::size_t>(q) * cols + g]; }
};

inline DistanceMatrix distance_matrix(const std::vector<EmbeddingRecord>& queries,
                                      const std::vector<EmbeddingRecord>& gallery, const Selector& sel) {
  require(!queries.empty() && !gallery.empty(), ErrorCode::kEmptyEvaluation, "empty query or gallery set");
  if (sel.kind == Selector::Kind::kMembers)
    require(!sel.members.empty(), ErrorCode::kInvalidConfig, "empty embedding selector");
  DistanceMatrix d{static_cast<int>(queries.size()), static_cast<int>(gallery.size()), {}};
  d.values.resize(queries.size() * gallery.size());
  for (int q = 0; q < d.rows; ++q)
    for (int g = 0; g < d.cols; ++g) d(q, g) = pair_distance(queries[q], gallery[g], sel);
  return d;
}

struct EvalResult {
  std::map<int, double> cmc;  // rank -> accuracy
  double mAP = 0;
  int valid_queries = 0;
  int skipped_queries = 0;
  std::vector<double> ap;     // per valid query
  std::vector<int> skipped;   // indices of skipped queries
};

/// Gallery order for one query: ascending distance, +inf last, ties by
/// gallery index.
inline std::vector<int> rank_gallery(const DistanceMatrix& d, int q) {
  std::vector<int> order(d.cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d(q, a) < d(q, b); });
  return order;
}

/// Single-query CMC and mAP. Gallery entries sharing both id and camera
/// with the query are ignored; queries left without a positive are skipped
/// and reported.
inline EvalResult evaluate(const DistanceMatrix& d, const std::vector<int>& q_ids,
                           const std::vector<int>& g_ids, const std::vector<int>& q_cams,
                           const std::vector<int>& g_cams, const std::vector<int>& ranks = {1, 5, 10}) {
  require(static_cast<int>(q_ids.size()) == d.rows && static_cast<int>(q_cams.size()) == d.rows &&
              static_cast<int>(g_ids.size()) == d.cols && static_cast<int>(g_cams.size()) == d.cols,
          ErrorCode::kShape, "id/camera lists do not match the distance matrix");
  for (int r : ranks) require(r >= 1, ErrorCode::kInvalidConfig, "ranks start at 1");
  EvalResult res;
  std::map<int, int> hits;
  for (int r : ranks) hits[r] = 0;
  double ap_sum = 0;
  for (int q = 0; q < d.rows; ++q) {
    const auto order = rank_gallery(d, q);
    int pos = 0, found = 0, first_hit = -1;
    double precision_sum = 0;
    int positives = 0;
    for (int g = 0; g < d.cols; ++g)
      if (g_ids[g] == q_ids[q] && g_cams[g] != q_cams[q]) ++positives;
    if (positives == 0) {
      ++res.skipped_queries;
      res.skipped.push_back(q);
      continue;
    }
    for (int g : order) {
      if (g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]) continue;
      ++pos;
      if (g_ids[g] == q_ids[q]) {
        ++found;
        if (first_hit < 0) first_hit = pos;
        precision_sum += static_cast<double>(found) / pos;
      }
    }
    const double ap = precision_sum / positives;
    res.ap.push_back(ap);
    ap_sum += ap;
    ++res.valid_queries;
    for (int r : ranks)
      if (first_hit <= r) ++hits[r];
  }
  require(res.valid_queries > 0, ErrorCode::kEmptyEvaluation, "no query has a valid positive in the gallery");
  for (auto [r, h] : hits) res.cmc[r] = static_cast<double>(h) / res.valid_queries;
  res.mAP = ap_sum / res.valid_queries;
  return res;
}

/// Evaluates archived records directly.
inline EvalResult evaluate(const std::vector<EmbeddingRecord>& queries,
                           const std::vector<EmbeddingRecord>& gallery, const Selector& sel,
                           const std::vector<int>& ranks = {1, 5, 10}) {
  std::vector<int> qi, qc, gi, gc;
  for (const auto& r : queries) {
    qi.push_back(r.id);
    qc.push_back(r.cam);
  }
  for (const auto& r : gallery) {
    gi.push_back(r.id);
    gc.push_back(r.cam);
  }
  return evaluate(distance_matrix(queries, gallery, sel), qi, gi, qc, gc, ranks);
}

/// Sets every visibility bit to 1.
inline void ignore_visibility(std::vector<EmbeddingRecord>& records) {
  for (auto& r : records) std::fill(r.vis.begin(), r.vis.end(), std::uint8_t{1});
}

// ---------------------------------------------------------------------------
// Embedding archive: a JSON header line {"K", "C", "fingerprint"} (plus the
// optional provenance keys "corpus", "split", "checkpoint") followed by one
// JSON record per line {file, id, cam, emb, vis}.

struct Archive {
  int K = 0;
  int C = 0;
  std::string fingerprint;
  std::string corpus, split, checkpoint;
  std::vector<EmbeddingRecord> records;
};

/// Archived values are 32-bit floats; numbers are written with the
/// shortest representation that round-trips a float.
inline void write_archive(const std::filesystem::path& path, const Archive& a) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  nlohmann::json header = {{"K", a.K}, {"C", a.C}, {"fingerprint", a.fingerprint}};
  if (!a.corpus.empty()) header["corpus"] = a.corpus;
  if (!a.split.empty()) header["split"] = a.split;
  if (!a.checkpoint.empty()) header["checkpoint"] = a.checkpoint;
  out << header.dump() << '\n';
  for (const auto& r : a.records) {
    check_record(r);
    nlohmann::json j;
    j["file"] = r.file;
    j["id"] = r.id;
    j["cam"] = r.cam;
    std::vector<float> emb(r.emb.begin(), r.emb.end());
    j["emb"] = emb;
    std::vector<int> vis(r.vis.begin(), r.vis.end());
    j["vis"] = vis;
    out << j.dump() << '\n';
  }
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

inline Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  Archive a;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kIo, "empty archive " + path.string());
  try {
    auto h = nlohmann::json::parse(line);
    a.K = h.at("K");
    a.C = h.at("C");
    a.fingerprint = h.at("fingerprint").get<std::string>();
    a.corpus = h.value("corpus", std::string());
    a.split = h.value("split", std::string());
    a.checkpoint = h.value("checkpoint", std::string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      EmbeddingRecord r;
      r.file = j.at("file").get<std::string>();
      r.id = j.at("id");
      r.cam = j.at("cam");
      r.K = a.K;
      r.C = a.C;
      for (float v : j.at("emb").get<std::vector<float>>()) r.emb.push_back(v);
      for (int v : j.at("vis").get<std::vector<int>>()) r.vis.push_back(static_cast<std::uint8_t>(v != 0));
      check_record(r);
      a.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, "malformed archive " + path.string() + ": " + e.what());
  }
  return a;
}

}  // namespace reidkit::retrieval
