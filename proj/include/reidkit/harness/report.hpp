#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reidkit/harness/experiments.hpp"
#include "reidkit/png_io.hpp"
#include "reidkit/retrieval.hpp"

namespace reidkit::harness {

struct RankEntry {
  int gallery = 0;  // index into the gallery archive
  double distance = 0;
  bool correct = false;
};

struct RankRow {
  int query = 0;  // index into the query archive
  std::vector<RankEntry> top;
};

/// Top-k gallery entries per selected query, with the evaluation's
/// same-identity-same-camera entries left out. Empty `query_ids` selects
/// the first `max_queries` queries.
inline std::vector<RankRow> rank_rows(const retrieval::Archive& query, const retrieval::Archive& gallery,
                                      const std::vector<int>& query_ids, int topk,
                                      const retrieval::Selector& sel, int max_queries = 8) {
  require(topk >= 1, ErrorCode::kInvalidConfig, "topk must be positive");
  require(query.fingerprint == gallery.fingerprint, ErrorCode::kFingerprint,
          "query and gallery archives come from different models");
  std::vector<int> chosen;
  if (query_ids.empty()) {
    for (int i = 0; i < static_cast<int>(query.records.size()) && i < max_queries; ++i) chosen.push_back(i);
  } else {
    for (int id : query_ids) {
      bool found = false;
      for (int i = 0; i < static_cast<int>(query.records.size()); ++i)
        if (query.records[i].id == id) {
          chosen.push_back(i);
          found = true;
        }
      require(found, ErrorCode::kLookup, "no query with identity " + std::to_string(id));
    }
  }
  std::vector<retrieval::EmbeddingRecord> qs;
  for (int i : chosen) qs.push_back(query.records[static_cast<std::size_t>(i)]);
  const auto D = retrieval::distance_matrix(qs, gallery.records, sel);
  std::vector<RankRow> rows;
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    RankRow row{chosen[r], {}};
    const auto& q = qs[r];
    for (int g : retrieval::rank_gallery(D, static_cast<int>(r))) {
      const auto& gr = gallery.records[static_cast<std::size_t>(g)];
      if (gr.id == q.id && gr.cam == q.cam) continue;
      row.top.push_back({g, D(static_cast<int>(r), g), gr.id == q.id});
      if (static_cast<int>(row.top.size()) == topk) break;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string rank_tsv(const std::vector<RankRow>& rows, const retrieval::Archive& query,
                            const retrieval::Archive& gallery) {
  std::ostringstream os;
  os << "query_file\tquery_id\tquery_cam\trank\tgallery_file\tgallery_id\tgallery_cam\tdistance\tcorrect\n";
  for (const auto& row : rows) {
    const auto& q = query.records[static_cast<std::size_t>(row.query)];
    for (std::size_t k = 0; k < row.top.size(); ++k) {
      const auto& e = row.top[k];
      const auto& g = gallery.records[static_cast<std::size_t>(e.gallery)];
      os << q.file << "\t" << q.id << "\t" << q.cam << "\t" << k + 1 << "\t" << g.file << "\t" << g.id << "\t"
         << g.cam << "\t" << format_metric(e.distance) << "\t" << (e.correct ? 1 : 0) << "\n";
    }
  }
  return os.str();
}

namespace detail {

using Rgb8 = std::array<std::uint8_t, 3>;

struct Canvas {
  int width = 0, height = 0;
  std::vector<std::uint8_t> px;

  Canvas(int w, int h, Rgb8 fill) : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < px.size(); i += 3) std::copy(fill.begin(), fill.end(), px.begin() + i);
  }
  void set(int x, int y, Rgb8 c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), px.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
  }
  void frame(int x0, int y0, int w, int h, int thickness, Rgb8 c) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        const bool edge = x < x0 + thickness || x >= x0 + w - thickness || y < y0 + thickness ||
                          y >= y0 + h - thickness;
        if (edge) set(x, y, c);
      }
  }
};

inline constexpr Rgb8 kGreen{0, 200, 0}, kRed{220, 0, 0}, kBlue{40, 90, 230}, kGray{128, 128, 128},
    kWhite{255, 255, 255};

/// Nearest-neighbour upscaled image; a gray block when unavailable.
inline void blit(Canvas& c, int x0, int y0, const Image* img, int h, int w, int scale) {
  for (int y = 0; y < h * scale; ++y)
    for (int x = 0; x < w * scale; ++x) {
      if (!img) {
        c.set(x0 + x, y0 + y, kGray);
        continue;
      }
      const int sy = y / scale * img->height / h, sx = x / scale * img->width / w;
      c.set(x0 + x, y0 + y,
            {png::detail::to_byte((*img)(sy, sx, 0)), png::detail::to_byte((*img)(sy, sx, 1)),
             png::detail::to_byte((*img)(sy, sx, 2))});
    }
}

/// Image darkened where the attention map is low and tinted red where it
/// is high.
inline void blit_heat(Canvas& c, int x0, int y0, const Image& img, const nn::Mat<double>& scores, int row,
                      int hb, int wb, int scale) {
  const int h = img.height, w = img.width;
  for (int y = 0; y < h * scale; ++y)
    for (int x = 0; x < w * scale; ++x) {
      const int iy = y / scale, ix = x / scale;
      const double a = std::clamp(scores(row, (iy * hb / h) * wb + ix * wb / w), 0.0, 1.0);
      Rgb8 px;
      for (int ch = 0; ch < 3; ++ch) {
        double v = img(iy, ix, ch) * (0.25 + 0.75 * a);
        if (ch == 0) v = v * (1 - a) + a;
        px[static_cast<std::size_t>(ch)] = png::detail::to_byte(static_cast<float>(v));
      }
      c.set(x0 + x, y0 + y, px);
    }
}

}  // namespace detail

struct RankImages {
  std::vector<const Image*> query, gallery;  // per archive record, may be null
  std::vector<nn::Mat<double>> attention;    // per query record, (K+1) x pixels; may be empty
  int feature_height = 0, feature_width = 0;
};

/// One row per query: the query (blue frame), its top-k gallery matches
/// (green correct, red incorrect) and, when attention maps are available,
/// the foreground and K part maps over the query.
inline void write_rank_png(const std::filesystem::path& path, const std::vector<RankRow>& rows,
                           const retrieval::Archive& query, const RankImages& images, int image_h, int image_w,
                           int scale = 2) {
  using namespace detail;
  const int border = 3, gap = 6, cell_w = image_w * scale + 2 * border, cell_h = image_h * scale + 2 * border;
  int topk = 0;
  for (const auto& r : rows) topk = std::max(topk, static_cast<int>(r.top.size()));
  const bool panels = !images.attention.empty();
  const int panels_n = panels ? query.K + 1 : 0;
  const int width = gap + cell_w + 2 * gap + topk * (cell_w + gap) + (panels ? gap + panels_n * (cell_w + gap) : 0);
  const int height = gap + static_cast<int>(rows.size()) * (cell_h + gap);
  Canvas c(width, std::max(height, 1), kWhite);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const int y = gap + static_cast<int>(r) * (cell_h + gap);
    int x = gap;
    const Image* qimg = images.query.empty() ? nullptr : images.query[static_cast<std::size_t>(row.query)];
    blit(c, x + border, y + border, qimg, image_h, image_w, scale);
    c.frame(x, y, cell_w, cell_h, border, kBlue);
    x += cell_w + 2 * gap;
    for (const auto& e : row.top) {
      const Image* gimg = images.gallery.empty() ? nullptr : images.gallery[static_cast<std::size_t>(e.gallery)];
      blit(c, x + border, y + border, gimg, image_h, image_w, scale);
      c.frame(x, y, cell_w, cell_h, border, e.correct ? kGreen : kRed);
      x += cell_w + gap;
    }
    if (!panels) continue;
    x = gap + cell_w + 2 * gap + topk * (cell_w + gap) + gap;
    const auto& sc = images.attention[static_cast<std::size_t>(row.query)];
    nn::Mat<double> shown(panels_n, sc.cols());
    // Foreground map first, then each part.
    for (Eigen::Index p = 0; p < sc.cols(); ++p) shown(0, p) = sc.col(p).tail(sc.rows() - 1).maxCoeff();
    shown.bottomRows(panels_n - 1) = sc.bottomRows(sc.rows() - 1);
    for (int k = 0; k < panels_n; ++k) {
      if (qimg) blit_heat(c, x + border, y + border, *qimg, shown, k, images.feature_height, images.feature_width, scale);
      else blit(c, x + border, y + border, nullptr, image_h, image_w, scale);
      c.frame(x, y, cell_w, cell_h, border, kGray);
      x += cell_w + gap;
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png::detail::write(path.string(), c.width, c.height, PNG_FORMAT_RGB, c.px);
}

struct RankReportOptions {
  int topk = 5;
  std::vector<int> query_ids;
  int max_queries = 8;
  retrieval::Selector selector;  // defaults to all members when empty
  std::filesystem::path out_dir = "rank_report";
  std::string checkpoint;        // overrides the archive's checkpoint for attention panels
};

/// Writes ranking.tsv and ranking.png. Thumbnails come from the archives'
/// corpus; attention panels need a readable checkpoint.
inline std::vector<RankRow> rank_report(const retrieval::Archive& query, const retrieval::Archive& gallery,
                                        RankReportOptions opt) {
  namespace fs = std::filesystem;
  if (opt.selector.kind == retrieval::Selector::Kind::kMembers && opt.selector.members.empty())
    opt.selector = retrieval::Selector::all(query.K);
  const auto rows = rank_rows(query, gallery, opt.query_ids, opt.topk, opt.selector, opt.max_queries);
  fs::create_directories(opt.out_dir);
  write_text(opt.out_dir / "ranking.tsv", rank_tsv(rows, query, gallery));

  // Load only the images that appear in the report.
  std::set<int> need_q, need_g;
  for (const auto& r : rows) {
    need_q.insert(r.query);
    for (const auto& e : r.top) need_g.insert(e.gallery);
  }
  std::vector<Image> store_q(query.records.size()), store_g(gallery.records.size());
  RankImages images;
  images.query.assign(query.records.size(), nullptr);
  images.gallery.assign(gallery.records.size(), nullptr);
  int image_h = 64, image_w = 32;
  auto load = [&](const retrieval::Archive& a, const std::set<int>& need, std::vector<Image>& store,
                  std::vector<const Image*>& ptrs) {
    if (a.corpus.empty() || a.split.empty()) return;
    for (int i : need) {
      const auto p = fs::path(a.corpus) / a.split / "images" / (a.records[static_cast<std::size_t>(i)].file + ".png");
      if (!fs::exists(p)) continue;
      store[static_cast<std::size_t>(i)] = png::read_rgb(p.string());
      ptrs[static_cast<std::size_t>(i)] = &store[static_cast<std::size_t>(i)];
      image_h = store[static_cast<std::size_t>(i)].height;
      image_w = store[static_cast<std::size_t>(i)].width;
    }
  };
  load(query, need_q, store_q, images.query);
  load(gallery, need_g, store_g, images.gallery);

  const std::string ckpt = opt.checkpoint.empty() ? query.checkpoint : opt.checkpoint;
  if (!ckpt.empty() && fs::exists(ckpt) && !query.corpus.empty()) {
    auto [cfg, model] = model_from_checkpoint(ckpt);
    require(model_fingerprint(cfg.model) == query.fingerprint, ErrorCode::kFingerprint,
            "checkpoint does not match the query archive");
    const auto [hb, wb] = feature_size(cfg.model.backbone);
    images.feature_height = hb;
    images.feature_width = wb;
    std::vector<synth::SampleRecord> samples;
    std::vector<int> order(need_q.begin(), need_q.end());
    for (int i : order) {
      synth::SampleRecord s;
      s.file = query.records[static_cast<std::size_t>(i)].file;
      if (!images.query[static_cast<std::size_t>(i)]) {
        samples.clear();
        break;
      }
      s.image = *images.query[static_cast<std::size_t>(i)];
      if (cfg.ablation.fixed_attention)
        s.fields = fields::read_field_stack(
            (fs::path(query.corpus) / query.split / "fields" / (s.file + ".fstk")).string());
      samples.push_back(std::move(s));
    }
    if (!samples.empty()) {
      const auto scores = attention_scores(model, samples, cfg);
      images.attention.assign(query.records.size(), nn::Mat<double>());
      for (std::size_t j = 0; j < order.size(); ++j) images.attention[static_cast<std::size_t>(order[j])] = scores[j];
    }
  }
  write_rank_png(opt.out_dir / "ranking.png", rows, query, images, image_h, image_w);
  return rows;
}

}  // namespace reidkit::harness
