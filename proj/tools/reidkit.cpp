#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "reidkit/harness.hpp"

namespace fs = std::filesystem;
using namespace reidkit;
using namespace reidkit::harness;

namespace {

retrieval::Selector parse_selector(const std::string& s, int K) {
  if (s == "all") return retrieval::Selector::all(K);
  if (s == "parts") return retrieval::Selector::parts(K);
  if (s == "f") return retrieval::Selector::only(0);
  if (s.size() > 1 && s[0] == 'p') {
    const int k = std::stoi(s.substr(1));
    require(k >= 1 && k <= K, ErrorCode::kInvalidConfig, "part selector out of range: " + s);
    return retrieval::Selector::only(k);
  }
  throw Error(ErrorCode::kInvalidConfig, "selector must be all, parts, f or p1..pK (got '" + s + "')");
}

int run(int argc, char** argv) {
  CLI::App app{"reidkit: part-based person re-identification on synthetic corpora"};
  app.require_subcommand(1);

  std::string config_path, out, ckpt, split, query_path, gallery_path, grid, selector = "all", resume, precision = "float",
                                                                        corpus_dir;
  bool no_vis = false;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> rows;
  std::vector<int> ids, ranks = {1, 5, 10};
  std::string rank_out = "rank_report";
  int topk = 5, max_queries = 8;

  auto* gen = app.add_subcommand("generate", "Render a synthetic corpus");
  gen->add_option("--config", config_path, "run config (corpus section)")->required();
  gen->add_option("--out", out, "output directory (defaults to corpus.path)");

  auto* train = app.add_subcommand("train", "Train a model; writes logs and checkpoints to output.dir");
  train->add_option("--config", config_path, "run config")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--precision", precision, "float or double")->check(CLI::IsMember({"float", "double"}));

  auto* embed = app.add_subcommand("embed", "Write an embedding archive for one split");
  embed->add_option("--ckpt", ckpt, "checkpoint")->required();
  embed->add_option("--split", split, "train, query or gallery")->required();
  embed->add_option("--config", config_path, "config to check the checkpoint against");
  embed->add_option("--corpus", corpus_dir, "corpus directory (defaults to the checkpoint's)");
  embed->add_option("--out", out, "archive path (defaults to <split>.emb.jsonl next to the checkpoint)");
  embed->add_flag("--no-visibility", no_vis, "set every visibility bit to 1");

  auto* eval = app.add_subcommand("eval", "Rank-k and mAP for a query/gallery archive pair");
  eval->add_option("--query", query_path, "query archive")->required();
  eval->add_option("--gallery", gallery_path, "gallery archive")->required();
  eval->add_option("--selector", selector, "all, parts, f or p1..pK");
  eval->add_option("--ranks", ranks, "CMC ranks")->delimiter(',');
  eval->add_flag("--no-visibility", no_vis, "ignore visibility bits");
  eval->add_option("--out", out, "metric table path (TSV)");

  auto* abl = app.add_subcommand("ablate", "Train and evaluate an ablation grid");
  abl->add_option("--grid", grid, "loss_grid, embedding_study or components")
      ->required()
      ->check(CLI::IsMember(grid_names()));
  abl->add_option("--config", config_path, "base run config")->required();
  abl->add_option("--seeds", seeds, "training seeds (default: the config's seed)")->delimiter(',');
  abl->add_option("--rows", rows, "restrict to these row names")->delimiter(',');
  abl->add_option("--out", out, "table path (defaults to <output.dir>/<grid>.tsv)");

  auto* rank = app.add_subcommand("rank", "Ranking grids with attention panels");
  rank->add_option("--query", query_path, "query archive")->required();
  rank->add_option("--gallery", gallery_path, "gallery archive")->required();
  rank->add_option("--topk", topk, "gallery entries per row")->check(CLI::PositiveNumber);
  rank->add_option("--ids", ids, "query identities to show")->delimiter(',');
  rank->add_option("--max-queries", max_queries, "rows when no ids are given");
  rank->add_option("--selector", selector, "all, parts, f or p1..pK");
  rank->add_option("--ckpt", ckpt, "checkpoint for attention panels (defaults to the archive's)");
  rank->add_option("--out", rank_out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*gen) {
    auto cfg = load_config(config_path);
    if (!out.empty()) cfg.corpus.path = out;
    const auto split = generate_corpus(cfg);
    synth::write_corpus(cfg.corpus.path, split);
    std::cout << "wrote " << split.train.size() << " train, " << split.query.size() << " query, "
              << split.gallery.size() << " gallery images to " << cfg.corpus.path << "\n";
  } else if (*train) {
    const auto cfg = load_config(config_path);
    const auto corpus = load_corpus(cfg);
    std::optional<fs::path> from;
    if (!resume.empty()) from = resume;
    const auto res = precision == "double" ? run_training<double>(cfg, corpus, from, &std::cout)
                                           : run_training<float>(cfg, corpus, from, &std::cout);
    std::cout << "checkpoint " << res.checkpoint.string() << "\n";
  } else if (*embed) {
    std::optional<RunConfig> cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    const auto archive = embed_split(ckpt, split, cfg ? &*cfg : nullptr, no_vis, corpus_dir);
    const fs::path dest = out.empty() ? fs::path(ckpt).parent_path() / (split + ".emb.jsonl") : fs::path(out);
    retrieval::write_archive(dest, archive);
    std::cout << "wrote " << archive.records.size() << " records to " << dest.string() << "\n";
  } else if (*eval) {
    auto q = retrieval::read_archive(query_path);
    auto g = retrieval::read_archive(gallery_path);
    require(q.fingerprint == g.fingerprint, ErrorCode::kFingerprint,
            "query and gallery archives come from different models");
    if (no_vis) {
      retrieval::ignore_visibility(q.records);
      retrieval::ignore_visibility(g.records);
    }
    const auto r = retrieval::evaluate(q.records, g.records, parse_selector(selector, q.K), ranks);
    const auto table = eval_tsv(r, selector + (no_vis ? " (no visibility)" : ""), q.checkpoint);
    std::cout << table;
    if (!out.empty()) write_text(out, table);
  } else if (*abl) {
    const auto cfg = load_config(config_path);
    const auto corpus = load_corpus(cfg);
    if (seeds.empty()) seeds = {cfg.seed};
    const auto table = ablate(cfg, corpus, grid, seeds, &std::cerr, rows);
    const auto tsv = table_tsv(table);
    std::cout << tsv;
    write_text(out.empty() ? fs::path(cfg.output_dir) / (grid + ".tsv") : fs::path(out), tsv);
  } else if (*rank) {
    const auto q = retrieval::read_archive(query_path);
    const auto g = retrieval::read_archive(gallery_path);
    RankReportOptions opt;
    opt.topk = topk;
    opt.query_ids = ids;
    opt.max_queries = max_queries;
    opt.selector = parse_selector(selector, q.K);
    opt.out_dir = rank_out;
    opt.checkpoint = ckpt;
    const auto rows_out = rank_report(q, g, opt);
    std::cout << "wrote " << rows_out.size() << " ranking rows to " << (fs::path(rank_out) / "ranking.png").string()
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
