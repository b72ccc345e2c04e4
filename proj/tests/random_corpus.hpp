#pragma once

#include <random>
#include <vector>

#include "oracles.hpp"
#include "reidkit/retrieval.hpp"

namespace testing_util {

struct RandomCorpus {
  std::vector<reidkit::retrieval::EmbeddingRecord> queries, gallery;
  std::vector<oracle::Record> oq, og;
};

/// Random records with few ids and cameras so that same-id/same-camera
/// filtering, ties and invisible parts all occur. Values are drawn from a
/// small grid so exact distance ties appear too.
inline RandomCorpus random_corpus(std::mt19937_64& rng, int nq, int ng, int K, int C, int ids, int cams,
                                  double p_invisible = 0.3) {
  RandomCorpus rc;
  std::uniform_int_distribution<int> id(0, ids - 1), cam(0, cams - 1), grid(0, 3);
  std::bernoulli_distribution hidden(p_invisible);
  auto make = [&](int n, auto& lib, auto& ref) {
    for (int i = 0; i < n; ++i) {
      reidkit::retrieval::EmbeddingRecord r;
      r.file = "r" + std::to_string(i);
      r.id = id(rng);
      r.cam = cam(rng);
      r.K = K;
      r.C = C;
      oracle::Record o{r.id, r.cam, {}, {}};
      for (int e = 0; e <= K; ++e) {
        std::vector<double> v;
        for (int c = 0; c < C; ++c) v.push_back(grid(rng) * 0.5);
        r.emb.insert(r.emb.end(), v.begin(), v.end());
        o.emb.push_back(v);
        const int vis = e == 0 ? 1 : !hidden(rng);
        r.vis.push_back(static_cast<std::uint8_t>(vis));
        o.vis.push_back(vis);
      }
      lib.push_back(r);
      ref.push_back(o);
    }
  };
  make(nq, rc.queries, rc.oq);
  make(ng, rc.gallery, rc.og);
  return rc;
}

}  // namespace testing_util
