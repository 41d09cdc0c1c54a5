#pragma once

#include <string>
#include <vector>

#include "dreid/backbone.hpp"
#include "dreid/data.hpp"

namespace dreid {

enum class Protocol { kSameCloth, kClothingChange };

const char* protocol_name(Protocol p);  // "sc" / "cc"

struct EvalResult {
  Protocol protocol = Protocol::kSameCloth;
  double top1 = 0.0;
  double mAP = 0.0;
  int valid_queries = 0;     // queries with at least one relevant valid entry
  int excluded_queries = 0;  // queries without one, counted but not scored
};

// Forward without augmentation; rows L2-normalized (zero rows left as-is).
// Masks are built from the stored parsing maps when cfg.use_cdm is set.
std::vector<double> embed_all(const Dataset& ds, const std::vector<int>& indices,
                              const ModelParams& params, const BackboneConfig& cfg,
                              const KeepTable& table, int batch = 32);

// Gallery validity for a query: same-camera same-person entries are always
// excluded; same_cloth additionally drops same-person different-clothes
// entries, clothing_change drops same-person same-clothes entries. Other
// people are always valid distractors.
bool protocol_filter(const SampleMeta& q, const SampleMeta& g, Protocol mode);

// [Q,G] Euclidean distances between two embedding sets.
std::vector<double> cross_distances(const std::vector<double>& qe, int nq,
                                    const std::vector<double>& ge, int ng, int d);

// Rank-based retrieval metrics under the given protocol; distance ties break
// on the gallery index.
EvalResult cmc_map(const std::vector<double>& dist, int nq, int ng,
                   const std::vector<SampleMeta>& q_meta, const std::vector<SampleMeta>& g_meta,
                   Protocol mode);

// Channel-mean spatial map, min-max normalized to [0,255], nearest-neighbor
// upscaled to (out_h, out_w), written as PGM P5. A constant map writes zeros
// and says so in the comment line.
void heatmap_export(const Tensor& stage4_single, int out_h, int out_w, const std::string& path);

}  // namespace dreid
