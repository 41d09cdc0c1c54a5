#include "dreid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dreid/common.hpp"
#include "dreid/image.hpp"

namespace dreid {

const char* protocol_name(Protocol p) { return p == Protocol::kSameCloth ? "sc" : "cc"; }

std::vector<double> embed_all(const Dataset& ds, const std::vector<int>& indices,
                              const ModelParams& params, const BackboneConfig& cfg,
                              const KeepTable& table, int batch) {
  require(batch >= 1, "embed_all: batch must be >= 1");
  int d = cfg.embed_dim();
  std::vector<double> out(indices.size() * static_cast<std::size_t>(d));

  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch)) {
    std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch), indices.size() - start);
    std::vector<double> imgs;
    imgs.reserve(n * static_cast<std::size_t>(3) * ds.height * ds.width);
    std::vector<double> masks;
    if (cfg.use_cdm) masks.reserve(n * static_cast<std::size_t>(ds.height) * ds.width);

    for (std::size_t i = 0; i < n; ++i) {
      int idx = indices[start + i];
      const auto& img = ds.images[static_cast<std::size_t>(idx)];
      imgs.insert(imgs.end(), img.begin(), img.end());
      if (cfg.use_cdm) {
        DisentangleMask m = build_grayscale(ds.parsing[static_cast<std::size_t>(idx)], table);
        if (m.height != cfg.input_h || m.width != cfg.input_w)
          m = resize_mask(m, cfg.input_h, cfg.input_w);
        masks.insert(masks.end(), m.values.begin(), m.values.end());
      }
    }

    Tensor images({static_cast<int>(n), 3, ds.height, ds.width}, std::move(imgs));
    Tensor mask_batch;
    if (cfg.use_cdm)
      mask_batch = Tensor({static_cast<int>(n), 1, cfg.input_h, cfg.input_w}, std::move(masks));

    Tape tape;
    ForwardResult fwd = forward(tape, images, cfg.use_cdm ? &mask_batch : nullptr, params, cfg);

    for (std::size_t i = 0; i < n; ++i) {
      const double* row = fwd.embedding.ptr() + i * static_cast<std::size_t>(d);
      double norm = 0.0;
      for (int j = 0; j < d; ++j) norm += row[j] * row[j];
      norm = std::sqrt(norm);
      double inv = norm > 1e-12 ? 1.0 / norm : 0.0;  // zero rows stay zero
      double* dst = out.data() + (start + i) * static_cast<std::size_t>(d);
      for (int j = 0; j < d; ++j) dst[j] = row[j] * inv;
    }
  }
  return out;
}

bool protocol_filter(const SampleMeta& q, const SampleMeta& g, Protocol mode) {
  if (q.person_id == g.person_id) {
    if (q.camera_id == g.camera_id) return false;  // standard re-id exclusion
    if (mode == Protocol::kSameCloth) return q.clothes_id == g.clothes_id;
    return q.clothes_id != g.clothes_id;
  }
  return true;  // cross-person entries are always distractors
}

std::vector<double> cross_distances(const std::vector<double>& qe, int nq,
                                    const std::vector<double>& ge, int ng, int d) {
  std::vector<double> dist(static_cast<std::size_t>(nq) * ng);
  for (int q = 0; q < nq; ++q)
    for (int g = 0; g < ng; ++g) {
      double s = 0.0;
      for (int t = 0; t < d; ++t) {
        double diff = qe[static_cast<std::size_t>(q) * d + t] - ge[static_cast<std::size_t>(g) * d + t];
        s += diff * diff;
      }
      dist[static_cast<std::size_t>(q) * ng + g] = std::sqrt(s > 0.0 ? s : 0.0);
    }
  return dist;
}

EvalResult cmc_map(const std::vector<double>& dist, int nq, int ng,
                   const std::vector<SampleMeta>& q_meta, const std::vector<SampleMeta>& g_meta,
                   Protocol mode) {
  require(static_cast<int>(q_meta.size()) == nq && static_cast<int>(g_meta.size()) == ng,
          "cmc_map: metadata does not match the distance matrix");
  require(dist.size() == static_cast<std::size_t>(nq) * ng, "cmc_map: distance matrix size mismatch");
  for (double v : dist) require(std::isfinite(v), "cmc_map: distances must be finite");

  EvalResult result;
  result.protocol = mode;
  double top1_sum = 0.0, ap_sum = 0.0;

  std::vector<int> order;
  for (int q = 0; q < nq; ++q) {
    order.clear();
    for (int g = 0; g < ng; ++g)
      if (protocol_filter(q_meta[static_cast<std::size_t>(q)], g_meta[static_cast<std::size_t>(g)], mode))
        order.push_back(g);

    int relevant = 0;
    for (int g : order)
      if (g_meta[static_cast<std::size_t>(g)].person_id == q_meta[static_cast<std::size_t>(q)].person_id)
        ++relevant;

    // A query with nothing relevant among its valid entries cannot be scored
    // under this protocol; it is excluded and counted. This covers the
    // empty-valid-gallery case as well.
    if (relevant == 0) {
      ++result.excluded_queries;
      continue;
    }
    ++result.valid_queries;

    const double* drow = dist.data() + static_cast<std::size_t>(q) * ng;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (drow[a] != drow[b]) return drow[a] < drow[b];
      return a < b;  // deterministic tie-break by gallery index
    });

    if (g_meta[static_cast<std::size_t>(order.front())].person_id ==
        q_meta[static_cast<std::size_t>(q)].person_id)
      top1_sum += 1.0;

    int hits = 0;
    double ap = 0.0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      if (g_meta[static_cast<std::size_t>(order[rank])].person_id ==
          q_meta[static_cast<std::size_t>(q)].person_id) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap_sum += ap / relevant;
  }

  if (result.valid_queries > 0) {
    result.top1 = top1_sum / result.valid_queries;
    result.mAP = ap_sum / result.valid_queries;
  }
  return result;
}

void heatmap_export(const Tensor& stage4_single, int out_h, int out_w, const std::string& path) {
  require(stage4_single.ndim() == 4 && stage4_single.dim(0) == 1,
          "heatmap_export: expected a single image's [1,C,H,W] features, got shape " +
              shape_str(stage4_single.shape()));
  int c = stage4_single.dim(1), h = stage4_single.dim(2), w = stage4_single.dim(3);

  std::vector<double> map(static_cast<std::size_t>(h) * w, 0.0);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        map[static_cast<std::size_t>(y) * w + x] += stage4_single.at(0, ci, y, x);
  for (double& v : map) v /= c;

  auto [mn_it, mx_it] = std::minmax_element(map.begin(), map.end());
  double mn = *mn_it, mx = *mx_it;
  bool degenerate = mx <= mn;

  std::vector<std::uint8_t> small(map.size(), 0);
  if (!degenerate)
    for (std::size_t i = 0; i < map.size(); ++i)
      small[i] = static_cast<std::uint8_t>(std::lround((map[i] - mn) / (mx - mn) * 255.0));

  ImageU8 up{out_h, out_w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(out_h) * out_w)};
  resize_nearest_u8(small.data(), h, w, up.pixels.data(), out_h, out_w);

  std::string comment = "channel-mean heatmap";
  if (degenerate) comment += " (constant features; emitted all-zero)";
  write_pgm(up, path, comment);
}

}  // namespace dreid
