#include "dreid/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "dreid/common.hpp"
#include "dreid/gradsuite.hpp"
#include "dreid/image.hpp"
#include "dreid/losses.hpp"
#include "dreid/optim.hpp"

namespace fs = std::filesystem;

namespace dreid {

namespace {

std::string ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.bin", epoch);
  return buf;
}

void save_with_sidecar(const ModelParams& params, const RunConfig& cfg, const std::string& path) {
  save_checkpoint(params, path);
  save_config(cfg, path + ".cfg");
}

void remove_checkpoint(const std::string& path) {
  std::error_code ec;
  fs::remove(path, ec);
  fs::remove(path + ".cfg", ec);
}

}  // namespace

TrainOutput train_model(const Dataset& ds, const RunConfig& cfg_in, const std::string& ckpt_dir,
                        std::ostream& log) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  require(ds.height == cfg.model.input_h && ds.width == cfg.model.input_w,
          "train: dataset resolution " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
              " does not match the configured input size");

  // Contiguous class ids for the classifier, sorted by person id.
  std::set<int> train_persons;
  for (const auto& m : ds.meta)
    if (m.split == Split::kTrain) train_persons.insert(m.person_id);
  std::map<int, int> class_of;
  for (int p : train_persons) class_of[p] = static_cast<int>(class_of.size());
  if (cfg.model.num_classes == 0) {
    require(!train_persons.empty(), "train: no train split in the dataset");
    cfg.model.num_classes = static_cast<int>(train_persons.size());
  }

  CounterRng root(cfg.seed);
  KeepTable table = cfg.keep_table();
  ModelParams params = init_params(cfg.model, root);
  AdamState adam;
  CounterRng sampler_rng = root.split(RngStream::kSampler);
  CounterRng augment_rng = root.split(RngStream::kAugment);

  int train_count = static_cast<int>(ds.indices_of(Split::kTrain).size());
  int batch = cfg.sampler_p * cfg.sampler_k;
  int steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : std::max(1, train_count / batch);

  LossConfig effective_loss = cfg.loss;
  if (!cfg.two_stage) effective_loss.switch_epoch = 0;  // both losses from the start

  TrainOutput out;
  if (!ckpt_dir.empty()) fs::create_directories(ckpt_dir);

  std::size_t img_len = static_cast<std::size_t>(3) * ds.height * ds.width;
  std::size_t mask_len = static_cast<std::size_t>(ds.height) * ds.width;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(epoch, cfg.lr, cfg.decay_every, cfg.decay_factor);
    double sum_id = 0.0, sum_tri = 0.0, sum_comb = 0.0;

    for (int step = 0; step < steps; ++step) {
      std::vector<int> idxs = pk_sample(ds.meta, cfg.sampler_p, cfg.sampler_k, sampler_rng);

      std::vector<double> images;
      images.reserve(idxs.size() * img_len);
      std::vector<double> masks;
      if (cfg.model.use_cdm) masks.reserve(idxs.size() * mask_len);
      std::vector<int> labels;
      std::vector<int> person_labels;

      for (int idx : idxs) {
        std::vector<double> img = ds.images[static_cast<std::size_t>(idx)];
        ParsingMap parsing = ds.parsing[static_cast<std::size_t>(idx)];
        augment(img, parsing, augment_rng, cfg.aug);
        images.insert(images.end(), img.begin(), img.end());
        if (cfg.model.use_cdm) {
          DisentangleMask m = build_grayscale(parsing, table);
          masks.insert(masks.end(), m.values.begin(), m.values.end());
        }
        labels.push_back(class_of.at(ds.meta[static_cast<std::size_t>(idx)].person_id));
        person_labels.push_back(ds.meta[static_cast<std::size_t>(idx)].person_id);
      }

      Tensor image_batch({static_cast<int>(idxs.size()), 3, ds.height, ds.width},
                         std::move(images));
      Tensor mask_batch;
      if (cfg.model.use_cdm)
        mask_batch = Tensor({static_cast<int>(idxs.size()), 1, ds.height, ds.width},
                            std::move(masks));

      Tape tape;
      for_each_param(params, [&](const std::string&, Tensor& t) { tape.watch(t); });
      ForwardResult fwd =
          forward(tape, image_batch, cfg.model.use_cdm ? &mask_batch : nullptr, params, cfg.model);
      Tensor l_id = id_loss(tape, fwd.logits, labels);
      Tensor l_tri = triplet_batch_hard(tape, fwd.embedding, person_labels, cfg.loss.alpha);
      Tensor combined = combined_loss_node(tape, epoch, effective_loss, l_id, l_tri);
      tape.backward(combined);
      adam.step(params, lr);

      sum_id += l_id.value();
      sum_tri += l_tri.value();
      sum_comb += combined.value();
    }

    EpochLog el{epoch, lr, sum_id / steps, sum_tri / steps, sum_comb / steps};
    out.logs.push_back(el);
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %3d  lr %.3e  L_id %.6f  L_tri %.6f  combined %.6f",
                  el.epoch, el.lr, el.l_id, el.l_tri, el.combined);
    log << line << "\n";

    if (!ckpt_dir.empty()) {
      save_with_sidecar(params, cfg, (fs::path(ckpt_dir) / ckpt_name(epoch)).string());
      if (epoch >= 2)
        remove_checkpoint((fs::path(ckpt_dir) / ckpt_name(epoch - 2)).string());
    }
  }

  if (!ckpt_dir.empty()) {
    out.final_checkpoint = (fs::path(ckpt_dir) / "ckpt_final.bin").string();
    save_with_sidecar(params, cfg, out.final_checkpoint);
  }
  out.params = std::move(params);
  return out;
}

std::pair<EvalResult, EvalResult> evaluate_dataset(const Dataset& ds, const ModelParams& params,
                                                   const RunConfig& cfg) {
  KeepTable table = cfg.keep_table();
  std::vector<int> q_idx = ds.indices_of(Split::kQuery);
  std::vector<int> g_idx = ds.indices_of(Split::kGallery);
  require(!q_idx.empty() && !g_idx.empty(), "eval: dataset needs query and gallery splits");

  std::vector<double> qe = embed_all(ds, q_idx, params, cfg.model, table);
  std::vector<double> ge = embed_all(ds, g_idx, params, cfg.model, table);

  std::vector<SampleMeta> qm, gm;
  for (int i : q_idx) qm.push_back(ds.meta[static_cast<std::size_t>(i)]);
  for (int i : g_idx) gm.push_back(ds.meta[static_cast<std::size_t>(i)]);

  int d = cfg.model.embed_dim();
  std::vector<double> dist =
      cross_distances(qe, static_cast<int>(q_idx.size()), ge, static_cast<int>(g_idx.size()), d);

  EvalResult sc = cmc_map(dist, static_cast<int>(q_idx.size()), static_cast<int>(g_idx.size()), qm,
                          gm, Protocol::kSameCloth);
  EvalResult cc = cmc_map(dist, static_cast<int>(q_idx.size()), static_cast<int>(g_idx.size()), qm,
                          gm, Protocol::kClothingChange);
  return {sc, cc};
}

std::string metrics_to_tsv(const std::vector<EvalResult>& results) {
  std::string out;
  for (const auto& r : results) {
    char line[128];
    std::snprintf(line, sizeof(line), "%s\t%.6f\t%.6f\t%d\t%d\n", protocol_name(r.protocol),
                  r.top1, r.mAP, r.valid_queries, r.excluded_queries);
    out += line;
  }
  return out;
}

void write_metrics(const std::vector<EvalResult>& results, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "metrics.tsv", std::ios::binary);
    if (!out) throw IoError("cannot write metrics in '" + dir + "'");
    out << metrics_to_tsv(results);
  }
  std::ofstream js(fs::path(dir) / "metrics.json", std::ios::binary);
  if (!js) throw IoError("cannot write metrics in '" + dir + "'");
  js << "{\n  \"protocols\": [\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "    {\"protocol\": \"%s\", \"top1\": %.6f, \"mAP\": %.6f, "
                  "\"valid_queries\": %d, \"excluded_queries\": %d}%s\n",
                  protocol_name(r.protocol), r.top1, r.mAP, r.valid_queries, r.excluded_queries,
                  i + 1 < results.size() ? "," : "");
    js << buf;
  }
  js << "  ]\n}\n";
}

Dataset load_configured_dataset(const RunConfig& cfg) {
  if (cfg.data_format == "prcc") {
    require(!cfg.data_dir.empty(), "config: data.format=prcc requires data.dir");
    return load_prcc_dir(cfg.data_dir, cfg.model.input_h, cfg.model.input_w, cfg.keep_table());
  }
  if (!cfg.data_dir.empty()) return load_dataset_dir(cfg.data_dir);
  return generate_synthetic(cfg.synth);
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  Dataset ds = generate_synthetic(cfg.synth);
  export_dataset(ds, cfg.out_dir);
  log << "wrote " << ds.size() << " images to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  Dataset ds = load_configured_dataset(cfg);
  TrainOutput out = train_model(ds, cfg, cfg.out_dir, log);

  RunConfig eval_cfg = cfg;
  if (eval_cfg.model.num_classes == 0) {
    std::set<int> persons;
    for (const auto& m : ds.meta)
      if (m.split == Split::kTrain) persons.insert(m.person_id);
    eval_cfg.model.num_classes = static_cast<int>(persons.size());
  }
  auto [sc, cc] = evaluate_dataset(ds, out.params, eval_cfg);
  write_metrics({sc, cc}, cfg.out_dir);
  log << metrics_to_tsv({sc, cc});
  return 0;
}

int cmd_eval(const RunConfig& cli_cfg, const std::string& checkpoint, const std::string& protocol,
             std::ostream& log) {
  require(protocol == "sc" || protocol == "cc" || protocol == "both",
          "eval: protocol must be sc, cc or both");

  RunConfig cfg = cli_cfg;
  std::string sidecar = checkpoint + ".cfg";
  if (fs::exists(sidecar)) {
    RunConfig snap = load_config(sidecar);
    snap.data_dir = cli_cfg.data_dir;
    snap.data_format = cli_cfg.data_format;
    snap.out_dir = cli_cfg.out_dir;
    cfg = snap;
  }
  require(cfg.model.num_classes > 0,
          "eval: model.num_classes must be set (checkpoint sidecar missing?)");

  Dataset ds = load_configured_dataset(cfg);
  ModelParams params = load_checkpoint(checkpoint, cfg.model);
  auto [sc, cc] = evaluate_dataset(ds, params, cfg);

  std::vector<EvalResult> results;
  if (protocol == "sc" || protocol == "both") results.push_back(sc);
  if (protocol == "cc" || protocol == "both") results.push_back(cc);
  write_metrics(results, cfg.out_dir);
  log << metrics_to_tsv(results);
  return 0;
}

int cmd_gradcheck(std::ostream& log) {
  auto entries = gradient_suite(42);
  bool ok = true;
  for (const auto& e : entries) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-22s max_rel_err %.3e%s", e.op.c_str(), e.max_rel_err,
                  e.finite ? "" : "  (non-finite!)");
    log << line << "\n";
    if (!e.finite || e.max_rel_err > 1e-4) ok = false;
  }
  log << (ok ? "gradcheck: all operations within 1e-4\n" : "gradcheck: FAILURES above 1e-4\n");
  return ok ? 0 : 1;
}

int cmd_heatmap(const RunConfig& cli_cfg, const std::string& checkpoint,
                const std::vector<std::string>& images, std::ostream& log) {
  require(!images.empty(), "heatmap: no input images given");

  RunConfig cfg = cli_cfg;
  std::string sidecar = checkpoint + ".cfg";
  if (fs::exists(sidecar)) {
    RunConfig snap = load_config(sidecar);
    snap.out_dir = cli_cfg.out_dir;
    cfg = snap;
  }
  require(cfg.model.num_classes > 0,
          "heatmap: model.num_classes must be set (checkpoint sidecar missing?)");
  ModelParams params = load_checkpoint(checkpoint, cfg.model);
  KeepTable table = cfg.keep_table();
  fs::create_directories(cfg.out_dir);

  for (const auto& path : images) {
    ImageU8 raw = fs::path(path).extension() == ".png" ? read_png(path) : read_jpeg(path);
    require(raw.channels == 3, "heatmap: '" + path + "' must be an RGB image");

    std::vector<double> chan(static_cast<std::size_t>(raw.height) * raw.width);
    std::vector<double> pix(static_cast<std::size_t>(3) * cfg.model.input_h * cfg.model.input_w);
    for (int ch = 0; ch < 3; ++ch) {
      for (int r = 0; r < raw.height; ++r)
        for (int c = 0; c < raw.width; ++c)
          chan[static_cast<std::size_t>(r) * raw.width + c] =
              raw.pixels[(static_cast<std::size_t>(r) * raw.width + c) * 3 + ch] / 255.0;
      resize_plane(chan.data(), raw.height, raw.width,
                   pix.data() + static_cast<std::size_t>(ch) * cfg.model.input_h * cfg.model.input_w,
                   cfg.model.input_h, cfg.model.input_w);
    }
    Tensor image({1, 3, cfg.model.input_h, cfg.model.input_w}, std::move(pix));

    Tensor mask_batch;
    bool have_mask = false;
    if (cfg.model.use_cdm) {
      // Convention: images live in <dir>/images/, parsing maps in
      // <dir>/parsing/ under the same file name (synthetic export layout).
      fs::path p(path);
      fs::path parsing = p.parent_path().parent_path() / "parsing" / (p.stem().string() + ".png");
      require(fs::exists(parsing), "heatmap: parsing map '" + parsing.string() +
                                       "' not found for '" + path + "' (needed when use_cdm)");
      ParsingMap pm = load_parsing_map(parsing.string(), table);
      DisentangleMask m = build_grayscale(pm, table);
      if (m.height != cfg.model.input_h || m.width != cfg.model.input_w)
        m = resize_mask(m, cfg.model.input_h, cfg.model.input_w);
      mask_batch = Tensor({1, 1, cfg.model.input_h, cfg.model.input_w}, std::move(m.values));
      have_mask = true;
    }

    Tape tape;
    ForwardResult fwd = forward(tape, image, have_mask ? &mask_batch : nullptr, params, cfg.model);
    std::string out_path =
        (fs::path(cfg.out_dir) / (fs::path(path).stem().string() + "_heatmap.pgm")).string();
    heatmap_export(fwd.stage4, cfg.model.input_h, cfg.model.input_w, out_path);
    log << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace dreid
