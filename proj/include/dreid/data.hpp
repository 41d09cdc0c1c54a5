#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dreid/cdm.hpp"
#include "dreid/rng.hpp"

namespace dreid {

enum class Split { kTrain, kQuery, kGallery };

const char* split_name(Split s);
Split split_from_name(const std::string& s);

struct SampleMeta {
  int person_id = 0;
  int clothes_id = 0;  // unique per (person, outfit)
  int camera_id = 0;
  Split split = Split::kTrain;
};

// Images are CHW doubles in [0,1], aligned with parsing maps and metadata by
// index.
struct Dataset {
  int height = 0, width = 0;
  std::vector<std::vector<double>> images;
  std::vector<ParsingMap> parsing;
  std::vector<SampleMeta> meta;

  std::size_t size() const { return images.size(); }
  std::vector<int> indices_of(Split s) const;
};

struct SynthConfig {
  int persons = 20;
  int train_outfits = 2;
  int test_outfits = 1;  // held-out outfit worn only by clothing-change queries
  int images_per = 4;    // per (person, outfit, camera) within one split role
  int cameras = 3;
  int height = 64, width = 32;
  double noise_sigma = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
};

// Band layout of the synthetic pedestrian canvas (row fractions of a 64-row
// canvas: head 0-11, torso 12-35, legs 36-55, shoes 56-63; 4-px column
// margins at width 32, everything scaled proportionally otherwise).
struct BandLayout {
  int head_end, torso_end, legs_end;  // exclusive row bounds
  int margin;                         // background columns on each side
  int leg_split;                      // first column of the right leg
  int hair_border;                    // Hair ring thickness inside the head band
};
BandLayout band_layout(int height, int width);

// Ground-truth parsing for the canvas geometry; pure function of the layout.
ParsingMap synthetic_parsing(int height, int width);

// Deterministic generator. Split design mirrors the PRCC camera protocol:
// gallery shows train outfit 0 at camera 0; queries come from the other
// cameras, wearing outfit 0 (same-cloth probes) or the held-out test outfit
// (clothing-change probes); train covers all cameras and both train outfits.
Dataset generate_synthetic(const SynthConfig& cfg);

// PNG images + parsing PNGs + metadata.tsv (path, person, clothes, camera,
// split; tab-separated).
void export_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset_dir(const std::string& dir);

// PRCC-style tree: root/<split>/<camera>/<person>/*.jpg|png with parsing
// counterparts under root/parsing/... at matching relative paths (.png).
// Cameras A and B wear the same outfit, camera C a different one.
struct PrccEntry {
  std::string image_path;
  std::string parsing_path;
  SampleMeta meta;
};
struct PrccIndex {
  std::vector<PrccEntry> entries;
};
PrccIndex index_prcc_dir(const std::string& root);
Dataset load_prcc_dir(const std::string& root, int target_h, int target_w, const KeepTable& table,
                      int* skipped_out = nullptr);

// P identities x K instances, both without replacement, from the train
// split. Deterministic given the rng state.
std::vector<int> pk_sample(const std::vector<SampleMeta>& meta, int p, int k, CounterRng& rng);

struct AugmentConfig {
  bool enable = true;
  double flip_prob = 0.5;
  int crop_pad = 4;
  double erase_prob = 0.5;
  double erase_area_min = 0.02, erase_area_max = 0.4;
  double erase_aspect_min = 0.3, erase_aspect_max = 10.0 / 3.0;
};

// Horizontal flip (image + parsing, with left/right label swap), random crop
// after zero padding (same offset for both), random erasing (noise into the
// image, Background into the parsing).
void augment(std::vector<double>& image, ParsingMap& parsing, CounterRng& rng,
             const AugmentConfig& cfg);

}  // namespace dreid
