#include "dreid/cdm.hpp"

#include <algorithm>

#include "dreid/common.hpp"
#include "dreid/image.hpp"

namespace dreid {

namespace {

const char* kLipNames[kNumParsingClasses] = {
    "Background", "Hat",       "Hair",     "Glove",     "Sunglasses",
    "Upper-clothes", "Dress",  "Coat",     "Socks",     "Pants",
    "Jumpsuits",  "Scarf",     "Skirt",    "Face",      "Left-arm",
    "Right-arm",  "Left-leg",  "Right-leg", "Left-shoe", "Right-shoe"};

constexpr int kDefaultKept[] = {kBackground, kHair,    kFace,     kLeftArm, kRightArm,
                                kLeftLeg,    kRightLeg, kLeftShoe, kRightShoe};

}  // namespace

KeepTable KeepTable::lip_default() {
  return with_kept_labels(std::vector<int>(std::begin(kDefaultKept), std::end(kDefaultKept)));
}

KeepTable KeepTable::with_kept_labels(const std::vector<int>& kept_labels) {
  KeepTable t;
  t.kept_.assign(kNumParsingClasses, false);
  for (int label : kept_labels) {
    require(label >= 0 && label < kNumParsingClasses,
            "keep table: label " + std::to_string(label) + " outside [0,19]");
    t.kept_[static_cast<std::size_t>(label)] = true;
  }
  for (int i = 0; i < kNumParsingClasses; ++i)
    t.entries_.push_back({kLipNames[i], i, t.kept_[static_cast<std::size_t>(i)]});
  t.validate();
  return t;
}

void KeepTable::validate() const {
  require(entries_.size() == kNumParsingClasses, "keep table: must have exactly 20 entries");
  std::vector<bool> seen(kNumParsingClasses, false);
  for (const auto& e : entries_) {
    require(e.label >= 0 && e.label < kNumParsingClasses && !seen[static_cast<std::size_t>(e.label)],
            "keep table: labels must be a permutation of 0..19");
    seen[static_cast<std::size_t>(e.label)] = true;
  }
}

std::vector<int> KeepTable::kept_labels() const {
  std::vector<int> out;
  for (const auto& e : entries_)
    if (e.kept) out.push_back(e.label);
  return out;
}

ParsingMap validate_parsing(ParsingMap map, const std::string& origin) {
  require(map.height >= 1 && map.width >= 1, "parsing map " + origin + ": empty image");
  require(map.labels.size() == static_cast<std::size_t>(map.height) * map.width,
          "parsing map " + origin + ": label buffer size mismatch");
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      int v = map.at(y, x);
      if (v >= kNumParsingClasses)
        throw ValidationError("parsing map " + origin + ": label " + std::to_string(v) +
                              " out of range at pixel (x=" + std::to_string(x) +
                              ", y=" + std::to_string(y) + ")");
    }
  return map;
}

ParsingMap load_parsing_map(const std::string& path, const KeepTable& table) {
  (void)table;  // the table constrains downstream use, not the label range
  ImageU8 img = read_gray(path);
  ParsingMap map{img.height, img.width, std::move(img.pixels)};
  return validate_parsing(std::move(map), "'" + path + "'");
}

void save_parsing_map(const ParsingMap& map, const std::string& path) {
  ImageU8 img{map.height, map.width, 1, map.labels};
  write_png(img, path);
}

DisentangleMask build_grayscale(const ParsingMap& map, const KeepTable& table) {
  DisentangleMask mask{map.height, map.width, {}};
  mask.values.resize(map.labels.size());
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    int label = map.labels[i];
    mask.values[i] = table.kept(label) ? label / 19.0 : 0.0;
  }
  return mask;
}

DisentangleMask resize_mask(const DisentangleMask& mask, int h, int w) {
  require(h >= 1 && w >= 1, "resize_mask: target extents must be >= 1");
  DisentangleMask out{h, w, std::vector<double>(static_cast<std::size_t>(h) * w)};
  resize_plane(mask.values.data(), mask.height, mask.width, out.values.data(), h, w);
  return out;
}

Tensor mask_to_tensor(const DisentangleMask& mask) {
  return Tensor({1, 1, mask.height, mask.width}, mask.values);
}

Tensor mask_stem(Tape& tape, const Tensor& mask_n1hw, const Tensor& w, const Tensor& b, int stride,
                 int expected_h, int expected_w) {
  require(mask_n1hw.ndim() == 4 && mask_n1hw.dim(1) == 1,
          "mask_stem: expected a [N,1,H,W] mask tensor, got shape " + shape_str(mask_n1hw.shape()));
  require(w.ndim() == 4 && w.dim(1) == 1,
          "mask_stem: stem kernel must be [C1,1,kh,kw], got shape " + shape_str(w.shape()));
  Tensor out = ops::conv2d(tape, mask_n1hw, w, b, stride, (w.dim(2) - 1) / 2);
  require(out.dim(2) == expected_h && out.dim(3) == expected_w,
          "mask_stem: output " + std::to_string(out.dim(2)) + "x" + std::to_string(out.dim(3)) +
              " does not match the stage-1 feature resolution " + std::to_string(expected_h) +
              "x" + std::to_string(expected_w));
  return out;
}

Tensor fuse(Tape& tape, const Tensor& rgb_feat, const Tensor& mask_feat) {
  require(rgb_feat.same_shape(mask_feat),
          "fuse: stream shapes differ, rgb " + shape_str(rgb_feat.shape()) + " vs mask " +
              shape_str(mask_feat.shape()));
  return ops::add(tape, rgb_feat, mask_feat);
}

}  // namespace dreid
