#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dreid/tensor.hpp"

namespace dreid {

constexpr int kNumParsingClasses = 20;

// LIP 20-class convention.
enum ParsingLabel : int {
  kBackground = 0,
  kHat = 1,
  kHair = 2,
  kGlove = 3,
  kSunglasses = 4,
  kUpperClothes = 5,
  kDress = 6,
  kCoat = 7,
  kSocks = 8,
  kPants = 9,
  kJumpsuits = 10,
  kScarf = 11,
  kSkirt = 12,
  kFace = 13,
  kLeftArm = 14,
  kRightArm = 15,
  kLeftLeg = 16,
  kRightLeg = 17,
  kLeftShoe = 18,
  kRightShoe = 19,
};

struct KeepEntry {
  std::string name;
  int label;
  bool kept;
};

// Which of the 20 body-part classes survive into the grayscale mask.
class KeepTable {
 public:
  // Kept set: Background, Hair, Face, both arms, both legs, both shoes.
  static KeepTable lip_default();
  // Same class names, kept flags replaced by the given label set.
  static KeepTable with_kept_labels(const std::vector<int>& kept_labels);

  bool kept(int label) const { return kept_[static_cast<std::size_t>(label)]; }
  std::vector<int> kept_labels() const;
  const std::vector<KeepEntry>& entries() const { return entries_; }

 private:
  KeepTable() = default;
  void validate() const;
  std::vector<KeepEntry> entries_;
  std::vector<bool> kept_;
};

// Per-pixel body-part labels in [0, 19].
struct ParsingMap {
  int height = 0, width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
};

// Grayscale clothing-irrelevant image; kept classes map to label/19, dropped
// classes to exactly 0.
struct DisentangleMask {
  int height = 0, width = 0;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Reads an 8-bit single-channel PNG or PGM whose pixel values are label
// indices; rejects out-of-range labels naming the pixel.
ParsingMap load_parsing_map(const std::string& path, const KeepTable& table);
void save_parsing_map(const ParsingMap& map, const std::string& path);
ParsingMap validate_parsing(ParsingMap map, const std::string& origin);

DisentangleMask build_grayscale(const ParsingMap& map, const KeepTable& table);

DisentangleMask resize_mask(const DisentangleMask& mask, int h, int w);

Tensor mask_to_tensor(const DisentangleMask& mask);  // -> [1,1,H,W]

// Stem convolution for the mask branch: 1 -> C1 channels, 3x3, pad 1, with
// the stride chosen to land on the stage-1 feature resolution. expected_hw
// is the stage-1 output size; a mismatch is rejected.
Tensor mask_stem(Tape& tape, const Tensor& mask_n1hw, const Tensor& w, const Tensor& b, int stride,
                 int expected_h, int expected_w);

// Elementwise addition of the two aligned feature streams.
Tensor fuse(Tape& tape, const Tensor& rgb_feat, const Tensor& mask_feat);

}  // namespace dreid
