#include "dreid/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dreid/common.hpp"
#include "dreid/image.hpp"

namespace fs = std::filesystem;

namespace dreid {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "query") return Split::kQuery;
  if (s == "gallery") return Split::kGallery;
  throw ValidationError("unknown split name '" + s + "'");
}

std::vector<int> Dataset::indices_of(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (meta[i].split == s) out.push_back(static_cast<int>(i));
  return out;
}

void SynthConfig::validate() const {
  require(persons >= 2, "synth: need at least 2 persons for distractors");
  require(train_outfits >= 2, "synth: need >= 2 train outfits so clothes-change is learnable");
  require(test_outfits >= 1, "synth: need a held-out test outfit");
  require(images_per >= 1, "synth: images per (person,outfit,camera) must be >= 1");
  require(cameras >= 2, "synth: impossible split sizes, gallery and query need different cameras");
  require(height >= 16 && width >= 8, "synth: canvas must be at least 16x8");
  require(width % 2 == 0, "synth: width must be even for the left/right leg split");
  require(noise_sigma >= 0.0, "synth: noise sigma must be >= 0");
}

BandLayout band_layout(int height, int width) {
  BandLayout b;
  b.head_end = height * 12 / 64;
  b.torso_end = height * 36 / 64;
  b.legs_end = height * 56 / 64;
  b.margin = std::max(1, width * 4 / 32);
  b.leg_split = width / 2;
  b.hair_border = std::max(1, height * 2 / 64);
  return b;
}

ParsingMap synthetic_parsing(int height, int width) {
  BandLayout b = band_layout(height, width);
  ParsingMap map{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width)};
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      std::uint8_t label;
      if (c < b.margin || c >= width - b.margin) {
        label = kBackground;
      } else if (r < b.head_end) {
        bool ring = r < b.hair_border || r >= b.head_end - b.hair_border ||
                    c < b.margin + b.hair_border || c >= width - b.margin - b.hair_border;
        label = ring ? kHair : kFace;
      } else if (r < b.torso_end) {
        label = kUpperClothes;
      } else if (r < b.legs_end) {
        label = c < b.leg_split ? kLeftLeg : kRightLeg;
      } else {
        label = c < b.leg_split ? kLeftShoe : kRightShoe;
      }
      map.at(r, c) = label;
    }
  return map;
}

namespace {

struct PersonPattern {
  double color[3];
  int checker_phase;
};

struct OutfitPattern {
  double color[3];
  int stripe_period;
};

// Identity colors sit in a narrow band so raw pixel distances are dominated
// by clothing; a trained model still separates them easily.
PersonPattern person_pattern(const CounterRng& root, int person_id) {
  CounterRng rng = root.split(RngStream::kSynthPattern, static_cast<std::uint64_t>(person_id));
  PersonPattern p;
  for (double& ch : p.color) ch = rng.uniform(0.35, 0.65);
  p.checker_phase = static_cast<int>(rng.uniform_int(2));
  return p;
}

OutfitPattern outfit_pattern(const CounterRng& root, int clothes_id) {
  CounterRng rng = root.split(RngStream::kSynthPattern,
                              1000000u + static_cast<std::uint64_t>(clothes_id));
  OutfitPattern o;
  for (double& ch : o.color) ch = rng.uniform(0.05, 0.95);
  o.stripe_period = 2 + static_cast<int>(rng.uniform_int(5));
  return o;
}

constexpr double kBackgroundGray = 0.5;
constexpr double kCheckerDark = 0.72;
constexpr double kStripeDark = 0.55;
constexpr double kCameraStep = 0.10;

std::vector<double> render_image(const SynthConfig& cfg, const ParsingMap& parsing,
                                 const PersonPattern& person, const OutfitPattern& outfit,
                                 int camera, CounterRng noise_rng) {
  int h = cfg.height, w = cfg.width;
  BandLayout b = band_layout(h, w);
  int cell = std::max(1, h / 16);
  double cam_offset = (camera - (cfg.cameras - 1) / 2.0) * kCameraStep;

  std::vector<double> img(static_cast<std::size_t>(3) * h * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double px[3];
      int label = parsing.at(r, c);
      if (label == kBackground) {
        px[0] = px[1] = px[2] = kBackgroundGray;
      } else if (label == kUpperClothes) {
        bool on = (r / outfit.stripe_period) % 2 == 0;
        for (int ch = 0; ch < 3; ++ch) px[ch] = outfit.color[ch] * (on ? 1.0 : kStripeDark);
      } else {
        bool on = ((r / cell + c / cell + person.checker_phase) % 2) == 0;
        for (int ch = 0; ch < 3; ++ch) px[ch] = person.color[ch] * (on ? 1.0 : kCheckerDark);
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = px[ch] + cam_offset;
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise_rng.gaussian();
        img[(static_cast<std::size_t>(ch) * h + r) * w + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  return img;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  CounterRng root(cfg.seed);
  ParsingMap parsing = synthetic_parsing(cfg.height, cfg.width);

  Dataset ds;
  ds.height = cfg.height;
  ds.width = cfg.width;

  int total_outfits = cfg.train_outfits + cfg.test_outfits;
  std::uint64_t ordinal = 0;
  auto emit = [&](int person, int outfit, int camera, Split split) {
    int clothes = person * total_outfits + outfit;
    PersonPattern pp = person_pattern(root, person);
    OutfitPattern op = outfit_pattern(root, clothes);
    for (int k = 0; k < cfg.images_per; ++k) {
      CounterRng noise = root.split(RngStream::kSynthNoise, ordinal++);
      ds.images.push_back(render_image(cfg, parsing, pp, op, camera, noise));
      ds.parsing.push_back(parsing);
      ds.meta.push_back(SampleMeta{person, clothes, camera, split});
    }
  };

  // Train: both train outfits under every camera.
  for (int p = 0; p < cfg.persons; ++p)
    for (int o = 0; o < cfg.train_outfits; ++o)
      for (int cam = 0; cam < cfg.cameras; ++cam) emit(p, o, cam, Split::kTrain);

  // Gallery: outfit 0 at camera 0 (fresh draws).
  for (int p = 0; p < cfg.persons; ++p) emit(p, 0, 0, Split::kGallery);

  // Same-cloth probes: outfit 0 from the non-gallery cameras.
  for (int p = 0; p < cfg.persons; ++p)
    for (int cam = 1; cam < cfg.cameras; ++cam) emit(p, 0, cam, Split::kQuery);

  // Clothing-change probes: the held-out outfits, never seen in train or
  // gallery, from the non-gallery cameras.
  for (int p = 0; p < cfg.persons; ++p)
    for (int o = cfg.train_outfits; o < total_outfits; ++o)
      for (int cam = 1; cam < cfg.cameras; ++cam) emit(p, o, cam, Split::kQuery);

  return ds;
}

void export_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "parsing");
  std::ofstream meta_out(fs::path(dir) / "metadata.tsv");
  if (!meta_out) throw IoError("cannot write metadata in '" + dir + "'");

  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    std::string rel = std::string("images/") + name;

    ImageU8 img{ds.height, ds.width, 3, {}};
    img.pixels.resize(static_cast<std::size_t>(3) * ds.height * ds.width);
    const auto& src = ds.images[i];
    for (int r = 0; r < ds.height; ++r)
      for (int c = 0; c < ds.width; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          double v = src[(static_cast<std::size_t>(ch) * ds.height + r) * ds.width + c];
          img.pixels[(static_cast<std::size_t>(r) * ds.width + c) * 3 + ch] =
              static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    write_png(img, (fs::path(dir) / rel).string());
    save_parsing_map(ds.parsing[i], (fs::path(dir) / "parsing" / name).string());

    const auto& m = ds.meta[i];
    meta_out << rel << '\t' << m.person_id << '\t' << m.clothes_id << '\t' << m.camera_id << '\t'
             << split_name(m.split) << '\n';
  }
  if (!meta_out) throw IoError("failed writing metadata in '" + dir + "'");
}

Dataset load_dataset_dir(const std::string& dir) {
  std::ifstream meta_in(fs::path(dir) / "metadata.tsv");
  if (!meta_in) throw IoError("cannot open '" + dir + "/metadata.tsv'");

  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(meta_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string rel, split;
    SampleMeta m;
    if (!(ss >> rel >> m.person_id >> m.clothes_id >> m.camera_id >> split))
      throw ValidationError(dir + "/metadata.tsv:" + std::to_string(line_no) + ": malformed record");
    m.split = split_from_name(split);

    ImageU8 img = read_png((fs::path(dir) / rel).string());
    if (img.channels != 3) throw IoError("'" + rel + "': expected an RGB image");
    if (ds.height == 0) {
      ds.height = img.height;
      ds.width = img.width;
    }
    require(img.height == ds.height && img.width == ds.width,
            "'" + rel + "': image size differs from the rest of the dataset");

    std::vector<double> pix(static_cast<std::size_t>(3) * img.height * img.width);
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        for (int ch = 0; ch < 3; ++ch)
          pix[(static_cast<std::size_t>(ch) * img.height + r) * img.width + c] =
              img.pixels[(static_cast<std::size_t>(r) * img.width + c) * 3 + ch] / 255.0;

    std::string name = fs::path(rel).filename().string();
    ImageU8 par = read_gray((fs::path(dir) / "parsing" / name).string());
    require(par.height == ds.height && par.width == ds.width,
            "'" + name + "': parsing size differs from its image");
    ParsingMap pm{par.height, par.width, std::move(par.pixels)};

    ds.images.push_back(std::move(pix));
    ds.parsing.push_back(validate_parsing(std::move(pm), "'" + name + "'"));
    ds.meta.push_back(m);
  }
  require(!ds.meta.empty(), "dataset '" + dir + "' is empty");
  return ds;
}

namespace {

int camera_index(const std::string& name) {
  if (name == "A") return 0;
  if (name == "B") return 1;
  if (name == "C") return 2;
  throw ValidationError("PRCC layout: unexpected camera directory '" + name +
                        "' (expected A, B or C)");
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

}  // namespace

PrccIndex index_prcc_dir(const std::string& root) {
  PrccIndex index;
  std::vector<std::string> missing_parsing;

  for (Split split : {Split::kTrain, Split::kQuery, Split::kGallery}) {
    fs::path split_dir = fs::path(root) / split_name(split);
    if (!fs::is_directory(split_dir)) continue;

    std::vector<fs::path> cameras;
    for (const auto& e : fs::directory_iterator(split_dir))
      if (e.is_directory()) cameras.push_back(e.path());
    std::sort(cameras.begin(), cameras.end());

    for (const auto& cam_dir : cameras) {
      int cam = camera_index(cam_dir.filename().string());
      std::vector<fs::path> people;
      for (const auto& e : fs::directory_iterator(cam_dir))
        if (e.is_directory()) people.push_back(e.path());
      std::sort(people.begin(), people.end());

      for (const auto& person_dir : people) {
        int person;
        try {
          person = std::stoi(person_dir.filename().string());
        } catch (...) {
          throw ValidationError("PRCC layout: person directory '" +
                                person_dir.filename().string() + "' is not numeric");
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(person_dir))
          if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());

        for (const auto& file : files) {
          fs::path rel = fs::relative(file, root);
          fs::path parsing = fs::path(root) / "parsing" / rel.parent_path() /
                             (file.stem().string() + ".png");
          if (!fs::exists(parsing)) {
            missing_parsing.push_back(rel.string());
            continue;
          }
          PrccEntry entry;
          entry.image_path = file.string();
          entry.parsing_path = parsing.string();
          // Cameras A and B wear the person's first outfit, camera C the
          // second.
          entry.meta = SampleMeta{person, person * 2 + (cam == 2 ? 1 : 0), cam, split};
          index.entries.push_back(std::move(entry));
        }
      }
    }
  }

  if (!missing_parsing.empty()) {
    std::string msg = "PRCC tree '" + root + "': missing parsing counterpart for:";
    for (const auto& m : missing_parsing) msg += "\n  " + m;
    throw ValidationError(msg);
  }
  require(!index.entries.empty(), "PRCC tree '" + root + "': no identities found");
  return index;
}

Dataset load_prcc_dir(const std::string& root, int target_h, int target_w,
                      const KeepTable& table, int* skipped_out) {
  PrccIndex index = index_prcc_dir(root);
  Dataset ds;
  ds.height = target_h;
  ds.width = target_w;
  int skipped = 0;

  for (const auto& entry : index.entries) {
    ImageU8 img;
    try {
      fs::path p(entry.image_path);
      img = p.extension() == ".png" ? read_png(entry.image_path) : read_jpeg(entry.image_path);
    } catch (const IoError& e) {
      std::cerr << "warning: skipping undecodable image " << entry.image_path << ": " << e.what()
                << "\n";
      ++skipped;
    }
    if (img.pixels.empty()) continue;
    if (img.channels == 1) {
      ImageU8 rgb{img.height, img.width, 3, {}};
      rgb.pixels.resize(img.pixels.size() * 3);
      for (std::size_t i = 0; i < img.pixels.size(); ++i)
        rgb.pixels[i * 3] = rgb.pixels[i * 3 + 1] = rgb.pixels[i * 3 + 2] = img.pixels[i];
      img = std::move(rgb);
    }

    // Per-channel resize to the configured input size.
    std::vector<double> chan(static_cast<std::size_t>(img.height) * img.width);
    std::vector<double> pix(static_cast<std::size_t>(3) * target_h * target_w);
    for (int ch = 0; ch < 3; ++ch) {
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
          chan[static_cast<std::size_t>(r) * img.width + c] =
              img.pixels[(static_cast<std::size_t>(r) * img.width + c) * 3 + ch] / 255.0;
      resize_plane(chan.data(), img.height, img.width,
                   pix.data() + static_cast<std::size_t>(ch) * target_h * target_w, target_h,
                   target_w);
    }

    ParsingMap native = load_parsing_map(entry.parsing_path, table);
    ParsingMap resized{target_h, target_w,
                       std::vector<std::uint8_t>(static_cast<std::size_t>(target_h) * target_w)};
    resize_nearest_u8(native.labels.data(), native.height, native.width, resized.labels.data(),
                      target_h, target_w);

    ds.images.push_back(std::move(pix));
    ds.parsing.push_back(std::move(resized));
    ds.meta.push_back(entry.meta);
  }
  if (skipped > 0)
    std::cerr << "warning: " << skipped << " undecodable image(s) skipped under '" << root << "'\n";
  if (skipped_out) *skipped_out = skipped;
  require(!ds.meta.empty(), "PRCC tree '" + root + "': no decodable images");
  return ds;
}

std::vector<int> pk_sample(const std::vector<SampleMeta>& meta, int p, int k, CounterRng& rng) {
  require(p >= 2 && k >= 2, "pk_sample: need P >= 2 and K >= 2 for triplet mining");

  std::map<int, std::vector<int>> by_person;
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (meta[i].split == Split::kTrain) by_person[meta[i].person_id].push_back(static_cast<int>(i));

  std::vector<int> eligible;
  for (const auto& [person, idxs] : by_person)
    if (static_cast<int>(idxs.size()) >= k) eligible.push_back(person);
  require(static_cast<int>(eligible.size()) >= p,
          "pk_sample: " + std::to_string(eligible.size()) + " persons with >= " +
              std::to_string(k) + " train images, need P=" + std::to_string(p));

  // Partial Fisher-Yates on the eligible list, then on each person's images.
  auto draw = [&rng](std::vector<int>& pool, int count) {
    std::vector<int> out;
    for (int i = 0; i < count; ++i) {
      std::size_t j = static_cast<std::size_t>(i) +
                      static_cast<std::size_t>(rng.uniform_int(pool.size() - static_cast<std::size_t>(i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
  };

  std::vector<int> batch;
  for (int person : draw(eligible, p)) {
    std::vector<int> pool = by_person[person];
    for (int idx : draw(pool, k)) batch.push_back(idx);
  }
  return batch;
}

namespace {

std::uint8_t flip_label(std::uint8_t label) {
  switch (label) {
    case kLeftArm: return kRightArm;
    case kRightArm: return kLeftArm;
    case kLeftLeg: return kRightLeg;
    case kRightLeg: return kLeftLeg;
    case kLeftShoe: return kRightShoe;
    case kRightShoe: return kLeftShoe;
    default: return label;
  }
}

}  // namespace

void augment(std::vector<double>& image, ParsingMap& parsing, CounterRng& rng,
             const AugmentConfig& cfg) {
  if (!cfg.enable) return;
  int h = parsing.height, w = parsing.width;

  if (rng.uniform() < cfg.flip_prob) {
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < h; ++r) {
        double* row = image.data() + (static_cast<std::size_t>(ch) * h + r) * w;
        std::reverse(row, row + w);
      }
    for (int r = 0; r < h; ++r) {
      std::uint8_t* row = parsing.labels.data() + static_cast<std::size_t>(r) * w;
      std::reverse(row, row + w);
      for (int c = 0; c < w; ++c) row[c] = flip_label(row[c]);
    }
  }

  if (cfg.crop_pad > 0) {
    int pad = cfg.crop_pad;
    int dy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(2 * pad + 1)));
    int dx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(2 * pad + 1)));
    std::vector<double> img_out(image.size(), 0.0);
    std::vector<std::uint8_t> par_out(parsing.labels.size(), kBackground);
    for (int r = 0; r < h; ++r) {
      int sr = r + dy - pad;
      if (sr < 0 || sr >= h) continue;
      for (int c = 0; c < w; ++c) {
        int sc = c + dx - pad;
        if (sc < 0 || sc >= w) continue;
        for (int ch = 0; ch < 3; ++ch)
          img_out[(static_cast<std::size_t>(ch) * h + r) * w + c] =
              image[(static_cast<std::size_t>(ch) * h + sr) * w + sc];
        par_out[static_cast<std::size_t>(r) * w + c] = parsing.at(sr, sc);
      }
    }
    image = std::move(img_out);
    parsing.labels = std::move(par_out);
  }

  if (rng.uniform() < cfg.erase_prob) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      double area = rng.uniform(cfg.erase_area_min, cfg.erase_area_max) * h * w;
      double aspect = rng.uniform(cfg.erase_aspect_min, cfg.erase_aspect_max);
      int eh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
      int ew = static_cast<int>(std::lround(std::sqrt(area / aspect)));
      if (eh < 1 || ew < 1 || eh > h || ew > w) continue;
      int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - eh + 1)));
      int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - ew + 1)));
      for (int r = y0; r < y0 + eh; ++r)
        for (int c = x0; c < x0 + ew; ++c) {
          for (int ch = 0; ch < 3; ++ch)
            image[(static_cast<std::size_t>(ch) * h + r) * w + c] = rng.uniform();
          parsing.at(r, c) = kBackground;
        }
      break;
    }
  }
}

}  // namespace dreid
