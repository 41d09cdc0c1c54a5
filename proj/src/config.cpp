#include "dreid/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dreid/common.hpp"

namespace dreid {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError(where + ": expected a boolean (true/false), got '" + v + "'");
}

long long parse_int(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return n;
  } catch (...) {
    throw ValidationError(where + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    std::uint64_t n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return n;
  } catch (...) {
    throw ValidationError(where + ": expected an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw ValidationError(where + ": expected a number, got '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int(trim(item), where)));
  return out;
}

GcaMode parse_mode(const std::string& v, const std::string& where) {
  if (v == "attention_and_gate" || v == "ag") return GcaMode::kAttentionAndGate;
  if (v == "gate_only" || v == "g") return GcaMode::kGateOnly;
  throw ValidationError(where + ": expected attention_and_gate or gate_only, got '" + v + "'");
}

std::string fmt_double(double d) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeySpec>& key_registry() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    auto add = [&](std::string name, auto setter, auto getter) {
      k.push_back({std::move(name), setter, getter});
    };

    add("seed",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.seed = parse_u64(v, w); },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    add("epochs",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.epochs = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.epochs); });
    add("out",
        [](RunConfig& c, const std::string& v, const std::string&) { c.out_dir = v; },
        [](const RunConfig& c) { return c.out_dir; });
    add("data.dir",
        [](RunConfig& c, const std::string& v, const std::string&) { c.data_dir = v; },
        [](const RunConfig& c) { return c.data_dir; });
    add("data.format",
        [](RunConfig& c, const std::string& v, const std::string& w) {
          if (v != "synth" && v != "prcc")
            throw ValidationError(w + ": data.format must be synth or prcc");
          c.data_format = v;
        },
        [](const RunConfig& c) { return c.data_format; });

    add("model.use_cdm",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.model.use_cdm = parse_bool(v, w); },
        [](const RunConfig& c) { return c.model.use_cdm ? "true" : "false"; });
    add("model.use_gca",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.model.use_gca = parse_bool(v, w); },
        [](const RunConfig& c) { return c.model.use_gca ? "true" : "false"; });
    add("model.input_h",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.model.input_h = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.model.input_h); });
    add("model.input_w",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.model.input_w = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.model.input_w); });
    add("model.channels",
        [](RunConfig& c, const std::string& v, const std::string& w) {
          auto ch = parse_int_list(v, w);
          if (ch.size() != 4) throw ValidationError(w + ": model.channels needs 4 entries");
          for (std::size_t i = 0; i < 4; ++i) c.model.stages[i].channels = ch[i];
          c.model.stem_channels = ch[0];
        },
        [](const RunConfig& c) {
          return fmt_int_list({c.model.stages[0].channels, c.model.stages[1].channels,
                               c.model.stages[2].channels, c.model.stages[3].channels});
        });
    add("model.num_classes",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.model.num_classes = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.model.num_classes); });

    add("gca.kernel_size",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.model.gca_kernel_size = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.model.gca_kernel_size); });
    add("gca.stage_modes",
        [](RunConfig& c, const std::string& v, const std::string& w) {
          std::vector<std::string> parts;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) parts.push_back(trim(item));
          if (parts.size() != 4) throw ValidationError(w + ": gca.stage_modes needs 4 entries");
          for (std::size_t i = 0; i < 4; ++i) c.model.gca_modes[i] = parse_mode(parts[i], w);
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < 4; ++i) {
            if (i) s += ",";
            s += c.model.gca_modes[i] == GcaMode::kAttentionAndGate ? "attention_and_gate"
                                                                    : "gate_only";
          }
          return s;
        });

    add("train.two_stage",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.two_stage = parse_bool(v, w); },
        [](const RunConfig& c) { return c.two_stage ? "true" : "false"; });
    add("train.steps_per_epoch",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.steps_per_epoch = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.steps_per_epoch); });

    add("loss.alpha",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.loss.alpha = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.loss.alpha); });
    add("loss.lambda1",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.loss.lambda1 = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.loss.lambda1); });
    add("loss.lambda2",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.loss.lambda2 = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.loss.lambda2); });
    add("loss.switch_epoch",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.loss.switch_epoch = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.loss.switch_epoch); });

    add("optim.lr",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.lr = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.lr); });
    add("optim.decay_every",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.decay_every = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.decay_every); });
    add("optim.decay_factor",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.decay_factor = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.decay_factor); });

    add("sampler.p",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.sampler_p = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.sampler_p); });
    add("sampler.k",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.sampler_k = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.sampler_k); });

    add("aug.enable",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.enable = parse_bool(v, w); },
        [](const RunConfig& c) { return c.aug.enable ? "true" : "false"; });
    add("aug.flip_prob",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.flip_prob = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.aug.flip_prob); });
    add("aug.crop_pad",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.crop_pad = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.aug.crop_pad); });
    add("aug.erase_prob",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.erase_prob = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.aug.erase_prob); });
    add("aug.erase_area_min",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.erase_area_min = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.aug.erase_area_min); });
    add("aug.erase_area_max",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.erase_area_max = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.aug.erase_area_max); });
    add("aug.erase_aspect_min",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.erase_aspect_min = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.aug.erase_aspect_min); });
    add("aug.erase_aspect_max",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.aug.erase_aspect_max = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.aug.erase_aspect_max); });

    add("cdm.keep_labels",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.keep_labels = parse_int_list(v, w); },
        [](const RunConfig& c) {
          return c.keep_labels.empty() ? fmt_int_list(KeepTable::lip_default().kept_labels())
                                       : fmt_int_list(c.keep_labels);
        });

    add("synth.persons",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.persons = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.persons); });
    add("synth.train_outfits",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.train_outfits = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.train_outfits); });
    add("synth.test_outfits",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.test_outfits = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.test_outfits); });
    add("synth.images_per",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.images_per = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.images_per); });
    add("synth.cameras",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.cameras = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.cameras); });
    add("synth.height",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.height = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.height); });
    add("synth.width",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.width = static_cast<int>(parse_int(v, w)); },
        [](const RunConfig& c) { return std::to_string(c.synth.width); });
    add("synth.noise_sigma",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.noise_sigma = parse_double(v, w); },
        [](const RunConfig& c) { return fmt_double(c.synth.noise_sigma); });
    add("synth.seed",
        [](RunConfig& c, const std::string& v, const std::string& w) { c.synth.seed = parse_u64(v, w); },
        [](const RunConfig& c) { return std::to_string(c.synth.seed); });

    return k;
  }();
  return keys;
}

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& key) {
  int best = 1 << 30;
  std::string name;
  for (const auto& spec : key_registry()) {
    int d = edit_distance(key, spec.name);
    if (d < best) {
      best = d;
      name = spec.name;
    }
  }
  return name;
}

}  // namespace

KeepTable RunConfig::keep_table() const {
  return keep_labels.empty() ? KeepTable::lip_default() : KeepTable::with_kept_labels(keep_labels);
}

void RunConfig::validate() const {
  require(epochs >= 0, "config: epochs must be >= 0");
  require(!out_dir.empty(), "config: output directory must not be empty");
  require(sampler_p >= 2 && sampler_k >= 2, "config: sampler needs P >= 2 and K >= 2");
  require(steps_per_epoch >= 0, "config: train.steps_per_epoch must be >= 0");
  require(lr > 0.0, "config: optim.lr must be positive");
  require(decay_every >= 1, "config: optim.decay_every must be >= 1");
  require(decay_factor > 0.0, "config: optim.decay_factor must be positive");
  require(aug.crop_pad >= 0, "config: aug.crop_pad must be >= 0");
  require(aug.erase_area_min > 0.0 && aug.erase_area_max >= aug.erase_area_min,
          "config: erase area range is invalid");
  require(aug.erase_aspect_min > 0.0 && aug.erase_aspect_max >= aug.erase_aspect_min,
          "config: erase aspect range is invalid");
  loss.validate();
  synth.validate();
  keep_table();  // throws on bad label indices
  // num_classes 0 means "derive from the train split"; validate the rest of
  // the model geometry with a stand-in.
  BackboneConfig model_check = model;
  if (model_check.num_classes == 0) model_check.num_classes = 1;
  model_check.validate();
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string where = origin + ":" + std::to_string(line_no);
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(where + ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));

    const KeySpec* spec = nullptr;
    for (const auto& s : key_registry())
      if (s.name == key) {
        spec = &s;
        break;
      }
    if (!spec)
      throw ValidationError(where + ": unknown key '" + key + "' (did you mean '" +
                            nearest_key(key) + "'?)");
    spec->set(cfg, value, where);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& spec : key_registry()) out += spec.name + " = " + spec.get(cfg) + "\n";
  return out;
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config '" + path + "'");
  out << config_to_text(cfg);
  if (!out) throw IoError("failed writing config '" + path + "'");
}

}  // namespace dreid
