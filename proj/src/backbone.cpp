#include "dreid/backbone.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "dreid/cdm.hpp"
#include "dreid/common.hpp"

namespace dreid {

namespace {

// Striding stages downsample with a 4x4 pad-1 conv: on even extents this
// halves exactly, which a 3x3 stride-2 conv cannot do under the exact
// divisibility contract of conv2d. Stride-1 stages use 3x3 throughout.
void stage_conv1_geometry(int stride, int& k, int& p) {
  if (stride == 2) {
    k = 4;
    p = 1;
  } else {
    k = 3;
    p = 1;
  }
}

int conv_out(int in, int pad, int k, int stride) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace

std::pair<int, int> BackboneConfig::stage_output_hw(int stage_index) const {
  int h = conv_out(input_h, stem_kernel / 2, stem_kernel, stem_stride);
  int w = conv_out(input_w, stem_kernel / 2, stem_kernel, stem_stride);
  for (int i = 0; i <= stage_index; ++i) {
    int k, p;
    stage_conv1_geometry(stages[static_cast<std::size_t>(i)].stride, k, p);
    h = conv_out(h, p, k, stages[static_cast<std::size_t>(i)].stride);
    w = conv_out(w, p, k, stages[static_cast<std::size_t>(i)].stride);
  }
  return {h, w};
}

int BackboneConfig::mask_stem_stride() const { return stem_stride * stages[0].stride; }

void BackboneConfig::validate() const {
  require(input_h >= 1 && input_w >= 1, "backbone: input size must be positive");
  require(stem_kernel % 2 == 1, "backbone: stem kernel must be odd");
  require(stem_stride == 1, "backbone: stem stride must be 1");
  require(stem_channels == stages[0].channels,
          "backbone: stem channels must match stage-1 channels for mask fusion");
  require(stages[3].stride == 1, "backbone: stage-4 stride must be 1");
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = stages[i];
    require(s.blocks == 1, "backbone: stage " + std::to_string(i + 1) + " block count must be 1");
    require(s.stride == 1 || s.stride == 2,
            "backbone: stage " + std::to_string(i + 1) + " stride must be 1 or 2");
    require(s.channels >= 1, "backbone: stage " + std::to_string(i + 1) + " channels must be >= 1");
    if (i > 0)
      require(s.channels >= stages[i - 1].channels,
              "backbone: stage channel counts must be nondecreasing");
    if (s.stride == 2) {
      auto [ph, pw] = i == 0 ? std::pair<int, int>{conv_out(input_h, stem_kernel / 2, stem_kernel, stem_stride),
                                                   conv_out(input_w, stem_kernel / 2, stem_kernel, stem_stride)}
                             : stage_output_hw(static_cast<int>(i) - 1);
      require(ph % 2 == 0 && pw % 2 == 0, "backbone: stage " + std::to_string(i + 1) +
                                              " input " + std::to_string(ph) + "x" +
                                              std::to_string(pw) + " cannot be halved exactly");
      require(ph >= 2 && pw >= 2,
              "backbone: stage " + std::to_string(i + 1) + " input too small to downsample");
    }
  }
  require(gca_kernel_size % 2 == 1, "backbone: GCA kernel size must be odd");
  require(num_classes >= 1, "backbone: class count must be >= 1");
}

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, CounterRng rng) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  double std = std::sqrt(2.0 / fan_in);
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = std * rng.gaussian();
  return Tensor(std::move(shape), std::move(data));
}

ModelParams make_zero_params(const BackboneConfig& cfg) {
  ModelParams p;
  int k = cfg.stem_kernel;
  p.stem_w = Tensor::zeros({cfg.stem_channels, 3, k, k});
  p.stem_b = Tensor::zeros({cfg.stem_channels});
  int mk, mp;
  stage_conv1_geometry(cfg.stages[0].stride, mk, mp);
  p.mask_w = Tensor::zeros({cfg.stem_channels, 1, mk, mk});
  p.mask_b = Tensor::zeros({cfg.stem_channels});
  int in_ch = cfg.stem_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = cfg.stages[i];
    int k1, p1;
    stage_conv1_geometry(s.stride, k1, p1);
    p.stages[i].conv1_w = Tensor::zeros({s.channels, in_ch, k1, k1});
    p.stages[i].conv1_b = Tensor::zeros({s.channels});
    p.stages[i].conv2_w = Tensor::zeros({s.channels, s.channels, 3, 3});
    p.stages[i].conv2_b = Tensor::zeros({s.channels});
    p.stages[i].gca_kernel = Tensor::zeros({cfg.gca_kernel_size});
    in_ch = s.channels;
  }
  p.fc_w = Tensor::zeros({cfg.num_classes, cfg.embed_dim()});
  p.fc_b = Tensor::zeros({cfg.num_classes});
  return p;
}

}  // namespace

ModelParams init_params(const BackboneConfig& cfg, CounterRng rng) {
  cfg.validate();
  ModelParams p = make_zero_params(cfg);
  std::uint64_t idx = 0;
  for_each_param(p, [&](const std::string& name, Tensor& t) {
    CounterRng stream = rng.split(RngStream::kInit, idx++);
    if (name.ends_with(".b")) return;  // biases stay zero
    if (name.ends_with("gca.kernel")) {
      double v = 1.0 / t.dim(0);
      for (auto& e : t.data()) e = v;
      return;
    }
    int fan_in;
    if (t.ndim() == 4)
      fan_in = t.dim(1) * t.dim(2) * t.dim(3);
    else
      fan_in = t.dim(1);
    t = he_normal(t.shape(), fan_in, stream);
  });
  return p;
}

void for_each_param(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("stem.w", p.stem_w);
  fn("stem.b", p.stem_b);
  fn("mask_stem.w", p.mask_w);
  fn("mask_stem.b", p.mask_b);
  for (std::size_t i = 0; i < 4; ++i) {
    std::string s = "stage" + std::to_string(i + 1) + ".";
    fn(s + "conv1.w", p.stages[i].conv1_w);
    fn(s + "conv1.b", p.stages[i].conv1_b);
    fn(s + "conv2.w", p.stages[i].conv2_w);
    fn(s + "conv2.b", p.stages[i].conv2_b);
    fn(s + "gca.kernel", p.stages[i].gca_kernel);
  }
  fn("fc.w", p.fc_w);
  fn("fc.b", p.fc_b);
}

void for_each_param(const ModelParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
  for_each_param(const_cast<ModelParams&>(p),
                 [&](const std::string& name, Tensor& t) { fn(name, t); });
}

Tensor pool_head(Tape& tape, const Tensor& f) {
  Tensor mx = ops::global_max_pool(tape, f);
  Tensor av = ops::global_avg_pool(tape, f);
  return ops::scale(tape, ops::add(tape, mx, av), 0.5);
}

Tensor classifier(Tape& tape, const Tensor& embedding, const Tensor& fc_w, const Tensor& fc_b) {
  return ops::linear(tape, embedding, fc_w, fc_b);
}

ForwardResult forward(Tape& tape, const Tensor& images, const Tensor* masks,
                      const ModelParams& params, const BackboneConfig& cfg) {
  require(images.ndim() == 4 && images.dim(1) == 3, "forward: input must be [N,3,H,W], got shape " +
                                                        shape_str(images.shape()));
  require(images.dim(2) == cfg.input_h && images.dim(3) == cfg.input_w,
          "forward: input " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
              " does not match the configured " + std::to_string(cfg.input_h) + "x" +
              std::to_string(cfg.input_w));
  if (masks) {
    require(masks->ndim() == 4 && masks->dim(1) == 1 && masks->dim(0) == images.dim(0) &&
                masks->dim(2) == cfg.input_h && masks->dim(3) == cfg.input_w,
            "forward: mask batch must be [N,1,H,W] at the input resolution, got shape " +
                shape_str(masks->shape()));
  }

  // Center pixel values around zero before the stem; [0,1] inputs otherwise
  // keep first-layer gradients strongly correlated and slow down training
  // from scratch.
  Tensor centered = ops::sub(tape, images, Tensor::full(images.shape(), 0.5));
  Tensor x = ops::relu(tape, ops::conv2d(tape, centered, params.stem_w, params.stem_b,
                                         cfg.stem_stride, cfg.stem_kernel / 2));
  std::pair<int, int> stage3_hw{0, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& sp = params.stages[i];
    int k1, p1;
    stage_conv1_geometry(cfg.stages[i].stride, k1, p1);
    x = ops::relu(tape, ops::conv2d(tape, x, sp.conv1_w, sp.conv1_b, cfg.stages[i].stride, p1));
    x = ops::relu(tape, ops::conv2d(tape, x, sp.conv2_w, sp.conv2_b, 1, 1));
    if (cfg.use_gca) x = gca_block(tape, x, GcaParams{sp.gca_kernel, cfg.gca_modes[i]});
    if (i == 0 && masks) {
      auto [h1, w1] = cfg.stage_output_hw(0);
      Tensor mf = mask_stem(tape, *masks, params.mask_w, params.mask_b, cfg.mask_stem_stride(),
                            h1, w1);
      x = fuse(tape, x, mf);
    }
    if (i == 2) stage3_hw = {x.dim(2), x.dim(3)};
  }
  require(x.dim(2) == stage3_hw.first && x.dim(3) == stage3_hw.second,
          "forward: stage4 spatial size must equal stage3 (stride-1 policy)");

  ForwardResult out;
  out.stage4 = x;
  out.embedding = pool_head(tape, x);
  out.logits = classifier(tape, out.embedding, params.fc_w, params.fc_b);
  return out;
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& buf, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(buf, v);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  std::uint32_t u32() {
    check(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    check(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    check(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void check(std::size_t n) {
    if (pos + n > buf.size()) throw IoError("checkpoint '" + path + "' is truncated");
  }
};

constexpr char kCkptMagic[4] = {'D', 'R', 'C', 'P'};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::string manifest, payload;
  std::uint32_t count = 0;
  for_each_param(params, [&](const std::string& name, const Tensor& t) {
    ++count;
    put_u32(manifest, static_cast<std::uint32_t>(name.size()));
    manifest += name;
    put_u32(manifest, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) put_u32(manifest, static_cast<std::uint32_t>(t.dim(i)));
    put_u64(manifest, payload.size());
    for (double d : t.data()) put_f64(payload, d);
  });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kCkptMagic, 4);
  std::string head;
  put_u32(head, 1);  // version
  put_u32(head, count);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

ModelParams load_checkpoint(const std::string& path, const BackboneConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};
  if (r.str(4) != std::string(kCkptMagic, 4)) throw IoError("'" + path + "' is not a checkpoint file");
  std::uint32_t version = r.u32();
  if (version != 1) throw IoError("checkpoint '" + path + "': unsupported version");
  std::uint32_t count = r.u32();

  struct Entry {
    std::vector<int> shape;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    std::uint32_t ndim = r.u32();
    Entry e;
    for (std::uint32_t j = 0; j < ndim; ++j) e.shape.push_back(static_cast<int>(r.u32()));
    e.offset = r.u64();
    entries[name] = e;
  }
  std::size_t payload_start = r.pos;

  ModelParams p = make_zero_params(cfg);
  for_each_param(p, [&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw ValidationError("checkpoint '" + path + "' is missing tensor '" + name + "'");
    require(it->second.shape == t.shape(),
            "checkpoint '" + path + "': tensor '" + name + "' has shape " +
                shape_str(it->second.shape) + ", config expects " + shape_str(t.shape()));
    Reader pr{buf, payload_start + it->second.offset, path};
    for (auto& d : t.data()) {
      std::uint64_t bits = pr.u64();
      std::memcpy(&d, &bits, 8);
    }
    entries.erase(it);
  });
  if (!entries.empty())
    throw ValidationError("checkpoint '" + path + "' has unexpected tensor '" +
                          entries.begin()->first + "'");
  return p;
}

}  // namespace dreid
