#pragma once

// Training and application of the three per-channel NIR -> VIS networks, plus
// their weights file.
//
// Weights file layout (little-endian):
//
//   char[4] "NVHN", u32 version, u8 channel, u8 skip, u8 slope mode,
//   u8 trained, u32 layer count, then per layer:
//   u32 in, u32 out, u32 kernel, u32 slope count,
//   out * kernel * kernel * in f32 weights ordered [out][ky][kx][in],
//   out f32 biases, slope-count f32 slopes.

#include "nirvis/blend.hpp"
#include "nirvis/color.hpp"
#include "nirvis/convnet.hpp"
#include "nirvis/matrix_io.hpp"
#include "nirvis/patch_miner.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace nirvis {

struct TrainingPair {
  Image input;   // NIR patch
  Image target;  // VIS patch in the network's channel
};

/// Input/target pairs for one channel; chroma channels need patches with chroma.
inline std::vector<TrainingPair> training_pairs(const std::vector<PatchPair>& patches, Channel channel) {
  std::vector<TrainingPair> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    if (channel != Channel::Y && !p.has_chroma())
      throw InvalidInput("patch dataset has no chroma; cannot train the " + std::string(to_string(channel)) + " network");
    const Image& target = channel == Channel::Y ? p.vis : channel == Channel::Cb ? p.vis_cb : p.vis_cr;
    out.push_back({p.nir, target});
  }
  return out;
}

struct TrainConfig {
  int epochs = 10;
  int batch = 64;
  std::uint64_t seed = 0;
  AdamConfig adam{};
  std::int64_t max_iterations = 0;  // 0 = no cap

  void validate() const {
    require(epochs >= 0, "train: epochs must be >= 0");
    require(batch >= 1, "train: batch must be positive");
    require(adam.learning_rate > 0 && adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 &&
                adam.epsilon > 0,
            "train: invalid ADAM hyperparameters");
  }
};

/// Minibatch ADAM steps on one network.
template <typename S>
class Trainer {
 public:
  Trainer(HallucinationNet<S>& net, AdamConfig adam) : net_(net), adam_(adam), grads_(net.zero_gradients()) {}

  /// One update on `batch`; returns the batch loss before the update,
  /// 0.5 * sum ||f(x) - t||^2 / |batch|.
  double step(const std::vector<const TrainingPair*>& batch) {
    require(!batch.empty(), "train: empty batch");
    grads_.set_zero();
    double loss = 0.0;
    const int n = static_cast<int>(batch.size());
    for (const auto* pair : batch) loss += accumulate_pair_gradient(net_, pair->input, pair->target, grads_, n);
    adam_.step(net_.parameter_views(), grads_.views());
    return loss;
  }

  const AdamState& adam() const { return adam_; }

 private:
  HallucinationNet<S>& net_;
  AdamState adam_;
  Gradients<S> grads_;
};

struct TrainResult {
  std::vector<double> epoch_losses;  // mean per-pair loss over each epoch
  std::int64_t iterations = 0;
};

/// Shuffled minibatch training; the shuffle stream depends only on the seed.
template <typename S>
TrainResult train(HallucinationNet<S>& net, const std::vector<TrainingPair>& pairs, const TrainConfig& config = {}) {
  config.validate();
  if (pairs.empty()) throw InvalidInput("train: empty dataset");
  TrainResult result;
  if (config.epochs == 0) return result;
  Trainer<S> trainer(net, config.adam);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      if (config.max_iterations > 0 && result.iterations >= config.max_iterations) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<const TrainingPair*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&pairs[order[i]]);
      total += trainer.step(batch) * static_cast<double>(batch.size());
      seen += batch.size();
      ++result.iterations;
    }
    if (seen == 0) break;
    result.epoch_losses.push_back(total / static_cast<double>(seen));
  }
  net.set_trained(true);
  return result;
}

inline void write_training_log(const std::string& path, const std::vector<double>& epoch_losses) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t i = 0; i < epoch_losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", epoch_losses[i]);
    out << (i + 1) << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Weights file

inline constexpr char kNetMagic[4] = {'N', 'V', 'H', 'N'};
inline constexpr std::uint32_t kNetFormatVersion = 1;

template <typename S>
void save_net(const std::string& path, const HallucinationNet<S>& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kNetMagic, 4);
  io::write_pod(out, kNetFormatVersion);
  const std::uint8_t flags[4] = {static_cast<std::uint8_t>(net.channel()), static_cast<std::uint8_t>(net.has_skip()),
                                 static_cast<std::uint8_t>(net.spec().slopes), static_cast<std::uint8_t>(net.trained())};
  out.write(reinterpret_cast<const char*>(flags), 4);
  io::write_pod(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    io::write_pod(out, static_cast<std::uint32_t>(l.in_channels));
    io::write_pod(out, static_cast<std::uint32_t>(l.out_channels));
    io::write_pod(out, static_cast<std::uint32_t>(l.kernel));
    io::write_pod(out, static_cast<std::uint32_t>(l.slopes.size()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) io::write_pod(out, static_cast<float>(l.weights(r, c)));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) io::write_pod(out, static_cast<float>(l.bias(i)));
    for (Eigen::Index i = 0; i < l.slopes.size(); ++i) io::write_pod(out, static_cast<float>(l.slopes(i)));
  }
  if (!out) throw Error("failed writing weights '" + path + "'");
}

template <typename S = float>
HallucinationNet<S> load_net(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weights file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kNetMagic, 4) != 0) throw FormatError("'" + path + "' is not a weights file");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kNetFormatVersion) throw FormatError("unsupported weights version " + std::to_string(version));
  std::uint8_t flags[4];
  in.read(reinterpret_cast<char*>(flags), 4);
  if (!in || flags[0] > 2 || flags[2] > 1) throw FormatError("weights file: bad header");
  NetSpec spec;
  spec.channel = static_cast<Channel>(flags[0]);
  spec.skip = flags[1] != 0;
  spec.slopes = static_cast<SlopeMode>(flags[2]);
  const auto count = io::read_pod<std::uint32_t>(in);
  if (count == 0 || count > 1024) throw FormatError("weights file: bad layer count");
  struct Raw {
    std::vector<float> w, b, a;
  };
  std::vector<Raw> raw;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec ls;
    ls.in_channels = static_cast<int>(io::read_pod<std::uint32_t>(in));
    ls.out_channels = static_cast<int>(io::read_pod<std::uint32_t>(in));
    ls.kernel = static_cast<int>(io::read_pod<std::uint32_t>(in));
    const auto slopes = io::read_pod<std::uint32_t>(in);
    if (ls.in_channels < 1 || ls.out_channels < 1 || ls.kernel < 1 || ls.in_channels > 65536 ||
        ls.out_channels > 65536 || ls.kernel > 255)
      throw FormatError("weights file: bad layer shape");
    ls.prelu = slopes > 0;
    spec.layers.push_back(ls);
    Raw r;
    r.w.resize(static_cast<std::size_t>(ls.out_channels) * ls.kernel * ls.kernel * ls.in_channels);
    r.b.resize(static_cast<std::size_t>(ls.out_channels));
    r.a.resize(slopes);
    for (auto* v : {&r.w, &r.b, &r.a}) {
      in.read(reinterpret_cast<char*>(v->data()), static_cast<std::streamsize>(v->size() * sizeof(float)));
      if (!in) throw FormatError("weights file truncated");
    }
    raw.push_back(std::move(r));
  }
  HallucinationNet<S> net(spec, 0);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& l = net.layers()[i];
    if (static_cast<std::size_t>(l.slopes.size()) != raw[i].a.size())
      throw FormatError("weights file: slope count does not match slope mode");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = static_cast<S>(raw[i].w[k++]);
    for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias(j) = static_cast<S>(raw[i].b[static_cast<std::size_t>(j)]);
    for (Eigen::Index j = 0; j < l.slopes.size(); ++j) l.slopes(j) = static_cast<S>(raw[i].a[static_cast<std::size_t>(j)]);
  }
  net.set_trained(flags[3] != 0);
  return net;
}

// ---------------------------------------------------------------------------
// Whole-face hallucination

struct HallucinationNets {
  HallucinationNet<float> y, cb, cr;

  static HallucinationNets fresh(std::uint64_t seed, SlopeMode slopes = SlopeMode::PerChannel) {
    return {HallucinationNet<float>(hallucination_spec(Channel::Y, slopes), seed),
            HallucinationNet<float>(hallucination_spec(Channel::Cb, slopes), seed + 1),
            HallucinationNet<float>(hallucination_spec(Channel::Cr, slopes), seed + 2)};
  }

  HallucinationNet<float>& operator[](Channel c) { return c == Channel::Y ? y : c == Channel::Cb ? cb : cr; }
  const HallucinationNet<float>& operator[](Channel c) const { return c == Channel::Y ? y : c == Channel::Cb ? cb : cr; }
};

struct HallucinatedFace {
  YCbCr ycc;
  Rgb rgb;  // clamped to [0, 1]
  std::vector<std::string> warnings;
};

/// Runs each network over the whole raster and assembles the color image.
inline HallucinatedFace hallucinate(const HallucinationNets& nets, const Image& nir) {
  require_finite(nir, "hallucinate");
  HallucinatedFace out;
  for (Channel c : {Channel::Y, Channel::Cb, Channel::Cr}) {
    require(nets[c].channel() == c, "hallucinate: network channel mismatch");
    if (!nets[c].trained()) out.warnings.push_back(std::string(to_string(c)) + " network is untrained");
  }
  out.ycc.y = nets.y.forward(nir);
  out.ycc.cb = nets.cb.forward(nir);
  out.ycc.cr = nets.cr.forward(nir);
  out.rgb = ycbcr_to_rgb(out.ycc, true);
  return out;
}

}  // namespace nirvis
