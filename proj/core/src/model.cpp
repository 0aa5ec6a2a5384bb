#include "drf/model.hpp"

#include <cmath>

#include "drf/errors.hpp"
#include "drf/rng.hpp"

namespace drf {

std::string to_string(GuidanceKind kind) {
  switch (kind) {
    case GuidanceKind::pav:
      return "pav";
    case GuidanceKind::self_attention:
      return "self_attention";
    case GuidanceKind::all_ones:
      return "all_ones";
    case GuidanceKind::random:
      return "random";
    case GuidanceKind::learnable:
      return "learnable";
  }
  throw ValidationError("unknown guidance kind");
}

GuidanceKind guidance_kind_from_string(const std::string& text) {
  if (text == "pav") return GuidanceKind::pav;
  if (text == "self_attention") return GuidanceKind::self_attention;
  if (text == "all_ones") return GuidanceKind::all_ones;
  if (text == "random") return GuidanceKind::random;
  if (text == "learnable") return GuidanceKind::learnable;
  throw ValidationError("unknown guidance kind \"" + text + "\"");
}

namespace {

void validate_encoder_config(const EncoderConfig& cfg) {
  if (cfg.stage_channels.empty()) {
    throw ConfigError("encoder needs at least one stage");
  }
  if (cfg.horizontal_strips < 1 || cfg.embedding_dim < 1 ||
      cfg.num_classes < 2) {
    throw ConfigError("encoder strips, embedding dim, and classes must be "
                      "positive");
  }
  if (cfg.input_channels != 2) {
    throw ConfigError("encoder consumes two-channel skeleton maps");
  }
}

std::vector<double> init_uniform(rng::Engine& eng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (double& x : v) x = rng::uniform(eng, -bound, bound);
  return v;
}

std::vector<double> init_gaussian(rng::Engine& eng, std::size_t n,
                                  double stddev) {
  std::vector<double> v(n);
  for (double& x : v) x = rng::gaussian(eng, 0.0, stddev);
  return v;
}

}  // namespace

Tensor DrfModel::add_param(const std::string& name, Shape shape,
                           std::vector<double> data, bool trainable) {
  Tensor t = trainable ? Tensor::parameter(std::move(shape), std::move(data))
                       : Tensor::from_data(std::move(shape), std::move(data));
  params_.push_back({name, t, trainable});
  return t;
}

DrfModel::DrfModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  validate_encoder_config(cfg_.encoder);
  const EncoderConfig& enc = cfg_.encoder;
  const std::size_t c_out = enc.feature_channels();
  const std::size_t strips = enc.horizontal_strips;
  const std::size_t d = enc.embedding_dim;

  auto engine_for = [&](const std::string& name) {
    return rng::make_engine(rng::derive(cfg_.init_seed, name));
  };

  std::size_t in_ch = enc.input_channels;
  for (std::size_t s = 0; s < enc.stage_channels.size(); ++s) {
    const std::size_t out_ch = enc.stage_channels[s];
    const std::string base = "encoder.stage" + std::to_string(s);
    auto eng = engine_for(base + ".kernel");
    const std::size_t fan_in = in_ch * 9;
    add_param(base + ".kernel", {out_ch, in_ch, 3, 3},
              init_gaussian(eng, out_ch * fan_in,
                            std::sqrt(2.0 / static_cast<double>(fan_in))));
    add_param(base + ".bias", {out_ch}, std::vector<double>(out_ch, 0.0));
    in_ch = out_ch;
  }

  {
    auto eng = engine_for("attention.channel.weight");
    add_param("attention.channel.weight", {c_out, kPavSize},
              init_uniform(eng, c_out * kPavSize,
                           1.0 / std::sqrt(static_cast<double>(kPavSize))));
  }
  {
    auto eng = engine_for("attention.strip.kernel");
    add_param("attention.strip.kernel", {1, 1, 3},
              init_uniform(eng, 3, 1.0 / std::sqrt(3.0)));
  }
  {
    auto eng = engine_for("attention.strip.resize");
    add_param("attention.strip.resize", {strips, kPavSize},
              init_uniform(eng, strips * kPavSize,
                           1.0 / std::sqrt(static_cast<double>(kPavSize))));
  }

  if (cfg_.guidance.kind == GuidanceKind::self_attention) {
    auto eng = engine_for("attention.project.weight");
    add_param("attention.project.weight", {kPavSize, c_out},
              init_uniform(eng, kPavSize * c_out,
                           1.0 / std::sqrt(static_cast<double>(c_out))));
  } else if (cfg_.guidance.kind == GuidanceKind::learnable) {
    add_param("attention.guidance", {kPavSize},
              std::vector<double>(kPavSize, 0.5));
  } else if (cfg_.guidance.kind == GuidanceKind::random) {
    auto eng = rng::make_engine(rng::derive(cfg_.guidance.seed,
                                            "attention.guidance"));
    std::vector<double> v(kPavSize);
    for (double& x : v) x = rng::uniform01(eng);
    add_param("attention.guidance", {kPavSize}, std::move(v),
              /*trainable=*/false);
  }

  for (std::size_t h = 0; h < strips; ++h) {
    const std::string name = "heads.strip" + std::to_string(h) + ".weight";
    auto eng = engine_for(name);
    add_param(name, {d, c_out},
              init_uniform(eng, d * c_out,
                           1.0 / std::sqrt(static_cast<double>(c_out))));
  }
  {
    auto eng = engine_for("heads.classifier.weight");
    add_param("heads.classifier.weight", {enc.num_classes, d},
              init_uniform(eng, enc.num_classes * d,
                           1.0 / std::sqrt(static_cast<double>(d))));
    add_param("heads.classifier.bias", {enc.num_classes},
              std::vector<double>(enc.num_classes, 0.0));
  }
}

Tensor DrfModel::param(const std::string& name) const {
  for (const NamedTensor& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("no parameter named \"" + name + "\"");
}

void DrfModel::zero_grad() {
  for (NamedTensor& p : params_) {
    if (p.trainable) p.tensor.zero_grad();
  }
}

DrfModel::EncodeOutput DrfModel::encode_full(const SkeletonMapSequence& maps) {
  if (maps.empty()) {
    throw ValidationError("encode requires at least one frame");
  }
  const std::size_t w = maps.front().keypoint_channel.width;
  const std::size_t h = maps.front().keypoint_channel.height;
  for (const SkeletonMap& m : maps) {
    if (m.keypoint_channel.width != w || m.keypoint_channel.height != h ||
        m.limb_channel.width != w || m.limb_channel.height != h) {
      throw ValidationError("frame canvas sizes differ within the sequence");
    }
  }

  const std::size_t frames = maps.size();
  std::vector<double> input(frames * 2 * h * w);
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy(maps[t].keypoint_channel.values.begin(),
              maps[t].keypoint_channel.values.end(),
              input.begin() + (t * 2 + 0) * h * w);
    std::copy(maps[t].limb_channel.values.begin(),
              maps[t].limb_channel.values.end(),
              input.begin() + (t * 2 + 1) * h * w);
  }
  Tensor x = Tensor::from_data({frames, 2, h, w}, std::move(input));

  for (std::size_t s = 0; s < cfg_.encoder.stage_channels.size(); ++s) {
    const std::string base = "encoder.stage" + std::to_string(s);
    const std::size_t stride = s == 0 ? 1 : 2;
    x = relu(conv2d(x, param(base + ".kernel"), param(base + ".bias"), stride,
                    1));
  }

  // Set-level pooling over frames: order and multiplicity invariant.
  Tensor pooled = reduce_max(x, 0);

  const std::size_t feat_h = pooled.shape()[1];
  const std::size_t strips = cfg_.encoder.horizontal_strips;
  if (feat_h % strips != 0) {
    throw ConfigError("feature height " + std::to_string(feat_h) +
                      " is not divisible into " + std::to_string(strips) +
                      " strips");
  }
  const std::size_t rows_per_strip = feat_h / strips;

  std::vector<Tensor> columns;
  columns.reserve(strips);
  const std::size_t c_out = cfg_.encoder.feature_channels();
  for (std::size_t b = 0; b < strips; ++b) {
    Tensor band = slice(pooled, 1, b * rows_per_strip, rows_per_strip);
    Tensor band_max = reduce_max(reduce_max(band, 2), 1);
    Tensor band_mean = reduce_mean(reduce_mean(band, 2), 1);
    columns.push_back(reshape(add(band_max, band_mean), {c_out, 1}));
  }
  return {concat(columns, 1), pooled};
}

Tensor DrfModel::encode(const SkeletonMapSequence& maps) {
  return encode_full(maps).encoded;
}

Tensor DrfModel::guidance_vector(const Pav* pav, const Tensor& encoded) {
  switch (cfg_.guidance.kind) {
    case GuidanceKind::pav: {
      if (!pav) {
        throw ValidationError("pav guidance requires an asymmetry profile");
      }
      const auto flat = flatten(pav->value);
      return Tensor::from_data({kPavSize},
                               std::vector<double>(flat.begin(), flat.end()));
    }
    case GuidanceKind::all_ones:
      return Tensor::constant({kPavSize}, 1.0);
    case GuidanceKind::random:
    case GuidanceKind::learnable:
      return param("attention.guidance");
    case GuidanceKind::self_attention: {
      Tensor pooled = reduce_mean(encoded, 1);  // [C]
      return linear(pooled, param("attention.project.weight"));
    }
  }
  throw ValidationError("unknown guidance kind");
}

DrfModel::PgaResult DrfModel::pga_from_guidance(const Tensor& guidance,
                                                const Tensor& encoded) {
  const std::size_t c_out = cfg_.encoder.feature_channels();
  const std::size_t strips = cfg_.encoder.horizontal_strips;

  Tensor channel_weights =
      sigmoid(linear(guidance, param("attention.channel.weight")));

  Tensor row = reshape(guidance, {1, kPavSize});
  Tensor conv = conv1d(row, param("attention.strip.kernel"), 1);  // [1, 24]
  Tensor strip_weights = sigmoid(
      linear(reshape(conv, {kPavSize}), param("attention.strip.resize")));

  Tensor recalibrated = encoded;
  if (cfg_.channel_branch) {
    recalibrated = mul(recalibrated, reshape(channel_weights, {c_out, 1}));
  }
  if (cfg_.spatial_branch) {
    recalibrated = mul(recalibrated, reshape(strip_weights, {1, strips}));
  }
  return {channel_weights, strip_weights, recalibrated};
}

DrfModel::PgaResult DrfModel::pga(const Pav& pav, const Tensor& encoded) {
  if (cfg_.guidance.kind != GuidanceKind::pav) {
    throw ConfigError("guidance source mismatch: model is configured for " +
                      to_string(cfg_.guidance.kind));
  }
  return pga_from_guidance(guidance_vector(&pav, encoded), encoded);
}

DrfModel::HeadsResult DrfModel::heads(const Tensor& recalibrated) {
  const std::size_t c_out = cfg_.encoder.feature_channels();
  const std::size_t strips = cfg_.encoder.horizontal_strips;
  const std::size_t d = cfg_.encoder.embedding_dim;

  std::vector<Tensor> rows;
  rows.reserve(strips);
  for (std::size_t h = 0; h < strips; ++h) {
    Tensor column = reshape(slice(recalibrated, 1, h, 1), {c_out});
    Tensor embedding =
        linear(column, param("heads.strip" + std::to_string(h) + ".weight"));
    rows.push_back(reshape(embedding, {1, d}));
  }
  Tensor embeddings = concat(rows, 0);  // [H, d]
  Tensor pooled = reduce_mean(embeddings, 0);
  Tensor logits = linear(pooled, param("heads.classifier.weight"),
                         param("heads.classifier.bias"));
  return {embeddings, logits};
}

ForwardResult DrfModel::forward(const SkeletonMapSequence& maps,
                                const Pav* pav) {
  EncodeOutput enc = encode_full(maps);
  Tensor guidance = guidance_vector(pav, enc.encoded);
  PgaResult att = pga_from_guidance(guidance, enc.encoded);
  HeadsResult out = heads(att.recalibrated);
  return {enc.encoded,     att.channel_weights, att.strip_weights,
          att.recalibrated, out.embeddings,      out.logits,
          enc.pooled_conv};
}

std::vector<std::vector<double>> effective_channel_weights(
    const DrfModel& model) {
  const EncoderConfig& enc = model.config().encoder;
  const std::size_t c_out = enc.feature_channels();
  const std::size_t strips = enc.horizontal_strips;
  const std::size_t d = enc.embedding_dim;

  const auto& cls = model.param("heads.classifier.weight").data();  // [K, d]
  std::vector<std::vector<double>> weights(
      enc.num_classes, std::vector<double>(c_out, 0.0));
  for (std::size_t h = 0; h < strips; ++h) {
    const auto& strip =
        model.param("heads.strip" + std::to_string(h) + ".weight").data();
    for (std::size_t k = 0; k < enc.num_classes; ++k) {
      for (std::size_t c = 0; c < c_out; ++c) {
        double acc = 0.0;
        for (std::size_t e = 0; e < d; ++e) {
          acc += cls[k * d + e] * strip[e * c_out + c];
        }
        weights[k][c] += acc;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(strips);
  for (auto& row : weights) {
    for (double& v : row) v *= inv;
  }
  return weights;
}

}  // namespace drf
