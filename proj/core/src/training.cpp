#include "drf/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "drf/errors.hpp"
#include "drf/geometry.hpp"
#include "drf/rng.hpp"
#include "drf/strings.hpp"
#include "json.hpp"

namespace drf {

using ordered_json = nlohmann::ordered_json;

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.margin > 0.0)) {
    throw ConfigError("triplet margin must be positive");
  }
  if (cfg.classes_per_batch < 2 || cfg.seqs_per_class < 2) {
    throw ConfigError("batch composition requires p >= 2 and k >= 2");
  }
  if (!(cfg.learning_rate >= 0.0) || !(cfg.momentum >= 0.0)) {
    throw ConfigError("learning rate and momentum must be non-negative");
  }
  if (cfg.epochs == 0) {
    throw ConfigError("epochs must be >= 1");
  }
  validate_render_config(cfg.render);
}

std::vector<PreparedSequence> prepare_dataset(
    const std::vector<PoseSequence>& seqs, double c_min,
    const RenderConfig& render, const MinMaxStats* stats) {
  std::vector<PreparedSequence> out;
  out.reserve(seqs.size());
  for (const PoseSequence& seq : seqs) {
    NormalizedSequence norm = normalize_sequence(seq, c_min);
    PreparedSequence prepared;
    prepared.maps = render_sequence(norm, render);
    prepared.raw_pav = sequence_raw_pav(norm, c_min);
    if (stats) {
      prepared.pav = apply_minmax(prepared.raw_pav, *stats);
    }
    prepared.label = static_cast<int>(seq.label);
    prepared.subject_id = seq.subject_id;
    out.push_back(std::move(prepared));
  }
  return out;
}

void apply_stats(std::vector<PreparedSequence>& prepared,
                 const MinMaxStats& stats) {
  for (PreparedSequence& p : prepared) {
    p.pav = apply_minmax(p.raw_pav, stats);
  }
}

Tensor triplet_loss(const std::vector<Tensor>& embeddings,
                    const std::vector<int>& labels, double margin,
                    bool* had_triplet) {
  if (embeddings.empty() || embeddings.size() != labels.size()) {
    throw ShapeError("triplet_loss: embeddings and labels must align");
  }
  const std::size_t batch = embeddings.size();
  const Shape& first = embeddings.front().shape();
  if (first.size() != 2) {
    throw ShapeError("triplet_loss: embeddings must be [strips, dim], got " +
                     shape_to_string(first));
  }
  const std::size_t strips = first[0];
  const std::size_t dim = first[1];

  struct Triple {
    std::size_t a, p, n;
  };
  std::vector<Triple> triples;
  for (std::size_t a = 0; a < batch; ++a) {
    for (std::size_t p = 0; p < batch; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < batch; ++n) {
        if (labels[n] == labels[a]) continue;
        triples.push_back({a, p, n});
      }
    }
  }
  if (had_triplet) *had_triplet = !triples.empty();
  if (triples.empty()) {
    return Tensor::scalar(0.0);
  }

  std::vector<Tensor> stacked_rows;
  stacked_rows.reserve(batch);
  for (const Tensor& e : embeddings) {
    if (e.shape() != first) {
      throw ShapeError("triplet_loss: embedding shapes differ: " +
                       shape_to_string(first) + " vs " +
                       shape_to_string(e.shape()));
    }
    stacked_rows.push_back(reshape(e, {1, strips, dim}));
  }
  Tensor stacked = concat(stacked_rows, 0);  // [B, H, d]

  Tensor total;
  bool have_total = false;
  for (std::size_t h = 0; h < strips; ++h) {
    Tensor strip = reshape(slice(stacked, 1, h, 1), {batch, dim});
    Tensor dist = pairwise_l2(strip);
    for (const Triple& t : triples) {
      Tensor gap = sub(select_scalar(dist, t.a * batch + t.p),
                       select_scalar(dist, t.a * batch + t.n));
      Tensor term = relu(add_scalar(gap, margin));
      total = have_total ? add(total, term) : term;
      have_total = true;
    }
  }
  const double denom =
      static_cast<double>(strips) * static_cast<double>(triples.size());
  return scale(total, 1.0 / denom);
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (label < 0) {
    throw ShapeError("cross_entropy: negative label");
  }
  return softmax_cross_entropy(logits, static_cast<std::size_t>(label));
}

std::string epoch_log_to_csv(const std::vector<EpochStats>& log) {
  std::string out = "epoch,l_ce,l_triplet,train_acc\n";
  for (const EpochStats& e : log) {
    out += std::to_string(e.epoch);
    out += ',';
    out += format_double(e.ce);
    out += ',';
    out += format_double(e.triplet);
    out += ',';
    out += format_double(e.train_accuracy);
    out += '\n';
  }
  return out;
}

namespace {

int argmax3(const std::vector<double>& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(i);
    }
  }
  return best;
}

double training_accuracy(DrfModel& model,
                         std::vector<PreparedSequence>& prepared) {
  NoGradGuard guard;
  std::size_t correct = 0;
  for (PreparedSequence& p : prepared) {
    ForwardResult r = model.forward(p.maps, &p.pav);
    if (argmax3(r.logits.data()) == p.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(prepared.size());
}

}  // namespace

TrainResult train(const std::vector<PoseSequence>& dataset,
                  const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (dataset.empty()) {
    throw ValidationError("training dataset is empty");
  }

  std::vector<PreparedSequence> prepared =
      prepare_dataset(dataset, cfg.confidence_min, cfg.render);

  std::vector<std::vector<std::size_t>> by_class(3);
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    by_class[static_cast<std::size_t>(prepared[i].label)].push_back(i);
  }
  std::vector<std::size_t> present_classes;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty()) present_classes.push_back(c);
  }
  if (present_classes.size() < 2) {
    throw ValidationError("training requires at least two classes, found " +
                          std::to_string(present_classes.size()));
  }

  std::vector<RawPav> raws;
  raws.reserve(prepared.size());
  for (const PreparedSequence& p : prepared) raws.push_back(p.raw_pav);
  MinMaxStats stats = fit_minmax(raws, "train");
  apply_stats(prepared, stats);

  ModelConfig mc{cfg.encoder, cfg.guidance, cfg.channel_branch,
                 cfg.spatial_branch, cfg.seed};
  DrfModel model(mc);

  std::vector<std::vector<double>> velocity;
  for (const NamedTensor& p : model.parameters()) {
    velocity.emplace_back(p.trainable ? p.tensor.size() : 0, 0.0);
  }

  rng::Engine sampler(rng::derive(cfg.seed, "batch.sampler"));
  const std::size_t classes_per_batch =
      std::min(cfg.classes_per_batch, present_classes.size());
  const std::size_t batch_size = classes_per_batch * cfg.seqs_per_class;
  const std::size_t steps_per_epoch =
      (prepared.size() + batch_size - 1) / batch_size;

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double ce_sum = 0.0;
    double triplet_sum = 0.0;

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::size_t> class_order = present_classes;
      std::shuffle(class_order.begin(), class_order.end(), sampler);

      std::vector<std::size_t> batch;
      for (std::size_t ci = 0; ci < classes_per_batch; ++ci) {
        std::vector<std::size_t> pool = by_class[class_order[ci]];
        std::shuffle(pool.begin(), pool.end(), sampler);
        for (std::size_t j = 0; j < cfg.seqs_per_class; ++j) {
          batch.push_back(pool[j % pool.size()]);
        }
      }

      std::vector<Tensor> embeddings;
      std::vector<int> labels;
      Tensor ce_total;
      bool have_ce = false;
      for (std::size_t idx : batch) {
        PreparedSequence& p = prepared[idx];
        ForwardResult r = model.forward(p.maps, &p.pav);
        Tensor ce = cross_entropy(r.logits, p.label);
        ce_total = have_ce ? add(ce_total, ce) : ce;
        have_ce = true;
        embeddings.push_back(r.embeddings);
        labels.push_back(p.label);
      }
      Tensor ce_mean = scale(ce_total, 1.0 / static_cast<double>(batch.size()));
      Tensor triplet = triplet_loss(embeddings, labels, cfg.margin);
      Tensor total = add(ce_mean, triplet);

      if (!std::isfinite(total.value())) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch));
      }

      model.zero_grad();
      backward(total);

      auto& params = model.parameters();
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        if (!params[pi].trainable) continue;
        auto& theta = params[pi].tensor.mutable_data();
        const auto& grad = params[pi].tensor.grad();
        auto& vel = velocity[pi];
        for (std::size_t i = 0; i < theta.size(); ++i) {
          vel[i] = cfg.momentum * vel[i] + grad[i];
          theta[i] -= cfg.learning_rate * vel[i];
        }
      }

      ce_sum += ce_mean.value();
      triplet_sum += triplet.value();
    }

    EpochStats stats_row;
    stats_row.epoch = epoch;
    stats_row.ce = ce_sum / static_cast<double>(steps_per_epoch);
    stats_row.triplet = triplet_sum / static_cast<double>(steps_per_epoch);
    stats_row.train_accuracy = training_accuracy(model, prepared);
    result.log.push_back(stats_row);
  }

  result.checkpoint = checkpoint_from_model(
      model, cfg, stats, cfg.epochs,
      result.log.empty() ? 0.0 : result.log.back().train_accuracy);
  return result;
}

// ---- checkpoint ----

Checkpoint checkpoint_from_model(const DrfModel& model, const TrainConfig& cfg,
                                 const MinMaxStats& stats,
                                 std::size_t epochs_trained,
                                 double final_train_accuracy) {
  Checkpoint ckpt;
  ckpt.encoder = cfg.encoder;
  ckpt.render = cfg.render;
  ckpt.guidance = cfg.guidance;
  ckpt.channel_branch = cfg.channel_branch;
  ckpt.spatial_branch = cfg.spatial_branch;
  ckpt.confidence_min = cfg.confidence_min;
  ckpt.seed = cfg.seed;
  ckpt.epochs_trained = epochs_trained;
  ckpt.final_train_accuracy = final_train_accuracy;
  ckpt.stats = stats;
  for (const NamedTensor& p : model.parameters()) {
    ckpt.arrays.push_back(
        {p.name, p.tensor.shape(), p.tensor.data(), p.trainable});
  }
  return ckpt;
}

DrfModel model_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig mc{ckpt.encoder, ckpt.guidance, ckpt.channel_branch,
                 ckpt.spatial_branch, ckpt.seed};
  DrfModel model(mc);
  auto& params = model.parameters();
  if (params.size() != ckpt.arrays.size()) {
    throw CheckpointError("checkpoint carries " +
                          std::to_string(ckpt.arrays.size()) +
                          " arrays but the model defines " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Checkpoint::Array& arr = ckpt.arrays[i];
    if (params[i].name != arr.name) {
      throw CheckpointError("parameter order mismatch: expected " +
                            params[i].name + ", found " + arr.name);
    }
    if (params[i].tensor.shape() != arr.shape ||
        params[i].tensor.size() != arr.data.size()) {
      throw CheckpointError("parameter " + arr.name + " has shape " +
                            shape_to_string(arr.shape) +
                            " in the checkpoint but " +
                            shape_to_string(params[i].tensor.shape()) +
                            " in the model");
    }
    params[i].tensor.mutable_data() = arr.data;
  }
  return model;
}

namespace {

constexpr char kMagic[8] = {'D', 'R', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  void take(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointTruncatedError(std::string("checkpoint truncated in ") +
                                     what);
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    take(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint8_t b[8];
    take(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    take(s.data(), n, what);
    return s;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

ordered_json encoder_to_json(const EncoderConfig& enc) {
  ordered_json j;
  j["stage_channels"] = enc.stage_channels;
  j["horizontal_strips"] = enc.horizontal_strips;
  j["embedding_dim"] = enc.embedding_dim;
  j["input_channels"] = enc.input_channels;
  j["num_classes"] = enc.num_classes;
  return j;
}

EncoderConfig encoder_from_json(const nlohmann::json& j) {
  EncoderConfig enc;
  enc.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  enc.horizontal_strips = j.at("horizontal_strips").get<std::size_t>();
  enc.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  enc.input_channels = j.at("input_channels").get<std::size_t>();
  enc.num_classes = j.at("num_classes").get<std::size_t>();
  return enc;
}

ordered_json render_to_json(const RenderConfig& r) {
  ordered_json j;
  j["width"] = r.width;
  j["height"] = r.height;
  j["sigma"] = r.sigma;
  j["vertical_span_fraction"] = r.vertical_span_fraction;
  j["origin_row_fraction"] = r.origin_row_fraction;
  j["normalized_height"] = r.normalized_height;
  j["confidence_min"] = r.confidence_min;
  return j;
}

RenderConfig render_from_json(const nlohmann::json& j) {
  RenderConfig r;
  r.width = j.at("width").get<std::size_t>();
  r.height = j.at("height").get<std::size_t>();
  r.sigma = j.at("sigma").get<double>();
  r.vertical_span_fraction = j.at("vertical_span_fraction").get<double>();
  r.origin_row_fraction = j.at("origin_row_fraction").get<double>();
  r.normalized_height = j.at("normalized_height").get<double>();
  r.confidence_min = j.at("confidence_min").get<double>();
  return r;
}

ordered_json pav_matrix_to_json(const PavMatrix& m) {
  auto rows = ordered_json::array();
  for (const auto& row : m) {
    rows.push_back(ordered_json::array({row[0], row[1], row[2]}));
  }
  return rows;
}

PavMatrix pav_matrix_from_json(const nlohmann::json& j) {
  PavMatrix m{};
  for (std::size_t p = 0; p < kPairCount; ++p) {
    for (std::size_t c = 0; c < kMetricCount; ++c) {
      m[p][c] = j.at(p).at(c).get<double>();
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path) {
  ordered_json meta;
  meta["encoder"] = encoder_to_json(ckpt.encoder);
  meta["render"] = render_to_json(ckpt.render);
  meta["guidance"] = {{"kind", to_string(ckpt.guidance.kind)},
                      {"seed", ckpt.guidance.seed}};
  meta["channel_branch"] = ckpt.channel_branch;
  meta["spatial_branch"] = ckpt.spatial_branch;
  meta["confidence_min"] = ckpt.confidence_min;
  meta["seed"] = ckpt.seed;
  meta["epochs_trained"] = ckpt.epochs_trained;
  meta["final_train_accuracy"] = ckpt.final_train_accuracy;
  meta["stats"] = {{"fit_split", ckpt.stats.fit_split},
                   {"min", pav_matrix_to_json(ckpt.stats.min)},
                   {"max", pav_matrix_to_json(ckpt.stats.max)}};

  auto arrays = ordered_json::array();
  std::uint64_t offset = 0;
  for (const Checkpoint::Array& arr : ckpt.arrays) {
    ordered_json a;
    a["name"] = arr.name;
    a["shape"] = arr.shape;
    a["trainable"] = arr.trainable;
    a["offset"] = offset;
    a["count"] = arr.data.size();
    arrays.push_back(std::move(a));
    offset += arr.data.size();
  }
  meta["arrays"] = std::move(arrays);

  const std::string meta_text = meta.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u64(out, meta_text.size());
  out += meta_text;
  put_u64(out, offset * sizeof(double));
  for (const Checkpoint::Array& arr : ckpt.arrays) {
    for (double v : arr.data) put_f64(out, v);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  file.flush();
  if (!file) {
    throw IoError("write failed: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(file)),
                    std::istreambuf_iterator<char>());
  Reader reader(std::move(bytes));

  char magic[8];
  reader.take(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  const std::uint32_t version = reader.u32("version");
  if (version != kVersion) {
    throw CheckpointVersionError("checkpoint version " +
                                 std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kVersion) + ")");
  }
  const std::uint64_t meta_len = reader.u64("metadata length");
  const std::string meta_text =
      reader.str(static_cast<std::size_t>(meta_len), "metadata");
  nlohmann::json meta = nlohmann::json::parse(meta_text, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) {
    throw CheckpointError("checkpoint metadata is not valid JSON");
  }

  Checkpoint ckpt;
  try {
    ckpt.encoder = encoder_from_json(meta.at("encoder"));
    ckpt.render = render_from_json(meta.at("render"));
    ckpt.guidance.kind =
        guidance_kind_from_string(meta.at("guidance").at("kind"));
    ckpt.guidance.seed = meta.at("guidance").at("seed").get<std::uint64_t>();
    ckpt.channel_branch = meta.at("channel_branch").get<bool>();
    ckpt.spatial_branch = meta.at("spatial_branch").get<bool>();
    ckpt.confidence_min = meta.at("confidence_min").get<double>();
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.epochs_trained = meta.at("epochs_trained").get<std::size_t>();
    ckpt.final_train_accuracy =
        meta.at("final_train_accuracy").get<double>();
    ckpt.stats.fit_split = meta.at("stats").at("fit_split").get<std::string>();
    ckpt.stats.min = pav_matrix_from_json(meta.at("stats").at("min"));
    ckpt.stats.max = pav_matrix_from_json(meta.at("stats").at("max"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata incomplete: ") +
                          e.what());
  }

  const std::uint64_t blob_len = reader.u64("blob length");
  std::uint64_t expected = 0;
  for (const auto& a : meta.at("arrays")) {
    Checkpoint::Array arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<Shape>();
    arr.trainable = a.at("trainable").get<bool>();
    const std::size_t count = a.at("count").get<std::size_t>();
    arr.data.resize(count);
    expected += count;
    ckpt.arrays.push_back(std::move(arr));
  }
  if (expected * sizeof(double) != blob_len) {
    throw CheckpointError("checkpoint blob length disagrees with the index");
  }
  for (Checkpoint::Array& arr : ckpt.arrays) {
    for (double& v : arr.data) v = reader.f64(arr.name.c_str());
  }
  if (!reader.exhausted()) {
    throw CheckpointError("trailing bytes after checkpoint blobs");
  }
  return ckpt;
}

}  // namespace drf
