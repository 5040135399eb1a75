#include "ddp/model.hpp"

#include <cmath>
#include <string>

namespace ddp {

const char* to_string(Task task) { return task == Task::segmentation ? "segmentation" : "depth"; }

Task task_from_string(const std::string& name) {
  if (name == "segmentation") return Task::segmentation;
  if (name == "depth") return Task::depth;
  throw ValidationError("unknown task '" + name + "' (expected segmentation|depth)");
}

void ModelConfig::validate() const {
  codec.validate();
  std::string bad;
  if (task == Task::segmentation && !codec.discrete()) bad += " encoding (segmentation needs a discrete codec)";
  if (task == Task::depth && codec.discrete()) bad += " encoding (depth needs the continuous codec)";
  if (encoder_width < 1) bad += " encoder_width";
  if (fpn_channels < 1) bad += " fpn_channels";
  if (cond_channels < 1) bad += " cond_channels";
  if (decoder.depth < 1) bad += " decoder_depth";
  if (decoder.width < 1) bad += " decoder_width";
  if (decoder.time_embed_dim < 2 || decoder.time_embed_dim % 2 != 0) bad += " time_embed_dim";
  if (decoder.mlp_ratio < 1) bad += " mlp_ratio";
  if (!bad.empty()) throw ValidationError("invalid model config:" + bad);
}

namespace {

std::array<int, Model::kLevels> level_widths(int w) { return {w, 2 * w, 3 * w, 3 * w}; }

}  // namespace

Model::Model(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto widths = level_widths(config_.encoder_width);
  const int w = config_.encoder_width;

  convs_.push_back(nn::Conv3x3::create(params_, "encoder.stem0", 3, w, 2, rng));
  convs_.push_back(nn::Conv3x3::create(params_, "encoder.stem1", w, w, 2, rng));
  convs_.push_back(nn::Conv3x3::create(params_, "encoder.refine", w, w, 1, rng));
  for (int k = 1; k < kLevels; ++k)
    convs_.push_back(
        nn::Conv3x3::create(params_, "encoder.down" + std::to_string(k), widths[k - 1], widths[k], 2, rng));
  for (int k = 0; k < kLevels; ++k)
    laterals_[k] =
        nn::Pointwise::create(params_, "encoder.lateral" + std::to_string(k), widths[k], config_.fpn_channels, rng);
  fuse_ = nn::Conv3x3::create(params_, "encoder.fuse", config_.fpn_channels, config_.fpn_channels, 1, rng);
  condition_proj_ =
      nn::Pointwise::create(params_, "encoder.condition", config_.fpn_channels, config_.cond_channels, rng);

  const auto& dc = config_.decoder;
  input_proj_ = nn::Pointwise::create(params_, "decoder.input", config_.map_channels() + config_.cond_channels,
                                      dc.width, rng);
  for (int l = 0; l < dc.depth; ++l) {
    const std::string name = "decoder.block" + std::to_string(l);
    Block b;
    b.time_proj = nn::Pointwise::create(params_, name + ".time", dc.time_embed_dim, dc.width, rng);
    b.mix = nn::Depthwise3x3::create(params_, name + ".mix", dc.width, rng);
    b.norm = nn::ChannelNorm::create(params_, name + ".norm", dc.width);
    b.expand = nn::Pointwise::create(params_, name + ".expand", dc.width, dc.width * dc.mlp_ratio, rng);
    b.contract = nn::Pointwise::create(params_, name + ".contract", dc.width * dc.mlp_ratio, dc.width, rng);
    blocks_.push_back(b);
  }
  final_norm_ = nn::ChannelNorm::create(params_, "decoder.final_norm", dc.width);
  head_ = nn::Pointwise::create(params_, "decoder.head", dc.width, config_.head_channels(), rng, 0.0);

  if (config_.codec.strategy == Encoding::embedding)
    embedding_ = params_.add("codec.embedding",
                             Codec::random_table(config_.codec.num_classes, config_.codec.embed_dim, rng));
}

Model::Model(const Model& other)
    : config_(other.config_),
      params_(other.params_),
      convs_(other.convs_),
      laterals_(other.laterals_),
      fuse_(other.fuse_),
      condition_proj_(other.condition_proj_),
      input_proj_(other.input_proj_),
      blocks_(other.blocks_),
      final_norm_(other.final_norm_),
      head_(other.head_),
      embedding_(other.embedding_) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
    convs_ = other.convs_;
    laterals_ = other.laterals_;
    fuse_ = other.fuse_;
    condition_proj_ = other.condition_proj_;
    input_proj_ = other.input_proj_;
    blocks_ = other.blocks_;
    final_norm_ = other.final_norm_;
    head_ = other.head_;
    embedding_ = other.embedding_;
    reset_counters();
  }
  return *this;
}

void Model::reset_counters() const {
  counters_.encode_calls = 0;
  counters_.decode_calls = 0;
}

Codec Model::codec() const {
  if (embedding_ >= 0) return Codec(config_.codec, params_[embedding_]);
  return Codec(config_.codec);
}

Feature Model::encode_image(const Feature& image) const {
  require(image.channels() == 3, "encode_image: expected a 3-channel image, got " + std::to_string(image.channels()));
  require(image.batch == 1, "encode_image: expected a single image");
  ++counters_.encode_calls;
  return encoder_forward(reflect_pad_to_multiple(image, 4), nullptr);
}

Feature Model::decode_map(const Feature& noisy, const Feature& condition, double t) const {
  require(noisy.height == condition.height && noisy.width == condition.width && noisy.batch == condition.batch,
          "decode_map: noisy map and condition differ in spatial size");
  ++counters_.decode_calls;
  std::vector<double> times(static_cast<size_t>(noisy.batch), t);
  return activate(decoder_forward(noisy, condition, times, nullptr));
}

Feature Model::activate(const Feature& raw) const {
  if (config_.task == Task::segmentation) return raw;
  Feature out = raw;
  out.data = raw.data.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return out;
}

// --- encoder -----------------------------------------------------------------

Feature Model::encoder_forward(const Feature& images, EncoderCache* cache) const {
  require(images.channels() == 3, "encoder: expected 3 input channels");
  require(images.height % 4 == 0 && images.width % 4 == 0, "encoder: input dims must be multiples of 4");
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.input = images;
  c.cols.assign(convs_.size(), Matrix());
  c.pre.assign(convs_.size(), Feature());

  Feature x = images;
  for (size_t i = 0; i < convs_.size(); ++i) {
    c.pre[i] = convs_[i].forward(params_, x, c.cols[i]);
    x = c.pre[i];
    x.data = nn::gelu(c.pre[i].data);
    if (i >= 2) c.level[i - 2] = x;
  }

  for (int k = kLevels - 1; k >= 0; --k) {
    Feature p = c.level[k];
    p.data = laterals_[k].forward(params_, c.level[k].data);
    if (k + 1 < kLevels) p.data += nn::upsample2x(c.lateral_sum[k + 1], p.height, p.width).data;
    c.lateral_sum[k] = std::move(p);
  }

  c.fused_pre = fuse_.forward(params_, c.lateral_sum[0], c.fused_cols);
  c.fused_act = nn::gelu(c.fused_pre.data);
  Feature cond = c.fused_pre;
  cond.data = condition_proj_.forward(params_, c.fused_act);
  return cond;
}

void Model::encoder_backward(const EncoderCache& c, const Feature& d_condition, nn::Gradients& g) const {
  Feature d = c.fused_pre;
  d.data = condition_proj_.backward(params_, c.fused_act, d_condition.data, g);
  d.data = nn::gelu_backward(c.fused_pre.data, d.data);
  Feature dp = fuse_.backward(params_, c.lateral_sum[0], c.fused_cols, d, g);

  std::array<Feature, kLevels> d_level;
  for (int k = 0; k < kLevels; ++k) {
    d_level[k] = c.level[k];
    d_level[k].data = laterals_[k].backward(params_, c.level[k].data, dp.data, g);
    if (k + 1 < kLevels) dp = nn::upsample2x_backward(dp, c.lateral_sum[k + 1].height, c.lateral_sum[k + 1].width);
  }

  Feature dx;
  for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
    Feature dz = c.pre[i];
    if (i >= 2) {
      if (i + 1 < static_cast<int>(convs_.size())) d_level[i - 2].data += dx.data;
      dz.data = nn::gelu_backward(c.pre[i].data, d_level[i - 2].data);
    } else {
      dz.data = nn::gelu_backward(c.pre[i].data, dx.data);
    }
    const Feature& input = i == 0 ? c.input : c.pre[i - 1];
    dx = convs_[i].backward(params_, input, c.cols[i], dz, g);
  }
}

// --- decoder -----------------------------------------------------------------

Feature Model::decoder_forward(const Feature& noisy, const Feature& condition, const std::vector<double>& t,
                               DecoderCache* cache) const {
  require(noisy.channels() == config_.map_channels(),
          "decoder: expected " + std::to_string(config_.map_channels()) + " map channels, got " +
              std::to_string(noisy.channels()));
  require(condition.channels() == config_.cond_channels, "decoder: condition channel mismatch");
  require(noisy.same_layout(condition), "decoder: noisy map and condition differ in spatial size");
  require(static_cast<int>(t.size()) == noisy.batch, "decoder: one time value per batch item required");

  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  c.batch = noisy.batch;
  c.height = noisy.height;
  c.width = noisy.width;
  c.input.resize(noisy.channels() + condition.channels(), noisy.data.cols());
  c.input.topRows(noisy.channels()) = noisy.data;
  c.input.bottomRows(condition.channels()) = condition.data;
  c.time = nn::time_embedding(t, config_.decoder.time_embed_dim);
  c.blocks.assign(blocks_.size(), BlockCache());

  Feature h = noisy;
  h.data = input_proj_.forward(params_, c.input);
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    BlockCache& bc = c.blocks[l];
    bc.shifted = std::move(h);
    nn::add_per_item(bc.shifted, b.time_proj.forward(params_, c.time));
    bc.mixed = b.mix.forward(params_, bc.shifted);
    bc.normed = b.norm.forward(params_, bc.mixed.data, &bc.norm);
    bc.hidden_pre = b.expand.forward(params_, bc.normed);
    bc.hidden = nn::gelu(bc.hidden_pre);
    h = bc.shifted;
    h.data += b.contract.forward(params_, bc.hidden);
  }
  c.final_normed = final_norm_.forward(params_, h.data, &c.final_norm);
  Feature out = h;
  out.data = head_.forward(params_, c.final_normed);
  c.raw = out.data;
  return out;
}

void Model::decoder_backward(const DecoderCache& c, const Feature& d_raw, nn::Gradients& g, Feature* d_noisy,
                             Feature* d_condition) const {
  Matrix dh = final_norm_.backward(params_, c.final_norm, head_.backward(params_, c.final_normed, d_raw.data, g), g);
  for (int l = static_cast<int>(blocks_.size()) - 1; l >= 0; --l) {
    const Block& b = blocks_[l];
    const BlockCache& bc = c.blocks[l];
    Matrix d_hidden = b.contract.backward(params_, bc.hidden, dh, g);
    Matrix d_normed = b.expand.backward(params_, bc.normed, nn::gelu_backward(bc.hidden_pre, d_hidden), g);
    Feature d_mixed = bc.mixed;
    d_mixed.data = b.norm.backward(params_, bc.norm, d_normed, g);
    Feature d_shifted = b.mix.backward(params_, bc.shifted, d_mixed, g);
    d_shifted.data += dh;
    b.time_proj.backward(params_, c.time, nn::sum_per_item(d_shifted), g);
    dh = std::move(d_shifted.data);
  }
  const Matrix d_input = input_proj_.backward(params_, c.input, dh, g);
  const int cm = config_.map_channels();
  if (d_noisy) {
    *d_noisy = Feature(cm, c.batch, c.height, c.width);
    d_noisy->data = d_input.topRows(cm);
  }
  if (d_condition) {
    *d_condition = Feature(config_.cond_channels, c.batch, c.height, c.width);
    d_condition->data = d_input.bottomRows(config_.cond_channels);
  }
}

size_t parameter_count(const ModelConfig& config) { return Model(config, 0).params().scalar_count(); }

}  // namespace ddp
