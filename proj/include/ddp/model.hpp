#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <vector>

#include "ddp/codec.hpp"
#include "ddp/nn.hpp"

namespace ddp {

enum class Task { segmentation, depth };

const char* to_string(Task task);
Task task_from_string(const std::string& name);

/// Map decoder hyper-parameters. `depth` is the number of residual blocks.
struct DecoderConfig {
  int depth = 6;
  int width = 48;
  int time_embed_dim = 32;
  int mlp_ratio = 2;
};

struct ModelConfig {
  Task task = Task::segmentation;
  CodecSpec codec;
  int encoder_width = 24;  // channels of the 1/4-resolution stage
  int fpn_channels = 32;
  int cond_channels = 32;
  DecoderConfig decoder;

  int map_channels() const { return codec.channels(); }
  /// K logits for segmentation, one normalized-depth channel for depth.
  int head_channels() const { return task == Task::segmentation ? codec.num_classes : 1; }
  void validate() const;
};

/// Decoupled dense-prediction network.
///
/// The image encoder (strided pyramid fused top-down to 1/4 resolution) runs
/// once per image and yields the condition. The map decoder (residual blocks
/// of depthwise 3x3 mixing plus a channel MLP, each offset by a projection of
/// a sinusoidal time embedding) runs once per denoising step on the
/// channel-wise concatenation of the noisy map and the condition.
///
/// For embedding codecs the K x d class table is a model parameter named
/// "codec.embedding".
class Model {
 public:
  static constexpr int kLevels = 4;

  Model(const ModelConfig& config, uint64_t seed);
  Model(const Model& other);
  Model& operator=(const Model& other);

  const ModelConfig& config() const { return config_; }
  nn::Parameters& params() { return params_; }
  const nn::Parameters& params() const { return params_; }

  /// Image (3 channels, batch of one) to condition at 1/4 of the padded size.
  /// Inputs are reflect-padded to multiples of 4.
  Feature encode_image(const Feature& image) const;

  /// Task prediction at the condition's resolution: logits (segmentation)
  /// or normalized depth in (0, 1) (depth head, sigmoid activated).
  Feature decode_map(const Feature& noisy, const Feature& condition, double t) const;

  /// Codec using the current embedding table snapshot.
  Codec codec() const;

  uint64_t encode_calls() const { return counters_.encode_calls.load(); }
  uint64_t decode_calls() const { return counters_.decode_calls.load(); }
  void reset_counters() const;

  // --- training interface --------------------------------------------------

  struct EncoderCache {
    Feature input;
    std::vector<Matrix> cols;       // per conv
    std::vector<Feature> pre;       // pre-activation per conv
    std::array<Feature, kLevels> level;
    std::array<Feature, kLevels> lateral_sum;  // p_k
    Feature fused_pre;
    Matrix fused_cols;
    Matrix fused_act;
  };

  struct BlockCache {
    Feature shifted;  // input plus time offset
    Feature mixed;    // depthwise output
    nn::ChannelNorm::Cache norm;
    Matrix normed;
    Matrix hidden_pre;
    Matrix hidden;
  };

  struct DecoderCache {
    Matrix input;  // concatenated noisy map and condition
    int batch = 0, height = 0, width = 0;
    Matrix time;   // embedding, one column per item
    std::vector<BlockCache> blocks;
    nn::ChannelNorm::Cache final_norm;
    Matrix final_normed;
    Matrix raw;
  };

  /// Batched encoder forward on already padded images.
  Feature encoder_forward(const Feature& images, EncoderCache* cache) const;
  void encoder_backward(const EncoderCache& cache, const Feature& d_condition, nn::Gradients& grads) const;

  /// Batched decoder forward with one time per item; returns the raw head output.
  Feature decoder_forward(const Feature& noisy, const Feature& condition, const std::vector<double>& t,
                          DecoderCache* cache) const;
  /// Backpropagates d(loss)/d(raw head output). Optional outputs receive input gradients.
  void decoder_backward(const DecoderCache& cache, const Feature& d_raw, nn::Gradients& grads, Feature* d_noisy,
                        Feature* d_condition) const;

  /// Head activation applied to raw decoder output.
  Feature activate(const Feature& raw) const;

  int embedding_param() const { return embedding_; }

 private:
  struct Counters {
    std::atomic<uint64_t> encode_calls{0};
    std::atomic<uint64_t> decode_calls{0};
  };

  struct Block {
    nn::Pointwise time_proj;
    nn::Depthwise3x3 mix;
    nn::ChannelNorm norm;
    nn::Pointwise expand;
    nn::Pointwise contract;
  };

  ModelConfig config_;
  nn::Parameters params_;
  std::vector<nn::Conv3x3> convs_;  // stem, stem, refine, then one per deeper level
  std::array<nn::Pointwise, kLevels> laterals_;
  nn::Conv3x3 fuse_;
  nn::Pointwise condition_proj_;
  nn::Pointwise input_proj_;
  std::vector<Block> blocks_;
  nn::ChannelNorm final_norm_;
  nn::Pointwise head_;
  int embedding_ = -1;
  mutable Counters counters_;
};

/// Exact number of trainable scalars of a model built from `config`.
size_t parameter_count(const ModelConfig& config);

}  // namespace ddp
