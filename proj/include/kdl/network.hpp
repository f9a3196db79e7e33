#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kdl/tensor.hpp"

namespace kdl {

enum class LayerKind : std::uint8_t {
  Conv2D = 0,
  ReLU = 1,
  MaxPool = 2,
  GlobalAvgPool = 3,
  Dense = 4,
};

// One descriptor covers all layer kinds; unused fields stay zero. Keeps
// serialization and validation in one place.
struct LayerDesc {
  LayerKind kind = LayerKind::ReLU;
  // Conv2D
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  bool has_bias = true;
  // MaxPool
  int pool_kernel = 0, pool_stride = 0;
  // Dense
  int in_dim = 0, out_dim = 0;

  static LayerDesc conv(int in_ch, int out_ch, int kernel, int stride = 1,
                        int pad = 0, bool bias = true);
  static LayerDesc relu();
  static LayerDesc maxpool(int kernel, int stride);
  static LayerDesc gap();
  static LayerDesc dense(int in_dim, int out_dim, bool bias = true);

  std::size_t param_count() const;
};

struct NetworkSpec {
  std::vector<LayerDesc> layers;
  int in_channels = 1, in_height = 0, in_width = 0;
  int num_classes = 2;

  // Throws ValidationError on shape mismatch or if no Conv2D layer exists.
  // Returns per-layer output shapes (C, H, W), flattened layers as (D, 1, 1).
  std::vector<std::array<int, 3>> validate() const;

  std::size_t param_count() const;
  // Indices of Conv2D layers, in network order.
  std::vector<std::size_t> conv_layers() const;
};

// Forward cache: input plus every layer's output, in layer order.
// MaxPool layers additionally record argmax indices for backprop.
struct ForwardCache {
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<std::vector<std::size_t>> pool_argmax;
  bool valid = false;
};

struct NetworkState {
  NetworkSpec spec;
  std::vector<double> params;
  ForwardCache cache;
};

struct BackpropResult {
  double loss = 0.0;
  std::vector<double> grad;        // d loss / d params
  std::vector<Tensor> feature_grads;  // d loss / d conv outputs, per conv layer
};

// Fan-in-scaled uniform init; per-layer substreams from the root seed.
NetworkState build_network(const NetworkSpec& spec, std::uint64_t seed);

// batch is (N, C, H, W); returns (N, classes) logits and fills net.cache.
Tensor forward(NetworkState& net, const Tensor& batch);

// Mean softmax cross-entropy over the batch; requires a populated cache.
BackpropResult backward(NetworkState& net, const Tensor& batch,
                        const std::vector<int>& labels);

// Backprop from an arbitrary d loss / d logits seed (KD objective, Grad-CAM).
// loss field of the result is left at 0; caller computes its own loss value.
BackpropResult backprop_from_logit_grad(NetworkState& net,
                                        const Tensor& dlogits);

Tensor softmax_rows(const Tensor& logits);

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<double> m, v;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;

  static OptimizerState for_net(const NetworkState& net, double lr = 1e-3,
                                double weight_decay = 0.0);
};

// Adam with bias correction; weight decay is coupled L2 (added to the
// gradient before the moment updates). Throws NumericError on non-finite
// gradient entries.
void adam_step(OptimizerState& opt, NetworkState& net,
               const std::vector<double>& grad);

// Checkpoint format: "KDL1", u16 version, length-prefixed layer descriptor
// list + input shape + class count, u64 param count, little-endian f64
// parameters, trailing CRC32 of all preceding bytes.
void save_checkpoint(const NetworkState& net, const std::string& path);
NetworkState load_checkpoint(const std::string& path);

std::vector<std::uint8_t> serialize_checkpoint(const NetworkState& net);
NetworkState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

}  // namespace kdl
