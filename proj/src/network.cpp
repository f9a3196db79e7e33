#include "kdl/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "kdl/rng.hpp"

namespace kdl {

LayerDesc LayerDesc::conv(int in_ch, int out_ch, int kernel, int stride,
                          int pad, bool bias) {
  LayerDesc d;
  d.kind = LayerKind::Conv2D;
  d.in_ch = in_ch;
  d.out_ch = out_ch;
  d.kernel = kernel;
  d.stride = stride;
  d.pad = pad;
  d.has_bias = bias;
  return d;
}

LayerDesc LayerDesc::relu() {
  LayerDesc d;
  d.kind = LayerKind::ReLU;
  return d;
}

LayerDesc LayerDesc::maxpool(int kernel, int stride) {
  LayerDesc d;
  d.kind = LayerKind::MaxPool;
  d.pool_kernel = kernel;
  d.pool_stride = stride;
  return d;
}

LayerDesc LayerDesc::gap() {
  LayerDesc d;
  d.kind = LayerKind::GlobalAvgPool;
  return d;
}

LayerDesc LayerDesc::dense(int in_dim, int out_dim, bool bias) {
  LayerDesc d;
  d.kind = LayerKind::Dense;
  d.in_dim = in_dim;
  d.out_dim = out_dim;
  d.has_bias = bias;
  return d;
}

std::size_t LayerDesc::param_count() const {
  switch (kind) {
    case LayerKind::Conv2D:
      return static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel +
             (has_bias ? out_ch : 0);
    case LayerKind::Dense:
      return static_cast<std::size_t>(out_dim) * in_dim +
             (has_bias ? out_dim : 0);
    default:
      return 0;
  }
}

static int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

std::vector<std::array<int, 3>> NetworkSpec::validate() const {
  if (layers.empty()) throw ValidationError("network has no layers");
  if (in_channels <= 0 || in_height <= 0 || in_width <= 0)
    throw ValidationError("invalid input shape " +
                          std::to_string(in_channels) + "x" +
                          std::to_string(in_height) + "x" +
                          std::to_string(in_width));
  if (num_classes < 2) throw ValidationError("need at least 2 classes");

  std::vector<std::array<int, 3>> shapes;
  int c = in_channels, h = in_height, w = in_width;
  bool flattened = false;
  bool saw_conv = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& L = layers[i];
    switch (L.kind) {
      case LayerKind::Conv2D: {
        if (flattened)
          throw ValidationError("conv layer after flatten at index " +
                                std::to_string(i));
        if (L.in_ch != c)
          throw ValidationError("conv layer " + std::to_string(i) +
                                " expects " + std::to_string(L.in_ch) +
                                " channels, got " + std::to_string(c));
        if (L.kernel <= 0 || L.stride <= 0 || L.pad < 0 || L.out_ch <= 0)
          throw ValidationError("bad conv geometry at layer " +
                                std::to_string(i));
        int oh = conv_out_extent(h, L.kernel, L.stride, L.pad);
        int ow = conv_out_extent(w, L.kernel, L.stride, L.pad);
        if (oh <= 0 || ow <= 0)
          throw ValidationError("conv layer " + std::to_string(i) +
                                " collapses spatial extent");
        c = L.out_ch;
        h = oh;
        w = ow;
        saw_conv = true;
        break;
      }
      case LayerKind::ReLU:
        break;
      case LayerKind::MaxPool: {
        if (flattened)
          throw ValidationError("pool layer after flatten at index " +
                                std::to_string(i));
        if (L.pool_kernel <= 0 || L.pool_stride <= 0)
          throw ValidationError("bad pool geometry at layer " +
                                std::to_string(i));
        int oh = conv_out_extent(h, L.pool_kernel, L.pool_stride, 0);
        int ow = conv_out_extent(w, L.pool_kernel, L.pool_stride, 0);
        if (oh <= 0 || ow <= 0)
          throw ValidationError("pool layer " + std::to_string(i) +
                                " collapses spatial extent");
        h = oh;
        w = ow;
        break;
      }
      case LayerKind::GlobalAvgPool:
        if (flattened)
          throw ValidationError("global pool after flatten at index " +
                                std::to_string(i));
        h = 1;
        w = 1;
        flattened = true;
        break;
      case LayerKind::Dense: {
        int feed = flattened ? c : c * h * w;
        if (L.in_dim != feed)
          throw ValidationError("dense layer " + std::to_string(i) +
                                " expects " + std::to_string(L.in_dim) +
                                " inputs, got " + std::to_string(feed));
        if (L.out_dim <= 0)
          throw ValidationError("bad dense width at layer " +
                                std::to_string(i));
        c = L.out_dim;
        h = 1;
        w = 1;
        flattened = true;
        break;
      }
    }
    shapes.push_back({c, h, w});
  }
  if (!saw_conv)
    throw ValidationError("network needs at least one Conv2D layer");
  if (shapes.back()[0] != num_classes || shapes.back()[1] != 1 ||
      shapes.back()[2] != 1)
    throw ValidationError("final output length " +
                          std::to_string(shapes.back()[0] * shapes.back()[1] *
                                         shapes.back()[2]) +
                          " does not equal class count " +
                          std::to_string(num_classes));
  return shapes;
}

std::size_t NetworkSpec::param_count() const {
  std::size_t n = 0;
  for (const auto& L : layers) n += L.param_count();
  return n;
}

std::vector<std::size_t> NetworkSpec::conv_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Conv2D) out.push_back(i);
  return out;
}

NetworkState build_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkState net;
  net.spec = spec;
  net.params.assign(spec.param_count(), 0.0);

  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& L = spec.layers[i];
    std::size_t n = L.param_count();
    if (n == 0) continue;
    Rng rng = substream(seed, "init", i);
    std::size_t fan_in = 0, weights = 0, biases = 0;
    if (L.kind == LayerKind::Conv2D) {
      fan_in = static_cast<std::size_t>(L.in_ch) * L.kernel * L.kernel;
      weights = static_cast<std::size_t>(L.out_ch) * fan_in;
      biases = L.has_bias ? L.out_ch : 0;
    } else {
      fan_in = L.in_dim;
      weights = static_cast<std::size_t>(L.out_dim) * L.in_dim;
      biases = L.has_bias ? L.out_dim : 0;
    }
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t j = 0; j < weights; ++j)
      net.params[offset + j] = rng.uniform(-limit, limit);
    // biases start at zero
    offset += weights + biases;
  }
  return net;
}

namespace {

struct ParamView {
  const double* w;
  const double* b;  // nullptr if no bias
};

ParamView param_view(const NetworkState& net, std::size_t layer,
                     std::size_t& offset_io) {
  const LayerDesc& L = net.spec.layers[layer];
  ParamView v{nullptr, nullptr};
  std::size_t n = L.param_count();
  if (n == 0) return v;
  std::size_t weights = n - (L.has_bias
                                 ? (L.kind == LayerKind::Conv2D ? L.out_ch
                                                                : L.out_dim)
                                 : 0);
  v.w = net.params.data() + offset_io;
  if (L.has_bias) v.b = net.params.data() + offset_io + weights;
  offset_io += n;
  return v;
}

Tensor conv_forward(const LayerDesc& L, const Tensor& x, ParamView p) {
  std::size_t N = x.shape[0], H = x.shape[2], W = x.shape[3];
  std::size_t OH = conv_out_extent(static_cast<int>(H), L.kernel, L.stride, L.pad);
  std::size_t OW = conv_out_extent(static_cast<int>(W), L.kernel, L.stride, L.pad);
  Tensor y({N, static_cast<std::size_t>(L.out_ch), OH, OW});
  const int K = L.kernel, S = L.stride, P = L.pad;
  for (std::size_t n = 0; n < N; ++n)
    for (int oc = 0; oc < L.out_ch; ++oc)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = p.b ? p.b[oc] : 0.0;
          for (int ic = 0; ic < L.in_ch; ++ic)
            for (int ky = 0; ky < K; ++ky) {
              int iy = static_cast<int>(oy) * S + ky - P;
              if (iy < 0 || iy >= static_cast<int>(H)) continue;
              for (int kx = 0; kx < K; ++kx) {
                int ix = static_cast<int>(ox) * S + kx - P;
                if (ix < 0 || ix >= static_cast<int>(W)) continue;
                acc += p.w[((static_cast<std::size_t>(oc) * L.in_ch + ic) * K + ky) * K + kx] *
                       x.at4(n, ic, iy, ix);
              }
            }
          y.at4(n, oc, oy, ox) = acc;
        }
  return y;
}

void conv_backward(const LayerDesc& L, const Tensor& x, const Tensor& dy,
                   ParamView p, double* dw, double* db, Tensor& dx) {
  std::size_t N = x.shape[0], H = x.shape[2], W = x.shape[3];
  std::size_t OH = dy.shape[2], OW = dy.shape[3];
  const int K = L.kernel, S = L.stride, P = L.pad;
  for (std::size_t n = 0; n < N; ++n)
    for (int oc = 0; oc < L.out_ch; ++oc)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double g = dy.at4(n, oc, oy, ox);
          if (g == 0.0) continue;
          if (db) db[oc] += g;
          for (int ic = 0; ic < L.in_ch; ++ic)
            for (int ky = 0; ky < K; ++ky) {
              int iy = static_cast<int>(oy) * S + ky - P;
              if (iy < 0 || iy >= static_cast<int>(H)) continue;
              for (int kx = 0; kx < K; ++kx) {
                int ix = static_cast<int>(ox) * S + kx - P;
                if (ix < 0 || ix >= static_cast<int>(W)) continue;
                std::size_t widx =
                    ((static_cast<std::size_t>(oc) * L.in_ch + ic) * K + ky) * K + kx;
                dw[widx] += g * x.at4(n, ic, iy, ix);
                dx.at4(n, ic, iy, ix) += g * p.w[widx];
              }
            }
        }
}

}  // namespace

Tensor forward(NetworkState& net, const Tensor& batch) {
  auto shapes = net.spec.validate();
  if (batch.shape.size() != 4 ||
      batch.shape[1] != static_cast<std::size_t>(net.spec.in_channels) ||
      batch.shape[2] != static_cast<std::size_t>(net.spec.in_height) ||
      batch.shape[3] != static_cast<std::size_t>(net.spec.in_width))
    throw ValidationError("batch shape " + shape_str(batch.shape) +
                          " does not match network input");
  if (net.params.size() != net.spec.param_count())
    throw ValidationError("parameter vector length mismatch");

  std::size_t N = batch.shape[0];
  net.cache = ForwardCache{};
  net.cache.input = batch;
  net.cache.pool_argmax.assign(net.spec.layers.size(), {});

  Tensor x = batch;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    const LayerDesc& L = net.spec.layers[i];
    ParamView p = param_view(net, i, offset);
    switch (L.kind) {
      case LayerKind::Conv2D:
        x = conv_forward(L, x, p);
        break;
      case LayerKind::ReLU: {
        Tensor y = x;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        x = std::move(y);
        break;
      }
      case LayerKind::MaxPool: {
        std::size_t C = x.shape[1], H = x.shape[2], W = x.shape[3];
        std::size_t OH = conv_out_extent(static_cast<int>(H), L.pool_kernel,
                                         L.pool_stride, 0);
        std::size_t OW = conv_out_extent(static_cast<int>(W), L.pool_kernel,
                                         L.pool_stride, 0);
        Tensor y({N, C, OH, OW});
        auto& arg = net.cache.pool_argmax[i];
        arg.assign(y.numel(), 0);
        std::size_t idx = 0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < OH; ++oy)
              for (std::size_t ox = 0; ox < OW; ++ox, ++idx) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_at = 0;
                for (int ky = 0; ky < L.pool_kernel; ++ky)
                  for (int kx = 0; kx < L.pool_kernel; ++kx) {
                    std::size_t iy = oy * L.pool_stride + ky;
                    std::size_t ix = ox * L.pool_stride + kx;
                    if (iy >= H || ix >= W) continue;
                    double v = x.at4(n, c, iy, ix);
                    if (v > best) {
                      best = v;
                      best_at = ((n * C + c) * H + iy) * W + ix;
                    }
                  }
                y.at4(n, c, oy, ox) = best;
                arg[idx] = best_at;
              }
        x = std::move(y);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        std::size_t C = x.shape[1], H = x.shape[2], W = x.shape[3];
        Tensor y({N, C, 1, 1});
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t h = 0; h < H; ++h)
              for (std::size_t w = 0; w < W; ++w) s += x.at4(n, c, h, w);
            y.at4(n, c, 0, 0) = s / static_cast<double>(H * W);
          }
        x = std::move(y);
        break;
      }
      case LayerKind::Dense: {
        std::size_t D = x.numel() / N;
        Tensor y({N, static_cast<std::size_t>(L.out_dim), 1, 1});
        for (std::size_t n = 0; n < N; ++n)
          for (int o = 0; o < L.out_dim; ++o) {
            double acc = p.b ? p.b[o] : 0.0;
            for (std::size_t d = 0; d < D; ++d)
              acc += p.w[static_cast<std::size_t>(o) * D + d] *
                     x.data[n * D + d];
            y.at4(n, o, 0, 0) = acc;
          }
        x = std::move(y);
        break;
      }
    }
    net.cache.outputs.push_back(x);
  }
  net.cache.valid = true;
  (void)shapes;
  Tensor logits({N, static_cast<std::size_t>(net.spec.num_classes)});
  logits.data = x.data;
  return logits;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  std::size_t N = logits.shape[0], C = logits.shape[1];
  for (std::size_t n = 0; n < N; ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits.at2(n, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double e = std::exp(logits.at2(n, c) - mx);
      p.at2(n, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < C; ++c) p.at2(n, c) /= sum;
  }
  return p;
}

BackpropResult backprop_from_logit_grad(NetworkState& net,
                                        const Tensor& dlogits) {
  if (!net.cache.valid) throw StateError("forward cache not populated");
  std::size_t N = net.cache.input.shape[0];
  if (dlogits.shape.size() != 2 || dlogits.shape[0] != N ||
      dlogits.shape[1] != static_cast<std::size_t>(net.spec.num_classes))
    throw ValidationError("dlogits shape mismatch");

  BackpropResult res;
  res.grad.assign(net.params.size(), 0.0);
  auto convs = net.spec.conv_layers();
  res.feature_grads.resize(convs.size());

  // parameter offsets per layer
  std::vector<std::size_t> offsets(net.spec.layers.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    offsets[i] = off;
    off += net.spec.layers[i].param_count();
  }

  Tensor dy({N, static_cast<std::size_t>(net.spec.num_classes), 1, 1});
  dy.data = dlogits.data;

  for (std::size_t ii = net.spec.layers.size(); ii-- > 0;) {
    const LayerDesc& L = net.spec.layers[ii];
    const Tensor& x = ii == 0 ? net.cache.input : net.cache.outputs[ii - 1];
    const Tensor& y = net.cache.outputs[ii];
    std::size_t o = offsets[ii];
    ParamView p{nullptr, nullptr};
    {
      std::size_t tmp = o;
      p = param_view(net, ii, tmp);
    }
    Tensor dx(x.shape);
    switch (L.kind) {
      case LayerKind::Conv2D: {
        // record d loss / d conv output before pushing further back
        for (std::size_t k = 0; k < convs.size(); ++k)
          if (convs[k] == ii) res.feature_grads[k] = dy;
        double* dw = res.grad.data() + o;
        double* db = nullptr;
        if (L.has_bias)
          db = res.grad.data() + o +
               static_cast<std::size_t>(L.out_ch) * L.in_ch * L.kernel * L.kernel;
        conv_backward(L, x, dy, p, dw, db, dx);
        break;
      }
      case LayerKind::ReLU:
        dx = dy;
        for (std::size_t j = 0; j < dx.data.size(); ++j)
          if (x.data[j] <= 0.0) dx.data[j] = 0.0;
        break;
      case LayerKind::MaxPool: {
        const auto& arg = net.cache.pool_argmax[ii];
        for (std::size_t j = 0; j < dy.data.size(); ++j)
          dx.data[arg[j]] += dy.data[j];
        break;
      }
      case LayerKind::GlobalAvgPool: {
        std::size_t C = x.shape[1], H = x.shape[2], W = x.shape[3];
        double inv = 1.0 / static_cast<double>(H * W);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            double g = dy.at4(n, c, 0, 0) * inv;
            for (std::size_t h = 0; h < H; ++h)
              for (std::size_t w = 0; w < W; ++w) dx.at4(n, c, h, w) = g;
          }
        break;
      }
      case LayerKind::Dense: {
        std::size_t D = x.numel() / N;
        double* dw = res.grad.data() + o;
        double* db = L.has_bias
                         ? res.grad.data() + o +
                               static_cast<std::size_t>(L.out_dim) * L.in_dim
                         : nullptr;
        for (std::size_t n = 0; n < N; ++n)
          for (int oo = 0; oo < L.out_dim; ++oo) {
            double g = dy.data[n * L.out_dim + oo];
            if (db) db[oo] += g;
            for (std::size_t d = 0; d < D; ++d) {
              dw[static_cast<std::size_t>(oo) * D + d] += g * x.data[n * D + d];
              dx.data[n * D + d] +=
                  g * p.w[static_cast<std::size_t>(oo) * D + d];
            }
          }
        break;
      }
    }
    dy = std::move(dx);
    (void)y;
  }
  return res;
}

BackpropResult backward(NetworkState& net, const Tensor& batch,
                        const std::vector<int>& labels) {
  if (!net.cache.valid) throw StateError("forward cache not populated");
  std::size_t N = batch.shape[0];
  if (labels.size() != N)
    throw ValidationError("label count does not match batch size");
  const Tensor& last = net.cache.outputs.back();
  Tensor logits({N, static_cast<std::size_t>(net.spec.num_classes)});
  logits.data = last.data;
  for (int lab : labels)
    if (lab < 0 || lab >= net.spec.num_classes)
      throw ValidationError("label out of range");

  Tensor probs = softmax_rows(logits);
  double loss = 0.0;
  Tensor dlogits = probs;
  for (std::size_t n = 0; n < N; ++n) {
    double p = std::max(probs.at2(n, labels[n]), 1e-300);
    loss -= std::log(p);
    dlogits.at2(n, labels[n]) -= 1.0;
  }
  loss /= static_cast<double>(N);
  for (double& v : dlogits.data) v /= static_cast<double>(N);

  BackpropResult res = backprop_from_logit_grad(net, dlogits);
  res.loss = loss;
  return res;
}

OptimizerState OptimizerState::for_net(const NetworkState& net, double lr,
                                       double weight_decay) {
  OptimizerState o;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.m.assign(net.params.size(), 0.0);
  o.v.assign(net.params.size(), 0.0);
  return o;
}

void adam_step(OptimizerState& opt, NetworkState& net,
               const std::vector<double>& grad) {
  if (grad.size() != net.params.size() || opt.m.size() != net.params.size())
    throw ValidationError("gradient/moment length mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient entry");
  opt.step += 1;
  double b1t = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  double b2t = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    double g = grad[i] + opt.weight_decay * net.params[i];
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
    double mhat = opt.m[i] / b1t;
    double vhat = opt.v[i] / b2t;
    net.params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

// ---------------------------------------------------------------------------
// checkpoint serialization

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static std::uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  std::uint32_t c = 0xffffffffU;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffU;
}

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_i32(std::vector<std::uint8_t>& b, std::int32_t v) {
  put_u32(b, static_cast<std::uint32_t>(v));
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_f64(std::vector<std::uint8_t>& b, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(b, u);
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > b.size()) throw IoError("truncated checkpoint");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = b[pos] | (b[pos + 1] << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
};

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const NetworkState& net) {
  std::vector<std::uint8_t> b;
  b.push_back('K');
  b.push_back('D');
  b.push_back('L');
  b.push_back('1');
  put_u16(b, kCheckpointVersion);
  put_u32(b, static_cast<std::uint32_t>(net.spec.layers.size()));
  for (const auto& L : net.spec.layers) {
    b.push_back(static_cast<std::uint8_t>(L.kind));
    put_i32(b, L.in_ch);
    put_i32(b, L.out_ch);
    put_i32(b, L.kernel);
    put_i32(b, L.stride);
    put_i32(b, L.pad);
    put_i32(b, L.has_bias ? 1 : 0);
    put_i32(b, L.pool_kernel);
    put_i32(b, L.pool_stride);
    put_i32(b, L.in_dim);
    put_i32(b, L.out_dim);
  }
  put_i32(b, net.spec.in_channels);
  put_i32(b, net.spec.in_height);
  put_i32(b, net.spec.in_width);
  put_i32(b, net.spec.num_classes);
  put_u64(b, net.params.size());
  for (double v : net.params) put_f64(b, v);
  put_u32(b, crc32(b.data(), b.size()));
  return b;
}

NetworkState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 14 || bytes[0] != 'K' || bytes[1] != 'D' ||
      bytes[2] != 'L' || bytes[3] != '1')
    throw IoError("bad checkpoint magic");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  if (crc32(bytes.data(), bytes.size() - 4) != stored)
    throw IoError("checkpoint CRC mismatch");

  Reader r{bytes, 4};
  std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  NetworkState net;
  std::uint32_t nlayers = r.u32();
  for (std::uint32_t i = 0; i < nlayers; ++i) {
    LayerDesc L;
    r.need(1);
    L.kind = static_cast<LayerKind>(bytes[r.pos++]);
    L.in_ch = r.i32();
    L.out_ch = r.i32();
    L.kernel = r.i32();
    L.stride = r.i32();
    L.pad = r.i32();
    L.has_bias = r.i32() != 0;
    L.pool_kernel = r.i32();
    L.pool_stride = r.i32();
    L.in_dim = r.i32();
    L.out_dim = r.i32();
    net.spec.layers.push_back(L);
  }
  net.spec.in_channels = r.i32();
  net.spec.in_height = r.i32();
  net.spec.in_width = r.i32();
  net.spec.num_classes = r.i32();
  std::uint64_t n = r.u64();
  net.spec.validate();
  if (n != net.spec.param_count())
    throw IoError("checkpoint parameter count mismatch");
  net.params.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) net.params[i] = r.f64();
  return net;
}

void save_checkpoint(const NetworkState& net, const std::string& path) {
  auto bytes = serialize_checkpoint(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("checkpoint write failed: " + path);
}

NetworkState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace kdl
