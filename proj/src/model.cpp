#include "frsaudit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "frsaudit/error.hpp"
#include "frsaudit/rng.hpp"

namespace frsaudit::model {

std::string_view to_string(Task t) { return t == Task::Gender ? "gender" : "country"; }

Task parse_task(std::string_view s) {
  if (s == "gender") return Task::Gender;
  if (s == "country") return Task::Country;
  fail(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

// --- Config -----------------------------------------------------------------

int ClassifierConfig::label_index(std::string_view label) const {
  for (int i = 0; i < classes(); ++i) {
    if (class_labels[static_cast<std::size_t>(i)] == label) return i;
  }
  fail(ErrorCode::LabelMismatch, "label '" + std::string(label) + "' is not a model class");
}

void ClassifierConfig::validate() const {
  if (input_width < 1 || input_height < 1 || input_channels < 1) {
    fail(ErrorCode::BadConfig, "input dimensions must be positive");
  }
  if (conv_blocks.empty()) fail(ErrorCode::BadConfig, "at least one conv block is required");
  int h = input_height, w = input_width;
  for (const auto& b : conv_blocks) {
    if (b.filters < 1 || b.kernel < 1 || b.kernel % 2 == 0 || b.pool < 1) {
      fail(ErrorCode::BadConfig, "conv blocks need filters >= 1, odd kernel, pool >= 1");
    }
    h /= b.pool;
    w /= b.pool;
    if (h < 1 || w < 1) fail(ErrorCode::BadConfig, "pooling reduces the feature map to nothing");
  }
  for (const int d : dense) {
    if (d < 1) fail(ErrorCode::BadConfig, "dense sizes must be positive");
  }
  if (classes() < 2) fail(ErrorCode::BadConfig, "need at least two classes");
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.conv_blocks) {
    blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}, {"pool", b.pool}});
  }
  j = nlohmann::json{{"input", {c.input_width, c.input_height, c.input_channels}},
                     {"conv_blocks", blocks},
                     {"dense", c.dense},
                     {"task", to_string(c.task)},
                     {"class_labels", c.class_labels},
                     {"classes", c.classes()},
                     {"weight_init_seed", c.weight_init_seed}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  const auto& in = j.at("input");
  c.input_width = in.at(0).get<int>();
  c.input_height = in.at(1).get<int>();
  c.input_channels = in.at(2).get<int>();
  c.conv_blocks.clear();
  for (const auto& b : j.at("conv_blocks")) {
    c.conv_blocks.push_back(
        {b.at("filters").get<int>(), b.at("kernel").get<int>(), b.at("pool").get<int>()});
  }
  c.dense = j.at("dense").get<std::vector<int>>();
  c.task = parse_task(j.at("task").get<std::string>());
  c.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  c.weight_init_seed = j.value("weight_init_seed", std::uint64_t{0});
  if (j.contains("classes") && j["classes"].get<int>() != c.classes()) {
    fail(ErrorCode::BadConfig, "classes disagrees with class_labels");
  }
}

Tensor to_input(const ImageBuffer& img, const ClassifierConfig& cfg) {
  const ImageBuffer sized = resize_bilinear(img, cfg.input_width, cfg.input_height);
  Tensor t(cfg.input_channels, cfg.input_height, cfg.input_width);
  for (int c = 0; c < cfg.input_channels; ++c) {
    for (int y = 0; y < cfg.input_height; ++y) {
      for (int x = 0; x < cfg.input_width; ++x) {
        t.at(c, y, x) = sized.at(x, y, std::min(c, ImageBuffer::kChannels - 1)) / 255.0;
      }
    }
  }
  return t;
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

// --- Network ----------------------------------------------------------------

Network::Network(ClassifierConfig config) : config_(std::move(config)) {
  config_.validate();
  build_layout();
}

void Network::build_layout() {
  layout_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t size = 1;
    for (const int d : shape) size *= static_cast<std::size_t>(d);
    layout_.push_back({std::move(name), std::move(shape), offset, size});
    offset += size;
  };
  int channels = config_.input_channels, h = config_.input_height, w = config_.input_width;
  for (std::size_t i = 0; i < config_.conv_blocks.size(); ++i) {
    const auto& b = config_.conv_blocks[i];
    add("conv" + std::to_string(i) + ".weight", {b.filters, channels, b.kernel, b.kernel});
    add("conv" + std::to_string(i) + ".bias", {b.filters});
    channels = b.filters;
    h /= b.pool;
    w /= b.pool;
  }
  int features = channels * h * w;
  for (std::size_t i = 0; i < config_.dense.size(); ++i) {
    add("dense" + std::to_string(i) + ".weight", {config_.dense[i], features});
    add("dense" + std::to_string(i) + ".bias", {config_.dense[i]});
    features = config_.dense[i];
  }
  add("logits.weight", {config_.classes(), features});
  add("logits.bias", {config_.classes()});
  params_.assign(offset, 0.0);
}

Network Network::initialized(ClassifierConfig config) {
  Network net(std::move(config));
  rng::Stream stream(rng::combine(net.config_.weight_init_seed, 0x696e6974ULL));
  for (const auto& t : net.layout_) {
    if (t.shape.size() < 2) continue;  // biases stay zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= static_cast<std::size_t>(t.shape[d]);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t k = 0; k < t.size; ++k) {
      net.params_[t.offset + k] = round_to_float(stream.uniform(-limit, limit));
    }
  }
  return net;
}

const TensorInfo& Network::tensor(std::string_view name) const {
  for (const auto& t : layout_) {
    if (t.name == name) return t;
  }
  fail(ErrorCode::InvalidArgument, "no parameter tensor '" + std::string(name) + "'");
}

std::span<double> Network::tensor_values(std::string_view name) {
  const auto& t = tensor(name);
  return std::span(params_).subspan(t.offset, t.size);
}

std::span<const double> Network::tensor_values(std::string_view name) const {
  const auto& t = tensor(name);
  return std::span(params_).subspan(t.offset, t.size);
}

namespace {

// out[oc] += sum_ic W[oc][ic] (*) in[ic], zero "same" padding.
void conv_forward(const Tensor& in, const double* weight, const double* bias, int filters,
                  int kernel, Tensor& out) {
  const int H = in.height, W = in.width, C = in.channels, pad = kernel / 2;
  out = Tensor(filters, H, W);
  for (int oc = 0; oc < filters; ++oc) {
    double* dst = &out.values[static_cast<std::size_t>(oc) * H * W];
    std::fill(dst, dst + static_cast<std::size_t>(H) * W, bias[oc]);
    for (int ic = 0; ic < C; ++ic) {
      const double* src = &in.values[static_cast<std::size_t>(ic) * H * W];
      const double* wk = weight + (static_cast<std::size_t>(oc) * C + ic) * kernel * kernel;
      for (int ky = 0; ky < kernel; ++ky) {
        const int dy = ky - pad;
        const int y_lo = std::max(0, -dy), y_hi = std::min(H, H - dy);
        for (int kx = 0; kx < kernel; ++kx) {
          const int dx = kx - pad;
          const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
          const double w = wk[ky * kernel + kx];
          for (int y = y_lo; y < y_hi; ++y) {
            double* o = dst + static_cast<std::size_t>(y) * W;
            const double* s = src + static_cast<std::size_t>(y + dy) * W + dx;
            for (int x = x_lo; x < x_hi; ++x) o[x] += w * s[x];
          }
        }
      }
    }
  }
}

// Accumulates dW, db and (optionally) d_in from d_out.
void conv_backward(const Tensor& in, const double* weight, int filters, int kernel,
                   const Tensor& d_out, double* d_weight, double* d_bias, Tensor* d_in) {
  const int H = in.height, W = in.width, C = in.channels, pad = kernel / 2;
  if (d_in != nullptr) *d_in = Tensor(C, H, W);
  for (int oc = 0; oc < filters; ++oc) {
    const double* g = &d_out.values[static_cast<std::size_t>(oc) * H * W];
    double bsum = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) bsum += g[i];
    d_bias[oc] += bsum;
    for (int ic = 0; ic < C; ++ic) {
      const double* src = &in.values[static_cast<std::size_t>(ic) * H * W];
      double* dsrc = d_in ? &d_in->values[static_cast<std::size_t>(ic) * H * W] : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(oc) * C + ic) * kernel * kernel;
      for (int ky = 0; ky < kernel; ++ky) {
        const int dy = ky - pad;
        const int y_lo = std::max(0, -dy), y_hi = std::min(H, H - dy);
        for (int kx = 0; kx < kernel; ++kx) {
          const int dx = kx - pad;
          const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
          const double w = weight[wbase + ky * kernel + kx];
          double acc = 0;
          for (int y = y_lo; y < y_hi; ++y) {
            const double* gy = g + static_cast<std::size_t>(y) * W;
            const double* s = src + static_cast<std::size_t>(y + dy) * W + dx;
            for (int x = x_lo; x < x_hi; ++x) acc += gy[x] * s[x];
            if (dsrc != nullptr) {
              double* ds = dsrc + static_cast<std::size_t>(y + dy) * W + dx;
              for (int x = x_lo; x < x_hi; ++x) ds[x] += w * gy[x];
            }
          }
          d_weight[wbase + ky * kernel + kx] += acc;
        }
      }
    }
  }
}

void max_pool(const Tensor& in, int pool, Tensor& out, std::vector<int>& argmax) {
  const int oh = in.height / pool, ow = in.width / pool;
  out = Tensor(in.channels, oh, ow);
  argmax.assign(out.size(), 0);
  std::size_t k = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++k) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = 0;
        for (int py = 0; py < pool; ++py) {
          for (int px = 0; px < pool; ++px) {
            const int idx = (c * in.height + y * pool + py) * in.width + x * pool + px;
            if (in.values[static_cast<std::size_t>(idx)] > best) {
              best = in.values[static_cast<std::size_t>(idx)];
              best_idx = idx;
            }
          }
        }
        out.values[k] = best;
        argmax[k] = best_idx;
      }
    }
  }
}

void dense_forward(std::span<const double> x, const double* weight, const double* bias, int out_n,
                   std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(out_n), 0.0);
  for (int o = 0; o < out_n; ++o) {
    const double* row = weight + static_cast<std::size_t>(o) * x.size();
    double acc = bias[o];
    for (std::size_t i = 0; i < x.size(); ++i) acc += row[i] * x[i];
    out[static_cast<std::size_t>(o)] = acc;
  }
}

}  // namespace

Network::Activations Network::forward(const Tensor& input) const {
  if (input.channels != config_.input_channels || input.height != config_.input_height ||
      input.width != config_.input_width) {
    fail(ErrorCode::ShapeMismatch,
         "input tensor " + std::to_string(input.channels) + "x" + std::to_string(input.height) +
             "x" + std::to_string(input.width) + " does not match model input");
  }
  Activations act;
  const std::size_t nb = config_.conv_blocks.size();
  act.block_inputs.reserve(nb);
  act.conv_outputs.resize(nb);
  act.pool_argmax.resize(nb);
  act.pooled.resize(nb);
  const Tensor* x = &input;
  std::size_t li = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& blk = config_.conv_blocks[b];
    act.block_inputs.push_back(*x);
    const auto& wt = layout_[li++];
    const auto& bs = layout_[li++];
    conv_forward(*x, &params_[wt.offset], &params_[bs.offset], blk.filters, blk.kernel,
                 act.conv_outputs[b]);
    for (auto& v : act.conv_outputs[b].values) v = std::max(v, 0.0);
    if (blk.pool > 1) {
      max_pool(act.conv_outputs[b], blk.pool, act.pooled[b], act.pool_argmax[b]);
    } else {
      act.pooled[b] = act.conv_outputs[b];
    }
    x = &act.pooled[b];
  }
  std::vector<double> h = x->values;
  for (std::size_t d = 0; d < config_.dense.size(); ++d) {
    const auto& wt = layout_[li++];
    const auto& bs = layout_[li++];
    act.dense_inputs.push_back(h);
    std::vector<double> z;
    dense_forward(h, &params_[wt.offset], &params_[bs.offset], config_.dense[d], z);
    for (auto& v : z) v = std::max(v, 0.0);
    act.dense_outputs.push_back(z);
    h = std::move(z);
  }
  double sq = 0;
  for (const double v : h) sq += v * v;
  act.embedding_norm = std::sqrt(sq + kEmbeddingEps);
  act.embedding.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) act.embedding[i] = h[i] / act.embedding_norm;

  const auto& wt = layout_[li++];
  const auto& bs = layout_[li++];
  act.dense_inputs.push_back(h);
  dense_forward(h, &params_[wt.offset], &params_[bs.offset], config_.classes(), act.logits);
  act.probabilities = softmax(act.logits);
  return act;
}

void Network::backward(const Activations& act, std::span<const double> d_logits,
                       std::span<const double> d_embedding, std::span<double> grad,
                       Tensor* d_last_conv) const {
  const bool want_params = !grad.empty();
  if (want_params && grad.size() != params_.size()) {
    fail(ErrorCode::ShapeMismatch, "gradient buffer size does not match parameter count");
  }
  const std::size_t nb = config_.conv_blocks.size();
  const std::size_t nd = config_.dense.size();
  std::size_t li = layout_.size();

  // Logit layer.
  const auto& lb = layout_[--li];
  const auto& lw = layout_[--li];
  const auto& h_last = act.dense_inputs.back();
  std::vector<double> dh(h_last.size(), 0.0);
  for (int o = 0; o < config_.classes(); ++o) {
    const double g = d_logits.empty() ? 0.0 : d_logits[static_cast<std::size_t>(o)];
    if (g == 0.0) continue;
    const double* row = &params_[lw.offset + static_cast<std::size_t>(o) * h_last.size()];
    for (std::size_t i = 0; i < h_last.size(); ++i) dh[i] += row[i] * g;
    if (want_params) {
      double* grow = &grad[lw.offset + static_cast<std::size_t>(o) * h_last.size()];
      for (std::size_t i = 0; i < h_last.size(); ++i) grow[i] += g * h_last[i];
      grad[lb.offset + static_cast<std::size_t>(o)] += g;
    }
  }
  // Embedding = h / sqrt(|h|^2 + eps).
  if (!d_embedding.empty()) {
    const double n = act.embedding_norm;
    double dot = 0;
    for (std::size_t i = 0; i < h_last.size(); ++i) dot += h_last[i] * d_embedding[i];
    for (std::size_t i = 0; i < h_last.size(); ++i) {
      dh[i] += d_embedding[i] / n - h_last[i] * dot / (n * n * n);
    }
  }

  // Hidden dense layers.
  for (std::size_t d = nd; d-- > 0;) {
    const auto& bs = layout_[--li];
    const auto& wt = layout_[--li];
    const auto& x = act.dense_inputs[d];
    const auto& a = act.dense_outputs[d];
    std::vector<double> dx(x.size(), 0.0);
    for (std::size_t o = 0; o < a.size(); ++o) {
      if (a[o] <= 0.0) continue;
      const double g = dh[o];
      if (g == 0.0) continue;
      const double* row = &params_[wt.offset + o * x.size()];
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += row[i] * g;
      if (want_params) {
        double* grow = &grad[wt.offset + o * x.size()];
        for (std::size_t i = 0; i < x.size(); ++i) grow[i] += g * x[i];
        grad[bs.offset + o] += g;
      }
    }
    dh = std::move(dx);
  }

  // Conv blocks.
  Tensor d_pooled = act.pooled[nb - 1];
  d_pooled.values = std::move(dh);
  for (std::size_t b = nb; b-- > 0;) {
    const auto& blk = config_.conv_blocks[b];
    const auto& bs = layout_[--li];
    const auto& wt = layout_[--li];
    const Tensor& conv_out = act.conv_outputs[b];
    Tensor d_conv(conv_out.channels, conv_out.height, conv_out.width);
    if (blk.pool > 1) {
      const auto& am = act.pool_argmax[b];
      for (std::size_t k = 0; k < am.size(); ++k) {
        d_conv.values[static_cast<std::size_t>(am[k])] += d_pooled.values[k];
      }
    } else {
      d_conv.values = d_pooled.values;
    }
    if (b == nb - 1 && d_last_conv != nullptr) *d_last_conv = d_conv;
    if (!want_params) return;
    for (std::size_t k = 0; k < d_conv.size(); ++k) {
      if (conv_out.values[k] <= 0.0) d_conv.values[k] = 0.0;
    }
    Tensor d_in;
    conv_backward(act.block_inputs[b], &params_[wt.offset], blk.filters, blk.kernel, d_conv,
                  &grad[wt.offset], &grad[bs.offset], b > 0 ? &d_in : nullptr);
    if (b > 0) d_pooled = std::move(d_in);
  }
}

std::vector<double> Network::logits_from_last_conv(const Tensor& activation) const {
  const std::size_t nb = config_.conv_blocks.size();
  const auto& blk = config_.conv_blocks[nb - 1];
  Tensor pooled;
  std::vector<int> argmax;
  if (blk.pool > 1) max_pool(activation, blk.pool, pooled, argmax);
  else pooled = activation;
  std::size_t li = 2 * nb;
  std::vector<double> h = pooled.values;
  for (std::size_t d = 0; d < config_.dense.size(); ++d) {
    const auto& wt = layout_[li++];
    const auto& bs = layout_[li++];
    std::vector<double> z;
    dense_forward(h, &params_[wt.offset], &params_[bs.offset], config_.dense[d], z);
    for (auto& v : z) v = std::max(v, 0.0);
    h = std::move(z);
  }
  const auto& wt = layout_[li++];
  const auto& bs = layout_[li++];
  std::vector<double> logits;
  dense_forward(h, &params_[wt.offset], &params_[bs.offset], config_.classes(), logits);
  return logits;
}

// --- Losses and optimisation ------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const double> logits, int label, std::span<double> d_logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (const double z : logits) sum += std::exp(z - mx);
  const double log_z = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d_logits[i] = std::exp(logits[i] - log_z) - (static_cast<int>(i) == label ? 1.0 : 0.0);
  }
  return log_z - logits[static_cast<std::size_t>(label)];
}

void AdamState::step(std::span<double> params, std::span<const double> grad,
                     const AdamConfig& cfg) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg.beta1 * m_[i] + (1 - cfg.beta1) * grad[i];
    v_[i] = cfg.beta2 * v_[i] + (1 - cfg.beta2) * grad[i] * grad[i];
    const double update = cfg.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg.epsilon);
    params[i] = round_to_float(params[i] - update);
  }
}

double classification_gradient(const Network& net, std::span<const Example> batch,
                               std::span<double> grad) {
  if (batch.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  std::vector<double> d_logits(static_cast<std::size_t>(net.config().classes()));
  for (const auto& ex : batch) {
    const auto act = net.forward(ex.input);
    loss += cross_entropy(act.logits, ex.label, d_logits) * scale;
    for (auto& g : d_logits) g *= scale;
    net.backward(act, d_logits, {}, grad);
  }
  return loss;
}

StepMetrics train_step(Network& net, std::span<const Example> batch, AdamState& optimizer,
                       const AdamConfig& cfg) {
  std::vector<double> grad(net.params().size(), 0.0);
  const double loss = classification_gradient(net, batch, grad);
  if (!std::isfinite(loss)) {
    fail(ErrorCode::NonFiniteLoss, "non-finite cross-entropy loss at Adam step " +
                                       std::to_string(optimizer.steps() + 1) +
                                       " (batch size " + std::to_string(batch.size()) + ")");
  }
  optimizer.step(net.params(), grad, cfg);
  return {loss};
}

// --- Checkpoint container ---------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'R', 'S', 'C', 'K', 'P', 'T', '\0'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  const auto& net = ckpt.network;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : net.layout()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  }
  const nlohmann::json header{
      {"format_version", Checkpoint::kFormatVersion},
      {"config", net.config()},
      {"provenance",
       {{"dataset_hash", ckpt.provenance.dataset_hash},
        {"epochs", ckpt.provenance.epochs},
        {"loss_curve", ckpt.provenance.loss_curve},
        {"notes", ckpt.provenance.notes}}},
      {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + net.params().size() * 4);
  for (const double v : net.params()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    fail(ErrorCode::BadCheckpoint, "not a checkpoint (bad magic)");
  }
  const std::size_t header_len = get_u32(bytes.subspan(8, 4));
  if (12 + header_len > bytes.size()) fail(ErrorCode::BadCheckpoint, "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadCheckpoint, std::string("bad header: ") + e.what());
  }
  if (!header.contains("format_version")) fail(ErrorCode::BadCheckpoint, "missing format_version");
  if (header["format_version"].get<int>() != Checkpoint::kFormatVersion) {
    fail(ErrorCode::BadCheckpoint, "unsupported checkpoint format_version");
  }
  Checkpoint ckpt{Network(header.at("config").get<ClassifierConfig>()), {}};
  const auto& prov = header.at("provenance");
  ckpt.provenance.dataset_hash = prov.value("dataset_hash", "");
  ckpt.provenance.epochs = prov.value("epochs", 0);
  ckpt.provenance.loss_curve = prov.value("loss_curve", std::vector<double>{});
  ckpt.provenance.notes = prov.value("notes", nlohmann::json::object());

  const auto& layout = ckpt.network.layout();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != layout.size()) fail(ErrorCode::BadCheckpoint, "tensor table mismatch");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != layout[i].name ||
        tensors[i].at("shape").get<std::vector<int>>() != layout[i].shape ||
        tensors[i].at("offset").get<std::size_t>() != layout[i].offset) {
      fail(ErrorCode::BadCheckpoint, "tensor '" + layout[i].name + "' does not match config");
    }
  }
  auto params = ckpt.network.params();
  const std::size_t data_start = 12 + header_len;
  if (bytes.size() != data_start + params.size() * 4) {
    fail(ErrorCode::BadCheckpoint, "parameter payload size does not match config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] = std::bit_cast<float>(get_u32(bytes.subspan(data_start + 4 * i, 4)));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, serialize(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

}  // namespace frsaudit::model
