#include "casc/can.hpp"

#include <set>

namespace casc::can {

namespace nn = torch::nn;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::Conv1x1: return "conv1x1";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& text) {
  if (text == "fc") return LayerKind::FullyConnected;
  if (text == "conv3x3") return LayerKind::Conv3x3;
  if (text == "conv1x1") return LayerKind::Conv1x1;
  throw ConfigError("unknown layer kind '" + text + "'");
}

int64_t kernel_size(LayerKind kind) { return kind == LayerKind::Conv3x3 ? 3 : 1; }

std::string group_id_for(LayerKind kind, int64_t c_in, int64_t c_out) {
  return to_string(kind) + "_" + std::to_string(c_in) + "x" + std::to_string(c_out);
}

DynamicWeightSet::DynamicWeightSet(std::map<std::string, torch::Tensor> vectors)
    : vectors_(std::move(vectors)) {}

const torch::Tensor& DynamicWeightSet::at(const std::string& group_id) const {
  auto it = vectors_.find(group_id);
  if (it == vectors_.end()) throw ArgumentError("no dynamic weights for group '" + group_id + "'");
  return it->second;
}

int64_t DynamicWeightSet::batch() const {
  return vectors_.empty() ? 0 : vectors_.begin()->second.size(0);
}

CanNetworkImpl::CanNetworkImpl(int64_t condition_length, std::vector<LayerGroupSpec> groups)
    : condition_length_(condition_length), groups_(std::move(groups)) {
  if (condition_length < 1) throw ConfigError("CAN: condition length must be >= 1");
  if (groups_.empty()) throw ConfigError("CAN: at least one layer group is required");
  std::set<std::string> seen;
  for (const auto& g : groups_) {
    if (!seen.insert(g.group_id).second) {
      throw ConfigError("CAN: duplicate group id '" + g.group_id + "'");
    }
    if (g.c_in < 1 || g.c_out < 1) throw ConfigError("CAN: group '" + g.group_id + "' is empty");
    auto head = nn::Linear(nn::LinearOptions(condition_length, g.weight_count()).bias(false));
    torch::NoGradGuard no_grad;
    head->weight.zero_();
    heads_.emplace(g.group_id, register_module("head_" + g.group_id, head));
  }
}

DynamicWeightSet CanNetworkImpl::forward(const ConditionSignal& c_hat) {
  if (c_hat.length() != condition_length_) {
    throw ArgumentError("CAN: condition length " + std::to_string(c_hat.length()) +
                        " != expected " + std::to_string(condition_length_));
  }
  ++calls_;
  std::map<std::string, torch::Tensor> out;
  for (auto& [id, head] : heads_) out.emplace(id, head(c_hat.tensor()));
  return DynamicWeightSet(std::move(out));
}

nn::Linear& CanNetworkImpl::head(const std::string& group_id) {
  auto it = heads_.find(group_id);
  if (it == heads_.end()) throw ArgumentError("CAN: no head '" + group_id + "'");
  return it->second;
}

int64_t CanNetworkImpl::head_parameter_count() const {
  int64_t total = 0;
  for (const auto& [id, head] : heads_) total += head->weight.numel();
  return total;
}

DynamicWeightSet generate_weights(CanNetwork& can, const ConditionSignal& c_hat) {
  return can->forward(c_hat);
}

ModulatedLayerImpl::ModulatedLayerImpl(std::string layer_id, LayerKind kind, int64_t c_in,
                                       int64_t c_out, bool static_bias)
    : layer_id_(std::move(layer_id)),
      group_id_(group_id_for(kind, c_in, c_out)),
      kind_(kind),
      c_in_(c_in),
      c_out_(c_out) {
  if (kind == LayerKind::FullyConnected) {
    linear_ = register_module("static", nn::Linear(nn::LinearOptions(c_in, c_out).bias(static_bias)));
  } else {
    const int64_t k = kernel_size(kind);
    conv_ = register_module(
        "static", nn::Conv2d(nn::Conv2dOptions(c_in, c_out, k).padding(k / 2).bias(static_bias)));
  }
}

int64_t ModulatedLayerImpl::weight_count() const {
  const int64_t k = kernel_size(kind_);
  return c_in_ * c_out_ * k * k;
}

torch::Tensor ModulatedLayerImpl::forward_static(const torch::Tensor& x) {
  return linear_ ? linear_(x) : conv_(x);
}

torch::Tensor ModulatedLayerImpl::forward(const torch::Tensor& x, const DynamicWeightSet* weights,
                                          DeliveryLog* log) {
  auto out = forward_static(x);
  if (!weights) return out;
  const auto& w = weights->at(group_id_);
  if (log) log->entries.push_back({layer_id_, group_id_, w.data_ptr()});
  return out + dynamic_branch(kind_, c_in_, c_out_, w, x);
}

torch::Tensor dynamic_branch(LayerKind kind, int64_t c_in, int64_t c_out, const torch::Tensor& w,
                             const torch::Tensor& x) {
  const int64_t k = kernel_size(kind);
  const int64_t batch = x.size(0);
  if (w.dim() != 2 || w.size(0) != batch || w.size(1) != c_in * c_out * k * k) {
    throw ArgumentError("dynamic weights " + c10::str(w.sizes()) + " do not match " +
                        std::to_string(batch) + " x " + std::to_string(c_in * c_out * k * k));
  }
  if (kind == LayerKind::FullyConnected) {
    return torch::bmm(w.view({batch, c_out, c_in}), x.unsqueeze(2)).squeeze(2);
  }
  const int64_t h = x.size(2), wd = x.size(3);
  if (kind == LayerKind::Conv1x1) {
    auto y = torch::bmm(w.view({batch, c_out, c_in}), x.reshape({batch, c_in, h * wd}));
    return y.view({batch, c_out, h, wd});
  }
  // Per-sample 3x3 kernels through a grouped convolution over the batch.
  auto y = torch::conv2d(x.reshape({1, batch * c_in, h, wd}), w.reshape({batch * c_out, c_in, k, k}),
                         {}, 1, k / 2, 1, batch);
  return y.view({batch, c_out, h, wd});
}

torch::Tensor apply_dynamic(ModulatedLayer& static_layer, const torch::Tensor& w,
                            const torch::Tensor& x) {
  if (w.dim() != 2 || w.size(1) != static_layer->weight_count()) {
    throw ArgumentError("apply_dynamic: weight vector length " +
                        (w.dim() == 2 ? std::to_string(w.size(1)) : c10::str(w.sizes())) +
                        " != layer weight count " + std::to_string(static_layer->weight_count()));
  }
  return static_layer->forward_static(x) +
         dynamic_branch(static_layer->kind(), static_layer->c_in(), static_layer->c_out(), w, x);
}

std::vector<LayerGroupSpec> group_layers(const std::vector<ModulatedLayer>& layers) {
  std::vector<LayerGroupSpec> groups;
  for (const auto& layer : layers) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const LayerGroupSpec& g) { return g.group_id == layer->group_id(); });
    if (it == groups.end()) {
      groups.push_back({layer->group_id(), layer->kind(), layer->c_in(), layer->c_out(), {}});
      it = std::prev(groups.end());
    }
    it->member_layers.push_back(layer->layer_id());
  }
  return groups;
}

}  // namespace casc::can
