#pragma once

// Condition-aware network: parallel linear heads that turn the received condition
// signal into per-sample weight vectors, and the static+dynamic layers that use them.

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "casc/tensors.hpp"

namespace casc::can {

enum class LayerKind { FullyConnected, Conv3x3, Conv1x1 };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& text);
int64_t kernel_size(LayerKind kind);

/// Layers sharing one dynamic weight vector. All members have identical
/// (kind, c_in, c_out).
struct LayerGroupSpec {
  std::string group_id;
  LayerKind kind = LayerKind::Conv1x1;
  int64_t c_in = 0;
  int64_t c_out = 0;
  std::vector<std::string> member_layers;

  /// d_n: c_in * c_out * k^2.
  int64_t weight_count() const { return c_in * c_out * kernel_size(kind) * kernel_size(kind); }
};

/// Canonical group id for a layer configuration, e.g. "conv1x1_128x128".
std::string group_id_for(LayerKind kind, int64_t c_in, int64_t c_out);

/// Per-sample dynamic weights: group_id -> B x d_n.
class DynamicWeightSet {
 public:
  DynamicWeightSet() = default;
  explicit DynamicWeightSet(std::map<std::string, torch::Tensor> vectors);

  const torch::Tensor& at(const std::string& group_id) const;
  bool contains(const std::string& group_id) const { return vectors_.count(group_id) != 0; }
  size_t size() const { return vectors_.size(); }
  int64_t batch() const;
  const std::map<std::string, torch::Tensor>& vectors() const { return vectors_; }

 private:
  std::map<std::string, torch::Tensor> vectors_;
};

class CanNetworkImpl : public torch::nn::Module {
 public:
  /// One bias-free d x d_n head per group, zero-initialized. Throws ConfigError on
  /// an empty group list, d < 1, or duplicate group ids.
  CanNetworkImpl(int64_t condition_length, std::vector<LayerGroupSpec> groups);

  DynamicWeightSet forward(const ConditionSignal& c_hat);

  const std::vector<LayerGroupSpec>& groups() const { return groups_; }
  int64_t condition_length() const { return condition_length_; }
  torch::nn::Linear& head(const std::string& group_id);
  int64_t head_parameter_count() const;

  /// Number of forward() calls since construction.
  uint64_t calls() const { return calls_.load(); }

 private:
  int64_t condition_length_;
  std::vector<LayerGroupSpec> groups_;
  std::map<std::string, torch::nn::Linear> heads_;
  std::atomic<uint64_t> calls_{0};
};
TORCH_MODULE(CanNetwork);

/// Same as can->forward(c_hat).
DynamicWeightSet generate_weights(CanNetwork& can, const ConditionSignal& c_hat);

/// Records which tensor each modulated layer received during one forward pass.
struct DeliveryLog {
  struct Entry {
    std::string layer_id;
    std::string group_id;
    const void* storage;
  };
  std::vector<Entry> entries;
};

/// A static layer with a parallel bias-free dynamic branch. The output is
/// static(x) + dynamic(x; w), where w is reshaped per sample into the kernel.
class ModulatedLayerImpl : public torch::nn::Module {
 public:
  ModulatedLayerImpl(std::string layer_id, LayerKind kind, int64_t c_in, int64_t c_out,
                     bool static_bias = true);

  /// `weights` may be null (dynamic branch disabled).
  torch::Tensor forward(const torch::Tensor& x, const DynamicWeightSet* weights = nullptr,
                        DeliveryLog* log = nullptr);
  torch::Tensor forward_static(const torch::Tensor& x);

  const std::string& layer_id() const { return layer_id_; }
  const std::string& group_id() const { return group_id_; }
  LayerKind kind() const { return kind_; }
  int64_t c_in() const { return c_in_; }
  int64_t c_out() const { return c_out_; }
  int64_t weight_count() const;

 private:
  std::string layer_id_;
  std::string group_id_;
  LayerKind kind_;
  int64_t c_in_, c_out_;
  torch::nn::Linear linear_{nullptr};
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ModulatedLayer);

/// Output of the dynamic branch alone for per-sample weights `w` (B x d_n).
torch::Tensor dynamic_branch(LayerKind kind, int64_t c_in, int64_t c_out, const torch::Tensor& w,
                             const torch::Tensor& x);

/// static_layer(x) + dynamic_branch(w, x). Throws ArgumentError when w does not
/// have the layer's weight count per sample.
torch::Tensor apply_dynamic(ModulatedLayer& static_layer, const torch::Tensor& w,
                            const torch::Tensor& x);

/// Groups layers by identical configuration, in first-appearance order.
std::vector<LayerGroupSpec> group_layers(const std::vector<ModulatedLayer>& layers);

}  // namespace casc::can
