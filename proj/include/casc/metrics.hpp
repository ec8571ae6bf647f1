#pragma once

// Image quality metrics: PSNR, learned perceptual distance, and Frechet distance
// between feature-space Gaussians.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "casc/tensors.hpp"

namespace casc::eval {

/// PSNR returned for identical inputs.
inline constexpr double kPsnrCapDb = 100.0;

/// PSNR over the whole batch. Inputs in [-1, 1] are mapped to [0, 1] (MAX = 1).
double psnr(const ImageBatch& reference, const ImageBatch& reconstruction);

/// PSNR of each image separately, shape B, capped like psnr().
torch::Tensor psnr_per_image(const ImageBatch& reference, const ImageBatch& reconstruction);

/// Multi-layer feature network backing the perceptual distance.
class FeatureNet {
 public:
  virtual ~FeatureNet() = default;
  /// Feature maps for images in [-1, 1], one per tapped layer.
  virtual std::vector<torch::Tensor> features(const torch::Tensor& images) const = 0;
  /// Per-layer nonnegative channel weights, each shaped 1 x C x 1 x 1.
  virtual const std::vector<torch::Tensor>& layer_weights() const = 0;
  virtual std::string name() const = 0;
  virtual bool calibrated() const = 0;
  virtual void to(torch::Dtype dtype) = 0;
};

/// Pretrained feature network exported as a TorchScript module.
///
/// The module maps an N x 3 x H x W batch in [-1, 1] to a list of feature maps and
/// carries buffers `lin0`, `lin1`, ... with the learned per-channel weights.
std::shared_ptr<FeatureNet> load_scripted_feature_net(const std::filesystem::path& path);

/// AlexNet-shaped network with seeded random weights and unit channel weights.
/// Deterministic in `seed`; used when the pretrained asset is unavailable.
std::shared_ptr<FeatureNet> make_uncalibrated_feature_net(uint64_t seed);

/// Learned perceptual image patch similarity.
class Lpips {
 public:
  explicit Lpips(std::shared_ptr<FeatureNet> net, int64_t input_size = 64);

  /// Per-image distance, shape B. Differentiable in both inputs.
  torch::Tensor distance(const torch::Tensor& x, const torch::Tensor& y) const;
  double mean_distance(const ImageBatch& x, const ImageBatch& y) const;

  const FeatureNet& net() const { return *net_; }

 private:
  std::shared_ptr<FeatureNet> net_;
  int64_t input_size_;
};

/// Image-to-vector extractor used for FID statistics.
class FidFeatureExtractor {
 public:
  virtual ~FidFeatureExtractor() = default;
  /// N x 3 x H x W in [-1, 1] -> N x dim.
  virtual torch::Tensor extract(const torch::Tensor& images) const = 0;
  virtual int64_t dim() const = 0;
  virtual bool calibrated() const = 0;
  virtual std::string name() const = 0;
};

/// Inception pooling features from a TorchScript asset; inputs are resized to 299 x 299.
std::shared_ptr<FidFeatureExtractor> load_scripted_fid_extractor(const std::filesystem::path& path);

/// Seeded random convolutional extractor with 2048 pooled outputs.
std::shared_ptr<FidFeatureExtractor> make_uncalibrated_fid_extractor(uint64_t seed);

/// Frechet distance between Gaussians fitted to two feature sets (rows are samples).
///
/// Negative eigenvalue residue of magnitude below 1e-6 (relative to the largest
/// eigenvalue) is clamped to zero; anything larger raises NumericError.
double fid(const torch::Tensor& features_a, const torch::Tensor& features_b);

/// FID between two image sets through `extractor`, batched.
double fid_images(const FidFeatureExtractor& extractor, const torch::Tensor& images_a,
                  const torch::Tensor& images_b, int64_t batch_size = 256);

struct AssetOptions {
  /// Directory with lpips_alex.pt and inception_fid.pt; defaults to $CASC_ASSET_DIR.
  std::optional<std::filesystem::path> dir;
  /// Fall back to seeded random networks when the pretrained files are missing.
  bool allow_uncalibrated = false;
  uint64_t fallback_seed = 0;
  /// Expected SHA-256 of each file; empty skips verification.
  std::string lpips_sha256;
  std::string fid_sha256;
};

struct MetricAssets {
  std::shared_ptr<FeatureNet> lpips_net;
  std::shared_ptr<FidFeatureExtractor> fid_extractor;

  bool calibrated() const { return lpips_net->calibrated() && fid_extractor->calibrated(); }
  std::string describe() const;
};

inline constexpr const char* kLpipsAssetFile = "lpips_alex.pt";
inline constexpr const char* kFidAssetFile = "inception_fid.pt";

/// Resolves metric networks. Throws AssetError (with export instructions) when a
/// pretrained file is missing and fallbacks are not allowed.
MetricAssets load_metric_assets(const AssetOptions& options);

}  // namespace casc::eval
