#include "casc/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>

#include <torch/script.h>

#include "casc/hashing.hpp"

namespace casc::eval {

namespace nn = torch::nn;
namespace fs = std::filesystem;

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw ArgumentError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                        c10::str(b.sizes()));
  }
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t size) {
  if (x.size(2) == size && x.size(3) == size) return x;
  return nn::functional::interpolate(x, nn::functional::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{size, size})
                                            .mode(torch::kBilinear)
                                            .align_corners(false));
}

void seeded_kaiming(nn::Module& module, uint64_t seed) {
  auto gen = make_generator(seed);
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters()) {
    auto& t = p.value();
    if (t.dim() > 1) {
      const double fan_in = static_cast<double>(t.numel() / t.size(0));
      t.copy_(torch::randn(t.sizes(), gen) * std::sqrt(2.0 / fan_in));
    } else {
      t.zero_();
    }
  }
}

class AlexFeaturesImpl : public nn::Module {
 public:
  AlexFeaturesImpl() {
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, 64, 11).stride(4).padding(2)));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(64, 192, 5).padding(2)));
    conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(192, 384, 3).padding(1)));
    conv4 = register_module("conv4", nn::Conv2d(nn::Conv2dOptions(384, 256, 3).padding(1)));
    conv5 = register_module("conv5", nn::Conv2d(nn::Conv2dOptions(256, 256, 3).padding(1)));
    shift = register_buffer("shift", torch::tensor({-0.030, -0.088, -0.188}).view({1, 3, 1, 1}));
    scale = register_buffer("scale", torch::tensor({0.458, 0.448, 0.450}).view({1, 3, 1, 1}));
  }

  std::vector<torch::Tensor> forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> taps;
    auto h = (x - shift) / scale;
    h = torch::relu(conv1(h));
    taps.push_back(h);
    h = torch::relu(conv2(torch::max_pool2d(h, 3, 2)));
    taps.push_back(h);
    h = torch::relu(conv3(torch::max_pool2d(h, 3, 2)));
    taps.push_back(h);
    h = torch::relu(conv4(h));
    taps.push_back(h);
    h = torch::relu(conv5(h));
    taps.push_back(h);
    return taps;
  }

  nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr}, conv5{nullptr};
  torch::Tensor shift, scale;
};
TORCH_MODULE(AlexFeatures);

class UncalibratedFeatureNet final : public FeatureNet {
 public:
  explicit UncalibratedFeatureNet(uint64_t seed) : seed_(seed) {
    seeded_kaiming(*net_, seed);
    net_->eval();
    for (auto& p : net_->parameters()) p.set_requires_grad(false);
    for (int64_t c : {64, 192, 384, 256, 256}) weights_.push_back(torch::ones({1, c, 1, 1}));
  }
  std::vector<torch::Tensor> features(const torch::Tensor& images) const override {
    return net_->forward(images);
  }
  const std::vector<torch::Tensor>& layer_weights() const override { return weights_; }
  std::string name() const override { return "uncalibrated-alex(seed=" + std::to_string(seed_) + ")"; }
  bool calibrated() const override { return false; }
  void to(torch::Dtype dtype) override {
    net_->to(dtype);
    for (auto& w : weights_) w = w.to(dtype);
  }

 private:
  uint64_t seed_;
  mutable AlexFeatures net_;
  std::vector<torch::Tensor> weights_;
};

class ScriptedFeatureNet final : public FeatureNet {
 public:
  explicit ScriptedFeatureNet(const fs::path& path) : path_(path) {
    module_ = torch::jit::load(path.string());
    module_.eval();
    for (int i = 0; module_.hasattr("lin" + std::to_string(i)); ++i) {
      weights_.push_back(module_.attr("lin" + std::to_string(i)).toTensor().detach());
    }
    if (weights_.empty()) throw AssetError(path.string() + ": missing lin0.. channel weights");
  }
  std::vector<torch::Tensor> features(const torch::Tensor& images) const override {
    auto out = const_cast<torch::jit::Module&>(module_).forward({images});
    std::vector<torch::Tensor> taps;
    for (const auto& v : out.toList()) taps.push_back(v.get().toTensor());
    if (taps.size() != weights_.size()) {
      throw AssetError(path_.string() + ": feature/weight layer count mismatch");
    }
    return taps;
  }
  const std::vector<torch::Tensor>& layer_weights() const override { return weights_; }
  std::string name() const override { return "scripted:" + path_.filename().string(); }
  bool calibrated() const override { return true; }
  void to(torch::Dtype dtype) override {
    module_.to(dtype);
    for (auto& w : weights_) w = w.to(dtype);
  }

 private:
  fs::path path_;
  torch::jit::Module module_;
  std::vector<torch::Tensor> weights_;
};

class RandomConvExtractorImpl : public nn::Module {
 public:
  RandomConvExtractorImpl() {
    body = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, 64, 3).padding(1)), nn::ReLU(),
                               nn::Conv2d(nn::Conv2dOptions(64, 128, 3).stride(2).padding(1)), nn::ReLU(),
                               nn::Conv2d(nn::Conv2dOptions(128, 256, 3).stride(2).padding(1)), nn::ReLU(),
                               nn::Conv2d(nn::Conv2dOptions(256, 2048, 1)), nn::ReLU()));
  }
  torch::Tensor forward(const torch::Tensor& x) { return body->forward(x).mean({2, 3}); }
  nn::Sequential body{nullptr};
};
TORCH_MODULE(RandomConvExtractor);

class UncalibratedFidExtractor final : public FidFeatureExtractor {
 public:
  explicit UncalibratedFidExtractor(uint64_t seed) : seed_(seed) {
    seeded_kaiming(*net_, seed);
    net_->eval();
  }
  torch::Tensor extract(const torch::Tensor& images) const override {
    torch::NoGradGuard no_grad;
    return net_->forward(images.to(torch::kFloat)).to(torch::kDouble);
  }
  int64_t dim() const override { return 2048; }
  bool calibrated() const override { return false; }
  std::string name() const override { return "uncalibrated-conv(seed=" + std::to_string(seed_) + ")"; }

 private:
  uint64_t seed_;
  mutable RandomConvExtractor net_;
};

class ScriptedFidExtractor final : public FidFeatureExtractor {
 public:
  explicit ScriptedFidExtractor(const fs::path& path) : path_(path) {
    module_ = torch::jit::load(path.string());
    module_.eval();
  }
  torch::Tensor extract(const torch::Tensor& images) const override {
    torch::NoGradGuard no_grad;
    auto x = resize_bilinear(images.to(torch::kFloat), 299);
    auto out = const_cast<torch::jit::Module&>(module_).forward({x}).toTensor();
    return out.flatten(1).to(torch::kDouble);
  }
  int64_t dim() const override { return 2048; }
  bool calibrated() const override { return true; }
  std::string name() const override { return "scripted:" + path_.filename().string(); }

 private:
  fs::path path_;
  torch::jit::Module module_;
};

std::string asset_instructions(const fs::path& dir) {
  return "Export the pretrained metric networks on a machine with internet access:\n"
         "  pip install torch torchvision lpips\n"
         "  python3 tools/export_metric_assets.py --out " + dir.string() + "\n"
         "then set CASC_ASSET_DIR to that directory (or allow uncalibrated metrics).";
}

fs::path resolve_asset_dir(const AssetOptions& options) {
  if (options.dir) return *options.dir;
  if (const char* env = std::getenv("CASC_ASSET_DIR")) return fs::path(env);
  return fs::path("assets");
}

void verify_hash(const fs::path& file, const std::string& expected) {
  if (expected.empty()) return;
  const auto actual = sha256_file(file);
  if (actual != expected) {
    throw AssetError(file.string() + ": sha256 " + actual + " does not match configured " + expected);
  }
}

}  // namespace

double psnr(const ImageBatch& reference, const ImageBatch& reconstruction) {
  check_same_shape(reference.tensor(), reconstruction.tensor(), "psnr");
  auto diff = (reference.tensor().to(torch::kDouble) - reconstruction.tensor().to(torch::kDouble)) / 2.0;
  return psnr_from_mse(diff.pow(2).mean().item<double>());
}

torch::Tensor psnr_per_image(const ImageBatch& reference, const ImageBatch& reconstruction) {
  check_same_shape(reference.tensor(), reconstruction.tensor(), "psnr");
  auto diff = (reference.tensor().to(torch::kDouble) - reconstruction.tensor().to(torch::kDouble)) / 2.0;
  auto mse = diff.pow(2).flatten(1).mean(1);
  auto out = torch::empty_like(mse);
  for (int64_t i = 0; i < mse.size(0); ++i) out[i] = psnr_from_mse(mse[i].item<double>());
  return out;
}

std::shared_ptr<FeatureNet> load_scripted_feature_net(const fs::path& path) {
  if (!fs::exists(path)) throw AssetError("missing perceptual asset " + path.string());
  return std::make_shared<ScriptedFeatureNet>(path);
}

std::shared_ptr<FeatureNet> make_uncalibrated_feature_net(uint64_t seed) {
  return std::make_shared<UncalibratedFeatureNet>(seed);
}

Lpips::Lpips(std::shared_ptr<FeatureNet> net, int64_t input_size)
    : net_(std::move(net)), input_size_(input_size) {
  if (!net_) throw AssetError("Lpips: no feature network");
}

torch::Tensor Lpips::distance(const torch::Tensor& x, const torch::Tensor& y) const {
  check_same_shape(x, y, "lpips");
  const auto fx = net_->features(resize_bilinear(x, input_size_));
  const auto fy = net_->features(resize_bilinear(y, input_size_));
  const auto& weights = net_->layer_weights();
  torch::Tensor total;
  for (size_t l = 0; l < fx.size(); ++l) {
    auto nx = fx[l] / (fx[l].pow(2).sum(1, true).sqrt() + 1e-10);
    auto ny = fy[l] / (fy[l].pow(2).sum(1, true).sqrt() + 1e-10);
    auto layer = ((nx - ny).pow(2) * weights[l]).sum(1).mean({1, 2});
    total = l == 0 ? layer : total + layer;
  }
  return total;
}

double Lpips::mean_distance(const ImageBatch& x, const ImageBatch& y) const {
  torch::NoGradGuard no_grad;
  return distance(x.tensor(), y.tensor()).to(torch::kDouble).mean().item<double>();
}

std::shared_ptr<FidFeatureExtractor> load_scripted_fid_extractor(const fs::path& path) {
  if (!fs::exists(path)) throw AssetError("missing FID asset " + path.string());
  return std::make_shared<ScriptedFidExtractor>(path);
}

std::shared_ptr<FidFeatureExtractor> make_uncalibrated_fid_extractor(uint64_t seed) {
  return std::make_shared<UncalibratedFidExtractor>(seed);
}

double fid(const torch::Tensor& features_a, const torch::Tensor& features_b) {
  if (features_a.dim() != 2 || features_b.dim() != 2 || features_a.size(1) != features_b.size(1)) {
    throw ArgumentError("fid: feature matrices must be N x D and M x D");
  }
  if (features_a.size(0) < 2 || features_b.size(0) < 2) {
    throw ArgumentError("fid: need at least two samples per set");
  }
  const int64_t dim = features_a.size(1);
  if (features_a.size(0) <= dim || features_b.size(0) <= dim) {
    std::cerr << "warning: fid with " << features_a.size(0) << " and " << features_b.size(0)
              << " samples in " << dim << " dimensions; covariance estimates are rank deficient\n";
  }
  auto stats = [](const torch::Tensor& f) {
    auto x = f.to(torch::kDouble);
    auto mu = x.mean(0);
    auto centered = x - mu;
    auto cov = torch::matmul(centered.t(), centered) / static_cast<double>(x.size(0) - 1);
    return std::pair{mu, 0.5 * (cov + cov.t())};
  };
  auto [mu_a, cov_a] = stats(features_a);
  auto [mu_b, cov_b] = stats(features_b);

  auto clamp_checked = [](torch::Tensor eig) {
    const double top = std::max(1.0, eig.abs().max().item<double>());
    if (eig.min().item<double>() < -1e-6 * top) {
      throw NumericError("fid: covariance product has eigenvalue " +
                         std::to_string(eig.min().item<double>()) + " beyond clamping tolerance");
    }
    return eig.clamp_min(0.0);
  };

  // Tr((A B)^{1/2}) = Tr((A^{1/2} B A^{1/2})^{1/2}) for symmetric PSD A, B.
  auto [eval_a, evec_a] = torch::linalg_eigh(cov_a);
  auto sqrt_a = torch::matmul(evec_a * clamp_checked(eval_a).sqrt().unsqueeze(0), evec_a.t());
  auto inner = torch::matmul(torch::matmul(sqrt_a, cov_b), sqrt_a);
  inner = 0.5 * (inner + inner.t());
  auto eval_inner = clamp_checked(torch::linalg_eigvalsh(inner));
  const double trace_sqrt = eval_inner.sqrt().sum().item<double>();

  const double mean_term = (mu_a - mu_b).pow(2).sum().item<double>();
  const double value = mean_term + cov_a.trace().item<double>() + cov_b.trace().item<double>() -
                       2.0 * trace_sqrt;
  return std::max(0.0, value);
}

double fid_images(const FidFeatureExtractor& extractor, const torch::Tensor& images_a,
                  const torch::Tensor& images_b, int64_t batch_size) {
  auto features = [&](const torch::Tensor& images) {
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < images.size(0); i += batch_size) {
      parts.push_back(extractor.extract(images.slice(0, i, std::min(images.size(0), i + batch_size))));
    }
    return torch::cat(parts);
  };
  return fid(features(images_a), features(images_b));
}

std::string MetricAssets::describe() const {
  return "lpips=" + lpips_net->name() + ", fid=" + fid_extractor->name();
}

MetricAssets load_metric_assets(const AssetOptions& options) {
  const fs::path dir = resolve_asset_dir(options);
  MetricAssets assets;
  const fs::path lpips_file = dir / kLpipsAssetFile;
  const fs::path fid_file = dir / kFidAssetFile;
  if (fs::exists(lpips_file)) {
    verify_hash(lpips_file, options.lpips_sha256);
    assets.lpips_net = load_scripted_feature_net(lpips_file);
  } else if (options.allow_uncalibrated) {
    assets.lpips_net = make_uncalibrated_feature_net(options.fallback_seed);
  } else {
    throw AssetError("perceptual metric asset not found at " + lpips_file.string() + "\n" +
                     asset_instructions(dir));
  }
  if (fs::exists(fid_file)) {
    verify_hash(fid_file, options.fid_sha256);
    assets.fid_extractor = load_scripted_fid_extractor(fid_file);
  } else if (options.allow_uncalibrated) {
    assets.fid_extractor = make_uncalibrated_fid_extractor(options.fallback_seed + 1);
  } else {
    throw AssetError("FID feature asset not found at " + fid_file.string() + "\n" +
                     asset_instructions(dir));
  }
  return assets;
}

}  // namespace casc::eval
