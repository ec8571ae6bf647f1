#include "casc/tensors.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace casc {

ImageBatch::ImageBatch(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 4 || data_.size(1) != 3) {
    throw ArgumentError("ImageBatch expects B x 3 x H x W, got " +
                        c10::str(data_.sizes()));
  }
  if (data_.size(0) < 1) throw ArgumentError("ImageBatch needs at least one image");
}

LatentCode::LatentCode(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 4) {
    throw ArgumentError("LatentCode expects B x c x h x w, got " + c10::str(data_.sizes()));
  }
}

ConditionSignal::ConditionSignal(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 2) {
    throw ArgumentError("ConditionSignal expects B x d, got " + c10::str(data_.sizes()));
  }
}

at::Generator make_generator(uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

}  // namespace casc
