#include "nn/torch_util.hpp"

#include <cstring>

namespace imt::nn {

std::mutex& global_rng_mutex() {
  static std::mutex mu;
  return mu;
}

torch::Tensor frame_tensor(const Frame& f, int side) {
  const Frame r = resize_bilinear(f, side, side);
  auto t = torch::from_blob(const_cast<std::uint8_t*>(r.pixels.data()), {side, side, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).contiguous();
}

torch::Tensor mask_tensor(const Mask& m, int side) {
  const Mask r = resize_mask(m, side, side);
  auto t = torch::from_blob(const_cast<std::uint8_t*>(r.values.data()), {1, side, side}, torch::kUInt8);
  return t.to(torch::kFloat32).gt(127.0f).to(torch::kFloat32).contiguous();
}

FloatMap to_float_map(const torch::Tensor& hw) {
  auto t = hw.detach().to(torch::kFloat32).contiguous();
  const int h = static_cast<int>(t.size(0));
  const int w = static_cast<int>(t.size(1));
  FloatMap out(w, h);
  std::memcpy(out.values.data(), t.data_ptr<float>(), sizeof(float) * out.values.size());
  return out;
}

}  // namespace imt::nn
