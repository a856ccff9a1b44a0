#pragma once

#include <cstdint>
#include <mutex>

#include <torch/torch.h>

#include "imt/image.hpp"

namespace imt::nn {

/// torch's default generator is process-global; seeded weight init and training
/// hold this lock so concurrent jobs cannot interleave draws.
std::mutex& global_rng_mutex();

/// RGB frame -> [3, H, W] float tensor in [0,1], resized to side x side first.
torch::Tensor frame_tensor(const Frame& f, int side);
/// Binarized mask -> [1, H, W] float tensor of {0,1}, resized to side x side.
torch::Tensor mask_tensor(const Mask& m, int side);

FloatMap to_float_map(const torch::Tensor& hw);

}  // namespace imt::nn
