#pragma once

#include <vector>

#include <torch/torch.h>

#include "imt/segmentation.hpp"

namespace imt {

namespace nn {

struct DoubleConvImpl : torch::nn::Module {
  DoubleConvImpl(int in, int out) {
    seq = register_module(
        "seq", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(false)),
                                     torch::nn::BatchNorm2d(out), torch::nn::ReLU(true),
                                     torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1).bias(false)),
                                     torch::nn::BatchNorm2d(out), torch::nn::ReLU(true)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return seq->forward(x); }

  torch::nn::Sequential seq{nullptr};
};
TORCH_MODULE(DoubleConv);

}  // namespace nn

/// Encoder-decoder with skip connections. Input [N, C, R, R], output logits [N, 1, R, R].
struct UNet : torch::nn::Module {
  UNet(int in_channels, int depth, int base_width) {
    int width = base_width;
    int in = in_channels;
    for (int level = 0; level < depth; ++level) {
      encoders.push_back(register_module("enc" + std::to_string(level), nn::DoubleConv(in, width)));
      in = width;
      width *= 2;
    }
    bottleneck = register_module("bottleneck", nn::DoubleConv(in, width));
    for (int level = depth - 1; level >= 0; --level) {
      const int skip = base_width << level;
      decoders.push_back(register_module("dec" + std::to_string(level), nn::DoubleConv(width + skip, skip)));
      width = skip;
    }
    head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(base_width, 1, 1)));
  }

  torch::Tensor forward(torch::Tensor x) {
    std::vector<torch::Tensor> skips;
    for (auto& enc : encoders) {
      x = enc->forward(x);
      skips.push_back(x);
      x = torch::max_pool2d(x, 2);
    }
    x = bottleneck->forward(x);
    for (std::size_t i = 0; i < decoders.size(); ++i) {
      const torch::Tensor& skip = skips[skips.size() - 1 - i];
      x = torch::upsample_bilinear2d(x, {skip.size(2), skip.size(3)}, /*align_corners=*/false);
      x = decoders[i]->forward(torch::cat({x, skip}, 1));
    }
    return head->forward(x);
  }

  std::vector<nn::DoubleConv> encoders;
  nn::DoubleConv bottleneck{nullptr};
  std::vector<nn::DoubleConv> decoders;
  torch::nn::Conv2d head{nullptr};
};

}  // namespace imt
