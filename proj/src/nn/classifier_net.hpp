#pragma once

#include <torch/torch.h>

#include "imt/classifier.hpp"
#include "imt/image.hpp"
#include "nn/torch_util.hpp"

namespace imt {

/// Four conv blocks then global average pooling. The last two blocks run at 1/4 input
/// resolution and its output is kept for class-activation saliency.
struct ClassifierNet : torch::nn::Module {
  ClassifierNet(int num_classes, int embedding_dim) {
    auto conv = [](int in, int out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)); };
    c1 = register_module("c1", conv(3, 16));
    c2 = register_module("c2", conv(16, 32));
    c3 = register_module("c3", conv(32, 64));
    c4 = register_module("c4", conv(64, embedding_dim));
    auto bn = [](int ch) { return torch::nn::BatchNorm2d(ch); };
    n1 = register_module("n1", bn(16));
    n2 = register_module("n2", bn(32));
    n3 = register_module("n3", bn(64));
    n4 = register_module("n4", bn(embedding_dim));
    head = register_module("head", torch::nn::Linear(embedding_dim, num_classes));
  }

  torch::Tensor features(torch::Tensor x) {
    x = torch::max_pool2d(torch::relu(n1->forward(c1->forward(x))), 2);
    x = torch::max_pool2d(torch::relu(n2->forward(c2->forward(x))), 2);
    x = torch::relu(n3->forward(c3->forward(x)));
    return torch::relu(n4->forward(c4->forward(x)));
  }

  static torch::Tensor pool(const torch::Tensor& feats) { return feats.mean({2, 3}); }

  torch::Tensor forward(torch::Tensor x) { return head->forward(pool(features(std::move(x)))); }

  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr};
  torch::nn::BatchNorm2d n1{nullptr}, n2{nullptr}, n3{nullptr}, n4{nullptr};
  torch::nn::Linear head{nullptr};
};

namespace nn {

/// Frame -> [3, R, R] input scaled to [-1, 1]; mid-gray maps to ~0.
inline torch::Tensor classifier_input(const Frame& f, int side) { return frame_tensor(f, side).sub(0.5f).mul(2.0f); }

}  // namespace nn
}  // namespace imt
