#pragma once

#include <torch/torch.h>

#include <cmath>
#include <optional>

namespace semcd {

namespace nn = torch::nn;

/// Multi-head self-attention with an optional additive mask (S×S).
class SelfAttentionImpl : public nn::Module {
 public:
  SelfAttentionImpl(int dim, int heads) : heads_(heads), head_dim_(dim / heads) {
    TORCH_CHECK(dim % heads == 0, "width ", dim, " not divisible by ", heads, " heads");
    qkv = register_module("qkv", nn::Linear(dim, 3 * dim));
    proj = register_module("proj", nn::Linear(dim, dim));
  }

  torch::Tensor forward(const torch::Tensor& x, const std::optional<torch::Tensor>& mask = std::nullopt) {
    const auto b = x.size(0), s = x.size(1), d = x.size(2);
    auto parts = qkv->forward(x).reshape({b, s, 3, heads_, head_dim_}).permute({2, 0, 3, 1, 4});
    auto q = parts[0], k = parts[1], v = parts[2];
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
    if (mask) scores = scores + *mask;
    auto out = torch::matmul(torch::softmax(scores, -1), v);
    return proj->forward(out.transpose(1, 2).reshape({b, s, d}));
  }

  nn::Linear qkv{nullptr}, proj{nullptr};

 private:
  int heads_;
  int head_dim_;
};
TORCH_MODULE(SelfAttention);

/// Pre-norm transformer block.
class TransformerBlockImpl : public nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, int mlp_ratio) {
    norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
    attn = register_module("attn", SelfAttention(dim, heads));
    norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
    fc1 = register_module("fc1", nn::Linear(dim, dim * mlp_ratio));
    fc2 = register_module("fc2", nn::Linear(dim * mlp_ratio, dim));
  }

  torch::Tensor forward(torch::Tensor x, const std::optional<torch::Tensor>& mask = std::nullopt) {
    x = x + attn->forward(norm1->forward(x), mask);
    return x + fc2->forward(torch::gelu(fc1->forward(norm2->forward(x))));
  }

  nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  SelfAttention attn{nullptr};
  nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// N(0, std) weights and zero biases for every Linear under `module`.
inline void init_linear_normal(nn::Module& module, double std) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* lin = m->as<nn::Linear>()) {
      lin->weight.normal_(0.0, std);
      if (lin->bias.defined()) lin->bias.zero_();
    }
  }
}

/// He-normal (fan-out) weights and zero biases for every convolution under
/// `module`.
inline void init_conv_kaiming(nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    torch::Tensor weight, bias;
    if (auto* conv = m->as<nn::Conv2d>()) {
      weight = conv->weight, bias = conv->bias;
    } else if (auto* deconv = m->as<nn::ConvTranspose2d>()) {
      weight = deconv->weight, bias = deconv->bias;
    } else {
      continue;
    }
    nn::init::kaiming_normal_(weight, 0.0, torch::kFanOut, torch::kReLU);
    if (bias.defined()) bias.zero_();
  }
}

}  // namespace semcd
