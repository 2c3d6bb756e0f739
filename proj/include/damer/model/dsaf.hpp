// Copyright 2026 The damer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "damer/core/checkpoint.hpp"
#include "damer/core/error.hpp"
#include "damer/core/nn.hpp"
#include "damer/core/ops.hpp"
#include "damer/core/rng.hpp"
#include "damer/core/tensor.hpp"
#include "damer/features/spectral.hpp"

namespace damer::model {

struct ModelConfig {
  std::size_t mel_bands = 128;
  std::size_t coch_channels = 84;
  std::size_t max_tokens = 87;  // positional table length
  std::size_t embed_dim = 128;
  std::size_t fusion_dim = 256;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_expansion = 4;
  std::size_t classes = 2;
  double dropout = 0.1;
  bool positional = true;
  bool cross_view = true;  // false: views are encoded independently

  void validate() const {
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
      fail(ErrorKind::kHeadDivisibility, "embed_dim must be a positive multiple of heads");
    }
    if (fusion_dim == 0 || classes < 2 || mel_bands == 0 || coch_channels == 0 || ffn_expansion == 0) {
      fail(ErrorKind::kConfigError, "model dimensions must be positive (classes >= 2)");
    }
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::kConfigError, "dropout must lie in [0, 1)");
  }
};

/// Per-view token sequences in the shared embedding space.
template <typename T>
struct TokenSet {
  Tensor<T> mel;   // [B x N_mel x D]
  Tensor<T> coch;  // [B x N_coch x D]
};

template <typename T>
struct BranchOutputs {
  Tensor<T> z_mel;   // [B x D]
  Tensor<T> z_coch;  // [B x D]
  Tensor<T> z_fuse;  // [B x D_f]
  Tensor<T> logits_mel;
  Tensor<T> logits_coch;
  Tensor<T> logits_fuse;
};

/// Token-major inputs: one token per frame, feature = frequency column.
template <typename T>
struct ViewBatch {
  Tensor<T> mel;   // [B x frames x mel_bands]
  Tensor<T> coch;  // [B x frames x coch_channels]
};

/// One attention direction: MHA -> dropout -> residual -> LN, then
/// FFN -> dropout -> residual -> LN.
template <typename T>
struct CrossViewBlock {
  MultiHeadAttention<T> attention;
  LayerNormLayer<T> attention_norm;
  FeedForward<T> ffn;
  LayerNormLayer<T> ffn_norm;

  Tensor<T> operator()(const Tensor<T>& self, const Tensor<T>& other, const ForwardContext& ctx) const {
    const auto attended = multi_head_attention(self, other, other, attention);
    const auto h1 = attention_norm(add(self, dropout(attended, ctx.dropout, ctx.rng, ctx.training)));
    return ffn_norm(add(h1, dropout(ffn(h1), ctx.dropout, ctx.rng, ctx.training)));
  }
};

template <typename T>
struct CrossViewLayer {
  CrossViewBlock<T> mel_from_coch;
  CrossViewBlock<T> coch_from_mel;
};

template <typename T>
CrossViewBlock<T> make_block(ParameterStore<T>& store, const std::string& name, const ModelConfig& cfg, Rng& rng) {
  CrossViewBlock<T> block;
  block.attention = make_attention(store, name + ".attn", cfg.embed_dim, cfg.heads, rng);
  block.attention_norm = make_layer_norm(store, name + ".norm1", cfg.embed_dim);
  block.ffn = make_feed_forward(store, name + ".ffn", cfg.embed_dim, cfg.ffn_expansion, rng);
  block.ffn_norm = make_layer_norm(store, name + ".norm2", cfg.embed_dim);
  return block;
}

/// Both directions read the same input tokens; neither sees the other's
/// update within a layer.
template <typename T>
TokenSet<T> cross_view_layer(const TokenSet<T>& tokens, const CrossViewLayer<T>& layer, const ForwardContext& ctx) {
  return {layer.mel_from_coch(tokens.mel, tokens.coch, ctx), layer.coch_from_mel(tokens.coch, tokens.mel, ctx)};
}

/// Dual-stream attention fusion network with three classification heads.
template <typename T>
class DsafModel {
 public:
  DsafModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    mel_proj_ = make_linear(store_, "mel_proj", cfg_.mel_bands, cfg_.embed_dim, rng);
    coch_proj_ = make_linear(store_, "coch_proj", cfg_.coch_channels, cfg_.embed_dim, rng);
    if (cfg_.positional) {
      mel_pos_ = store_.uniform("mel_pos", {cfg_.max_tokens, cfg_.embed_dim}, 0.02, rng);
      coch_pos_ = store_.uniform("coch_pos", {cfg_.max_tokens, cfg_.embed_dim}, 0.02, rng);
    }
    if (cfg_.cross_view) {
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string name = "layers." + std::to_string(l);
        layers_.push_back({make_block(store_, name + ".mel_from_coch", cfg_, rng),
                           make_block(store_, name + ".coch_from_mel", cfg_, rng)});
      }
    }
    fusion_in_ = make_linear(store_, "fusion.fc1", 2 * cfg_.embed_dim, cfg_.fusion_dim, rng);
    fusion_out_ = make_linear(store_, "fusion.fc2", cfg_.fusion_dim, cfg_.fusion_dim, rng);
    head_mel_ = make_linear(store_, "head.mel", cfg_.embed_dim, cfg_.classes, rng);
    head_coch_ = make_linear(store_, "head.coch", cfg_.embed_dim, cfg_.classes, rng);
    head_fuse_ = make_linear(store_, "head.fuse", cfg_.fusion_dim, cfg_.classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  std::vector<CrossViewLayer<T>>& layers() { return layers_; }
  LinearLayer<T>& mel_projection() { return mel_proj_; }
  LinearLayer<T>& coch_projection() { return coch_proj_; }
  LinearLayer<T>& head_mel() { return head_mel_; }
  LinearLayer<T>& head_coch() { return head_coch_; }
  LinearLayer<T>& head_fuse() { return head_fuse_; }

  /// Frame columns projected to D, plus positional embeddings when enabled.
  TokenSet<T> tokenize_views(const ViewBatch<T>& views) const {
    check_view(views.mel, cfg_.mel_bands, "mel");
    check_view(views.coch, cfg_.coch_channels, "coch");
    TokenSet<T> tokens{mel_proj_(views.mel), coch_proj_(views.coch)};
    if (cfg_.positional) {
      tokens.mel = add_broadcast(tokens.mel, positions(mel_pos_, views.mel.dim(1)));
      tokens.coch = add_broadcast(tokens.coch, positions(coch_pos_, views.coch.dim(1)));
    }
    return tokens;
  }

  /// Pooled view features and fused representation; logits left empty.
  BranchOutputs<T> encode(const ViewBatch<T>& views, const ForwardContext& ctx) const {
    auto tokens = tokenize_views(views);
    for (const auto& layer : layers_) tokens = cross_view_layer(tokens, layer, ctx);
    BranchOutputs<T> out;
    out.z_mel = mean_tokens(tokens.mel);
    out.z_coch = mean_tokens(tokens.coch);
    out.z_fuse = fusion_out_(gelu(fusion_in_(concat_last(out.z_mel, out.z_coch))));
    return out;
  }

  /// Fills the three heads' logits from populated features.
  BranchOutputs<T> classify(BranchOutputs<T> features) const {
    features.logits_mel = head_mel_(features.z_mel);
    features.logits_coch = head_coch_(features.z_coch);
    features.logits_fuse = head_fuse_(features.z_fuse);
    return features;
  }

  BranchOutputs<T> forward(const ViewBatch<T>& views, const ForwardContext& ctx) const {
    return classify(encode(views, ctx));
  }

  std::vector<NamedArray> export_parameters() const {
    std::vector<NamedArray> out;
    for (const auto& [name, t] : store_.entries()) out.push_back(to_named_array(name, t));
    return out;
  }

  /// Copies values in; names, count and shapes must match exactly.
  void import_parameters(const std::vector<NamedArray>& arrays) {
    auto& entries = store_.entries();
    if (arrays.size() != entries.size()) {
      fail(ErrorKind::kCheckpointMismatch, "checkpoint has " + std::to_string(arrays.size()) +
                                               " parameters, model expects " + std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      auto& [name, t] = entries[i];
      if (arrays[i].name != name || arrays[i].dims != t.dims()) {
        fail(ErrorKind::kCheckpointMismatch, "parameter " + arrays[i].name + " does not match " + name);
      }
      auto dst = t.mutable_values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(arrays[i].values[j]);
    }
  }

 private:
  static void check_view(const Tensor<T>& view, std::size_t width, const char* name) {
    if (view.rank() != 3 || view.dim(2) != width) {
      fail(ErrorKind::kShapeMismatch, std::string(name) + " view must be [B x frames x " + std::to_string(width) +
                                          "], got " + shape_str(view.dims()));
    }
  }

  Tensor<T> positions(const Tensor<T>& table, std::size_t n) const {
    if (n > cfg_.max_tokens) {
      fail(ErrorKind::kShapeMismatch, std::to_string(n) + " tokens exceed the positional table");
    }
    if (n == cfg_.max_tokens) return table;
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return select_rows(table, rows);
  }

  ModelConfig cfg_;
  ParameterStore<T> store_;
  LinearLayer<T> mel_proj_;
  LinearLayer<T> coch_proj_;
  Tensor<T> mel_pos_;
  Tensor<T> coch_pos_;
  std::vector<CrossViewLayer<T>> layers_;
  LinearLayer<T> fusion_in_;
  LinearLayer<T> fusion_out_;
  LinearLayer<T> head_mel_;
  LinearLayer<T> head_coch_;
  LinearLayer<T> head_fuse_;
};

/// Builds a token-major batch from grams ([rows x frames] each), applying
/// optional per-row standardisation (mean, inverse std).
template <typename T>
ViewBatch<T> make_view_batch(const std::vector<const features::FeaturePair*>& pairs,
                             const std::vector<float>* mel_stats = nullptr,
                             const std::vector<float>* coch_stats = nullptr) {
  if (pairs.empty()) fail(ErrorKind::kShapeMismatch, "empty batch");
  auto pack = [&](auto gram_of, const std::vector<float>* stats) {
    const features::Gram& first = gram_of(*pairs.front());
    const std::size_t rows = first.rows, frames = first.frames;
    std::vector<T> data(pairs.size() * frames * rows);
    for (std::size_t b = 0; b < pairs.size(); ++b) {
      const features::Gram& g = gram_of(*pairs[b]);
      if (g.rows != rows || g.frames != frames) fail(ErrorKind::kShapeMismatch, "batch grams differ in shape");
      for (std::size_t r = 0; r < rows; ++r) {
        const T mean = stats ? static_cast<T>((*stats)[r]) : T{0};
        const T inv = stats ? static_cast<T>((*stats)[rows + r]) : T{1};
        for (std::size_t t = 0; t < frames; ++t) {
          data[(b * frames + t) * rows + r] = (static_cast<T>(g.values[r * frames + t]) - mean) * inv;
        }
      }
    }
    return Tensor<T>::constant({pairs.size(), frames, rows}, std::move(data));
  };
  return {pack([](const features::FeaturePair& p) -> const features::Gram& { return p.mel; }, mel_stats),
          pack([](const features::FeaturePair& p) -> const features::Gram& { return p.coch; }, coch_stats)};
}

}  // namespace damer::model
