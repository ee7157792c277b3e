#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fvlfp/graph.hpp"
#include "fvlfp/tensor.hpp"

namespace fvlfp::enc {

using num::Graph;
using num::Tensor;
using num::Var;

struct EncoderConfig {
  std::size_t dim = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t image_size = 32;  // square grayscale inputs
  std::size_t patch_size = 8;
  std::size_t prompt_tokens = 2;  // K
  std::size_t mlp_ratio = 2;
  double tau = 0.07;
  double ln_eps = 1e-5;
  // Whether the GAP-updated prompt state (rather than the raw layer output)
  // is what deeper layers see in their history.
  bool compounding = true;
  std::uint64_t seed = 1;

  std::size_t patch_count() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_pixels() const { return patch_size * patch_size; }
  // Throws ConfigError on inconsistent sizes.
  void validate() const;
};

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;  // d x 3d, 3d
  Tensor out_weight, out_bias;  // d x d, d
  Tensor ln2_gain, ln2_bias;
  Tensor fc1_weight, fc1_bias;  // d x h, h
  Tensor fc2_weight, fc2_bias;  // h x d, d
};

// Seeded, immutable image tower. Nothing in here is ever a graph parameter.
class FrozenBackbone {
 public:
  static FrozenBackbone create(const EncoderConfig& config);

  const EncoderConfig& config() const noexcept { return config_; }
  const Tensor& patch_weight() const noexcept { return patch_weight_; }
  const Tensor& patch_bias() const noexcept { return patch_bias_; }
  const Tensor& cls_token() const noexcept { return cls_token_; }
  const std::vector<LayerWeights>& layers() const noexcept { return layers_; }
  const Tensor& final_gain() const noexcept { return final_gain_; }
  const Tensor& final_bias() const noexcept { return final_bias_; }
  const Tensor& projection() const noexcept { return projection_; }

  // Copy with a different output projection; used once, before training, to
  // align the tower with the text space.
  FrozenBackbone with_projection(Tensor projection) const;
  // Copy with explicitly supplied weights (tests build hand-made towers).
  FrozenBackbone with_layers(std::vector<LayerWeights> layers) const;

  std::uint64_t content_hash() const;

 private:
  EncoderConfig config_;
  Tensor patch_weight_;  // (h*w) x d
  Tensor patch_bias_;    // d
  Tensor cls_token_;     // d
  std::vector<LayerWeights> layers_;
  Tensor final_gain_, final_bias_;
  Tensor projection_;  // d x d
};

// Demographic prompt tokens per layer plus per-layer GAP queries: the only
// trainable tensors.
struct PromptSet {
  std::vector<Tensor> tokens;   // layers entries, each K x d
  std::vector<Tensor> queries;  // layers-1 entries, each length d (query for layer l at l-1)
  std::vector<std::string> categories;  // K row labels

  // Tokens drawn from N(0, 0.02^2), queries zero.
  static PromptSet initial(const EncoderConfig& config, std::vector<std::string> categories,
                           std::uint64_t seed);
  static PromptSet empty(const EncoderConfig& config);

  std::size_t token_count() const noexcept { return tokens.empty() ? 0 : tokens.front().rows(); }
  std::size_t layer_count() const noexcept { return tokens.size(); }

  // tokens..., queries... in that order.
  std::vector<Tensor> flatten() const;
  void assign(std::vector<Tensor> flat);
  bool all_finite() const;

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

// Graph handles for a PromptSet, registered as parameters (trainable) or constants.
struct PromptVars {
  std::vector<Var> tokens;
  std::vector<Var> queries;
};
PromptVars register_prompts(Graph& g, const PromptSet& prompts, bool trainable);

// Image -> J x d patch embeddings via the frozen affine patch map.
Tensor embed_patches(const FrozenBackbone& backbone, std::span<const double> pixels,
                     std::size_t height, std::size_t width);

struct EncodedBatch {
  Var z;  // batch x d, unit rows
  // Prompt slice after each layer boundary (batch*K x d); entry 0 is the
  // broadcast layer-0 prompt.
  std::vector<Var> prompt_states;
};

// Runs the prompted tower over `batch` token sequences. `patches` holds
// batch*J rows of layer-0 patch embeddings (J may be 1 for ingested feature
// vectors). Layer-0 sequence per sample is [cls; P_0; e_1..e_J]; between
// layers the prompt slice receives the layer's own token offset and, when
// `cdfp_enabled`, the cross-layer GAP residual. z is the L2-normalised
// projection of the final [cls] state.
EncodedBatch encode_image(Graph& g, const FrozenBackbone& backbone, Var patches, std::size_t batch,
                          const PromptVars& prompts, bool cdfp_enabled);

// Single-image convenience without gradients.
struct Encoding {
  Tensor z;
  std::vector<Tensor> prompt_states;
};
Encoding encode_image(const FrozenBackbone& backbone, const Tensor& patches, const PromptSet& prompts,
                      bool cdfp_enabled);

// Toy text tower: lowercase whitespace tokens -> seeded per-token vectors ->
// mean pool -> frozen linear map -> unit norm.
class TextEncoder {
 public:
  TextEncoder(std::size_t dim, std::uint64_t seed);
  Tensor encode(std::string_view text) const;
  Tensor encode_all(const std::vector<std::string>& texts) const;  // rows
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t content_hash() const;

 private:
  Tensor token_vector(std::string_view token) const;
  std::size_t dim_;
  std::uint64_t seed_;
  Tensor projection_;
};

struct PromptTemplates {
  // Class prompts in positive-first order: classes[0] describes label y = 1.
  std::vector<std::string> classes;
  // One prompt per sensitive group, indexed by group id.
  std::vector<std::string> groups;

  const std::string& for_label(int y) const { return classes.at(y == 1 ? 0 : 1); }
};

// Tasks: "smiling", "age". Attributes: "gender".
PromptTemplates build_prompt_templates(std::string_view task, std::string_view attribute);

}  // namespace fvlfp::enc
