#include "fvlfp/encoder.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "fvlfp/cdfp.hpp"
#include "fvlfp/error.hpp"
#include "fvlfp/ops.hpp"
#include "fvlfp/rng.hpp"

namespace fvlfp::enc {

namespace ops = num::ops;

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (dim == 0) fail("dim must be positive");
  if (layers == 0) fail("layers must be positive");
  if (heads == 0 || dim % heads != 0) fail("dim must be divisible by heads");
  if (patch_size == 0 || image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (prompt_tokens < 1) fail("K (prompt_tokens) must be at least 1");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

namespace {

Tensor normal_tensor(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

FrozenBackbone FrozenBackbone::create(const EncoderConfig& config) {
  if (config.dim == 0 || config.heads == 0 || config.dim % config.heads != 0) {
    throw ConfigError("dim must be a positive multiple of heads");
  }
  FrozenBackbone b;
  b.config_ = config;
  const std::size_t d = config.dim, hidden = config.dim * config.mlp_ratio, pp = config.patch_pixels();
  Rng rng(derive_seed(config.seed, "frozen-backbone"));
  b.patch_weight_ = normal_tensor({pp, d}, 1.0 / std::sqrt(static_cast<double>(pp)), rng);
  b.patch_bias_ = normal_tensor({d}, 0.1, rng);
  b.cls_token_ = normal_tensor({d}, 1.0, rng);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerWeights w;
    w.ln1_gain = Tensor({d}, 1.0);
    w.ln1_bias = Tensor({d});
    w.qkv_weight = normal_tensor({d, 3 * d}, sd, rng);
    w.qkv_bias = normal_tensor({3 * d}, 0.02, rng);
    w.out_weight = normal_tensor({d, d}, 0.5 * sd, rng);
    w.out_bias = normal_tensor({d}, 0.02, rng);
    w.ln2_gain = Tensor({d}, 1.0);
    w.ln2_bias = Tensor({d});
    w.fc1_weight = normal_tensor({d, hidden}, sd, rng);
    w.fc1_bias = normal_tensor({hidden}, 0.02, rng);
    w.fc2_weight = normal_tensor({hidden, d}, 0.5 * sh, rng);
    w.fc2_bias = normal_tensor({d}, 0.02, rng);
    b.layers_.push_back(std::move(w));
  }
  b.final_gain_ = Tensor({d}, 1.0);
  b.final_bias_ = Tensor({d});
  b.projection_ = normal_tensor({d, d}, sd, rng);
  return b;
}

FrozenBackbone FrozenBackbone::with_projection(Tensor projection) const {
  if (projection.shape() != projection_.shape()) {
    throw DimensionError("with_projection: expected " + projection_.shape_string() + ", got " +
                         projection.shape_string());
  }
  num::require_finite(projection, "with_projection");
  FrozenBackbone b = *this;
  b.projection_ = std::move(projection);
  return b;
}

FrozenBackbone FrozenBackbone::with_layers(std::vector<LayerWeights> layers) const {
  if (layers.size() != config_.layers) throw DimensionError("with_layers: layer count mismatch");
  FrozenBackbone b = *this;
  b.layers_ = std::move(layers);
  return b;
}

std::uint64_t FrozenBackbone::content_hash() const {
  std::uint64_t h = num::content_hash(patch_weight_);
  h = num::content_hash(patch_bias_, h);
  h = num::content_hash(cls_token_, h);
  for (const auto& w : layers_) {
    for (const Tensor* t : {&w.ln1_gain, &w.ln1_bias, &w.qkv_weight, &w.qkv_bias, &w.out_weight,
                            &w.out_bias, &w.ln2_gain, &w.ln2_bias, &w.fc1_weight, &w.fc1_bias,
                            &w.fc2_weight, &w.fc2_bias}) {
      h = num::content_hash(*t, h);
    }
  }
  h = num::content_hash(final_gain_, h);
  h = num::content_hash(final_bias_, h);
  return num::content_hash(projection_, h);
}

PromptSet PromptSet::initial(const EncoderConfig& config, std::vector<std::string> categories,
                             std::uint64_t seed) {
  if (categories.size() != config.prompt_tokens) {
    throw ConfigError("prompt set needs one category label per token row: " +
                      std::to_string(config.prompt_tokens) + " rows, " +
                      std::to_string(categories.size()) + " labels");
  }
  PromptSet p;
  Rng rng(derive_seed(seed, "prompt-init"));
  for (std::size_t l = 0; l < config.layers; ++l)
    p.tokens.push_back(normal_tensor({config.prompt_tokens, config.dim}, 0.02, rng));
  for (std::size_t l = 1; l < config.layers; ++l) p.queries.emplace_back(std::vector<std::size_t>{config.dim});
  p.categories = std::move(categories);
  return p;
}

PromptSet PromptSet::empty(const EncoderConfig& config) {
  PromptSet p;
  for (std::size_t l = 0; l < config.layers; ++l) p.tokens.emplace_back(std::vector<std::size_t>{0, config.dim});
  for (std::size_t l = 1; l < config.layers; ++l) p.queries.emplace_back(std::vector<std::size_t>{config.dim});
  return p;
}

std::vector<Tensor> PromptSet::flatten() const {
  std::vector<Tensor> flat = tokens;
  flat.insert(flat.end(), queries.begin(), queries.end());
  return flat;
}

void PromptSet::assign(std::vector<Tensor> flat) {
  if (flat.size() != tokens.size() + queries.size()) throw DimensionError("PromptSet::assign: wrong count");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!flat[i].same_shape(tokens[i])) throw DimensionError("PromptSet::assign: token shape mismatch");
    tokens[i] = std::move(flat[i]);
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& src = flat[tokens.size() + i];
    if (!src.same_shape(queries[i])) throw DimensionError("PromptSet::assign: query shape mismatch");
    queries[i] = std::move(src);
  }
}

bool PromptSet::all_finite() const {
  for (const auto& t : tokens)
    if (!t.all_finite()) return false;
  for (const auto& q : queries)
    if (!q.all_finite()) return false;
  return true;
}

PromptVars register_prompts(Graph& g, const PromptSet& prompts, bool trainable) {
  PromptVars v;
  for (const auto& t : prompts.tokens) v.tokens.push_back(trainable ? g.parameter(t) : g.constant(t));
  for (const auto& q : prompts.queries) v.queries.push_back(trainable ? g.parameter(q) : g.constant(q));
  return v;
}

Tensor embed_patches(const FrozenBackbone& backbone, std::span<const double> pixels, std::size_t height,
                     std::size_t width) {
  const auto& cfg = backbone.config();
  const std::size_t p = cfg.patch_size;
  if (pixels.size() != height * width) throw DimensionError("embed_patches: pixel count does not match size");
  if (height % p != 0 || width % p != 0) {
    throw DimensionError("embed_patches: image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible into " + std::to_string(p) + "x" + std::to_string(p) + " patches");
  }
  const std::size_t gh = height / p, gw = width / p, pp = p * p;
  Tensor flat({gh * gw, pp});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* dst = flat.data() + (py * gw + px) * pp;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) dst[y * p + x] = pixels[(py * p + y) * width + px * p + x];
    }
  Tensor e = num::matmul(flat, backbone.patch_weight());
  const std::size_t d = e.cols();
  for (std::size_t j = 0; j < e.rows(); ++j)
    for (std::size_t c = 0; c < d; ++c) e[j * d + c] += backbone.patch_bias()[c];
  return e;
}

namespace {

struct LayerVars {
  Var ln1_gain, ln1_bias, qkv_weight, qkv_bias, out_weight, out_bias;
  Var ln2_gain, ln2_bias, fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

LayerVars constants_for(Graph& g, const LayerWeights& w) {
  return {g.constant(w.ln1_gain),   g.constant(w.ln1_bias),   g.constant(w.qkv_weight),
          g.constant(w.qkv_bias),   g.constant(w.out_weight), g.constant(w.out_bias),
          g.constant(w.ln2_gain),   g.constant(w.ln2_bias),   g.constant(w.fc1_weight),
          g.constant(w.fc1_bias),   g.constant(w.fc2_weight), g.constant(w.fc2_bias)};
}

Var transformer_layer(Graph& g, Var x, const LayerVars& w, std::size_t batch, std::size_t seq,
                      std::size_t heads, double eps) {
  Var h = ops::layernorm(g, x, w.ln1_gain, w.ln1_bias, eps);
  Var qkv = ops::linear(g, h, w.qkv_weight, w.qkv_bias);
  Var a = ops::attention(g, qkv, batch, seq, heads);
  x = ops::add(g, x, ops::linear(g, a, w.out_weight, w.out_bias));
  Var h2 = ops::layernorm(g, x, w.ln2_gain, w.ln2_bias, eps);
  Var m = ops::gelu(g, ops::linear(g, h2, w.fc1_weight, w.fc1_bias));
  return ops::add(g, x, ops::linear(g, m, w.fc2_weight, w.fc2_bias));
}

std::vector<ops::RowRef> broadcast_rows(std::size_t batch, std::size_t rows) {
  std::vector<ops::RowRef> map;
  map.reserve(batch * rows);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r) map.emplace_back(0, r);
  return map;
}

}  // namespace

EncodedBatch encode_image(Graph& g, const FrozenBackbone& backbone, Var patches, std::size_t batch,
                          const PromptVars& prompts, bool cdfp_enabled) {
  const auto& cfg = backbone.config();
  const std::size_t d = cfg.dim, layers = cfg.layers;
  const Tensor& E = g.value(patches);
  if (batch == 0 || E.rank() != 2 || E.cols() != d || E.rows() % batch != 0) {
    throw DimensionError("encode_image: patch block " + E.shape_string() + " does not split into " +
                         std::to_string(batch) + " samples of width " + std::to_string(d));
  }
  if (prompts.tokens.size() != layers || prompts.queries.size() + 1 != layers) {
    throw DimensionError("encode_image: prompt set has " + std::to_string(prompts.tokens.size()) +
                         " token layers for a " + std::to_string(layers) + "-layer tower");
  }
  const std::size_t K = g.value(prompts.tokens[0]).rows();
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& t = g.value(prompts.tokens[l]);
    if (t.rank() != 2 || t.rows() != K || t.cols() != d) {
      throw DimensionError("encode_image: prompt tokens at layer " + std::to_string(l) + " have shape " +
                           t.shape_string());
    }
    if (l > 0 && g.value(prompts.queries[l - 1]).size() != d) {
      throw DimensionError("encode_image: GAP query width mismatch");
    }
  }
  const std::size_t J = E.rows() / batch;
  const std::size_t S = 1 + K + J;

  Var cls = g.constant(backbone.cls_token().reshaped({1, d}));
  std::vector<ops::RowRef> map;
  map.reserve(batch * S);
  for (std::size_t b = 0; b < batch; ++b) {
    map.emplace_back(0, 0);
    for (std::size_t k = 0; k < K; ++k) map.emplace_back(1, k);
    for (std::size_t j = 0; j < J; ++j) map.emplace_back(2, b * J + j);
  }
  Var seq = ops::gather_rows(g, {cls, prompts.tokens[0], patches}, std::move(map));

  EncodedBatch out;
  std::vector<Var> history;
  if (K > 0) {
    Var p0 = ops::gather_rows(g, {prompts.tokens[0]}, broadcast_rows(batch, K));
    history.push_back(p0);
    out.prompt_states.push_back(p0);
  }

  for (std::size_t l = 0; l < layers; ++l) {
    const LayerVars w = constants_for(g, backbone.layers()[l]);
    seq = transformer_layer(g, seq, w, batch, S, cfg.heads, cfg.ln_eps);
    if (K == 0 || l + 1 == layers) continue;

    std::vector<ops::RowRef> slice;
    slice.reserve(batch * K);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < K; ++k) slice.emplace_back(0, b * S + 1 + k);
    Var state = ops::gather_rows(g, {seq}, std::move(slice));
    state = ops::add(g, state, ops::gather_rows(g, {prompts.tokens[l + 1]}, broadcast_rows(batch, K)));
    Var updated = cdfp_enabled ? cdfp::apply_cross_layer(g, state, history, prompts.queries[l], K) : state;
    history.push_back(cfg.compounding ? updated : state);
    out.prompt_states.push_back(updated);

    std::vector<ops::RowRef> merge;
    merge.reserve(batch * S);
    for (std::size_t b = 0; b < batch; ++b) {
      merge.emplace_back(0, b * S);
      for (std::size_t k = 0; k < K; ++k) merge.emplace_back(1, b * K + k);
      for (std::size_t j = 0; j < J; ++j) merge.emplace_back(0, b * S + 1 + K + j);
    }
    seq = ops::gather_rows(g, {seq, updated}, std::move(merge));
  }

  std::vector<ops::RowRef> cls_rows;
  cls_rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows.emplace_back(0, b * S);
  Var pooled = ops::gather_rows(g, {seq}, std::move(cls_rows));
  pooled = ops::layernorm(g, pooled, g.constant(backbone.final_gain()), g.constant(backbone.final_bias()),
                          cfg.ln_eps);
  out.z = ops::l2_normalize_rows(g, ops::linear(g, pooled, g.constant(backbone.projection())));
  return out;
}

Encoding encode_image(const FrozenBackbone& backbone, const Tensor& patches, const PromptSet& prompts,
                      bool cdfp_enabled) {
  Graph g;
  const PromptVars pv = register_prompts(g, prompts, false);
  const EncodedBatch e = encode_image(g, backbone, g.constant(patches), 1, pv, cdfp_enabled);
  Encoding out;
  out.z = g.value(e.z).reshaped({backbone.config().dim});
  for (auto v : e.prompt_states) out.prompt_states.push_back(g.value(v));
  return out;
}

TextEncoder::TextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ConfigError("text encoder dim must be positive");
  Rng rng(derive_seed(seed, "text-projection"));
  projection_ = normal_tensor({dim, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
}

Tensor TextEncoder::token_vector(std::string_view token) const {
  Rng rng(derive_seed(seed_, {fnv1a(token), 0x70b5ULL}));
  return normal_tensor({dim_}, 1.0, rng);
}

Tensor TextEncoder::encode(std::string_view text) const {
  std::string lowered(text);
  for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream in(lowered);
  std::string token;
  Tensor pooled({dim_});
  std::size_t count = 0;
  while (in >> token) {
    const Tensor v = token_vector(token);
    for (std::size_t i = 0; i < dim_; ++i) pooled[i] += v[i];
    ++count;
  }
  if (count == 0) throw DataError("encode_text: empty prompt string");
  for (auto& v : pooled.values()) v /= static_cast<double>(count);
  Tensor t = num::matmul(pooled.reshaped({1, dim_}), projection_).reshaped({dim_});
  const double n = num::norm2(t.values());
  if (!(n > 0.0)) throw NumericError("encode_text: zero embedding");
  for (auto& v : t.values()) v /= n;
  return t;
}

Tensor TextEncoder::encode_all(const std::vector<std::string>& texts) const {
  Tensor out({texts.size(), dim_});
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const Tensor t = encode(texts[i]);
    std::copy(t.values().begin(), t.values().end(), out.row(i).begin());
  }
  return out;
}

std::uint64_t TextEncoder::content_hash() const { return num::content_hash(projection_, seed_); }

PromptTemplates build_prompt_templates(std::string_view task, std::string_view attribute) {
  PromptTemplates t;
  if (task == "smiling") {
    t.classes = {"a photo of a person who is smiling", "a photo of a person who is not smiling"};
  } else if (task == "age") {
    t.classes = {"a photo of a young person", "a photo of a older person"};
  } else {
    throw ConfigError("unknown task '" + std::string(task) + "' (expected smiling or age)");
  }
  if (attribute == "gender") {
    t.groups = {"a photo of a man", "a photo of a woman"};
  } else {
    throw ConfigError("unknown sensitive attribute '" + std::string(attribute) + "' (expected gender)");
  }
  return t;
}

}  // namespace fvlfp::enc
