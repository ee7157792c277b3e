#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fvlfp/data.hpp"
#include "fvlfp/dsop.hpp"
#include "fvlfp/encoder.hpp"
#include "fvlfp/metrics.hpp"
#include "fvlfp/optim.hpp"

namespace fvlfp::fed {

using enc::PromptSet;
using num::Graph;
using num::Tensor;
using num::Var;

// Which of the three method components are active. The uniform-averaging
// baseline switches all of them off.
struct MethodFlags {
  bool cdfp = true;
  bool dsop = true;
  bool fpf = true;

  // fvlfp, fedavg_baseline, wo-cdfp, wo-dsop, wo-fpf
  static MethodFlags from_name(const std::string& name);
  friend bool operator==(const MethodFlags&, const MethodFlags&) = default;
};

enum class BiasMetric { phi_eq, phi_demo, phi_a };

// Frozen pieces every participant shares.
struct World {
  enc::FrozenBackbone backbone;
  Tensor class_text;  // row y is the class prompt embedding for label y
  dsop::DemographicSubspace subspace;
  double tau = 0.07;
};

// Replaces the backbone's output projection by a ridge fit that maps the
// promptless [cls] features of `corpus` onto normalize(t_class(y) + t_group(g)).
enc::FrozenBackbone align_backbone(const enc::FrozenBackbone& backbone, const Tensor& class_text,
                                   const Tensor& group_text, const data::Dataset& corpus, double ridge);

// Layer-0 patch embeddings, computed once per dataset.
struct SampleSet {
  Tensor patches;  // (n * tokens) x d
  std::size_t tokens = 0;
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const noexcept { return labels.size(); }
  SampleSet subset(std::span<const std::size_t> ids) const;
  Tensor batch(std::span<const std::size_t> ids) const;
};
// Image datasets go through the patch map; embedding datasets become one
// token per sample and must match the model width.
SampleSet prepare_samples(const enc::FrozenBackbone& backbone, const data::Dataset& ds);

struct TrainOptions {
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  // Cap on mini-batches per epoch; 0 runs the whole shard.
  std::size_t max_steps = 10;
  num::AdamWHyper adam;
  double mu = 0.3;
  double lambda1 = 1.0;
  dsop::TaskLossOptions task;
};

struct BatchLoss {
  Var total;
  double task = 0.0;
  double fair = 0.0;
};
// Client objective on the samples `ids` of `set`.
BatchLoss local_objective(Graph& g, const World& world, const enc::PromptVars& prompts, const SampleSet& set,
                          std::span<const std::size_t> ids, const MethodFlags& flags, const TrainOptions& opt);

// Embeddings used for prediction: debiased unit rows when DSOP is on, raw
// otherwise.
Tensor embed(const World& world, const PromptSet& prompts, const SampleSet& set, const MethodFlags& flags);
std::vector<int> predict(const World& world, const PromptSet& prompts, const SampleSet& set,
                         const MethodFlags& flags);
metrics::GroupConfusion confusion(const World& world, const PromptSet& prompts, const SampleSet& set,
                                  const MethodFlags& flags);

struct ClientState {
  std::size_t id = 0;
  SampleSet shard;
  // Shard rows used for the per-client true positive rates in F_global.
  std::vector<std::size_t> eval_ids;
  num::OptimizerState optimizer;
  std::uint64_t seed = 0;
};

struct ClientResult {
  PromptSet prompts;
  std::size_t steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};
// Batch order comes from a stream derived from (seed, round, id).
ClientResult client_update(ClientState& state, const PromptSet& global, const World& world,
                           const MethodFlags& flags, const TrainOptions& opt, std::size_t round);

struct Score {
  double score = 0.0;
  double accuracy = 0.0;
  double bias = 0.0;
  metrics::MetricRecord record;
};
// accuracy * (1 - bias); Phi_A is halved first so every bias lies in [0, 1].
Score score_from_record(const metrics::MetricRecord& r, BiasMetric bias);
Score score_prompt(const World& world, const PromptSet& prompts, const SampleSet& val, const MethodFlags& flags,
                   BiasMetric bias);

std::vector<double> fusion_weights(std::span<const double> scores);
PromptSet fuse_prompts(const std::vector<PromptSet>& sets, std::span<const double> scores);
PromptSet fuse_uniform(const std::vector<PromptSet>& sets);

struct RefineOptions {
  double lambda2 = 1.0;
  std::size_t steps = 10;
  std::size_t batch_size = 16;
  num::AdamWHyper adam;
};
// Class cross-entropy plus lambda2 * |soft accuracy(group 0) - soft accuracy(group 1)|.
Var refine_objective(Graph& g, const World& world, const enc::PromptVars& prompts, const SampleSet& set,
                     std::span<const std::size_t> ids, const MethodFlags& flags, double lambda2);
// Batches draw half their rows from each group of `val`.
PromptSet server_refine(const PromptSet& prompts, const World& world, const SampleSet& val,
                        const MethodFlags& flags, const RefineOptions& opt, std::uint64_t seed);

struct FederationConfig {
  std::size_t rounds = 20;
  TrainOptions train;
  RefineOptions refine;
  MethodFlags method;
  BiasMetric bias = BiasMetric::phi_eq;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
};

struct FederationInputs {
  World world;
  std::vector<ClientState> clients;
  SampleSet val;
  SampleSet test;
  PromptSet initial;
};

struct ClientRoundRecord {
  metrics::MetricRecord val;
  std::optional<double> score;
  double weight = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<ClientRoundRecord> clients;  // empty for round 0
  metrics::MetricRecord global;            // balanced test set
  std::vector<std::size_t> fglobal_excluded;
};

struct FederationReport {
  std::vector<RoundRecord> rounds;
  bool complete = true;
  std::string failure;
  std::uint64_t backbone_hash = 0;
  PromptSet final_prompts;
};

// Consumes the client states (optimizer moments evolve across rounds).
FederationReport run_federation(const FederationConfig& config, FederationInputs inputs);

}  // namespace fvlfp::fed
