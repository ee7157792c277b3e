#include "fvlfp/federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "fvlfp/error.hpp"
#include "fvlfp/linalg.hpp"
#include "fvlfp/ops.hpp"
#include "fvlfp/rng.hpp"

namespace fvlfp::fed {

namespace ops = num::ops;

namespace {

constexpr std::size_t kEvalChunk = 64;

Tensor rows_of(const Tensor& table, std::span<const int> index) {
  const std::size_t d = table.cols();
  Tensor out({index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = table.row(static_cast<std::size_t>(index[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Var forward(Graph& g, const World& world, const enc::PromptVars& pv, const SampleSet& set,
            std::span<const std::size_t> ids, const MethodFlags& flags, Var* raw = nullptr) {
  const auto e = enc::encode_image(g, world.backbone, g.constant(set.batch(ids)), ids.size(), pv, flags.cdfp);
  if (raw) *raw = e.z;
  return flags.dsop ? dsop::debias(g, e.z, world.subspace) : e.z;
}

std::vector<int> gather_labels(const std::vector<int>& src, std::span<const std::size_t> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(src[i]);
  return out;
}

}  // namespace

MethodFlags MethodFlags::from_name(const std::string& name) {
  if (name == "fvlfp") return {true, true, true};
  if (name == "fedavg_baseline") return {false, false, false};
  if (name == "wo-cdfp") return {false, true, true};
  if (name == "wo-dsop") return {true, false, true};
  if (name == "wo-fpf") return {true, true, false};
  throw ConfigError("unknown method '" + name + "' (expected fvlfp, fedavg_baseline, wo-cdfp, wo-dsop, wo-fpf)");
}

SampleSet SampleSet::subset(std::span<const std::size_t> ids) const {
  SampleSet out;
  out.tokens = tokens;
  out.patches = batch(ids);
  out.labels = gather_labels(labels, ids);
  out.groups = gather_labels(groups, ids);
  return out;
}

Tensor SampleSet::batch(std::span<const std::size_t> ids) const {
  const std::size_t d = patches.cols(), block = tokens * d;
  Tensor out({ids.size() * tokens, d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= size()) throw DataError("sample id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(patches.data() + ids[i] * block, block, out.data() + i * block);
  }
  return out;
}

SampleSet prepare_samples(const enc::FrozenBackbone& backbone, const data::Dataset& ds) {
  const std::size_t d = backbone.config().dim;
  SampleSet set;
  set.labels = ds.labels;
  set.groups = ds.groups;
  if (ds.is_embedding()) {
    if (ds.feature_dim != d) {
      throw DimensionError("embedding dataset has dim " + std::to_string(ds.feature_dim) + ", model expects " +
                           std::to_string(d));
    }
    set.tokens = 1;
    set.patches = Tensor({ds.size(), d}, ds.values);
    return set;
  }
  set.tokens = (ds.height / backbone.config().patch_size) * (ds.width / backbone.config().patch_size);
  set.patches = Tensor({ds.size() * set.tokens, d});
  const std::size_t block = set.tokens * d;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor e = enc::embed_patches(backbone, ds.sample(i), ds.height, ds.width);
    std::copy_n(e.data(), block, set.patches.data() + i * block);
  }
  return set;
}

enc::FrozenBackbone align_backbone(const enc::FrozenBackbone& backbone, const Tensor& class_text,
                                   const Tensor& group_text, const data::Dataset& corpus, double ridge) {
  const std::size_t d = backbone.config().dim;
  if (class_text.rows() != 2 || group_text.rows() != 2 || class_text.cols() != d || group_text.cols() != d) {
    throw DimensionError("align_backbone: expected two class and two group embeddings of width " + std::to_string(d));
  }
  if (!(ridge > 0.0)) throw ConfigError("align_backbone: ridge must be positive");
  World probe{backbone.with_projection(Tensor::identity(d)), class_text, {}, 1.0};
  const SampleSet set = prepare_samples(probe.backbone, corpus);
  const Tensor h = embed(probe, PromptSet::empty(backbone.config()), set, {false, false, false});
  Tensor target({set.size(), d});
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto row = target.row(i);
    auto c = class_text.row(static_cast<std::size_t>(set.labels[i]));
    auto a = group_text.row(static_cast<std::size_t>(set.groups[i]));
    for (std::size_t j = 0; j < d; ++j) row[j] = c[j] + a[j];
    const double n = num::norm2(row);
    for (auto& x : row) x /= n;
  }
  const Tensor ht = h.transposed();
  Tensor gram = num::matmul(ht, h);
  for (std::size_t j = 0; j < d; ++j) gram.at(j, j) += ridge;
  return backbone.with_projection(num::cholesky_solve(gram, num::matmul(ht, target)));
}

BatchLoss local_objective(Graph& g, const World& world, const enc::PromptVars& prompts, const SampleSet& set,
                          std::span<const std::size_t> ids, const MethodFlags& flags, const TrainOptions& opt) {
  Var z;
  Var zt = forward(g, world, prompts, set, ids, flags, &z);
  Var text = g.constant(rows_of(world.class_text, gather_labels(set.labels, ids)));
  dsop::TaskLossOptions task = opt.task;
  task.tau = world.tau;
  BatchLoss out;
  Var l_task = dsop::task_loss(g, zt, z, text, task);
  out.task = g.value(l_task).item();
  if (flags.dsop && opt.lambda1 > 0.0) {
    Var fair = dsop::fairness_loss(g, zt, world.subspace, opt.mu);
    const Tensor& f = g.value(fair);
    out.fair = std::accumulate(f.values().begin(), f.values().end(), 0.0) / static_cast<double>(f.size());
    out.total = dsop::joint_loss(g, l_task, fair, opt.lambda1);
  } else {
    out.total = l_task;
  }
  return out;
}

Tensor embed(const World& world, const PromptSet& prompts, const SampleSet& set, const MethodFlags& flags) {
  const std::size_t d = world.backbone.config().dim;
  Tensor out({set.size(), d});
  std::vector<std::size_t> ids;
  for (std::size_t begin = 0; begin < set.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(set.size(), begin + kEvalChunk);
    ids.resize(end - begin);
    std::iota(ids.begin(), ids.end(), begin);
    Graph g;
    const auto pv = enc::register_prompts(g, prompts, false);
    const Tensor& z = g.value(forward(g, world, pv, set, ids, flags));
    std::copy(z.values().begin(), z.values().end(), out.data() + begin * d);
  }
  return out;
}

std::vector<int> predict(const World& world, const PromptSet& prompts, const SampleSet& set,
                         const MethodFlags& flags) {
  const Tensor s = num::matmul_nt(embed(world, prompts, set, flags), world.class_text);
  std::vector<int> preds(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) preds[i] = s.at(i, 1) > s.at(i, 0) ? 1 : 0;
  return preds;
}

metrics::GroupConfusion confusion(const World& world, const PromptSet& prompts, const SampleSet& set,
                                  const MethodFlags& flags) {
  const auto preds = predict(world, prompts, set, flags);
  return metrics::confusion_by_group(preds, set.labels, set.groups);
}

ClientResult client_update(ClientState& state, const PromptSet& global, const World& world,
                           const MethodFlags& flags, const TrainOptions& opt, std::size_t round) {
  if (state.shard.size() == 0) throw DataError("client " + std::to_string(state.id) + " has an empty shard");
  if (opt.batch_size == 0) throw ConfigError("batch_size must be positive");
  ClientResult res;
  res.prompts = global;
  Rng rng(derive_seed(state.seed, {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(state.id)}));
  std::vector<std::size_t> order(state.shard.size());
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = (order.size() + opt.batch_size - 1) / opt.batch_size;
    if (opt.max_steps > 0) batches = std::min(batches, opt.max_steps);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * opt.batch_size;
      const std::size_t end = std::min(order.size(), begin + opt.batch_size);
      const std::span<const std::size_t> ids(order.data() + begin, end - begin);
      Graph g;
      const auto pv = enc::register_prompts(g, res.prompts, true);
      const BatchLoss loss = local_objective(g, world, pv, state.shard, ids, flags, opt);
      const double value = g.value(loss.total).item();
      if (res.steps == 0) res.first_loss = value;
      res.last_loss = value;
      auto grads = g.backward(loss.total);
      for (const auto& gr : grads) num::require_finite(gr, "client gradient");
      auto flat = res.prompts.flatten();
      num::adamw_step(flat, grads, state.optimizer, opt.adam);
      res.prompts.assign(std::move(flat));
      ++res.steps;
    }
  }
  return res;
}

Score score_from_record(const metrics::MetricRecord& r, BiasMetric bias) {
  Score s;
  s.record = r;
  s.accuracy = r.a_b;
  switch (bias) {
    case BiasMetric::phi_eq: s.bias = r.phi_eq; break;
    case BiasMetric::phi_demo: s.bias = r.phi_demo; break;
    case BiasMetric::phi_a: s.bias = 0.5 * r.phi_a; break;
  }
  s.score = s.accuracy * (1.0 - s.bias);
  return s;
}

Score score_prompt(const World& world, const PromptSet& prompts, const SampleSet& val, const MethodFlags& flags,
                   BiasMetric bias) {
  return score_from_record(metrics::evaluate(confusion(world, prompts, val, flags)), bias);
}

std::vector<double> fusion_weights(std::span<const double> scores) {
  if (scores.empty()) throw DataError("fusion: no client scores");
  double total = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw DataError("fusion: scores must be finite and non-negative");
    total += s;
  }
  if (!(total > 0.0)) throw DataError("fusion: every client score is zero (degenerate federation)");
  std::vector<double> w(scores.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = scores[i] / total;
  return w;
}

PromptSet fuse_prompts(const std::vector<PromptSet>& sets, std::span<const double> scores) {
  if (sets.size() != scores.size()) {
    throw DimensionError("fuse_prompts: " + std::to_string(sets.size()) + " prompt sets, " +
                         std::to_string(scores.size()) + " scores");
  }
  const auto w = fusion_weights(scores);
  std::vector<std::vector<Tensor>> flat;
  for (const auto& s : sets) flat.push_back(s.flatten());
  std::vector<Tensor> fused;
  for (std::size_t t = 0; t < flat[0].size(); ++t) {
    Tensor acc(flat[0][t].shape());
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (flat[i].size() != flat[0].size() || !flat[i][t].same_shape(acc)) {
        throw DimensionError("fuse_prompts: client prompt sets differ in shape");
      }
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w[i] * flat[i][t][j];
    }
    fused.push_back(std::move(acc));
  }
  PromptSet out = sets[0];
  out.assign(std::move(fused));
  return out;
}

PromptSet fuse_uniform(const std::vector<PromptSet>& sets) {
  if (sets.empty()) throw DataError("fuse_uniform: no prompt sets");
  const std::vector<double> equal(sets.size(), 1.0);
  return fuse_prompts(sets, equal);
}

Var refine_objective(Graph& g, const World& world, const enc::PromptVars& prompts, const SampleSet& set,
                     std::span<const std::size_t> ids, const MethodFlags& flags, double lambda2) {
  Var zt = forward(g, world, prompts, set, ids, flags);
  Var logits = ops::scale(g, ops::matmul_nt(g, zt, g.constant(world.class_text)), 1.0 / world.tau);
  std::vector<std::size_t> y;
  std::size_t n0 = 0, n1 = 0;
  for (auto i : ids) {
    y.push_back(static_cast<std::size_t>(set.labels[i]));
    ++(set.groups[i] == 0 ? n0 : n1);
  }
  Var ce = ops::scale(g, ops::mean(g, ops::pick(g, ops::log_softmax(g, logits, 1), y)), -1.0);
  if (lambda2 == 0.0 || n0 == 0 || n1 == 0) return ce;
  Tensor w({ids.size()});
  for (std::size_t i = 0; i < ids.size(); ++i)
    w[i] = set.groups[ids[i]] == 0 ? 1.0 / static_cast<double>(n0) : -1.0 / static_cast<double>(n1);
  Var correct = ops::pick(g, ops::softmax(g, logits, 1), y);
  Var gap = ops::abs(g, ops::sum(g, ops::mul(g, correct, g.constant(std::move(w)))));
  return ops::add(g, ce, ops::scale(g, gap, lambda2));
}

PromptSet server_refine(const PromptSet& prompts, const World& world, const SampleSet& val,
                        const MethodFlags& flags, const RefineOptions& opt, std::uint64_t seed) {
  PromptSet p = prompts;
  if (opt.steps == 0) return p;
  if (opt.batch_size < 2) throw ConfigError("refine batch_size must be at least 2");
  std::array<std::vector<std::size_t>, 2> by_group;
  for (std::size_t i = 0; i < val.size(); ++i) by_group[val.groups[i] == 0 ? 0 : 1].push_back(i);
  if (by_group[0].empty() || by_group[1].empty()) throw DataError("server_refine: validation set lacks a group");
  Rng rng(derive_seed(seed, "server-refine"));
  num::OptimizerState state;
  std::vector<std::size_t> ids;
  for (std::size_t s = 0; s < opt.steps; ++s) {
    ids.clear();
    const std::size_t half = opt.batch_size / 2;
    for (auto& members : by_group) {
      std::shuffle(members.begin(), members.end(), rng);
      ids.insert(ids.end(), members.begin(), members.begin() + std::min(half, members.size()));
    }
    Graph g;
    const auto pv = enc::register_prompts(g, p, true);
    Var obj = refine_objective(g, world, pv, val, ids, flags, opt.lambda2);
    auto grads = g.backward(obj);
    for (const auto& gr : grads) num::require_finite(gr, "refine gradient");
    auto flat = p.flatten();
    num::adamw_step(flat, grads, state, opt.adam);
    p.assign(std::move(flat));
  }
  return p;
}

namespace {

void evaluate_global(const World& world, const PromptSet& prompts, const FederationInputs& in,
                     const MethodFlags& flags, RoundRecord& rec) {
  rec.global = metrics::evaluate(confusion(world, prompts, in.test, flags));
  std::vector<metrics::GroupConfusion> per_client;
  for (const auto& c : in.clients) {
    per_client.push_back(confusion(world, prompts, c.shard.subset(c.eval_ids), flags));
  }
  try {
    const auto eod = metrics::eod_global(per_client);
    rec.global.f_global = eod.value;
    rec.fglobal_excluded = eod.excluded;
  } catch (const DataError&) {
    rec.fglobal_excluded.resize(per_client.size());
    std::iota(rec.fglobal_excluded.begin(), rec.fglobal_excluded.end(), 0);
  }
}

}  // namespace

FederationReport run_federation(const FederationConfig& config, FederationInputs in) {
  if (in.clients.empty()) throw ConfigError("run_federation: no clients");
  const World& world = in.world;
  const MethodFlags& flags = config.method;
  FederationReport report;
  report.backbone_hash = world.backbone.content_hash();
  PromptSet global = in.initial;

  RoundRecord initial;
  evaluate_global(world, global, in, flags, initial);
  report.rounds.push_back(std::move(initial));

  for (std::size_t round = 1; round <= config.rounds; ++round) {
    try {
      const std::size_t n = in.clients.size();
      std::vector<ClientResult> results(n);
      if (config.threads > 1) {
        for (std::size_t begin = 0; begin < n; begin += config.threads) {
          std::vector<std::future<ClientResult>> jobs;
          for (std::size_t i = begin; i < std::min(n, begin + config.threads); ++i) {
            jobs.push_back(std::async(std::launch::async, [&, i] {
              return client_update(in.clients[i], global, world, flags, config.train, round);
            }));
          }
          for (std::size_t j = 0; j < jobs.size(); ++j) results[begin + j] = jobs[j].get();
        }
      } else {
        for (std::size_t i = 0; i < n; ++i)
          results[i] = client_update(in.clients[i], global, world, flags, config.train, round);
      }

      RoundRecord rec;
      rec.round = round;
      std::vector<PromptSet> sets;
      std::vector<double> scores;
      for (std::size_t i = 0; i < n; ++i) {
        const Score s = score_prompt(world, results[i].prompts, in.val, flags, config.bias);
        ClientRoundRecord c;
        c.val = s.record;
        if (flags.fpf) c.score = s.score;
        rec.clients.push_back(c);
        scores.push_back(s.score);
        sets.push_back(std::move(results[i].prompts));
      }
      PromptSet next;
      if (flags.fpf) {
        const auto w = fusion_weights(scores);
        for (std::size_t i = 0; i < n; ++i) rec.clients[i].weight = w[i];
        next = fuse_prompts(sets, scores);
        next = server_refine(next, world, in.val, flags, config.refine,
                             derive_seed(config.seed, {static_cast<std::uint64_t>(round), 0x5e7e7ULL}));
      } else {
        for (auto& c : rec.clients) c.weight = 1.0 / static_cast<double>(n);
        next = fuse_uniform(sets);
      }
      if (!next.all_finite()) throw NumericError("global prompts became non-finite");
      global = std::move(next);
      evaluate_global(world, global, in, flags, rec);
      if (world.backbone.content_hash() != report.backbone_hash) {
        throw Error("frozen backbone changed during the run");
      }
      report.rounds.push_back(std::move(rec));
    } catch (const Error& e) {
      report.complete = false;
      report.failure = "round " + std::to_string(round) + ": " + e.what();
      break;
    }
  }
  report.final_prompts = std::move(global);
  return report;
}

}  // namespace fvlfp::fed
