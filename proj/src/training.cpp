#include "knnel/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include "knnel/rng.hpp"

namespace knnel {

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw InvalidInputError("invalid-config", "tau must be > 0");
  if (hard_negatives_p < 0) {
    throw InvalidInputError("invalid-config", "hard_negatives_p must be >= 0");
  }
  if (epochs < 1) throw InvalidInputError("invalid-config", "epochs must be >= 1");
  if (batch_size < 1) throw InvalidInputError("invalid-config", "batch_size must be >= 1");
  if (batch_size < 2 && hard_negatives_p == 0) {
    throw InvalidInputError("invalid-config",
                            "batch_size must be >= 2 when in-batch negatives are the only "
                            "negative source (p=0)");
  }
  if (!(learning_rate > 0.0)) {
    throw InvalidInputError("invalid-config", "learning_rate must be > 0");
  }
  if (weight_decay < 0.0) {
    throw InvalidInputError("invalid-config", "weight_decay must be >= 0");
  }
  if (early_stop_patience < 1) {
    throw InvalidInputError("invalid-config", "early_stop_patience must be >= 1");
  }
}

std::vector<EntityId> NegativeSet::combined() const {
  std::vector<EntityId> out;
  std::unordered_set<std::string> seen;
  for (const auto& id : in_batch) {
    if (seen.insert(id).second) out.push_back(id);
  }
  for (const auto& id : hard) {
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

NegativeSet collect_negatives(const std::vector<LabeledMention>& batch,
                              std::size_t anchor_index, const Embedding& anchor_emb,
                              const EntityIndexSnapshot& snapshot, const Ontology& ontology,
                              int p) {
  NegativeSet set;
  set.in_batch = build_in_batch_negatives(batch, anchor_index);
  set.hard = dhns_retrieve(anchor_emb, snapshot, ontology, batch[anchor_index].gold, p);
  return set;
}

std::vector<EntityId> build_in_batch_negatives(const std::vector<LabeledMention>& batch,
                                               std::size_t anchor_index) {
  if (anchor_index >= batch.size()) {
    throw InvalidInputError("invalid-anchor", "anchor index outside batch");
  }
  const EntityId& own = batch[anchor_index].gold;
  std::vector<EntityId> negatives;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (i == anchor_index) continue;
    const EntityId& gold = batch[i].gold;
    if (gold == own) continue;  // false-negative avoidance
    if (seen.insert(gold).second) negatives.push_back(gold);
  }
  return negatives;
}

EntityIndexSnapshot rebuild_entity_index(const Ontology& ontology,
                                         const EncoderParams& params, int epoch) {
  std::vector<std::string> names;
  names.reserve(ontology.size());
  for (const auto& rec : ontology.entities()) names.push_back(rec.canonical_name);
  std::vector<Embedding> embs = encode_all(names, params);

  EntityIndexSnapshot snapshot;
  snapshot.built_at_epoch = epoch;
  snapshot.embeddings = EmbeddingMatrix(ontology.size(), params.embed_dim);
  for (std::size_t i = 0; i < embs.size(); ++i) {
    snapshot.embeddings.set_row(i, embs[i].span());
  }
  return snapshot;
}

std::vector<EntityId> dhns_retrieve(const Embedding& mention_emb,
                                    const EntityIndexSnapshot& snapshot,
                                    const Ontology& ontology, const EntityId& gold, int p) {
  if (p < 0) throw InvalidInputError("invalid-config", "p must be >= 0");
  if (p == 0) return {};
  const std::size_t n = snapshot.embeddings.rows;
  std::vector<std::pair<double, std::size_t>> scored(n);
  for (std::size_t i = 0; i < n; ++i) {
    scored[i] = {dot(mention_emb.span(), snapshot.embeddings.row(i)), i};
  }
  auto better = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(p) + 1, n);
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), better);

  std::vector<EntityId> out;
  out.reserve(static_cast<std::size_t>(p));
  for (std::size_t i = 0; i < take && out.size() < static_cast<std::size_t>(p); ++i) {
    const EntityId& id = ontology.at(scored[i].second).id;
    if (id == gold) continue;
    out.push_back(id);
  }
  return out;
}

ContrastiveResult contrastive_loss(const Embedding& anchor, const Embedding& positive,
                                   const std::vector<Embedding>& negatives, double tau) {
  if (!(tau > 0.0)) throw InvalidInputError("invalid-temperature", "tau must be > 0");
  const std::size_t d = anchor.dim();
  if (positive.dim() != d) {
    throw InvalidInputError("dim-mismatch", "positive dimension mismatch");
  }
  for (const auto& neg : negatives) {
    if (neg.dim() != d) throw InvalidInputError("dim-mismatch", "negative dimension mismatch");
  }

  // z = [s(anchor,pos), s(anchor,neg_1), ...] / tau;  loss = lse(z) - z0
  std::vector<double> z(negatives.size() + 1);
  z[0] = dot(anchor.span(), positive.span()) / tau;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    z[i + 1] = dot(anchor.span(), negatives[i].span()) / tau;
  }
  double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  double lse = zmax + std::log(sum);

  ContrastiveResult res;
  res.loss = std::max(0.0, lse - z[0]);

  // softmax over z drives all gradients
  std::vector<double> q(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) q[i] = std::exp(z[i] - lse);

  res.anchor_grad.assign(d, 0.0);
  res.positive_grad.assign(d, 0.0);
  res.negative_grads.assign(negatives.size(), std::vector<double>(d, 0.0));

  double w_pos = (q[0] - 1.0) / tau;
  for (std::size_t j = 0; j < d; ++j) {
    res.anchor_grad[j] += w_pos * positive.values[j];
    res.positive_grad[j] = w_pos * anchor.values[j];
  }
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    double w = q[i + 1] / tau;
    for (std::size_t j = 0; j < d; ++j) {
      res.anchor_grad[j] += w * negatives[i].values[j];
      res.negative_grads[i][j] = w * anchor.values[j];
    }
  }
  return res;
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size()) {
    throw InvalidInputError("dim-mismatch", "params/grads size mismatch");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvalidInputError("dim-mismatch", "optimizer state size mismatch");
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    double& m = state.m[i];
    double& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    double m_hat = m / bc1;
    double v_hat = v / bc2;
    params[i] = params[i] * decay - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

namespace {

// Pure-model Acc@1/Acc@5 (ranking by cosine, ties to the lower ordinal).
std::pair<double, double> model_accuracy(const std::vector<LabeledMention>& items,
                                         const Ontology& ontology,
                                         const EncoderParams& params) {
  if (items.empty()) return {0.0, 0.0};
  EntityIndexSnapshot cache = rebuild_entity_index(ontology, params);
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  std::vector<Embedding> embs;
  {
    std::vector<std::string> surfaces;
    surfaces.reserve(items.size());
    for (const auto& it : items) surfaces.push_back(it.surface);
    embs = encode_all(surfaces, params);
  }
  const std::size_t n = ontology.size();
  for (std::size_t t = 0; t < items.size(); ++t) {
    auto gold_ord = ontology.ordinal_of(items[t].gold);
    if (!gold_ord) {
      throw InvalidInputError("unknown-entity", "gold entity missing: " + items[t].gold);
    }
    // keep the 5 best (score desc, ordinal asc)
    std::vector<std::pair<double, std::size_t>> top;
    top.reserve(6);
    for (std::size_t i = 0; i < n; ++i) {
      double s = dot(embs[t].span(), cache.embeddings.row(i));
      top.emplace_back(s, i);
      std::sort(top.begin(), top.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      if (top.size() > 5) top.pop_back();
    }
    for (std::size_t r = 0; r < top.size(); ++r) {
      if (top[r].second == *gold_ord) {
        if (r == 0) ++hit1;
        ++hit5;
        break;
      }
    }
  }
  return {static_cast<double>(hit1) / items.size(),
          static_cast<double>(hit5) / items.size()};
}

}  // namespace

TrainResult train(const std::vector<LabeledMention>& train_set,
                  const std::vector<LabeledMention>& validation, const Ontology& ontology,
                  const TrainConfig& config, EncoderParams params) {
  config.validate();
  if (train_set.empty()) {
    throw InvalidInputError("empty-train-set", "training set is empty");
  }
  if (ontology.empty()) {
    throw InvalidInputError("empty-ontology", "ontology is empty");
  }
  if (params.mode != EncoderMode::Trainable) {
    throw InvalidInputError("unsupported-mode", "training requires a trainable encoder");
  }
  for (const auto& item : train_set) {
    if (!ontology.contains(item.gold)) {
      throw InvalidInputError("unknown-entity", "train gold missing: " + item.gold);
    }
  }
  for (const auto& item : validation) {
    if (!ontology.contains(item.gold)) {
      throw InvalidInputError("unknown-entity", "validation gold missing: " + item.gold);
    }
  }

  TrainLog log;
  const bool early_stop = !validation.empty();
  if (!early_stop) {
    log.warnings.push_back("validation set empty; early stopping disabled");
  }
  if (config.hard_negatives_p == 0) {
    log.warnings.push_back("dhns disabled (p=0); in-batch negatives only");
  }

  const std::size_t n_entities = ontology.size();
  const std::size_t p = static_cast<std::size_t>(config.hard_negatives_p);
  const std::size_t proj_size = params.projection.size();

  Rng rng(config.seed);
  AdamWState opt_state;
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;

  std::vector<double> grad(proj_size, 0.0);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  EncoderParams best_params = params;
  double best_acc = -1.0;
  int best_epoch = -1;
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    EntityIndexSnapshot snapshot = rebuild_entity_index(ontology, params, epoch);
    auto t1 = std::chrono::steady_clock::now();
    double rebuild_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    rng.shuffle(order);
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<LabeledMention> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      const std::size_t bsz = batch.size();

      std::vector<Embedding> mention_embs;
      {
        std::vector<std::string> surfaces;
        surfaces.reserve(bsz);
        for (const auto& item : batch) surfaces.push_back(item.surface);
        mention_embs = encode_all(surfaces, params);
      }

      // per-anchor negatives (E1 then E2, deduplicated) as ordinals
      std::vector<std::size_t> gold_ords(bsz);
      std::vector<std::vector<std::size_t>> negatives(bsz);
      std::map<std::size_t, std::vector<double>> entity_upstream;
      for (std::size_t a = 0; a < bsz; ++a) {
        gold_ords[a] = *ontology.ordinal_of(batch[a].gold);
        entity_upstream.emplace(gold_ords[a], std::vector<double>());

        NegativeSet negset = collect_negatives(batch, a, mention_embs[a], snapshot,
                                               ontology, config.hard_negatives_p);
        for (const auto& id : negset.hard) {
          if (id == batch[a].gold) log.dhns_gold_violations += 1;
        }
        if (negset.hard.size() < std::min(p, n_entities - 1)) log.dhns_short_sets += 1;
        for (const auto& id : negset.combined()) {
          std::size_t ord = *ontology.ordinal_of(id);
          if (ord != gold_ords[a]) negatives[a].push_back(ord);
        }
        for (std::size_t ord : negatives[a]) {
          entity_upstream.emplace(ord, std::vector<double>());
        }
      }

      // encode every referenced entity once with the current parameters
      std::map<std::size_t, Embedding> entity_embs;
      {
        std::vector<std::string> names;
        std::vector<std::size_t> ords;
        for (const auto& [ord, _] : entity_upstream) {
          ords.push_back(ord);
          names.push_back(ontology.at(ord).canonical_name);
        }
        std::vector<Embedding> embs = encode_all(names, params);
        for (std::size_t i = 0; i < ords.size(); ++i) {
          entity_embs.emplace(ords[i], std::move(embs[i]));
        }
      }

      // loss averaged over the batch
      const double inv_b = 1.0 / static_cast<double>(bsz);
      std::vector<std::vector<double>> mention_upstream(bsz);
      for (auto& [ord, up] : entity_upstream) up.assign(params.embed_dim, 0.0);
      for (std::size_t a = 0; a < bsz; ++a) {
        std::vector<Embedding> neg_embs;
        neg_embs.reserve(negatives[a].size());
        for (std::size_t ord : negatives[a]) neg_embs.push_back(entity_embs.at(ord));

        ContrastiveResult res = contrastive_loss(mention_embs[a],
                                                 entity_embs.at(gold_ords[a]), neg_embs,
                                                 config.tau);
        loss_sum += res.loss;

        mention_upstream[a] = std::move(res.anchor_grad);
        for (double& g : mention_upstream[a]) g *= inv_b;

        auto& gold_up = entity_upstream.at(gold_ords[a]);
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
          gold_up[j] += inv_b * res.positive_grad[j];
        }
        for (std::size_t i = 0; i < negatives[a].size(); ++i) {
          auto& up = entity_upstream.at(negatives[a][i]);
          for (std::size_t j = 0; j < params.embed_dim; ++j) {
            up[j] += inv_b * res.negative_grads[i][j];
          }
        }
      }

      // backprop through the encoder, fixed accumulation order
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t a = 0; a < bsz; ++a) {
        encode_gradient(batch[a].surface, params, mention_upstream[a]).add_into(grad);
      }
      for (const auto& [ord, up] : entity_upstream) {
        encode_gradient(ontology.at(ord).canonical_name, params, up).add_into(grad);
      }
      adamw_step(params.projection, grad, opt_state, opt_cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(train_set.size());
    rec.index_rebuild_ms = rebuild_ms;
    if (early_stop) {
      auto [a1, a5] = model_accuracy(validation, ontology, params);
      rec.val_acc1 = a1;
      rec.val_acc5 = a5;
    }
    log.epochs.push_back(rec);

    if (early_stop) {
      if (rec.val_acc1 > best_acc) {
        best_acc = rec.val_acc1;
        best_epoch = epoch;
        best_params = params;
        since_best = 0;
      } else {
        since_best += 1;
        if (since_best >= config.early_stop_patience) break;
      }
    }
  }

  TrainResult result;
  if (early_stop) {
    log.selected_epoch = best_epoch;
    result.params = std::move(best_params);
  } else {
    log.selected_epoch = static_cast<int>(log.epochs.size()) - 1;
    result.params = std::move(params);
  }
  result.log = std::move(log);
  return result;
}

}  // namespace knnel
