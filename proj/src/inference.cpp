#include "knnel/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace knnel {

void InferenceConfig::validate() const {
  if (k < 1) throw InvalidInputError("invalid-config", "k must be >= 1");
  if (lambda < 0.0 || lambda > 1.0) {
    throw InvalidInputError("invalid-lambda", "lambda must lie in [0, 1]");
  }
  if (!(beta1 > 0.0) || !(beta2 > 0.0)) {
    throw InvalidInputError("invalid-temperature", "beta1/beta2 must be > 0");
  }
}

InferenceConfig profile_config(const std::string& name) {
  InferenceConfig cfg;
  cfg.lambda = 0.1;
  if (name == "ncbi") {
    cfg.beta1 = 0.01;
    cfg.beta2 = 1.0;
    cfg.k = 4;
  } else if (name == "bc5cdr") {
    cfg.beta1 = 0.05;
    cfg.beta2 = 5.0;
    cfg.k = 4;
  } else if (name == "cometa") {
    cfg.beta1 = 0.2;
    cfg.beta2 = 1.0;
    cfg.k = 128;
  } else if (name == "aap") {
    cfg.beta1 = 1.0;
    cfg.beta2 = 1.0;
    cfg.k = 128;
  } else {
    throw InvalidInputError("unknown-profile", "unknown dataset profile: " + name);
  }
  return cfg;
}

EntityCache build_entity_cache(const Ontology& ontology, const EncoderParams& params) {
  std::vector<std::string> names;
  names.reserve(ontology.size());
  for (const auto& rec : ontology.entities()) names.push_back(rec.canonical_name);
  std::vector<Embedding> embs = encode_all(names, params);
  EntityCache cache;
  cache.embeddings = EmbeddingMatrix(ontology.size(), params.embed_dim);
  for (std::size_t i = 0; i < embs.size(); ++i) {
    cache.embeddings.set_row(i, embs[i].span());
  }
  return cache;
}

EntityDistribution model_distribution(const Embedding& x_emb, const EntityCache& cache,
                                      double beta1) {
  if (cache.embeddings.rows == 0) {
    throw StateError("empty-ontology", "model distribution over an empty entity cache");
  }
  if (x_emb.dim() != cache.embeddings.dim) {
    throw InvalidInputError("dim-mismatch", "embedding dimension does not match the cache");
  }
  std::vector<double> scores(cache.embeddings.rows);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = std::clamp(dot(x_emb.span(), cache.embeddings.row(i)), -1.0, 1.0);
  }
  return EntityDistribution::dense(stable_softmax(scores, beta1));
}

EntityDistribution knn_distribution(const std::vector<NeighborHit>& neighbors,
                                    const Ontology& ontology, double beta2,
                                    Aggregation aggregation) {
  if (neighbors.empty()) {
    throw InvalidInputError("empty-neighbors",
                            "kNN distribution needs at least one neighbor");
  }
  if (!(beta2 > 0.0)) {
    throw InvalidInputError("invalid-temperature", "beta2 must be > 0");
  }

  // per-entity pre-softmax score (ordinal-keyed, so entry order is fixed)
  std::map<std::uint32_t, double> scores;
  if (aggregation == Aggregation::Max) {
    for (const auto& hit : neighbors) {
      auto ord = ontology.ordinal_of(hit.entity);
      if (!ord) {
        throw InvalidInputError("unknown-entity", "neighbor entity missing: " + hit.entity);
      }
      auto key = static_cast<std::uint32_t>(*ord);
      auto [it, inserted] = scores.emplace(key, hit.similarity);
      if (!inserted) it->second = std::max(it->second, hit.similarity);
    }
  } else {
    // sum of exp(sim/beta2) per entity, folded back into log space so the
    // shared softmax below stays stable
    double smax = neighbors[0].similarity;
    for (const auto& hit : neighbors) smax = std::max(smax, hit.similarity);
    std::map<std::uint32_t, double> sums;
    for (const auto& hit : neighbors) {
      auto ord = ontology.ordinal_of(hit.entity);
      if (!ord) {
        throw InvalidInputError("unknown-entity", "neighbor entity missing: " + hit.entity);
      }
      sums[static_cast<std::uint32_t>(*ord)] += std::exp((hit.similarity - smax) / beta2);
    }
    for (const auto& [ord, s] : sums) scores[ord] = smax + beta2 * std::log(s);
  }

  std::vector<double> flat;
  flat.reserve(scores.size());
  for (const auto& [_, s] : scores) flat.push_back(s);
  std::vector<double> probs = stable_softmax(flat, beta2);

  std::vector<std::pair<std::uint32_t, double>> entries;
  entries.reserve(scores.size());
  std::size_t i = 0;
  for (const auto& [ord, _] : scores) entries.emplace_back(ord, probs[i++]);
  return EntityDistribution::sparse(std::move(entries), ontology.size());
}

EntityDistribution interpolate(const EntityDistribution& knn,
                               const EntityDistribution& model, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw InvalidInputError("invalid-lambda", "lambda must lie in [0, 1]");
  }
  if (knn.domain_size() != model.domain_size()) {
    throw InvalidInputError("dim-mismatch", "distributions cover different ontologies");
  }
  const std::size_t n = model.domain_size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lambda * knn.at(i) + (1.0 - lambda) * model.at(i);
  }
  return EntityDistribution::dense(std::move(out));
}

LinkResult link(const Mention& mention, const Datastore& store, const EntityCache& cache,
                const EncoderParams& params, const Ontology& ontology,
                const InferenceConfig& cfg, std::size_t top_n) {
  cfg.validate();
  if (ontology.empty()) {
    throw StateError("empty-ontology", "cannot link against an empty ontology");
  }
  if (top_n < 1) throw InvalidInputError("invalid-top-n", "top_n must be >= 1");

  LinkResult result;
  if (store.size() > 0 && store.encoder_fingerprint() != fingerprint(params)) {
    result.notices.push_back("fingerprint-mismatch: datastore was built with different params");
  }

  Embedding x = encode(mention.surface, params);
  result.model_dist = model_distribution(x, cache, cfg.beta1);

  double lambda = cfg.lambda;
  if (store.size() == 0) {
    result.used_knn = false;
    result.knn_dist = EntityDistribution::sparse({}, ontology.size());
    result.notices.push_back("empty-datastore: kNN term skipped, pure model distribution");
    lambda = 0.0;
  } else {
    result.neighbors = store.query_knn(x, cfg.k);
    result.knn_dist = knn_distribution(result.neighbors, ontology, cfg.beta2,
                                       cfg.aggregation);
    result.used_knn = true;
  }

  EntityDistribution final_dist = interpolate(result.knn_dist, result.model_dist, lambda);

  const std::size_t n = ontology.size();
  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
  const auto& probs = final_dist.dense_probs();
  std::size_t take = std::min(top_n, n);
  std::partial_sort(order.begin(), order.begin() + take, order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (probs[a] != probs[b]) return probs[a] > probs[b];
                      return a < b;
                    });
  result.ranked.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    result.ranked.push_back({ontology.at(order[i]).id, probs[order[i]]});
  }
  return result;
}

nlohmann::ordered_json link_result_json(const std::string& mention, const LinkResult& result,
                                        const Datastore& store, const Ontology& ontology) {
  nlohmann::ordered_json j;
  j["mention"] = mention;
  j["top"] = nlohmann::ordered_json::array();
  for (const auto& cand : result.ranked) {
    std::size_t ord = *ontology.ordinal_of(cand.entity);
    nlohmann::ordered_json c;
    c["entity_id"] = cand.entity;
    c["prob"] = cand.score;
    c["model_prob"] = result.model_dist.at(ord);
    c["knn_prob"] = result.knn_dist.at(ord);
    j["top"].push_back(std::move(c));
  }
  j["neighbors"] = nlohmann::ordered_json::array();
  for (const auto& hit : result.neighbors) {
    nlohmann::ordered_json h;
    h["mention_text"] = store.provenance()[hit.row];
    h["entity_id"] = hit.entity;
    h["similarity"] = hit.similarity;
    j["neighbors"].push_back(std::move(h));
  }
  if (!result.notices.empty()) j["notices"] = result.notices;
  return j;
}

}  // namespace knnel
