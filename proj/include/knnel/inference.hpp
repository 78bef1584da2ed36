#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnel/core.hpp"
#include "knnel/datastore.hpp"
#include "knnel/encoder.hpp"

namespace knnel {

/// How neighbor hits sharing an entity combine into one pre-softmax score.
/// Max is the default; Sum is kept behind this flag for comparison runs.
enum class Aggregation { Max, Sum };

struct InferenceConfig {
  std::size_t k = 4;
  double lambda = 0.1;
  double beta1 = 0.01;
  double beta2 = 1.0;
  Aggregation aggregation = Aggregation::Max;

  void validate() const;
};

/// Per-dataset presets: lambda = 0.1 everywhere, (beta1, beta2, k) =
/// ncbi (0.01, 1.0, 4), bc5cdr (0.05, 5.0, 4), cometa (0.2, 1.0, 128),
/// aap (1.0, 1.0, 128).
InferenceConfig profile_config(const std::string& name);

/// Pre-computed entity embeddings in ontology ordinal order.
struct EntityCache {
  EmbeddingMatrix embeddings;
};

EntityCache build_entity_cache(const Ontology& ontology, const EncoderParams& params);

/// Softmax over the N entity cosine scores at temperature beta1 (dense).
EntityDistribution model_distribution(const Embedding& x_emb, const EntityCache& cache,
                                      double beta1);

/// Distribution induced by the retrieved neighbors: per distinct entity the
/// maximum hit similarity (or the log-sum under Aggregation::Sum), softmaxed
/// at temperature beta2. Entities absent from the neighbors carry exactly
/// zero probability.
EntityDistribution knn_distribution(const std::vector<NeighborHit>& neighbors,
                                    const Ontology& ontology, double beta2,
                                    Aggregation aggregation = Aggregation::Max);

/// Pointwise convex combination lambda * knn + (1 - lambda) * model over the
/// union support (dense result).
EntityDistribution interpolate(const EntityDistribution& knn,
                               const EntityDistribution& model, double lambda);

struct LinkResult {
  std::vector<ScoredCandidate> ranked;  // by final probability, descending
  EntityDistribution model_dist;
  EntityDistribution knn_dist;
  std::vector<NeighborHit> neighbors;
  bool used_knn = false;
  std::vector<std::string> notices;
};

/// encode -> query_knn(k) -> knn_distribution(beta2) -> model_distribution
/// (beta1) -> interpolate(lambda) -> top_n candidates. An empty datastore
/// degrades to the pure-model path with a recorded notice; a store built
/// with different params records a fingerprint notice.
LinkResult link(const Mention& mention, const Datastore& store, const EntityCache& cache,
                const EncoderParams& params, const Ontology& ontology,
                const InferenceConfig& cfg, std::size_t top_n);

/// Explainability record: {mention, top: [{entity_id, prob, model_prob,
/// knn_prob}], neighbors: [{mention_text, entity_id, similarity}]} with
/// stable field order. Notices are appended only when present.
nlohmann::ordered_json link_result_json(const std::string& mention, const LinkResult& result,
                                        const Datastore& store, const Ontology& ontology);

}  // namespace knnel
