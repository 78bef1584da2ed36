#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "knnel/core.hpp"
#include "knnel/encoder.hpp"

namespace knnel {

struct NeighborHit {
  std::size_t row = 0;
  double similarity = 0.0;
  EntityId entity;

  bool operator==(const NeighborHit&) const = default;
};

/// Key-value memory over the training set: one row per training instance, in
/// input order. Keys are mention embeddings passed through the on-disk f32
/// representation at build time, so save/load round-trips are lossless in
/// both directions (file bytes and in-memory matrix).
class Datastore {
 public:
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t dim() const noexcept { return keys_.dim; }
  const EmbeddingMatrix& keys() const noexcept { return keys_; }
  const std::vector<EntityId>& values() const noexcept { return values_; }
  const std::vector<std::string>& provenance() const noexcept { return provenance_; }
  const std::array<std::uint8_t, 32>& encoder_fingerprint() const noexcept {
    return fingerprint_;
  }

  /// Exact top-k by cosine, descending; ties break by ascending row index.
  std::vector<NeighborHit> query_knn(const Embedding& query, std::size_t k) const;

  /// Clustering-based internal index with exact ball-bound pruning: results
  /// are guaranteed identical to query_knn, just cheaper on clustered data.
  void build_index(std::uint64_t seed = 0);
  bool has_index() const noexcept { return index_.has_value(); }
  std::vector<NeighborHit> query_knn_indexed(const Embedding& query, std::size_t k) const;

  /// Binary store file (KELS): header {magic "KELS", version u32, M u64,
  /// dim u32, fingerprint 32 bytes}, keys as little-endian f32 row-major,
  /// then values and provenance as length-prefixed utf8 arrays.
  void save(const std::string& path) const;
  static Datastore load(const std::string& path);

  /// Deep comparison over keys, values, provenance and fingerprint (the
  /// rebuildable index is ignored).
  bool deep_equals(const Datastore& other) const;

 private:
  friend Datastore build_datastore(const std::vector<LabeledMention>&, const EncoderParams&,
                                   const Ontology&);

  struct Index {
    EmbeddingMatrix centroids;
    std::vector<double> radii;
    std::vector<double> max_norms;
    std::vector<std::vector<std::uint32_t>> members;
  };

  EmbeddingMatrix keys_;
  std::vector<EntityId> values_;
  std::vector<std::string> provenance_;
  std::array<std::uint8_t, 32> fingerprint_{};
  std::optional<Index> index_;
};

/// One row per training instance in input order; keys are
/// encode(mention surface) under `params`; the params fingerprint is recorded.
Datastore build_datastore(const std::vector<LabeledMention>& train_set,
                          const EncoderParams& params, const Ontology& ontology);

}  // namespace knnel
