#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace knnel {

/// Error with a stable machine-readable category label. The category is what
/// the CLI prints on stderr; the concrete class selects the exit-code family.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

/// Bad inputs: malformed files, out-of-range arguments, unresolvable ids.
/// Maps to exit code 2.
class InvalidInputError : public Error {
  using Error::Error;
};

/// Bad state: fingerprint mismatch, index not built, lock conflicts.
/// Maps to exit code 3.
class StateError : public Error {
  using Error::Error;
};

using EntityId = std::string;

struct EntityRecord {
  EntityId id;
  std::string canonical_name;
  std::vector<std::string> synonyms;
};

/// Ordered target vocabulary. Ordinal positions follow load order and are the
/// dense index used by distributions, entity caches and snapshots.
class Ontology {
 public:
  void add(EntityRecord record);

  std::size_t size() const noexcept { return entities_.size(); }
  bool empty() const noexcept { return entities_.empty(); }
  const EntityRecord& at(std::size_t ordinal) const;
  std::optional<std::size_t> ordinal_of(const EntityId& id) const;
  bool contains(const EntityId& id) const { return index_.count(id) != 0; }

  const std::vector<EntityRecord>& entities() const noexcept { return entities_; }

 private:
  std::vector<EntityRecord> entities_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A mention to link. `gold` is present in train/eval data, absent at pure
/// inference time.
struct Mention {
  std::string surface;
  std::optional<EntityId> gold;
};

/// Train/validation/test instance: the gold label is mandatory.
struct LabeledMention {
  std::string surface;
  EntityId gold;
};

/// Unit-norm dense vector (64-bit throughout the math paths).
struct Embedding {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  std::span<const double> span() const noexcept { return values; }
};

/// L2-normalizes `values` into an Embedding. Throws degenerate-embedding if
/// the norm is zero (or not finite).
Embedding unit_embedding(std::vector<double> values);

double l2_norm(std::span<const double> values);

/// Row-major matrix of embeddings (entity caches, index snapshots, store keys).
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), data(r * d, 0.0) {}

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data.data() + i * dim, dim);
  }
  void set_row(std::size_t i, std::span<const double> v);
};

struct ScoredCandidate {
  EntityId entity;
  double score = 0.0;
};

/// Probabilities over ontology ordinals. Dense over all N entities or sparse
/// with entries sorted by ordinal; an absent sparse entry is exactly zero.
class EntityDistribution {
 public:
  static EntityDistribution dense(std::vector<double> probs);
  static EntityDistribution sparse(std::vector<std::pair<std::uint32_t, double>> entries,
                                   std::size_t domain_size);

  bool is_dense() const noexcept { return dense_; }
  std::size_t domain_size() const noexcept { return domain_; }

  /// Probability at an ordinal (0 for absent sparse entries).
  double at(std::size_t ordinal) const;
  double sum() const;

  const std::vector<double>& dense_probs() const;
  const std::vector<std::pair<std::uint32_t, double>>& sparse_entries() const;

 private:
  bool dense_ = true;
  std::size_t domain_ = 0;
  std::vector<double> probs_;
  std::vector<std::pair<std::uint32_t, double>> entries_;
};

double dot(std::span<const double> a, std::span<const double> b);

/// Cosine similarity of two unit-norm embeddings (= dot product), clamped to
/// [-1, 1] against rounding. Throws on dimension mismatch.
double cosine_similarity(const Embedding& a, const Embedding& b);

/// Max-subtracted softmax of scores/temperature. Safe down to temperatures of
/// 0.01 with scores in [-1, 1]. Throws on empty input or temperature <= 0.
std::vector<double> stable_softmax(std::span<const double> scores, double temperature);

/// Lowercases, applies a compatibility fold for common Unicode forms
/// (fullwidth characters, typographic quotes/dashes, ligatures, exotic
/// spaces), collapses whitespace runs and trims. Idempotent. Throws
/// empty-mention if nothing is left.
std::string normalize_text(const std::string& raw);

}  // namespace knnel
