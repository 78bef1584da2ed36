#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "knnel/core.hpp"

namespace knnel {

struct FeatureHasherConfig {
  std::vector<int> ngram_sizes = {2, 3, 4};
  std::size_t feature_dim = 1u << 18;
  std::uint64_t hash_seed = 0x6b6e6e2d656cULL;

  void validate() const;
};

/// Sparse count vector over hash buckets, entries sorted by bucket.
struct SparseFeatures {
  std::vector<std::pair<std::uint32_t, double>> entries;
};

enum class EncoderMode { Trainable, FrozenLookup };

/// Frozen externally produced vectors keyed by normalized text.
using FrozenTable = std::map<std::string, Embedding>;

/// The pluggable encoder f(.): hashed character n-grams through a learned
/// projection, or a frozen lookup table.
struct EncoderParams {
  EncoderMode mode = EncoderMode::Trainable;
  FeatureHasherConfig hasher;
  std::size_t embed_dim = 128;
  std::vector<double> projection;  // feature_dim x embed_dim, row-major
  FrozenTable frozen;

  std::span<const double> projection_row(std::uint32_t bucket) const {
    return std::span<const double>(projection.data() + std::size_t(bucket) * embed_dim,
                                   embed_dim);
  }
};

/// Trainable params with the projection drawn from a seeded uniform
/// distribution scaled by 1/sqrt(feature_dim).
EncoderParams init_encoder_params(const FeatureHasherConfig& hasher, std::size_t embed_dim,
                                  std::uint64_t seed);

EncoderParams frozen_encoder_params(FrozenTable table);

/// Hashes every character n-gram of each configured size of '^'+text+'$' into
/// a bucket (seeded, stable across runs and platforms) and accumulates counts.
/// n-grams span codepoints, not bytes.
SparseFeatures featurize(const std::string& normalized_text, const FeatureHasherConfig& cfg);

/// normalize -> featurize -> projection -> L2 normalize (trainable), or table
/// lookup (frozen). Output is unit-norm.
Embedding encode(const std::string& raw_text, const EncoderParams& params);

/// Elementwise encode; output order matches input order regardless of internal
/// parallelism. Errors carry the offending index.
std::vector<Embedding> encode_all(const std::vector<std::string>& texts,
                                  const EncoderParams& params);

/// Gradient of the unit-norm encoder output contracted with `upstream`,
/// with respect to the projection. Only rows for active buckets are nonzero.
struct ProjectionGradient {
  std::vector<std::uint32_t> rows;  // active buckets, ascending
  std::vector<double> values;      // rows.size() x embed_dim, row-major
  std::size_t embed_dim = 0;

  /// Accumulates into a dense feature_dim x embed_dim buffer.
  void add_into(std::span<double> dense) const;
};

ProjectionGradient encode_gradient(const std::string& raw_text, const EncoderParams& params,
                                   std::span<const double> upstream);

/// 32-byte content fingerprint of the params (not cryptographic); used to
/// detect querying a datastore with a different encoder.
std::array<std::uint8_t, 32> fingerprint(const EncoderParams& params);

/// Frozen-embedding file (KELF): header {magic "KELF", version u32, count u64,
/// dim u32}, then per record {u32 length-prefixed normalized utf8 text, dim
/// little-endian f32 values}. The loader re-normalizes and upcasts to f64.
FrozenTable load_frozen_table(const std::string& path);
void save_frozen_table(const FrozenTable& table, const std::string& path);

/// Trainable params file (KELP): hasher config, dims, and the projection as
/// f64 (exact, so trained params round-trip bitwise). Frozen-mode params live
/// in KELF files instead.
void save_params(const EncoderParams& params, const std::string& path);
EncoderParams load_params(const std::string& path);

}  // namespace knnel
