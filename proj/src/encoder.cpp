#include "knnel/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bin_io.hpp"
#include "knnel/parallel.hpp"
#include "knnel/rng.hpp"

namespace knnel {

namespace {

constexpr std::uint64_t kFnvPrime = 1099511628211ULL;
constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t seed) {
  std::uint64_t h = kFnvOffset ^ seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
  return h;
}

// Byte offsets of codepoint starts plus the end sentinel.
std::vector<std::size_t> codepoint_starts(const std::string& s) {
  std::vector<std::size_t> starts;
  starts.reserve(s.size() + 1);
  std::size_t i = 0;
  while (i < s.size()) {
    starts.push_back(i);
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
    }
    if (i + len > s.size()) len = 1;
    i += len;
  }
  starts.push_back(s.size());
  return starts;
}

}  // namespace

void FeatureHasherConfig::validate() const {
  if (ngram_sizes.empty()) {
    throw InvalidInputError("invalid-hasher", "ngram_sizes must be non-empty");
  }
  for (int n : ngram_sizes) {
    if (n < 1) throw InvalidInputError("invalid-hasher", "ngram sizes must be >= 1");
  }
  if (feature_dim < 2) {
    throw InvalidInputError("invalid-hasher", "feature_dim must be >= 2");
  }
}

EncoderParams init_encoder_params(const FeatureHasherConfig& hasher, std::size_t embed_dim,
                                  std::uint64_t seed) {
  hasher.validate();
  if (embed_dim < 2) {
    throw InvalidInputError("invalid-encoder", "embed_dim must be >= 2");
  }
  EncoderParams params;
  params.mode = EncoderMode::Trainable;
  params.hasher = hasher;
  params.embed_dim = embed_dim;
  params.projection.resize(hasher.feature_dim * embed_dim);
  double scale = 1.0 / std::sqrt(static_cast<double>(hasher.feature_dim));
  Rng rng(seed);
  for (double& w : params.projection) w = rng.next_in(-scale, scale);
  return params;
}

EncoderParams frozen_encoder_params(FrozenTable table) {
  EncoderParams params;
  params.mode = EncoderMode::FrozenLookup;
  params.embed_dim = table.empty() ? 0 : table.begin()->second.dim();
  params.frozen = std::move(table);
  return params;
}

SparseFeatures featurize(const std::string& normalized_text, const FeatureHasherConfig& cfg) {
  cfg.validate();
  if (normalized_text.empty()) {
    throw InvalidInputError("empty-mention", "cannot featurize empty text");
  }
  std::string wrapped;
  wrapped.reserve(normalized_text.size() + 2);
  wrapped.push_back('^');
  wrapped += normalized_text;
  wrapped.push_back('$');

  std::vector<std::size_t> starts = codepoint_starts(wrapped);
  std::size_t n_chars = starts.size() - 1;

  std::vector<std::pair<std::uint32_t, double>> entries;
  for (int n : cfg.ngram_sizes) {
    std::size_t un = static_cast<std::size_t>(n);
    if (un > n_chars) continue;
    for (std::size_t i = 0; i + un <= n_chars; ++i) {
      std::size_t lo = starts[i];
      std::size_t hi = starts[i + un];
      std::uint64_t h = fnv1a(wrapped.data() + lo, hi - lo, cfg.hash_seed);
      entries.emplace_back(static_cast<std::uint32_t>(h % cfg.feature_dim), 1.0);
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseFeatures out;
  for (const auto& [bucket, count] : entries) {
    if (!out.entries.empty() && out.entries.back().first == bucket) {
      out.entries.back().second += count;
    } else {
      out.entries.emplace_back(bucket, count);
    }
  }
  return out;
}

namespace {

// Pre-normalization projection of the feature counts.
std::vector<double> project_features(const SparseFeatures& features,
                                     const EncoderParams& params) {
  std::vector<double> z(params.embed_dim, 0.0);
  for (const auto& [bucket, count] : features.entries) {
    auto row = params.projection_row(bucket);
    for (std::size_t j = 0; j < params.embed_dim; ++j) z[j] += count * row[j];
  }
  return z;
}

}  // namespace

Embedding encode(const std::string& raw_text, const EncoderParams& params) {
  std::string text = normalize_text(raw_text);
  if (params.mode == EncoderMode::FrozenLookup) {
    auto it = params.frozen.find(text);
    if (it == params.frozen.end()) {
      throw InvalidInputError("unknown-text", "text not present in frozen table: " + text);
    }
    return it->second;
  }
  SparseFeatures features = featurize(text, params.hasher);
  std::vector<double> z = project_features(features, params);
  double norm = l2_norm(z);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InvalidInputError("degenerate-embedding",
                            "projection of \"" + text + "\" has zero norm");
  }
  for (double& v : z) v /= norm;
  return Embedding{std::move(z)};
}

std::vector<Embedding> encode_all(const std::vector<std::string>& texts,
                                  const EncoderParams& params) {
  std::vector<Embedding> out(texts.size());
  std::vector<std::string> errors(texts.size());
  parallel_for(texts.size(), [&](std::size_t i) {
    try {
      out[i] = encode(texts[i], params);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      throw InvalidInputError("encode-failed",
                              "encode failed at index " + std::to_string(i) + ": " + errors[i]);
    }
  }
  return out;
}

void ProjectionGradient::add_into(std::span<double> dense) const {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t base = std::size_t(rows[r]) * embed_dim;
    for (std::size_t j = 0; j < embed_dim; ++j) {
      dense[base + j] += values[r * embed_dim + j];
    }
  }
}

ProjectionGradient encode_gradient(const std::string& raw_text, const EncoderParams& params,
                                   std::span<const double> upstream) {
  if (params.mode != EncoderMode::Trainable) {
    throw InvalidInputError("unsupported-mode", "gradients require a trainable encoder");
  }
  if (upstream.size() != params.embed_dim) {
    throw InvalidInputError("dim-mismatch", "upstream gradient dimension mismatch");
  }
  std::string text = normalize_text(raw_text);
  SparseFeatures features = featurize(text, params.hasher);
  std::vector<double> z = project_features(features, params);
  double norm = l2_norm(z);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InvalidInputError("degenerate-embedding",
                            "projection of \"" + text + "\" has zero norm");
  }

  // y = z/|z|;  dL/dz = (u - y (y.u)) / |z|
  std::vector<double> y(z);
  for (double& v : y) v /= norm;
  double yu = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) yu += y[j] * upstream[j];
  std::vector<double> dz(params.embed_dim);
  for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = (upstream[j] - y[j] * yu) / norm;

  ProjectionGradient grad;
  grad.embed_dim = params.embed_dim;
  grad.rows.reserve(features.entries.size());
  grad.values.reserve(features.entries.size() * params.embed_dim);
  for (const auto& [bucket, count] : features.entries) {
    grad.rows.push_back(bucket);
    for (std::size_t j = 0; j < params.embed_dim; ++j) {
      grad.values.push_back(count * dz[j]);
    }
  }
  return grad;
}

std::array<std::uint8_t, 32> fingerprint(const EncoderParams& params) {
  // Four seeded FNV streams over the serialized params; enough to catch the
  // encoder/datastore mismatch this guards against, not cryptographic.
  std::uint64_t h[4];
  for (int k = 0; k < 4; ++k) h[k] = kFnvOffset ^ (0x9e3779b97f4a7c15ULL * (k + 1));
  auto mix = [&](const void* p, std::size_t n) {
    const unsigned char* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 4; ++k) {
        h[k] ^= bytes[i];
        h[k] *= kFnvPrime;
      }
    }
  };

  std::uint32_t mode = params.mode == EncoderMode::Trainable ? 0u : 1u;
  mix(&mode, sizeof(mode));
  std::uint64_t embed_dim = params.embed_dim;
  mix(&embed_dim, sizeof(embed_dim));
  if (params.mode == EncoderMode::Trainable) {
    mix(&params.hasher.hash_seed, sizeof(params.hasher.hash_seed));
    std::uint64_t feature_dim = params.hasher.feature_dim;
    mix(&feature_dim, sizeof(feature_dim));
    for (int n : params.hasher.ngram_sizes) mix(&n, sizeof(n));
    mix(params.projection.data(), params.projection.size() * sizeof(double));
  } else {
    for (const auto& [text, emb] : params.frozen) {
      mix(text.data(), text.size());
      mix(emb.values.data(), emb.values.size() * sizeof(double));
    }
  }

  std::array<std::uint8_t, 32> out{};
  for (int k = 0; k < 4; ++k) {
    for (int b = 0; b < 8; ++b) {
      out[k * 8 + b] = static_cast<std::uint8_t>(h[k] >> (8 * b));
    }
  }
  return out;
}

namespace {
constexpr char kFrozenMagic[4] = {'K', 'E', 'L', 'F'};
constexpr std::uint32_t kFrozenVersion = 1;
constexpr char kParamsMagic[4] = {'K', 'E', 'L', 'P'};
constexpr std::uint32_t kParamsVersion = 1;
}  // namespace

void save_params(const EncoderParams& params, const std::string& path) {
  if (params.mode != EncoderMode::Trainable) {
    throw InvalidInputError("unsupported-mode",
                            "params files hold trainable encoders; frozen tables use KELF");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidInputError("io", "cannot open for writing: " + path);
  bin::write_bytes(os, kParamsMagic, 4);
  bin::write_pod<std::uint32_t>(os, kParamsVersion);
  bin::write_pod<std::uint64_t>(os, params.hasher.hash_seed);
  bin::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.hasher.ngram_sizes.size()));
  for (int n : params.hasher.ngram_sizes) bin::write_pod<std::int32_t>(os, n);
  bin::write_pod<std::uint64_t>(os, params.hasher.feature_dim);
  bin::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.embed_dim));
  bin::write_bytes(os, params.projection.data(), params.projection.size() * sizeof(double));
  if (!os) throw InvalidInputError("io", "write failed: " + path);
}

EncoderParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInputError("io", "cannot open: " + path);
  try {
    bin::check_magic(is, kParamsMagic, "KELP");
    bin::check_version(bin::read_pod<std::uint32_t>(is, "version"), kParamsVersion, "KELP");
    EncoderParams params;
    params.mode = EncoderMode::Trainable;
    params.hasher.hash_seed = bin::read_pod<std::uint64_t>(is, "hash seed");
    auto n_sizes = bin::read_pod<std::uint32_t>(is, "ngram size count");
    params.hasher.ngram_sizes.clear();
    for (std::uint32_t i = 0; i < n_sizes; ++i) {
      params.hasher.ngram_sizes.push_back(bin::read_pod<std::int32_t>(is, "ngram size"));
    }
    params.hasher.feature_dim = bin::read_pod<std::uint64_t>(is, "feature dim");
    params.embed_dim = bin::read_pod<std::uint32_t>(is, "embed dim");
    params.hasher.validate();
    if (params.embed_dim < 2) {
      throw InvalidInputError("corrupt-params", "embed_dim below 2 in " + path);
    }
    params.projection.resize(params.hasher.feature_dim * params.embed_dim);
    bin::read_bytes(is, params.projection.data(), params.projection.size() * sizeof(double),
                    "projection");
    char extra;
    if (is.read(&extra, 1)) {
      throw InvalidInputError("corrupt-params", "trailing bytes after params");
    }
    return params;
  } catch (const InvalidInputError& e) {
    if (e.category() == "version-mismatch") throw;
    throw InvalidInputError("corrupt-params", e.what());
  }
}

void save_frozen_table(const FrozenTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidInputError("io", "cannot open for writing: " + path);
  std::uint32_t dim = table.empty() ? 0 : static_cast<std::uint32_t>(table.begin()->second.dim());
  bin::write_bytes(os, kFrozenMagic, 4);
  bin::write_pod<std::uint32_t>(os, kFrozenVersion);
  bin::write_pod<std::uint64_t>(os, table.size());
  bin::write_pod<std::uint32_t>(os, dim);
  std::vector<float> quantized(dim);
  for (const auto& [text, emb] : table) {
    if (emb.dim() != dim) {
      throw InvalidInputError("dim-mismatch", "frozen table rows have mixed dimensions");
    }
    // Quantize to a fixed point of the load path (upcast + renormalize), so a
    // written file is bitwise stable under load/save cycles.
    for (std::uint32_t j = 0; j < dim; ++j) quantized[j] = static_cast<float>(emb.values[j]);
    for (int iter = 0; iter < 8; ++iter) {
      std::vector<double> up(quantized.begin(), quantized.end());
      double n = l2_norm(up);
      bool stable = true;
      for (std::uint32_t j = 0; j < dim; ++j) {
        float w = static_cast<float>(up[j] / n);
        if (w != quantized[j]) {
          quantized[j] = w;
          stable = false;
        }
      }
      if (stable) break;
    }
    bin::write_str(os, text);
    bin::write_bytes(os, quantized.data(), quantized.size() * sizeof(float));
  }
  if (!os) throw InvalidInputError("io", "write failed: " + path);
}

FrozenTable load_frozen_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInputError("io", "cannot open: " + path);
  bin::check_magic(is, kFrozenMagic, "KELF");
  bin::check_version(bin::read_pod<std::uint32_t>(is, "version"), kFrozenVersion, "KELF");
  auto count = bin::read_pod<std::uint64_t>(is, "count");
  auto dim = bin::read_pod<std::uint32_t>(is, "dim");
  if (count > 0 && dim == 0) {
    throw InvalidInputError("corrupt-store", "frozen table with zero dimension");
  }
  FrozenTable table;
  std::vector<float> buf(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string text = bin::read_str(is, "frozen text");
    bin::read_bytes(is, buf.data(), buf.size() * sizeof(float), "frozen values");
    std::vector<double> values(buf.begin(), buf.end());
    if (table.count(text) != 0) {
      throw InvalidInputError("corrupt-store", "duplicate frozen key: " + text);
    }
    table.emplace(std::move(text), unit_embedding(std::move(values)));
  }
  char extra;
  if (is.read(&extra, 1)) {
    throw InvalidInputError("corrupt-store", "trailing bytes after frozen table");
  }
  return table;
}

}  // namespace knnel
