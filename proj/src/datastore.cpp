#include "knnel/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include "bin_io.hpp"
#include "knnel/parallel.hpp"
#include "knnel/rng.hpp"

namespace knnel {

namespace {

constexpr char kStoreMagic[4] = {'K', 'E', 'L', 'S'};
constexpr std::uint32_t kStoreVersion = 1;

// better-than ordering: similarity descending, then row ascending
bool hit_better(double sim_a, std::size_t row_a, double sim_b, std::size_t row_b) {
  if (sim_a != sim_b) return sim_a > sim_b;
  return row_a < row_b;
}

double clamp_sim(double s) { return std::clamp(s, -1.0, 1.0); }

}  // namespace

Datastore build_datastore(const std::vector<LabeledMention>& train_set,
                          const EncoderParams& params, const Ontology& ontology) {
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (!ontology.contains(train_set[i].gold)) {
      throw InvalidInputError("unknown-entity", "train gold at index " + std::to_string(i) +
                                                    " missing from ontology: " +
                                                    train_set[i].gold);
    }
  }
  std::vector<Embedding> embs;
  {
    std::vector<std::string> surfaces;
    surfaces.reserve(train_set.size());
    for (const auto& item : train_set) surfaces.push_back(item.surface);
    embs = encode_all(surfaces, params);
  }

  Datastore store;
  store.keys_ = EmbeddingMatrix(train_set.size(), params.embed_dim);
  store.values_.reserve(train_set.size());
  store.provenance_.reserve(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    // pass keys through f32 so the in-memory matrix equals the on-disk one
    for (std::size_t j = 0; j < params.embed_dim; ++j) {
      store.keys_.data[i * params.embed_dim + j] =
          static_cast<double>(static_cast<float>(embs[i].values[j]));
    }
    store.values_.push_back(train_set[i].gold);
    store.provenance_.push_back(train_set[i].surface);
  }
  store.fingerprint_ = fingerprint(params);
  return store;
}

std::vector<NeighborHit> Datastore::query_knn(const Embedding& query, std::size_t k) const {
  if (query.dim() != keys_.dim) {
    throw InvalidInputError("dim-mismatch", "query dimension does not match the store");
  }
  if (k == 0) throw InvalidInputError("invalid-k", "k must be >= 1");
  const std::size_t m = size();
  std::vector<std::pair<double, std::size_t>> scored(m);
  for (std::size_t i = 0; i < m; ++i) {
    scored[i] = {clamp_sim(dot(query.span(), keys_.row(i))), i};
  }
  std::size_t take = std::min(k, m);
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                    [](const auto& a, const auto& b) {
                      return hit_better(a.first, a.second, b.first, b.second);
                    });
  std::vector<NeighborHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    hits.push_back({scored[i].second, scored[i].first, values_[scored[i].second]});
  }
  return hits;
}

void Datastore::build_index(std::uint64_t seed) {
  Index index;
  const std::size_t m = size();
  const std::size_t d = keys_.dim;
  const std::size_t n_clusters =
      m == 0 ? 0
             : std::clamp<std::size_t>(
                   static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(m)))),
                   1, 4096);

  index.centroids = EmbeddingMatrix(n_clusters, d);
  index.members.assign(n_clusters, {});
  if (n_clusters > 0) {
    // seeded sample of distinct rows as initial centroids
    Rng rng(seed);
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t c = 0; c < n_clusters; ++c) {
      index.centroids.set_row(c, keys_.row(order[c]));
    }

    std::vector<std::uint32_t> assign(m, 0);
    std::vector<double> dist2(m, 0.0);
    for (int iter = 0; iter < 8; ++iter) {
      parallel_for(m, [&](std::size_t i) {
        auto row = keys_.row(i);
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < n_clusters; ++c) {
          auto cen = index.centroids.row(c);
          double d2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            double diff = row[j] - cen[j];
            d2 += diff * diff;
          }
          if (d2 < best) {
            best = d2;
            best_c = static_cast<std::uint32_t>(c);
          }
        }
        assign[i] = best_c;
        dist2[i] = best;
      });
      // recompute centroids; empty clusters keep their previous position
      std::vector<double> sums(n_clusters * d, 0.0);
      std::vector<std::size_t> counts(n_clusters, 0);
      for (std::size_t i = 0; i < m; ++i) {
        auto row = keys_.row(i);
        for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += row[j];
        counts[assign[i]] += 1;
      }
      for (std::size_t c = 0; c < n_clusters; ++c) {
        if (counts[c] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) {
          index.centroids.data[c * d + j] = sums[c * d + j] / counts[c];
        }
      }
    }
    // final assignment defines members, radii and norm caps
    index.radii.assign(n_clusters, 0.0);
    index.max_norms.assign(n_clusters, 0.0);
    parallel_for(m, [&](std::size_t i) {
      auto row = keys_.row(i);
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < n_clusters; ++c) {
        auto cen = index.centroids.row(c);
        double d2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double diff = row[j] - cen[j];
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      assign[i] = best_c;
      dist2[i] = best;
    });
    for (std::size_t i = 0; i < m; ++i) {
      index.members[assign[i]].push_back(static_cast<std::uint32_t>(i));
      index.radii[assign[i]] = std::max(index.radii[assign[i]], std::sqrt(dist2[i]));
      index.max_norms[assign[i]] =
          std::max(index.max_norms[assign[i]], l2_norm(keys_.row(i)));
    }
  }
  index_ = std::move(index);
}

std::vector<NeighborHit> Datastore::query_knn_indexed(const Embedding& query,
                                                      std::size_t k) const {
  if (!index_) {
    throw StateError("index-not-built", "call build_index() before query_knn_indexed");
  }
  if (query.dim() != keys_.dim) {
    throw InvalidInputError("dim-mismatch", "query dimension does not match the store");
  }
  if (k == 0) throw InvalidInputError("invalid-k", "k must be >= 1");
  const Index& index = *index_;
  const std::size_t d = keys_.dim;
  const std::size_t n_clusters = index.members.size();
  if (size() == 0) return {};

  // dot(q,x) = (|q|^2 + |x|^2 - |q-x|^2) / 2 with |q| = 1, so a lower bound on
  // the member distance gives an upper bound on the member similarity
  std::vector<std::pair<double, std::size_t>> cluster_order(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    double d2 = 0.0;
    auto cen = index.centroids.row(c);
    for (std::size_t j = 0; j < d; ++j) {
      double diff = query.values[j] - cen[j];
      d2 += diff * diff;
    }
    double dmin = std::max(0.0, std::sqrt(d2) - index.radii[c]);
    double nmax = index.max_norms[c];
    double ub = (1.0 + nmax * nmax - dmin * dmin) / 2.0;
    ub = std::min(ub, 1.0) + 1e-6;  // slack absorbs float rounding in the bound
    cluster_order[c] = {ub, c};
  }
  std::sort(cluster_order.begin(), cluster_order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  using Cand = std::pair<double, std::uint32_t>;  // (sim, row)
  auto better = [](const Cand& a, const Cand& b) {
    return hit_better(a.first, a.second, b.first, b.second);
  };
  // max-heap under "better": top() is the worst of the current top-k
  std::priority_queue<Cand, std::vector<Cand>, decltype(better)> heap(better);

  const std::size_t want = std::min(k, size());
  for (const auto& [ub, c] : cluster_order) {
    if (heap.size() == want && ub < heap.top().first) break;
    for (std::uint32_t row : index.members[c]) {
      double sim = clamp_sim(dot(query.span(), keys_.row(row)));
      Cand cand{sim, row};
      if (heap.size() < want) {
        heap.push(cand);
      } else if (better(cand, heap.top())) {
        heap.pop();
        heap.push(cand);
      }
    }
  }

  std::vector<NeighborHit> hits(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    const auto& [sim, row] = heap.top();
    hits[i] = {row, sim, values_[row]};
    heap.pop();
  }
  return hits;
}

void Datastore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidInputError("io", "cannot open for writing: " + path);
  bin::write_bytes(os, kStoreMagic, 4);
  bin::write_pod<std::uint32_t>(os, kStoreVersion);
  bin::write_pod<std::uint64_t>(os, size());
  bin::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(keys_.dim));
  bin::write_bytes(os, fingerprint_.data(), fingerprint_.size());
  std::vector<float> row32(keys_.dim);
  for (std::size_t i = 0; i < size(); ++i) {
    auto row = keys_.row(i);
    for (std::size_t j = 0; j < keys_.dim; ++j) row32[j] = static_cast<float>(row[j]);
    bin::write_bytes(os, row32.data(), row32.size() * sizeof(float));
  }
  for (const auto& v : values_) bin::write_str(os, v);
  for (const auto& p : provenance_) bin::write_str(os, p);
  if (!os) throw InvalidInputError("io", "write failed: " + path);
}

Datastore Datastore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInputError("io", "cannot open: " + path);
  bin::check_magic(is, kStoreMagic, "KELS");
  bin::check_version(bin::read_pod<std::uint32_t>(is, "version"), kStoreVersion, "KELS");
  auto m = bin::read_pod<std::uint64_t>(is, "row count");
  auto dim = bin::read_pod<std::uint32_t>(is, "dim");
  Datastore store;
  bin::read_bytes(is, store.fingerprint_.data(), store.fingerprint_.size(), "fingerprint");
  store.keys_ = EmbeddingMatrix(m, dim);
  std::vector<float> row32(dim);
  for (std::uint64_t i = 0; i < m; ++i) {
    bin::read_bytes(is, row32.data(), row32.size() * sizeof(float), "keys");
    for (std::uint32_t j = 0; j < dim; ++j) {
      store.keys_.data[i * dim + j] = static_cast<double>(row32[j]);
    }
  }
  store.values_.reserve(m);
  for (std::uint64_t i = 0; i < m; ++i) store.values_.push_back(bin::read_str(is, "values"));
  store.provenance_.reserve(m);
  for (std::uint64_t i = 0; i < m; ++i) {
    store.provenance_.push_back(bin::read_str(is, "provenance"));
  }
  char extra;
  if (is.read(&extra, 1)) {
    throw InvalidInputError("corrupt-store", "trailing bytes after datastore");
  }
  return store;
}

bool Datastore::deep_equals(const Datastore& other) const {
  return keys_.rows == other.keys_.rows && keys_.dim == other.keys_.dim &&
         keys_.data == other.keys_.data && values_ == other.values_ &&
         provenance_ == other.provenance_ && fingerprint_ == other.fingerprint_;
}

}  // namespace knnel
