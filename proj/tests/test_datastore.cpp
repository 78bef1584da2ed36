#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "knnel/core.hpp"
#include "knnel/datastore.hpp"
#include "knnel/encoder.hpp"
#include "knnel/rng.hpp"

using namespace knnel;
namespace fs = std::filesystem;

namespace {

Ontology numbered_ontology(std::size_t n) {
  Ontology onto;
  for (std::size_t i = 0; i < n; ++i) {
    onto.add({"E" + std::to_string(i), "entity number " + std::to_string(i), {}});
  }
  return onto;
}

// Random unit-key fixture routed through a frozen table so keys are fully
// controlled (no feature hashing in the way).
struct Fixture {
  Ontology onto;
  std::vector<LabeledMention> train;
  EncoderParams params;
};

Fixture random_fixture(std::size_t m, std::size_t dim, std::uint64_t seed,
                       std::size_t n_entities = 10) {
  Fixture fx;
  fx.onto = numbered_ontology(n_entities);
  Rng rng(seed);
  FrozenTable table;
  for (std::size_t i = 0; i < m; ++i) {
    std::string text = "mention " + std::to_string(i);
    std::vector<double> v(dim);
    for (double& x : v) x = rng.next_in(-1.0, 1.0);
    table.emplace(text, unit_embedding(std::move(v)));
    fx.train.push_back({text, "E" + std::to_string(i % n_entities)});
  }
  for (const auto& rec : fx.onto.entities()) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.next_in(-1.0, 1.0);
    table.emplace(rec.canonical_name, unit_embedding(std::move(v)));
  }
  fx.params = frozen_encoder_params(std::move(table));
  return fx;
}

Embedding random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.next_in(-1.0, 1.0);
  return unit_embedding(std::move(v));
}

// Brute-force oracle independent of the store's own search.
std::vector<std::pair<double, std::size_t>> brute_force(const Embedding& q,
                                                        const EmbeddingMatrix& keys,
                                                        std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all(keys.rows);
  for (std::size_t i = 0; i < keys.rows; ++i) {
    all[i] = {std::clamp(dot(q.span(), keys.row(i)), -1.0, 1.0), i};
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace

TEST_CASE("datastore row count equals instance count at corpus scale") {
  const std::size_t m = 16826;
  Ontology onto = numbered_ontology(40);
  std::vector<LabeledMention> train;
  train.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    train.push_back({"case report " + std::to_string(i), "E" + std::to_string(i % 40)});
  }
  FeatureHasherConfig hasher;
  hasher.ngram_sizes = {2, 3};
  hasher.feature_dim = 2048;
  auto params = init_encoder_params(hasher, 8, 1);
  Datastore store = build_datastore(train, params, onto);
  CHECK(store.size() == m);
  CHECK(store.dim() == 8);
  CHECK(store.provenance()[5] == "case report 5");
  CHECK(store.values()[41] == "E1");
}

TEST_CASE("empty datastore is valid and queries return empty") {
  Ontology onto = numbered_ontology(3);
  auto params = init_encoder_params({{2, 3}, 256, 7}, 8, 2);
  Datastore store = build_datastore({}, params, onto);
  CHECK(store.size() == 0);
  Rng rng(1);
  CHECK(store.query_knn(random_unit(rng, 8), 4).empty());
  store.build_index();
  CHECK(store.query_knn_indexed(random_unit(rng, 8), 4).empty());
}

TEST_CASE("duplicate mention texts are kept as distinct rows") {
  Ontology onto = numbered_ontology(3);
  auto params = init_encoder_params({{2, 3}, 256, 7}, 8, 2);
  std::vector<LabeledMention> train = {{"same text", "E0"}, {"same text", "E1"}};
  Datastore store = build_datastore(train, params, onto);
  CHECK(store.size() == 2);
  CHECK(store.values()[0] == "E0");
  CHECK(store.values()[1] == "E1");
}

TEST_CASE("build_datastore rejects unknown golds") {
  Ontology onto = numbered_ontology(2);
  auto params = init_encoder_params({{2, 3}, 256, 7}, 8, 2);
  std::vector<LabeledMention> train = {{"x", "E9"}};
  CHECK_THROWS_AS(build_datastore(train, params, onto), InvalidInputError);
}

TEST_CASE("query_knn exactness, ordering, and stored-key recall") {
  Fixture fx = random_fixture(300, 16, 44);
  Datastore store = build_datastore(fx.train, fx.params, fx.onto);

  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    Embedding q = random_unit(rng, 16);
    auto hits = store.query_knn(q, 10);
    auto oracle = brute_force(q, store.keys(), 10);
    REQUIRE(hits.size() == 10);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].row == oracle[i].second);
      CHECK(hits[i].similarity == oracle[i].first);
      CHECK(hits[i].entity == store.values()[hits[i].row]);
      if (i > 0) CHECK(hits[i - 1].similarity >= hits[i].similarity);
    }
    // repeated call is identical
    CHECK(store.query_knn(q, 10) == hits);
  }

  // a stored key queried back is its own nearest neighbor
  Embedding stored{std::vector<double>(store.keys().row(17).begin(),
                                       store.keys().row(17).end())};
  auto self = store.query_knn(stored, 1);
  REQUIRE(self.size() == 1);
  CHECK(self[0].row == 17);
  CHECK(self[0].similarity == doctest::Approx(1.0).epsilon(1e-6));

  // k >= M returns all rows fully sorted
  auto all = store.query_knn(stored, 4000);
  CHECK(all.size() == store.size());
  for (std::size_t i = 1; i < all.size(); ++i) {
    CHECK(all[i - 1].similarity >= all[i].similarity);
  }

  CHECK_THROWS_AS(store.query_knn(random_unit(rng, 8), 3), InvalidInputError);
}

TEST_CASE("query_knn resolves exact ties by lower row index") {
  Ontology onto = numbered_ontology(3);
  FrozenTable table;
  table.emplace("m0", unit_embedding({1.0, 0.0}));
  table.emplace("m1", unit_embedding({0.0, 1.0}));
  table.emplace("m2", unit_embedding({0.6, 0.8}));
  table.emplace("m3", unit_embedding({0.6, 0.8}));   // tie with m2
  table.emplace("m4", unit_embedding({-1.0, 0.0}));
  table.emplace("m5", unit_embedding({0.0, 1.0}));   // tie with m1
  auto params = frozen_encoder_params(table);
  std::vector<LabeledMention> train;
  for (int i = 0; i < 6; ++i) train.push_back({"m" + std::to_string(i), "E" + std::to_string(i % 3)});
  Datastore store = build_datastore(train, params, onto);

  auto hits = store.query_knn(unit_embedding({0.6, 0.8}), 4);
  REQUIRE(hits.size() == 4);
  CHECK(hits[0].row == 2);  // tie (sim 1.0) broken toward row 2 over row 3
  CHECK(hits[1].row == 3);
  CHECK(hits[2].row == 1);  // next tie pair: rows 1 and 5 at sim 0.8
  CHECK(hits[3].row == 5);
  CHECK(hits[2].similarity == hits[3].similarity);

  auto hits2 = store.query_knn(unit_embedding({0.0, 1.0}), 2);
  CHECK(hits2[0].row == 1);
  CHECK(hits2[1].row == 5);
}

TEST_CASE("indexed search returns the identical hit list as exact search") {
  Fixture fx = random_fixture(2000, 16, 123);
  Datastore store = build_datastore(fx.train, fx.params, fx.onto);

  CHECK_THROWS_AS(store.query_knn_indexed(unit_embedding({1.0}), 1), StateError);
  store.build_index(7);
  REQUIRE(store.has_index());

  Rng rng(60);
  for (int t = 0; t < 50; ++t) {
    Embedding q = random_unit(rng, 16);
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{64}}) {
      auto exact = store.query_knn(q, k);
      auto indexed = store.query_knn_indexed(q, k);
      CHECK(exact == indexed);
    }
  }

  // stored key again, through the index
  Embedding stored{std::vector<double>(store.keys().row(99).begin(),
                                       store.keys().row(99).end())};
  auto hit = store.query_knn_indexed(stored, 1);
  REQUIRE(hit.size() == 1);
  CHECK(hit[0].row == 99);
}

TEST_CASE("datastore save/load round-trip") {
  Fixture fx = random_fixture(120, 12, 5);
  Datastore store = build_datastore(fx.train, fx.params, fx.onto);
  fs::path path = fs::temp_directory_path() / "knnel_test_store.kels";
  store.save(path.string());

  Datastore loaded = Datastore::load(path.string());
  CHECK(loaded.deep_equals(store));
  CHECK(loaded.encoder_fingerprint() == store.encoder_fingerprint());

  // file-level byte stability
  fs::path path2 = fs::temp_directory_path() / "knnel_test_store2.kels";
  loaded.save(path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // identical queries pre and post round-trip
  Rng rng(3);
  Embedding q = random_unit(rng, 12);
  CHECK(store.query_knn(q, 7) == loaded.query_knn(q, 7));

  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("datastore loader rejects corrupt files") {
  Fixture fx = random_fixture(20, 8, 6);
  Datastore store = build_datastore(fx.train, fx.params, fx.onto);
  fs::path path = fs::temp_directory_path() / "knnel_test_store_corrupt.kels";
  store.save(path.string());

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  // truncation at several depths
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(cut));
    out.close();
    CHECK_THROWS_AS(Datastore::load(path.string()), InvalidInputError);
  }

  // trailing garbage
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.write("x", 1);
    out.close();
    CHECK_THROWS_AS(Datastore::load(path.string()), InvalidInputError);
  }

  // version from the future names both versions
  {
    std::string futured = bytes;
    std::uint32_t v = 7;
    std::memcpy(futured.data() + 4, &v, sizeof(v));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(futured.data(), static_cast<std::streamsize>(futured.size()));
  }
  try {
    Datastore::load(path.string());
    FAIL("expected version mismatch");
  } catch (const InvalidInputError& e) {
    CHECK(e.category() == "version-mismatch");
    std::string msg = e.what();
    CHECK(msg.find("7") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }
  fs::remove(path);
}
