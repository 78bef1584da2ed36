#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "knnel/core.hpp"
#include "knnel/datastore.hpp"
#include "knnel/encoder.hpp"
#include "knnel/inference.hpp"
#include "knnel/rng.hpp"

using namespace knnel;

namespace {

Ontology abc_ontology() {
  Ontology onto;
  onto.add({"A", "name a", {}});
  onto.add({"B", "name b", {}});
  onto.add({"C", "name c", {}});
  return onto;
}

EntityCache cache_from_rows(std::vector<std::vector<double>> rows) {
  EntityCache cache;
  cache.embeddings = EmbeddingMatrix(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    cache.embeddings.set_row(i, unit_embedding(rows[i]).span());
  }
  return cache;
}

// entity vectors with exact query cosines: e = (s, sqrt(1-s^2)) in a private
// orthogonal slot per entity, query = first axis
EntityCache cache_with_scores(const std::vector<double>& scores) {
  std::size_t n = scores.size();
  EntityCache cache;
  cache.embeddings = EmbeddingMatrix(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(n + 1, 0.0);
    v[0] = scores[i];
    v[i + 1] = std::sqrt(1.0 - scores[i] * scores[i]);
    cache.embeddings.set_row(i, v);
  }
  return cache;
}

Embedding axis_query(std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  v[0] = 1.0;
  return Embedding{std::move(v)};
}

NeighborHit hit(std::size_t row, double sim, const EntityId& id) {
  return NeighborHit{row, sim, id};
}

}  // namespace

TEST_CASE("model distribution: uniform when equidistant, softmax otherwise") {
  auto uniform_cache = cache_with_scores({0.44, 0.44, 0.44, 0.44});
  auto pu = model_distribution(axis_query(5), uniform_cache, 0.7);
  for (std::size_t i = 0; i < 4; ++i) CHECK(pu.at(i) == doctest::Approx(0.25).epsilon(1e-12));

  auto cache = cache_with_scores({0.9, 0.7, 0.1});
  auto p = model_distribution(axis_query(4), cache, 1.0);
  // frozen from the closed-form softmax oracle over (0.9, 0.7, 0.1)
  double z = std::exp(0.9) + std::exp(0.7) + std::exp(0.1);
  CHECK(p.at(0) == doctest::Approx(std::exp(0.9) / z).epsilon(1e-9));
  CHECK(std::abs(p.at(0) - 0.4409) < 5e-5);
  CHECK(std::abs(p.at(1) - 0.3610) < 5e-5);
  CHECK(std::abs(p.at(2) - 0.1981) < 5e-5);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("model distribution saturates at sharp temperature") {
  auto cache = cache_with_scores({0.9, 0.4, 0.3});
  auto p = model_distribution(axis_query(4), cache, 0.01);
  // 1 - 1e-20 is not representable below 1.0 in f64, hence >=
  CHECK(p.at(0) >= 1.0 - 1e-20);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("model distribution rejects empty cache") {
  EntityCache empty;
  CHECK_THROWS_AS(model_distribution(axis_query(3), empty, 1.0), StateError);
}

TEST_CASE("knn distribution max-aggregates per entity") {
  Ontology onto = abc_ontology();
  // entity A at sims {0.9, 0.8}, entity B at {0.7}: the 0.8 hit is ignored
  std::vector<NeighborHit> hits = {hit(0, 0.9, "A"), hit(1, 0.8, "A"), hit(2, 0.7, "B")};
  auto p = knn_distribution(hits, onto, 1.0);
  double za = std::exp(0.9), zb = std::exp(0.7);
  CHECK(p.at(0) == doctest::Approx(za / (za + zb)).epsilon(1e-12));
  CHECK(p.at(1) == doctest::Approx(zb / (za + zb)).epsilon(1e-12));
  CHECK(std::abs(p.at(0) - 0.5498) < 5e-5);
  CHECK(std::abs(p.at(1) - 0.4502) < 5e-5);
  CHECK(p.at(2) == 0.0);  // absent entity is exactly zero
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("knn distribution boundary cases") {
  Ontology onto = abc_ontology();
  auto one = knn_distribution({hit(0, 0.42, "B")}, onto, 2.5);
  CHECK(one.at(1) == 1.0);

  // all neighbors share one entity: probability 1 regardless of temperature
  std::vector<NeighborHit> same = {hit(0, 0.9, "C"), hit(1, 0.2, "C"), hit(2, -0.5, "C")};
  for (double beta : {0.01, 1.0, 50.0}) {
    auto p = knn_distribution(same, onto, beta);
    CHECK(p.at(2) == 1.0);
  }

  CHECK_THROWS_AS(knn_distribution({}, onto, 1.0), InvalidInputError);
  CHECK_THROWS_AS(knn_distribution({hit(0, 0.5, "A")}, onto, 0.0), InvalidInputError);
  CHECK_THROWS_AS(knn_distribution({hit(0, 0.5, "ZZZ")}, onto, 1.0), InvalidInputError);
}

TEST_CASE("knn distribution is invariant to hit arrival order") {
  Ontology onto = abc_ontology();
  Rng rng(17);
  for (int t = 0; t < 30; ++t) {
    std::vector<NeighborHit> hits;
    std::size_t k = 2 + rng.next_below(8);
    for (std::size_t i = 0; i < k; ++i) {
      const char* ids[3] = {"A", "B", "C"};
      hits.push_back(hit(i, rng.next_in(-1.0, 1.0), ids[rng.next_below(3)]));
    }
    auto p1 = knn_distribution(hits, onto, 0.8);
    auto shuffled = hits;
    rng.shuffle(shuffled);
    auto p2 = knn_distribution(shuffled, onto, 0.8);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(p1.at(i) - p2.at(i)) < 1e-12);
    }
  }
}

TEST_CASE("max aggregation matches the brute-force per-entity reduction") {
  Ontology onto = abc_ontology();
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    std::vector<NeighborHit> hits;
    std::size_t k = 1 + rng.next_below(10);
    for (std::size_t i = 0; i < k; ++i) {
      const char* ids[3] = {"A", "B", "C"};
      hits.push_back(hit(i, rng.next_in(-1.0, 1.0), ids[rng.next_below(3)]));
    }
    // independent reduction oracle
    std::map<EntityId, double> expected_max;
    for (const auto& h : hits) {
      auto it = expected_max.find(h.entity);
      if (it == expected_max.end()) {
        expected_max[h.entity] = h.similarity;
      } else {
        it->second = std::max(it->second, h.similarity);
      }
    }
    std::vector<double> scores;
    std::vector<std::size_t> ords;
    for (const auto& [id, s] : expected_max) {
      scores.push_back(s);
      ords.push_back(*onto.ordinal_of(id));
    }
    auto probs = stable_softmax(scores, 0.6);
    auto p = knn_distribution(hits, onto, 0.6);
    for (std::size_t i = 0; i < ords.size(); ++i) {
      CHECK(p.at(ords[i]) == doctest::Approx(probs[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("sum aggregation differs from max and pools hit mass") {
  Ontology onto = abc_ontology();
  std::vector<NeighborHit> hits = {hit(0, 0.9, "A"), hit(1, 0.8, "A"), hit(2, 0.7, "B")};
  auto sum = knn_distribution(hits, onto, 1.0, Aggregation::Sum);
  double za = std::exp(0.9) + std::exp(0.8);
  double zb = std::exp(0.7);
  CHECK(sum.at(0) == doctest::Approx(za / (za + zb)).epsilon(1e-9));
  CHECK(sum.at(1) == doctest::Approx(zb / (za + zb)).epsilon(1e-9));

  auto mx = knn_distribution(hits, onto, 1.0, Aggregation::Max);
  CHECK(sum.at(0) > mx.at(0));  // the extra 0.8 hit counts under sum only
}

TEST_CASE("interpolate: hand arithmetic and boundary identities") {
  auto model = EntityDistribution::dense({0.6, 0.3, 0.1});
  auto knn = EntityDistribution::sparse({{1, 1.0}}, 3);

  auto p = interpolate(knn, model, 0.1);
  CHECK(p.at(0) == doctest::Approx(0.54).epsilon(1e-12));
  CHECK(p.at(1) == doctest::Approx(0.37).epsilon(1e-12));
  CHECK(p.at(2) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));

  auto p0 = interpolate(knn, model, 0.0);
  auto p1 = interpolate(knn, model, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(p0.at(i) - model.at(i)) < 1e-12);
    CHECK(std::abs(p1.at(i) - knn.at(i)) < 1e-12);
  }

  CHECK_THROWS_AS(interpolate(knn, model, -0.1), InvalidInputError);
  CHECK_THROWS_AS(interpolate(knn, model, 1.1), InvalidInputError);
}

namespace {

// Hand-built rectification fixture: the model ranks a morphologically similar
// wrong entity first; a stored neighbor carries the gold label and the
// interpolated distribution flips the argmax at lambda = 0.1.
struct RectFixture {
  Ontology onto;
  EncoderParams params;
  Datastore store;
  EntityCache cache;
  InferenceConfig cfg;
  Mention mention;
};

RectFixture rectification_fixture() {
  RectFixture fx;
  fx.onto.add({"G", "dermoid cyst", {}});   // gold
  fx.onto.add({"W", "dermoid mass", {}});   // wrong but similar
  fx.onto.add({"C", "cystic fibrosis", {}});

  auto on_circle = [](double c) { return unit_embedding({c, std::sqrt(1.0 - c * c)}); };
  FrozenTable table;
  table.emplace("dermoid", unit_embedding({1.0, 0.0}));  // the query mention
  table.emplace("dermoid cyst", on_circle(0.93));
  table.emplace("dermoid mass", on_circle(0.95));
  table.emplace("cystic fibrosis", on_circle(0.20));
  table.emplace("dermoids", on_circle(0.98));        // datastore neighbor, gold label
  table.emplace("fibrotic tissue", on_circle(0.50));  // datastore noise
  fx.params = frozen_encoder_params(table);

  std::vector<LabeledMention> train = {{"dermoids", "G"}, {"fibrotic tissue", "C"}};
  fx.store = build_datastore(train, fx.params, fx.onto);
  fx.cache = build_entity_cache(fx.onto, fx.params);
  fx.cfg.k = 2;
  fx.cfg.lambda = 0.1;
  fx.cfg.beta1 = 1.0;
  fx.cfg.beta2 = 1.0;
  fx.mention = Mention{"dermoid", std::nullopt};
  return fx;
}

}  // namespace

TEST_CASE("link rectifies the model argmax through the knn distribution") {
  RectFixture fx = rectification_fixture();

  // without the datastore the model picks the wrong entity
  auto base = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto,
                   [&] { auto c = fx.cfg; c.lambda = 0.0; return c; }(), 3);
  CHECK(base.ranked[0].entity == "W");

  auto res = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto, fx.cfg, 3);
  CHECK(res.used_knn);
  CHECK(res.ranked[0].entity == "G");

  // gold-labeled neighbor is in the retrieved list
  bool gold_neighbor = false;
  for (const auto& h : res.neighbors) gold_neighbor |= (h.entity == "G");
  CHECK(gold_neighbor);

  // hand-arithmetic oracle over the exact cosines (f32-quantized keys)
  auto q32 = [](double c) { return static_cast<double>(static_cast<float>(c)); };
  double s_ng = q32(0.98), s_nc = q32(0.50);
  double zg = std::exp(s_ng), zc = std::exp(s_nc);
  double knn_g = zg / (zg + zc);
  double zm_g = std::exp(0.93), zm_w = std::exp(0.95), zm_c = std::exp(0.20);
  double zm = zm_g + zm_w + zm_c;
  double expect_g = 0.1 * knn_g + 0.9 * (zm_g / zm);
  double expect_w = 0.9 * (zm_w / zm);
  std::size_t ord_g = *fx.onto.ordinal_of("G");
  std::size_t ord_w = *fx.onto.ordinal_of("W");
  auto final_probs = interpolate(res.knn_dist, res.model_dist, 0.1);
  CHECK(final_probs.at(ord_g) == doctest::Approx(expect_g).epsilon(1e-6));
  CHECK(final_probs.at(ord_w) == doctest::Approx(expect_w).epsilon(1e-6));
  CHECK(expect_g > expect_w);
}

TEST_CASE("link with lambda 0 equals the pure model ranking") {
  RectFixture fx = rectification_fixture();
  auto cfg0 = fx.cfg;
  cfg0.lambda = 0.0;
  auto res = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto, cfg0, 3);

  // no-datastore pipeline
  Datastore empty = build_datastore({}, fx.params, fx.onto);
  auto pure = link(fx.mention, empty, fx.cache, fx.params, fx.onto, cfg0, 3);
  CHECK_FALSE(pure.used_knn);
  REQUIRE(res.ranked.size() == pure.ranked.size());
  for (std::size_t i = 0; i < res.ranked.size(); ++i) {
    CHECK(res.ranked[i].entity == pure.ranked[i].entity);
    CHECK(std::abs(res.ranked[i].score - pure.ranked[i].score) < 1e-12);
  }
  // the empty-store degradation is recorded
  REQUIRE(pure.notices.size() == 1);
  CHECK(pure.notices[0].find("empty-datastore") == 0);
}

TEST_CASE("link full ranking sums to one and breaks ties by ordinal") {
  RectFixture fx = rectification_fixture();
  auto res = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto, fx.cfg, 3);
  double total = 0.0;
  for (const auto& c : res.ranked) total += c.score;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

  // equal-probability entities order by ontology ordinal
  Ontology onto = abc_ontology();
  auto cache = cache_with_scores({0.5, 0.5, 0.5});
  FrozenTable t;
  t.emplace("q", axis_query(4));
  // cache rows are hand-set, the encoder only embeds the query mention
  auto params = frozen_encoder_params(t);
  Datastore empty = build_datastore({}, params, onto);
  InferenceConfig cfg;
  cfg.lambda = 0.0;
  cfg.beta1 = 1.0;
  auto tie = link(Mention{"q", std::nullopt}, empty, cache, params, onto, cfg, 3);
  CHECK(tie.ranked[0].entity == "A");
  CHECK(tie.ranked[1].entity == "B");
  CHECK(tie.ranked[2].entity == "C");
}

TEST_CASE("link records fingerprint mismatches") {
  RectFixture fx = rectification_fixture();
  FrozenTable other;
  other.emplace("dermoid", unit_embedding({0.0, 1.0}));
  other.emplace("dermoid cyst", unit_embedding({1.0, 0.0}));
  other.emplace("dermoid mass", unit_embedding({0.6, 0.8}));
  other.emplace("cystic fibrosis", unit_embedding({0.8, 0.6}));
  auto other_params = frozen_encoder_params(other);
  auto cache = build_entity_cache(fx.onto, other_params);

  auto res = link(fx.mention, fx.store, cache, other_params, fx.onto, fx.cfg, 2);
  REQUIRE_FALSE(res.notices.empty());
  CHECK(res.notices[0].find("fingerprint-mismatch") == 0);
}

TEST_CASE("monotone evidence: lambda never hurts a knn-favored entity") {
  RectFixture fx = rectification_fixture();
  auto res = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto, fx.cfg, 3);
  for (std::size_t ord = 0; ord < 3; ++ord) {
    if (res.knn_dist.at(ord) <= res.model_dist.at(ord)) continue;
    double prev = -1.0;
    for (double lam : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
      double p = interpolate(res.knn_dist, res.model_dist, lam).at(ord);
      CHECK(p >= prev);
      prev = p;
    }
  }
}

TEST_CASE("interpolated distribution is a distribution for every lambda") {
  RectFixture fx = rectification_fixture();
  auto res = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto, fx.cfg, 3);
  for (double lam = 0.0; lam <= 1.0; lam += 0.1) {
    auto p = interpolate(res.knn_dist, res.model_dist, lam);
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(p.at(i) >= 0.0);
      total += p.at(i);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("profile presets install the per-dataset values") {
  auto ncbi = profile_config("ncbi");
  CHECK(ncbi.beta1 == 0.01);
  CHECK(ncbi.beta2 == 1.0);
  CHECK(ncbi.k == 4);
  CHECK(ncbi.lambda == 0.1);
  auto bc5 = profile_config("bc5cdr");
  CHECK(bc5.beta1 == 0.05);
  CHECK(bc5.beta2 == 5.0);
  CHECK(bc5.k == 4);
  auto cometa = profile_config("cometa");
  CHECK(cometa.beta1 == 0.2);
  CHECK(cometa.k == 128);
  auto aap = profile_config("aap");
  CHECK(aap.beta1 == 1.0);
  CHECK(aap.beta2 == 1.0);
  CHECK(aap.k == 128);
  CHECK_THROWS_AS(profile_config("umls"), InvalidInputError);
}

TEST_CASE("link result serializes with the documented shape") {
  RectFixture fx = rectification_fixture();
  auto res = link(fx.mention, fx.store, fx.cache, fx.params, fx.onto, fx.cfg, 2);
  auto j = link_result_json("dermoid", res, fx.store, fx.onto);
  CHECK(j["mention"] == "dermoid");
  REQUIRE(j["top"].size() == 2);
  CHECK(j["top"][0]["entity_id"] == "G");
  CHECK(j["top"][0]["prob"].get<double>() > j["top"][1]["prob"].get<double>());
  CHECK(j["top"][0].contains("model_prob"));
  CHECK(j["top"][0].contains("knn_prob"));
  REQUIRE(j["neighbors"].size() == 2);
  CHECK(j["neighbors"][0]["mention_text"] == "dermoids");
  CHECK(j["neighbors"][0]["entity_id"] == "G");
  CHECK(j["neighbors"][0]["similarity"].get<double>() > 0.9);
  CHECK_FALSE(j.contains("notices"));
}
