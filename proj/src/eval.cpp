#include "knnel/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "knnel/parallel.hpp"
#include "knnel/rng.hpp"

namespace knnel {

double acc_at_k(const std::vector<EvalRecord>& records, std::size_t k) {
  if (records.empty()) {
    throw InvalidInputError("undefined-metric", "Acc@k over an empty record set");
  }
  if (k < 1) throw InvalidInputError("invalid-k", "k must be >= 1");
  std::size_t hits = 0;
  for (const auto& rec : records) {
    std::size_t depth = std::min(k, rec.predictions.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (rec.predictions[i] == rec.gold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

namespace {

std::size_t bucket_of(std::size_t freq) {
  if (freq == 0) return 0;
  if (freq == 1) return 1;
  if (freq <= 4) return 2;
  if (freq <= 9) return 3;
  return 4;
}

const char* kBucketLabels[5] = {"0", "1", "2-4", "5-9", ">=10"};

}  // namespace

std::vector<FrequencyBucket> long_tail_report(const std::vector<EvalRecord>& records,
                                              const std::vector<LabeledMention>& train_set) {
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& item : train_set) freq[item.gold] += 1;

  std::vector<FrequencyBucket> buckets(5);
  std::vector<std::size_t> hits(5, 0);
  std::vector<std::set<EntityId>> entities(5);
  for (std::size_t b = 0; b < 5; ++b) buckets[b].label = kBucketLabels[b];

  for (const auto& rec : records) {
    auto it = freq.find(rec.gold);
    std::size_t b = bucket_of(it == freq.end() ? 0 : it->second);
    buckets[b].record_count += 1;
    entities[b].insert(rec.gold);
    if (!rec.predictions.empty() && rec.predictions[0] == rec.gold) hits[b] += 1;
  }
  for (std::size_t b = 0; b < 5; ++b) {
    buckets[b].entity_count = entities[b].size();
    buckets[b].acc1 = buckets[b].record_count == 0
                          ? 0.0
                          : static_cast<double>(hits[b]) / buckets[b].record_count;
  }
  return buckets;
}

void SyntheticSpec::validate() const {
  if (n_entities < 1) throw InvalidInputError("invalid-spec", "n_entities must be >= 1");
  if (n_train < 1 || n_validation < 1 || n_test < 1) {
    throw InvalidInputError("invalid-spec", "split sizes must be positive");
  }
  if (noise_rate < 0.0 || noise_rate >= 1.0) {
    throw InvalidInputError("invalid-spec", "noise rate must lie in [0, 1)");
  }
  if (confusable_fraction < 0.0 || confusable_fraction > 1.0) {
    throw InvalidInputError("invalid-spec", "confusable fraction must lie in [0, 1]");
  }
  if (!(zipf_exponent > 0.0)) {
    throw InvalidInputError("invalid-spec", "zipf exponent must be > 0");
  }
}

namespace {

const std::vector<std::string> kPrefixes = {
    "hyper", "hypo", "peri", "endo", "epi",    "neo",   "dys",  "para",
    "poly",  "brady", "tachy", "micro", "macro", "inter", "intra"};

const std::vector<std::string> kRoots = {
    "cardi",  "derm",   "gastr",  "neur",   "oste",   "hepat", "nephr", "pulmon",
    "arthr",  "angi",   "cephal", "cyst",   "fibr",   "gloss", "hemat", "lymph",
    "mening", "myel",   "phleb",  "pneum",  "ren",    "rhin",  "splen", "thorac",
    "thyr",   "trache", "ven",    "chondr", "enter",  "kerat"};

const std::vector<std::string> kSuffixes = {
    "itis",     "osis",    "oma",     "pathy",    "algia", "ectasia", "emia",
    "plasia",   "trophy",  "malacia", "megaly",   "ptosis", "spasm",  "stenosis",
    "sclerosis"};

// one-token-apart qualifier classes for confusable twins; the differing
// tokens are whole words several edits apart, so a single typo cannot turn
// one twin's surface into the other's
const std::vector<std::vector<std::string>> kQualifierClasses = {
    {"type one", "type two", "type three"},
    {"grade low", "grade high"},
    {"stage early", "stage late"},
    {"acute", "chronic"},
    {"variant alpha", "variant beta"},
    {"form mild", "form severe"},
};

// brand-style alias fragments (aliases share no morphemes with canonical
// names, mirroring trade-name/colloquial synonymy)
const std::vector<std::string> kAliasOnsets = {
    "zol", "vax", "cel", "dor", "mir", "nex", "pra", "quin", "ral",
    "syn", "tov", "ulm", "vec", "xan", "zor", "lor", "fen", "bry"};
const std::vector<std::string> kAliasMids = {"va", "ti", "ro", "ne", "lu", "da", "xi", "mo"};
const std::vector<std::string> kAliasCodas = {
    "trix", "dan", "phen", "dine", "mab", "vir", "lin", "cor", "tan", "pril"};

const std::unordered_map<std::string, std::string> kSuffixWords = {
    {"itis", "inflammation"}, {"osis", "condition"},   {"oma", "tumor"},
    {"pathy", "disease"},     {"algia", "pain"},       {"ectasia", "dilation"},
    {"emia", "blood excess"}, {"plasia", "growth"},    {"trophy", "development"},
    {"malacia", "softening"}, {"megaly", "enlargement"}, {"ptosis", "drooping"},
    {"spasm", "contraction"}, {"stenosis", "narrowing"}, {"sclerosis", "hardening"},
};

struct NameParts {
  std::string prefix;  // may be empty
  std::string root;
  std::string suffix;
  std::string qualifier;  // may be empty

  std::string canonical() const {
    std::string s = prefix + root + suffix;
    if (!qualifier.empty()) s += " " + qualifier;
    return s;
  }
};

std::vector<std::string> make_synonyms(const NameParts& p, std::size_t how_many) {
  std::string core = p.prefix + p.root + p.suffix;
  std::string qual = p.qualifier.empty() ? "" : " " + p.qualifier;
  const auto it = kSuffixWords.find(p.suffix);
  const std::string suffix_word = it == kSuffixWords.end() ? "disorder" : it->second;
  std::vector<std::string> candidates;
  // suffix spelled out as a word
  candidates.push_back(p.prefix + p.root + " " + suffix_word + qual);
  // root-first colloquial form
  candidates.push_back(p.root + " " + suffix_word + qual);
  // spaced morphemes
  if (!p.prefix.empty()) {
    candidates.push_back(p.prefix + " " + p.root + p.suffix + qual);
  } else {
    candidates.push_back(p.root + " " + p.suffix + qual);
  }
  // plural core
  candidates.push_back(core + "s" + qual);
  // qualifier-first reorder
  if (!p.qualifier.empty()) {
    candidates.push_back(p.qualifier + " " + core);
  } else {
    candidates.push_back(core + " lesion");
  }

  std::vector<std::string> out;
  std::string canon = p.canonical();
  for (const auto& c : candidates) {
    if (out.size() >= how_many) break;
    if (c != canon && std::find(out.begin(), out.end(), c) == out.end()) {
      out.push_back(c);
    }
  }
  return out;
}

// single seeded edit: swap, delete, duplicate or substitute one character
std::string apply_typo(const std::string& s, Rng& rng) {
  if (s.size() < 2) return s;
  std::string out = s;
  switch (rng.next_below(4)) {
    case 0: {  // adjacent swap
      std::size_t i = rng.next_below(out.size() - 1);
      std::swap(out[i], out[i + 1]);
      break;
    }
    case 1: {  // deletion
      std::size_t i = rng.next_below(out.size());
      out.erase(i, 1);
      break;
    }
    case 2: {  // duplication
      std::size_t i = rng.next_below(out.size());
      out.insert(i, 1, out[i]);
      break;
    }
    default: {  // substitution
      std::size_t i = rng.next_below(out.size());
      out[i] = static_cast<char>('a' + rng.next_below(26));
      break;
    }
  }
  return out;
}

}  // namespace

Corpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Corpus corpus;

  // --- entity names ---
  std::vector<NameParts> parts;
  std::unordered_set<std::string> taken;
  auto fresh_core = [&](bool with_qualifier) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      NameParts p;
      if (rng.next_unit() < 0.5) p.prefix = kPrefixes[rng.next_below(kPrefixes.size())];
      p.root = kRoots[rng.next_below(kRoots.size())];
      p.suffix = kSuffixes[rng.next_below(kSuffixes.size())];
      if (with_qualifier && rng.next_unit() < 0.3) {
        const auto& cls = kQualifierClasses[rng.next_below(kQualifierClasses.size())];
        p.qualifier = cls[rng.next_below(cls.size())];
      }
      if (taken.insert(p.canonical()).second) return p;
    }
    throw InvalidInputError("invalid-spec", "entity name space exhausted; lower n_entities");
  };

  std::size_t n_pairs =
      static_cast<std::size_t>(spec.confusable_fraction * spec.n_entities / 2.0);
  if (2 * n_pairs > spec.n_entities) {
    throw InvalidInputError("invalid-spec", "more confusable pairs than entities allow");
  }
  std::vector<std::string> bare_forms;  // per pair, owned by the first twin
  for (std::size_t i = 0; i < n_pairs; ++i) {
    // a twin pair: same core, qualifiers one token apart; the bare core is a
    // colloquial synonym of the first twin (truncated usage)
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000) {
        throw InvalidInputError("invalid-spec", "confusable name space exhausted");
      }
      NameParts base;
      if (rng.next_unit() < 0.5) base.prefix = kPrefixes[rng.next_below(kPrefixes.size())];
      base.root = kRoots[rng.next_below(kRoots.size())];
      base.suffix = kSuffixes[rng.next_below(kSuffixes.size())];
      const auto& cls = kQualifierClasses[rng.next_below(kQualifierClasses.size())];
      std::size_t qa = rng.next_below(cls.size());
      std::size_t qb = (qa + 1 + rng.next_below(cls.size() - 1)) % cls.size();
      NameParts a = base;
      a.qualifier = cls[qa];
      NameParts b = base;
      b.qualifier = cls[qb];
      std::string bare = base.canonical();
      if (taken.count(a.canonical()) != 0 || taken.count(b.canonical()) != 0 ||
          taken.count(bare) != 0) {
        continue;
      }
      taken.insert(a.canonical());
      taken.insert(b.canonical());
      taken.insert(bare);
      parts.push_back(a);
      parts.push_back(b);
      bare_forms.push_back(bare);
      break;
    }
  }
  while (parts.size() < spec.n_entities) parts.push_back(fresh_core(true));

  auto fresh_alias = [&]() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::string alias = kAliasOnsets[rng.next_below(kAliasOnsets.size())] +
                          kAliasMids[rng.next_below(kAliasMids.size())] +
                          kAliasCodas[rng.next_below(kAliasCodas.size())];
      if (taken.insert(alias).second) return alias;
    }
    throw InvalidInputError("invalid-spec", "alias name space exhausted");
  };

  std::vector<bool> has_alias(parts.size(), false);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    EntityRecord rec;
    rec.id = "SYN" + std::to_string(100000 + i);
    rec.canonical_name = parts[i].canonical();
    rec.synonyms = make_synonyms(parts[i], spec.synonyms_per_entity);
    if (i % 2 == 0 && i / 2 < bare_forms.size()) {
      rec.synonyms.push_back(bare_forms[i / 2]);
    }
    // a trade-name-like alias for most entities, lexically unrelated to the
    // canonical compound
    if (rng.next_unit() < 0.6) {
      rec.synonyms.push_back(fresh_alias());
      has_alias[i] = true;
    }
    corpus.ontology.add(std::move(rec));
  }

  // --- Zipf frequency ranks over a seeded entity permutation ---
  std::vector<std::size_t> rank_to_entity(spec.n_entities);
  for (std::size_t i = 0; i < spec.n_entities; ++i) rank_to_entity[i] = i;
  rng.shuffle(rank_to_entity);
  std::vector<double> cumulative(spec.n_entities);
  double mass = 0.0;
  for (std::size_t r = 0; r < spec.n_entities; ++r) {
    mass += std::pow(static_cast<double>(r + 1), -spec.zipf_exponent);
    cumulative[r] = mass;
  }
  auto sample_zipf = [&]() {
    double u = rng.next_unit() * mass;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t rank = static_cast<std::size_t>(it - cumulative.begin());
    if (rank >= spec.n_entities) rank = spec.n_entities - 1;
    return rank_to_entity[rank];
  };
  auto sample_uniform = [&]() { return static_cast<std::size_t>(rng.next_below(spec.n_entities)); };

  // --- mentions; splits disjoint at the (surface, gold) level ---
  // Train frequencies follow the Zipf exponent; evaluation splits draw half
  // their entities from the same Zipf (the natural mention distribution) and
  // half uniformly, so the long tail (train-frequency 0/1 entities) is well
  // represented among evaluated golds. Test and validation are generated
  // first so the zero-noise corner keeps test surfaces equal to entity
  // names.
  std::set<std::pair<std::string, std::string>> claimed;
  auto fill_split = [&](std::vector<LabeledMention>& split, std::size_t want,
                        bool claim_pairs, double zipf_share) {
    std::set<std::pair<std::string, std::string>> mine;
    while (split.size() < want) {
      bool placed = false;
      for (int entity_try = 0; entity_try < 200 && !placed; ++entity_try) {
        std::size_t ordinal =
            rng.next_unit() < zipf_share ? sample_zipf() : sample_uniform();
        const EntityRecord& rec = corpus.ontology.at(ordinal);
        for (int surface_try = 0; surface_try < 40; ++surface_try) {
          // colloquial usage favors the alias when the entity has one
          std::string raw;
          if (has_alias[ordinal] && rng.next_unit() < 0.35) {
            raw = rec.synonyms.back();
          } else {
            std::size_t n_plain = 1 + rec.synonyms.size() - (has_alias[ordinal] ? 1 : 0);
            std::size_t pick = rng.next_below(n_plain);
            raw = pick == 0 ? rec.canonical_name : rec.synonyms[pick - 1];
          }
          if (rng.next_unit() < spec.noise_rate) raw = apply_typo(raw, rng);
          std::string surface;
          try {
            surface = normalize_text(raw);
          } catch (const InvalidInputError&) {
            continue;
          }
          auto key = std::make_pair(surface, rec.id);
          if (claimed.count(key) != 0) continue;  // owned by another split
          split.push_back({surface, rec.id});
          mine.insert(key);
          placed = true;
          break;
        }
      }
      if (!placed) {
        throw InvalidInputError("invalid-spec",
                                "cannot satisfy disjoint splits; raise noise or synonyms");
      }
    }
    if (claim_pairs) claimed.insert(mine.begin(), mine.end());
  };

  fill_split(corpus.test, spec.n_test, true, 0.5);
  fill_split(corpus.validation, spec.n_validation, true, 0.5);
  fill_split(corpus.train, spec.n_train, false, 1.0);
  return corpus;
}

EvalOutput evaluate_set(const std::vector<LabeledMention>& items, const Datastore& store,
                        const EntityCache& cache, const EncoderParams& params,
                        const Ontology& ontology, const InferenceConfig& cfg,
                        std::size_t top_n, bool with_details) {
  EvalOutput out;
  out.records.resize(items.size());
  if (with_details) out.details.resize(items.size());
  std::vector<std::string> errors(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    try {
      LinkResult res = link(Mention{items[i].surface, items[i].gold}, store, cache, params,
                            ontology, cfg, top_n);
      EvalRecord rec;
      rec.mention = items[i].surface;
      rec.gold = items[i].gold;
      for (const auto& cand : res.ranked) rec.predictions.push_back(cand.entity);
      out.records[i] = std::move(rec);
      if (with_details) {
        auto j = link_result_json(items[i].surface, res, store, ontology);
        j["gold"] = items[i].gold;
        out.details[i] = std::move(j);
      }
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      throw InvalidInputError("eval-failed",
                              "link failed at record " + std::to_string(i) + ": " + errors[i]);
    }
  }
  return out;
}

std::vector<AblationRow> run_ablations(const Corpus& corpus, const TrainConfig& train_cfg,
                                       const InferenceConfig& inf_cfg,
                                       const FeatureHasherConfig& hasher,
                                       std::size_t embed_dim) {
  EncoderParams init = init_encoder_params(hasher, embed_dim, train_cfg.seed);

  auto evaluate_variant = [&](const EncoderParams& params, const InferenceConfig& ic) {
    Datastore store = build_datastore(corpus.train, params, corpus.ontology);
    EntityCache cache = build_entity_cache(corpus.ontology, params);
    EvalOutput out = evaluate_set(corpus.test, store, cache, params, corpus.ontology, ic);
    return std::make_pair(acc_at_k(out.records, 1), acc_at_k(out.records, 5));
  };

  std::vector<AblationRow> rows;
  TrainResult full = train(corpus.train, corpus.validation, corpus.ontology, train_cfg, init);
  auto [full1, full5] = evaluate_variant(full.params, inf_cfg);
  rows.push_back({"full", full1, full5});

  // wo_knn is the same trained model evaluated at lambda = 0
  InferenceConfig no_knn = inf_cfg;
  no_knn.lambda = 0.0;
  auto [wk1, wk5] = evaluate_variant(full.params, no_knn);
  rows.push_back({"wo_knn", wk1, wk5});

  TrainConfig no_dhns_cfg = train_cfg;
  no_dhns_cfg.hard_negatives_p = 0;
  TrainResult no_dhns =
      train(corpus.train, corpus.validation, corpus.ontology, no_dhns_cfg, init);
  auto [wd1, wd5] = evaluate_variant(no_dhns.params, inf_cfg);
  rows.push_back({"wo_dhns", wd1, wd5});
  return rows;
}

std::vector<LowResourcePoint> low_resource_sweep(const Corpus& corpus,
                                                 const std::vector<double>& fractions,
                                                 const TrainConfig& train_cfg,
                                                 const InferenceConfig& inf_cfg,
                                                 const FeatureHasherConfig& hasher,
                                                 std::size_t embed_dim) {
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (fractions[i] < 0.0 || fractions[i] > 1.0) {
      throw InvalidInputError("invalid-fraction", "fractions must lie in [0, 1]");
    }
    if (i > 0 && fractions[i] < fractions[i - 1]) {
      throw InvalidInputError("invalid-fraction", "fractions must be sorted ascending");
    }
  }

  // nested seeded subsets: one shuffle, then prefixes
  std::vector<std::size_t> order(corpus.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(train_cfg.seed ^ 0x10c5eedULL);
  rng.shuffle(order);

  EncoderParams init = init_encoder_params(hasher, embed_dim, train_cfg.seed);
  std::vector<LowResourcePoint> points;
  for (double f : fractions) {
    std::size_t take = static_cast<std::size_t>(std::llround(f * corpus.train.size()));
    EncoderParams params = init;
    if (take > 0) {
      std::vector<LabeledMention> subset;
      subset.reserve(take);
      for (std::size_t i = 0; i < take; ++i) subset.push_back(corpus.train[order[i]]);
      params = train(subset, corpus.validation, corpus.ontology, train_cfg, init).params;
    }
    // the datastore always covers the full training set
    Datastore store = build_datastore(corpus.train, params, corpus.ontology);
    EntityCache cache = build_entity_cache(corpus.ontology, params);

    LowResourcePoint point;
    point.fraction = f;
    InferenceConfig model_only = inf_cfg;
    model_only.lambda = 0.0;
    point.acc1_model = acc_at_k(
        evaluate_set(corpus.test, store, cache, params, corpus.ontology, model_only).records,
        1);
    point.acc1_knn = acc_at_k(
        evaluate_set(corpus.test, store, cache, params, corpus.ontology, inf_cfg).records, 1);
    points.push_back(point);
  }
  return points;
}

SweepGrid hyperparameter_sweep(const std::vector<LabeledMention>& test,
                               const Datastore& store, const EntityCache& cache,
                               const EncoderParams& params, const Ontology& ontology,
                               const InferenceConfig& base,
                               const std::vector<std::size_t>& k_values,
                               const std::vector<double>& lambda_values) {
  if (k_values.empty() || lambda_values.empty()) {
    throw InvalidInputError("invalid-grid", "sweep grids must be non-empty");
  }
  SweepGrid grid;
  grid.k_values = k_values;
  grid.lambda_values = lambda_values;
  grid.acc1.assign(k_values.size(), std::vector<double>(lambda_values.size(), 0.0));
  for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
    for (std::size_t li = 0; li < lambda_values.size(); ++li) {
      InferenceConfig cfg = base;
      cfg.k = k_values[ki];
      cfg.lambda = lambda_values[li];
      grid.acc1[ki][li] =
          acc_at_k(evaluate_set(test, store, cache, params, ontology, cfg).records, 1);
    }
  }
  return grid;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

std::string buckets_csv(const std::vector<FrequencyBucket>& buckets) {
  std::string out = "bucket,entities,records,acc1\n";
  for (const auto& b : buckets) {
    out += b.label;
    out += "," + std::to_string(b.entity_count);
    out += "," + std::to_string(b.record_count);
    out += "," + format_metric(b.acc1) + "\n";
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,acc1,acc5\n";
  for (const auto& r : rows) {
    out += r.variant + "," + format_metric(r.acc1) + "," + format_metric(r.acc5) + "\n";
  }
  return out;
}

std::string sweep_csv(const SweepGrid& grid) {
  std::string out = "k";
  for (double l : grid.lambda_values) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",lambda=%g", l);
    out += buf;
  }
  out += "\n";
  for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
    out += std::to_string(grid.k_values[ki]);
    for (double a : grid.acc1[ki]) out += "," + format_metric(a);
    out += "\n";
  }
  return out;
}

std::string low_resource_csv(const std::vector<LowResourcePoint>& points) {
  std::string out = "fraction,acc1_model,acc1_knn\n";
  for (const auto& p : points) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", p.fraction);
    out += buf;
    out += "," + format_metric(p.acc1_model) + "," + format_metric(p.acc1_knn) + "\n";
  }
  return out;
}

}  // namespace knnel
