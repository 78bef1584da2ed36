#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnel/core.hpp"
#include "knnel/datastore.hpp"
#include "knnel/encoder.hpp"
#include "knnel/inference.hpp"
#include "knnel/training.hpp"

namespace knnel {

struct EvalRecord {
  std::string mention;
  EntityId gold;
  std::vector<EntityId> predictions;  // ranked, best first
};

/// Fraction of records whose gold appears in the top-k predictions.
double acc_at_k(const std::vector<EvalRecord>& records, std::size_t k);

struct FrequencyBucket {
  std::string label;          // "0", "1", "2-4", "5-9", ">=10"
  std::size_t record_count = 0;
  std::size_t entity_count = 0;  // distinct gold entities seen in this bucket
  double acc1 = 0.0;
};

/// Buckets every evaluated gold by its training-set frequency and reports
/// per-bucket Acc@1. The five buckets partition the records.
std::vector<FrequencyBucket> long_tail_report(const std::vector<EvalRecord>& records,
                                              const std::vector<LabeledMention>& train_set);

struct SyntheticSpec {
  std::size_t n_entities = 500;
  std::size_t synonyms_per_entity = 2;
  double noise_rate = 0.25;
  double confusable_fraction = 0.2;  // fraction of entities paired as near-duplicates
  double zipf_exponent = 1.1;
  std::size_t n_train = 5000;
  std::size_t n_validation = 500;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Corpus {
  Ontology ontology;
  std::vector<LabeledMention> train;
  std::vector<LabeledMention> validation;
  std::vector<LabeledMention> test;
};

/// Seeded word-morpheme benchmark: entity names from a prefix/root/suffix
/// grammar, a configured fraction of entities paired into one-token-apart
/// confusables, synonyms via morphological transforms, mention frequencies
/// Zipf-distributed, surfaces noised at the typo rate. Splits are disjoint at
/// the (mention, gold) level; everything is reproducible from the seed.
Corpus generate_synthetic(const SyntheticSpec& spec);

/// Links every item and keeps the top-`top_n` ranked predictions. When
/// `with_details` is set, the per-record LinkResult explainability JSON is
/// captured alongside.
struct EvalOutput {
  std::vector<EvalRecord> records;
  std::vector<nlohmann::ordered_json> details;
};

EvalOutput evaluate_set(const std::vector<LabeledMention>& items, const Datastore& store,
                        const EntityCache& cache, const EncoderParams& params,
                        const Ontology& ontology, const InferenceConfig& cfg,
                        std::size_t top_n = 5, bool with_details = false);

struct AblationRow {
  std::string variant;  // "full", "wo_knn", "wo_dhns"
  double acc1 = 0.0;
  double acc5 = 0.0;
};

/// Three runs on the same test split: the full model, the same model with
/// lambda = 0 ("wo_knn"), and a p = 0 retrain with its own datastore
/// ("wo_dhns").
std::vector<AblationRow> run_ablations(const Corpus& corpus, const TrainConfig& train_cfg,
                                       const InferenceConfig& inf_cfg,
                                       const FeatureHasherConfig& hasher,
                                       std::size_t embed_dim);

struct LowResourcePoint {
  double fraction = 0.0;
  double acc1_model = 0.0;  // lambda = 0
  double acc1_knn = 0.0;    // lambda = configured
};

/// Fine-tunes on a seeded fraction of the training data (fraction 0 keeps the
/// untrained encoder) while the datastore is always built from the full
/// training set with that run's parameters.
std::vector<LowResourcePoint> low_resource_sweep(const Corpus& corpus,
                                                 const std::vector<double>& fractions,
                                                 const TrainConfig& train_cfg,
                                                 const InferenceConfig& inf_cfg,
                                                 const FeatureHasherConfig& hasher,
                                                 std::size_t embed_dim);

struct SweepGrid {
  std::vector<std::size_t> k_values;
  std::vector<double> lambda_values;
  std::vector<std::vector<double>> acc1;  // [k_index][lambda_index]
};

/// Acc@1 over the (k, lambda) grid with a fixed trained model and datastore.
SweepGrid hyperparameter_sweep(const std::vector<LabeledMention>& test,
                               const Datastore& store, const EntityCache& cache,
                               const EncoderParams& params, const Ontology& ontology,
                               const InferenceConfig& base,
                               const std::vector<std::size_t>& k_values,
                               const std::vector<double>& lambda_values);

// CSV emitters (deterministic formatting, one header row each)
std::string buckets_csv(const std::vector<FrequencyBucket>& buckets);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string sweep_csv(const SweepGrid& grid);
std::string low_resource_csv(const std::vector<LowResourcePoint>& points);
std::string format_metric(double value);

}  // namespace knnel
