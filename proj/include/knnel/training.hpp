#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnel/core.hpp"
#include "knnel/encoder.hpp"

namespace knnel {

struct TrainConfig {
  double tau = 0.01;
  int hard_negatives_p = 4;
  int epochs = 20;
  int batch_size = 128;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  int early_stop_patience = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Negatives for one anchor: in-batch gold entities (E1) and DHNS hard
/// negatives (E2). Neither list ever contains the anchor's own gold.
struct NegativeSet {
  std::vector<EntityId> in_batch;
  std::vector<EntityId> hard;

  /// Union of both lists in first-appearance order; an entity enters the
  /// loss denominator at most once.
  std::vector<EntityId> combined() const;
};

/// Entity embeddings under one parameter snapshot, row order = ontology
/// ordinal order. Rebuilt once at the start of each epoch.
struct EntityIndexSnapshot {
  EmbeddingMatrix embeddings;
  int built_at_epoch = -1;
};

/// Gold entities of the other batch members, deduplicated (first-appearance
/// order), with any entity equal to the anchor's gold removed.
std::vector<EntityId> build_in_batch_negatives(const std::vector<LabeledMention>& batch,
                                               std::size_t anchor_index);

/// Encodes every entity's canonical name with the current parameters.
EntityIndexSnapshot rebuild_entity_index(const Ontology& ontology,
                                         const EncoderParams& params, int epoch = 0);

/// Exact top-(p+1) entities by cosine against the snapshot, gold removed,
/// truncated to p. Ties break by ascending ordinal.
std::vector<EntityId> dhns_retrieve(const Embedding& mention_emb,
                                    const EntityIndexSnapshot& snapshot,
                                    const Ontology& ontology, const EntityId& gold, int p);

/// E1 from the batch plus E2 from DHNS retrieval against the snapshot.
NegativeSet collect_negatives(const std::vector<LabeledMention>& batch,
                              std::size_t anchor_index, const Embedding& anchor_emb,
                              const EntityIndexSnapshot& snapshot, const Ontology& ontology,
                              int p);

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<double> anchor_grad;
  std::vector<double> positive_grad;
  std::vector<std::vector<double>> negative_grads;
};

/// InfoNCE-style loss over one positive and the negative set, computed in
/// log-space. Inputs are unit-norm; gradients are with respect to the raw
/// embedding coordinates (the normalization Jacobian lives in
/// encode_gradient).
ContrastiveResult contrastive_loss(const Embedding& anchor, const Embedding& positive,
                                   const std::vector<Embedding>& negatives, double tau);

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step_count = 0;
};

/// One adaptive-moment update with decoupled weight decay and bias-corrected
/// moments. State buffers are allocated lazily on first use.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_acc1 = 0.0;
  double val_acc5 = 0.0;
  double index_rebuild_ms = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
  int selected_epoch = -1;
  std::uint64_t dhns_gold_violations = 0;  // gold seen inside E2 (must stay 0)
  std::uint64_t dhns_short_sets = 0;       // |E2| < p although N-1 >= p
};

struct TrainResult {
  EncoderParams params;
  TrainLog log;
};

/// Contrastive training loop: per epoch rebuild the entity index once,
/// shuffle with the seeded RNG, and per batch assemble E1/E2, average the
/// loss, backprop and step. Early-stops on validation Acc@1 (pure-model
/// ranking) and returns the best-epoch parameters; an empty validation set
/// disables early stopping with a warning record.
TrainResult train(const std::vector<LabeledMention>& train_set,
                  const std::vector<LabeledMention>& validation, const Ontology& ontology,
                  const TrainConfig& config, EncoderParams params);

}  // namespace knnel
