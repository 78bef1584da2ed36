#pragma once

#include <string>
#include <vector>

#include "knnel/core.hpp"

namespace knnel {

/// Ontology JSONL: one {"id": ..., "name": ..., "synonyms": [...]} per line.
Ontology load_ontology_jsonl(const std::string& path);
std::string ontology_to_jsonl(const Ontology& ontology);

/// Mention JSONL: one {"mention": ..., "entity_id": ...} per line; every
/// entity_id must resolve against the ontology.
std::vector<LabeledMention> load_mentions_jsonl(const std::string& path,
                                                const Ontology& ontology);
std::string mentions_to_jsonl(const std::vector<LabeledMention>& mentions);

/// Writes via a temp file in the same directory plus rename, so interrupted
/// runs never leave a half-written artifact.
void atomic_write(const std::string& path, const std::string& content);

}  // namespace knnel
