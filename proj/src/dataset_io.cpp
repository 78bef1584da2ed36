#include "knnel/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace knnel {

namespace {

using nlohmann::ordered_json;

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInputError("io", "cannot open: " + path);
  return is;
}

ordered_json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  try {
    return ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInputError("parse",
                            path + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

}  // namespace

Ontology load_ontology_jsonl(const std::string& path) {
  std::ifstream is = open_or_throw(path);
  Ontology onto;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = parse_line(line, path, lineno);
    if (!j.contains("id") || !j.contains("name")) {
      throw InvalidInputError("parse", path + ":" + std::to_string(lineno) +
                                           ": ontology record needs id and name");
    }
    EntityRecord rec;
    rec.id = j["id"].get<std::string>();
    rec.canonical_name = j["name"].get<std::string>();
    if (j.contains("synonyms")) {
      for (const auto& s : j["synonyms"]) rec.synonyms.push_back(s.get<std::string>());
    }
    try {
      onto.add(std::move(rec));
    } catch (const InvalidInputError& e) {
      throw InvalidInputError(e.category(),
                              path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return onto;
}

std::string ontology_to_jsonl(const Ontology& ontology) {
  std::string out;
  for (const auto& rec : ontology.entities()) {
    ordered_json j;
    j["id"] = rec.id;
    j["name"] = rec.canonical_name;
    j["synonyms"] = rec.synonyms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<LabeledMention> load_mentions_jsonl(const std::string& path,
                                                const Ontology& ontology) {
  std::ifstream is = open_or_throw(path);
  std::vector<LabeledMention> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = parse_line(line, path, lineno);
    if (!j.contains("mention") || !j.contains("entity_id")) {
      throw InvalidInputError("parse", path + ":" + std::to_string(lineno) +
                                           ": mention record needs mention and entity_id");
    }
    LabeledMention m{j["mention"].get<std::string>(), j["entity_id"].get<std::string>()};
    if (!ontology.contains(m.gold)) {
      throw InvalidInputError("unknown-entity", path + ":" + std::to_string(lineno) +
                                                    ": entity_id not in ontology: " + m.gold);
    }
    try {
      normalize_text(m.surface);
    } catch (const InvalidInputError&) {
      throw InvalidInputError("empty-mention",
                              path + ":" + std::to_string(lineno) + ": empty mention text");
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string mentions_to_jsonl(const std::vector<LabeledMention>& mentions) {
  std::string out;
  for (const auto& m : mentions) {
    ordered_json j;
    j["mention"] = m.surface;
    j["entity_id"] = m.gold;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InvalidInputError("io", "cannot open for writing: " + tmp);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw InvalidInputError("io", "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InvalidInputError("io", "rename failed: " + path + ": " + ec.message());
}

}  // namespace knnel
