#include "knnel/core.hpp"

#include <algorithm>
#include <cmath>

namespace knnel {

void Ontology::add(EntityRecord record) {
  if (record.id.empty()) {
    throw InvalidInputError("invalid-entity", "entity id must be non-empty");
  }
  if (index_.count(record.id) != 0) {
    throw InvalidInputError("duplicate-entity", "duplicate entity id: " + record.id);
  }
  record.canonical_name = normalize_text(record.canonical_name);
  for (auto& s : record.synonyms) s = normalize_text(s);
  index_.emplace(record.id, entities_.size());
  entities_.push_back(std::move(record));
}

const EntityRecord& Ontology::at(std::size_t ordinal) const {
  if (ordinal >= entities_.size()) {
    throw InvalidInputError("invalid-ordinal", "entity ordinal out of range");
  }
  return entities_[ordinal];
}

std::optional<std::size_t> Ontology::ordinal_of(const EntityId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

Embedding unit_embedding(std::vector<double> values) {
  double n = l2_norm(values);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw InvalidInputError("degenerate-embedding",
                            "cannot normalize a zero or non-finite vector");
  }
  for (double& v : values) v /= n;
  return Embedding{std::move(values)};
}

void EmbeddingMatrix::set_row(std::size_t i, std::span<const double> v) {
  if (v.size() != dim) {
    throw InvalidInputError("dim-mismatch", "row dimension mismatch");
  }
  std::copy(v.begin(), v.end(), data.begin() + i * dim);
}

EntityDistribution EntityDistribution::dense(std::vector<double> probs) {
  EntityDistribution d;
  d.dense_ = true;
  d.domain_ = probs.size();
  d.probs_ = std::move(probs);
  return d;
}

EntityDistribution EntityDistribution::sparse(
    std::vector<std::pair<std::uint32_t, double>> entries, std::size_t domain_size) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  EntityDistribution d;
  d.dense_ = false;
  d.domain_ = domain_size;
  d.entries_ = std::move(entries);
  return d;
}

double EntityDistribution::at(std::size_t ordinal) const {
  if (dense_) {
    return ordinal < probs_.size() ? probs_[ordinal] : 0.0;
  }
  auto it = std::lower_bound(entries_.begin(), entries_.end(), ordinal,
                             [](const auto& e, std::size_t o) { return e.first < o; });
  if (it != entries_.end() && it->first == ordinal) return it->second;
  return 0.0;
}

double EntityDistribution::sum() const {
  double s = 0.0;
  if (dense_) {
    for (double p : probs_) s += p;
  } else {
    for (const auto& [_, p] : entries_) s += p;
  }
  return s;
}

const std::vector<double>& EntityDistribution::dense_probs() const {
  if (!dense_) throw StateError("not-dense", "distribution is sparse");
  return probs_;
}

const std::vector<std::pair<std::uint32_t, double>>& EntityDistribution::sparse_entries()
    const {
  if (dense_) throw StateError("not-sparse", "distribution is dense");
  return entries_;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw InvalidInputError("dim-mismatch", "embedding dimensions differ");
  }
  double s = dot(a.span(), b.span());
  return std::clamp(s, -1.0, 1.0);
}

std::vector<double> stable_softmax(std::span<const double> scores, double temperature) {
  if (scores.empty()) {
    throw InvalidInputError("empty-scores", "softmax over an empty score list");
  }
  if (!(temperature > 0.0)) {
    throw InvalidInputError("invalid-temperature", "softmax temperature must be > 0");
  }
  double max_s = scores[0];
  for (double s : scores) max_s = std::max(max_s, s);
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - max_s) / temperature);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

namespace {

// Decodes one UTF-8 codepoint starting at `i`; on malformed input consumes a
// single byte and returns it verbatim so normalization stays deterministic.
std::uint32_t decode_utf8(const std::string& s, std::size_t& i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    ++i;
    return c;
  }
  int extra = 0;
  std::uint32_t cp = 0;
  if ((c & 0xE0) == 0xC0) {
    cp = c & 0x1F;
    extra = 1;
  } else if ((c & 0xF0) == 0xE0) {
    cp = c & 0x0F;
    extra = 2;
  } else if ((c & 0xF8) == 0xF0) {
    cp = c & 0x07;
    extra = 3;
  } else {
    ++i;
    return c;
  }
  if (i + extra >= s.size()) {
    // truncated sequence
    ++i;
    return c;
  }
  for (int k = 1; k <= extra; ++k) {
    unsigned char cc = static_cast<unsigned char>(s[i + k]);
    if ((cc & 0xC0) != 0x80) {
      ++i;
      return c;
    }
    cp = (cp << 6) | (cc & 0x3F);
  }
  i += extra + 1;
  return cp;
}

void encode_utf8(std::uint32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_space_cp(std::uint32_t cp) {
  switch (cp) {
    case ' ':
    case '\t':
    case '\n':
    case '\r':
    case '\f':
    case '\v':
    case 0x00A0:  // no-break space
    case 0x1680:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::uint32_t to_lower_cp(std::uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  // Latin-1 supplement (skip the multiplication sign)
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
  // Latin Extended-A: alternating case pairs
  if (cp >= 0x100 && cp <= 0x177 && (cp % 2 == 0)) return cp + 1;
  if (cp == 0x178) return 0xFF;  // Y with diaeresis
  if ((cp == 0x179 || cp == 0x17B || cp == 0x17D)) return cp + 1;
  // Greek
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 0x20;
  // Cyrillic
  if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
  return cp;
}

// Compatibility fold for forms that commonly leak into clinical text. Appends
// the replacement codepoints; returns false when the input codepoint should
// pass through unchanged.
bool fold_compat(std::uint32_t cp, std::vector<std::uint32_t>& out) {
  // zero-width characters vanish
  if ((cp >= 0x200B && cp <= 0x200D) || cp == 0xFEFF) return true;
  // fullwidth ASCII block
  if (cp >= 0xFF01 && cp <= 0xFF5E) {
    out.push_back(cp - 0xFF01 + 0x21);
    return true;
  }
  switch (cp) {
    case 0x2018:
    case 0x2019:
    case 0x201A:
      out.push_back('\'');
      return true;
    case 0x201C:
    case 0x201D:
    case 0x201E:
      out.push_back('"');
      return true;
    case 0x2010:
    case 0x2011:
    case 0x2012:
    case 0x2013:
    case 0x2014:
    case 0x2015:
    case 0x2212:
      out.push_back('-');
      return true;
    case 0x00B5:  // micro sign -> greek mu
      out.push_back(0x3BC);
      return true;
    case 0x212A:  // Kelvin sign
      out.push_back('k');
      return true;
    case 0x212B:  // Angstrom sign
      out.push_back(0xE5);
      return true;
    case 0x2126:  // Ohm sign
      out.push_back(0x3C9);
      return true;
    case 0xFB00:
      out.push_back('f');
      out.push_back('f');
      return true;
    case 0xFB01:
      out.push_back('f');
      out.push_back('i');
      return true;
    case 0xFB02:
      out.push_back('f');
      out.push_back('l');
      return true;
    case 0xFB03:
      out.push_back('f');
      out.push_back('f');
      out.push_back('i');
      return true;
    case 0xFB04:
      out.push_back('f');
      out.push_back('f');
      out.push_back('l');
      return true;
    case 0xFB05:
    case 0xFB06:
      out.push_back('s');
      out.push_back('t');
      return true;
    default:
      return false;
  }
}

}  // namespace

std::string normalize_text(const std::string& raw) {
  std::vector<std::uint32_t> folded;
  folded.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    std::uint32_t cp = decode_utf8(raw, i);
    std::vector<std::uint32_t> repl;
    if (fold_compat(cp, repl)) {
      for (std::uint32_t r : repl) folded.push_back(to_lower_cp(r));
    } else {
      folded.push_back(to_lower_cp(cp));
    }
  }

  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  bool emitted = false;
  for (std::uint32_t cp : folded) {
    if (is_space_cp(cp)) {
      pending_space = emitted;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    encode_utf8(cp, out);
    emitted = true;
  }
  if (out.empty()) {
    throw InvalidInputError("empty-mention", "text is empty after normalization");
  }
  return out;
}

}  // namespace knnel
