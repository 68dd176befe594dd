// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace squire {

/// Dense token id: entities, relation tokens (base and inverse) and specials
/// all share one id space.
using TokenId = std::int32_t;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// String interning for entity and relation names, filled while reading splits.
class NameTable {
 public:
  std::int32_t intern_entity(std::string_view name);
  std::int32_t intern_relation(std::string_view name);
  std::optional<std::int32_t> find_entity(std::string_view name) const;
  std::optional<std::int32_t> find_relation(std::string_view name) const;

  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& relations() const { return relations_; }

 private:
  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, std::int32_t> entity_index_;
  std::unordered_map<std::string, std::int32_t> relation_index_;
};

/// (head, relation, tail) with indices into a NameTable; relation is always a
/// base (non-inverse) relation.
struct Triple {
  std::int32_t head = 0;
  std::int32_t relation = 0;
  std::int32_t tail = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Directed fact in token space: (entity, relation token, entity).
struct Fact {
  TokenId head = 0;
  TokenId relation = 0;
  TokenId tail = 0;
  friend bool operator==(const Fact&, const Fact&) = default;
  friend auto operator<=>(const Fact&, const Fact&) = default;
};

struct FactHash {
  std::size_t operator()(const Fact& f) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(f.head);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(f.relation);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(f.tail);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using FactSet = std::unordered_set<Fact, FactHash>;

enum class SpecialToken : std::int32_t { kBos = 0, kEos = 1, kMask = 2 };

/// Token layout: [entities][base relations][inverse relations][<bos> <eos> <mask>].
/// Base relation r and its inverse sit exactly num_relations() apart.
class Vocabulary {
 public:
  static constexpr std::string_view kInverseSuffix = "^-1";

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> entity_names, std::vector<std::string> relation_names);

  std::size_t size() const { return names_.size(); }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }
  std::size_t num_relation_tokens() const { return 2 * num_relations_; }

  TokenId entity_token(std::int32_t entity) const { return entity; }
  TokenId relation_token(std::int32_t relation, bool inverse = false) const {
    return static_cast<TokenId>(num_entities_ + relation + (inverse ? num_relations_ : 0));
  }
  TokenId special(SpecialToken s) const {
    return static_cast<TokenId>(num_entities_ + 2 * num_relations_ + static_cast<std::int32_t>(s));
  }
  TokenId bos() const { return special(SpecialToken::kBos); }
  TokenId eos() const { return special(SpecialToken::kEos); }
  TokenId mask() const { return special(SpecialToken::kMask); }

  bool is_entity(TokenId t) const { return t >= 0 && static_cast<std::size_t>(t) < num_entities_; }
  bool is_relation(TokenId t) const {
    return static_cast<std::size_t>(t) >= num_entities_ &&
           static_cast<std::size_t>(t) < num_entities_ + 2 * num_relations_ && t >= 0;
  }
  bool is_inverse(TokenId t) const {
    return is_relation(t) && static_cast<std::size_t>(t) >= num_entities_ + num_relations_;
  }
  bool is_special(TokenId t) const {
    return t >= 0 && static_cast<std::size_t>(t) >= num_entities_ + 2 * num_relations_ &&
           static_cast<std::size_t>(t) < names_.size();
  }
  /// r <-> r^-1 for relation tokens.
  TokenId inverse(TokenId relation_token) const;
  /// Base relation index of a relation token (inverse or not).
  std::int32_t base_relation(TokenId relation_token) const;

  const std::string& token_of(TokenId id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> id_of(std::string_view token) const;
  /// Like id_of but throws DataError for unknown tokens.
  TokenId require(std::string_view token) const;

  /// One token per line; the line number is the id.
  void dump(const std::filesystem::path& path) const;

 private:
  std::size_t num_entities_ = 0;
  std::size_t num_relations_ = 0;
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Outgoing adjacency entry.
struct Edge {
  TokenId relation = 0;
  TokenId target = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Immutable graph over the training split with inverse edges, plus the held-out
/// splits for evaluation.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t num_entities() const { return vocab_.num_entities(); }

  const std::vector<Triple>& train() const { return train_; }
  const std::vector<Triple>& valid() const { return valid_; }
  const std::vector<Triple>& test() const { return test_; }

  /// All outgoing edges of an entity, sorted by (relation, target).
  std::span<const Edge> edges(TokenId entity) const;
  /// Outgoing edges of `entity` labelled `relation`, as a contiguous span.
  std::span<const Edge> edges(TokenId entity, TokenId relation) const;
  bool has_edge(TokenId head, TokenId relation, TokenId tail) const;
  std::size_t num_edges() const { return num_edges_; }

  /// Directed facts of a triple in token space: the forward fact and its inverse.
  Fact forward_fact(const Triple& t) const;
  Fact inverse_fact(const Triple& t) const;

  /// Train, valid and test facts closed under inversion.
  const FactSet& known_true() const { return known_true_; }
  /// Train facts (both directions) as a set.
  const FactSet& train_facts() const { return train_facts_; }

  friend KnowledgeGraph build_graph(NameTable names, std::vector<Triple> train,
                                    std::vector<Triple> valid, std::vector<Triple> test);

 private:
  Vocabulary vocab_;
  std::vector<std::vector<Edge>> adjacency_;
  std::size_t num_edges_ = 0;
  std::vector<Triple> train_;
  std::vector<Triple> valid_;
  std::vector<Triple> test_;
  FactSet known_true_;
  FactSet train_facts_;
};

/// Reads head<TAB>relation<TAB>tail lines, registering unseen names.
std::vector<Triple> load_triples(const std::filesystem::path& path, NameTable& names);
std::vector<Triple> parse_triples(std::string_view text, NameTable& names);

/// Builds adjacency (forward and inverse edges) from the training split only.
/// Duplicate training triples are dropped; a triple shared between splits is an error.
KnowledgeGraph build_graph(NameTable names, std::vector<Triple> train, std::vector<Triple> valid,
                           std::vector<Triple> test);

/// Loads train.txt, valid.txt and test.txt from a directory.
KnowledgeGraph load_dataset(const std::filesystem::path& dir);

/// All entities x with edge (entity, relation, x), ascending.
std::vector<TokenId> neighbors(const KnowledgeGraph& graph, TokenId entity, TokenId relation);

/// Simple paths from `head` to `tail` of 1..max_hops hops as relation/entity token
/// sequences (no <eos>). Intermediate entities are distinct and differ from both
/// endpoints; head == tail yields cycles. Edges listed in `excluded` (checked in both
/// directions) are never traversed. Stops after `cap` + 1 paths; the caller treats an
/// overflowing result as "too many to enumerate".
std::vector<std::vector<TokenId>> enumerate_paths(const KnowledgeGraph& graph, TokenId head,
                                                  TokenId tail, std::size_t max_hops,
                                                  std::size_t cap,
                                                  std::span<const Fact> excluded = {});

}  // namespace squire
