#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "sha256.hpp"
#include "tokens.hpp"

namespace krls {

// Synthetic delexicalized task-oriented dialog corpus. Slot values appear as
// atomic bracketed placeholder tokens like `[value_phone]`; those are the key
// tokens. Word-level whitespace tokenization, no UNK.

struct DomainSpec {
  std::string name;
  std::string offer_slot;                   // entity-offer placeholder
  std::vector<std::string> requestables;    // requestable placeholders
};

struct CorpusSpec {
  int n_train = 2000;
  int n_valid = 200;
  int n_test = 200;
  std::vector<DomainSpec> domains;
  int templates_per_domain = 6;
  int filler_vocab_size = 120;
  std::uint64_t seed = 0;

  static CorpusSpec defaults();
  void validate() const;
};

struct Episode {
  std::vector<std::string> context;          // ends with <eos>
  std::vector<std::string> response;         // ends with <eos>
  std::vector<bool> key_mask;                // true exactly at placeholder positions
  std::vector<std::string> requested_slots;  // placeholder tokens requested in context
  bool offers_entity = false;
  std::string domain;
};

struct Vocabulary {
  std::vector<std::string> tokens;  // id order, specials first
  std::unordered_map<std::string, int> to_id;
  SpecialIds specials;
  std::vector<bool> is_key;  // per id
  Hash256 hash{};

  static Vocabulary build(std::vector<std::string> tokens);
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::vector<int> key_ids() const;
  int size() const { return static_cast<int>(tokens.size()); }
};

struct Corpus {
  Vocabulary vocab;
  std::vector<Episode> train, valid, test;
};

bool is_placeholder(const std::string& token);

// Token-id view of an episode, ready for model input.
struct EncodedEpisode {
  std::vector<int> context;
  std::vector<int> response;
  std::vector<bool> key_mask;
  std::vector<int> requested_slots;
  bool offers_entity = false;
  std::string domain;
};

EncodedEpisode encode_episode(const Episode& e, const Vocabulary& vocab);
std::vector<EncodedEpisode> encode_episodes(const std::vector<Episode>& episodes,
                                            const Vocabulary& vocab);

// Deterministic function of the spec (including seed); splits are disjoint in
// template-instantiation space.
Corpus generate_corpus(const CorpusSpec& spec);

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

// Re-checks all Episode invariants; throws ValidationError naming the episode.
void validate_episode(const Episode& e, std::size_t index);
void validate_episodes(const std::vector<Episode>& episodes);

// JSONL with fields context, response, key_mask, requested_slots,
// offers_entity, domain. Parse errors carry the line number.
void save_episodes(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> load_episodes(const std::string& path);

// Vocabulary file: JSON array of tokens in id order.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

CorpusSpec parse_corpus_spec(const std::string& json_text);
CorpusSpec load_corpus_spec(const std::string& path);

struct CorpusStats {
  int n_train = 0, n_valid = 0, n_test = 0;
  int vocab_size = 0;
  double key_token_fraction = 0.0;  // of response positions, scanned from the emitted episodes
  double mean_response_len = 0.0;
  std::string vocab_hash_hex;
};

CorpusStats scan_corpus(const Corpus& corpus);

// Writes train/valid/test.jsonl, vocab.json, stats.json under dir.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace krls
