#include "corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "rng.hpp"

namespace krls {

namespace {

const char* kPad = "<pad>";
const char* kBos = "<bos>";
const char* kEos = "<eos>";
const char* kSep = "<sep>";

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

const std::vector<std::string>& intro_pool() {
  static const std::vector<std::string> pool = {
      "sure , i can help with that",
      "okay i have found something for you",
      "no problem at all",
      "certainly , here is what i found",
      "i have just what you need",
  };
  return pool;
}

const std::vector<std::string>& offer_pool() {
  static const std::vector<std::string> pool = {
      "the @ % matches your request",
      "% would be a great choice",
      "how about % for you",
      "i recommend the @ %",
  };
  return pool;
}

const std::vector<std::string>& connector_pool() {
  static const std::vector<std::string> pool = {
      "you asked for", "that would be", "it is", "the answer is", "also note", "for your records",
  };
  return pool;
}

const std::vector<std::string>& closing_pool() {
  static const std::vector<std::string> pool = {
      "is there anything else", "can i help with anything else", "have a nice day",
      "let me know if you need more", "glad to help",
  };
  return pool;
}

const std::vector<std::string>& price_words() {
  static const std::vector<std::string> w = {"cheap", "moderate", "expensive"};
  return w;
}

const std::vector<std::string>& area_words() {
  static const std::vector<std::string> w = {"north", "south", "east", "west", "centre"};
  return w;
}

const std::vector<std::string>& structural_words() {
  static const std::vector<std::string> w = {
      "user", "looking", "for", "a", "in", "the", "part", "of", "town", "request",
  };
  return w;
}

// Generic filler vocabulary; the spec's filler_vocab_size selects a prefix.
const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> w = {
      "lovely", "nice", "great", "good", "fine", "wonderful", "popular", "quiet", "busy",
      "famous", "local", "small", "large", "cozy", "modern", "classic", "friendly", "helpful",
      "open", "close", "near", "far", "today", "tomorrow", "soon", "later", "always", "often",
      "place", "spot", "option", "choice", "venue", "offer", "deal", "visit", "stay", "trip",
      "meal", "table", "room", "ride", "tour", "ticket", "seat", "view", "menu", "list",
      "many", "some", "few", "several", "plenty", "more", "most", "other", "another", "extra",
      "very", "quite", "rather", "really", "truly", "fairly", "highly", "widely", "newly",
      "well", "area", "street", "road", "side", "corner", "center", "district", "quarter",
      "people", "guests", "locals", "visitors", "families", "friends", "couples", "groups",
      "enjoy", "like", "love", "prefer", "choose", "pick", "try", "see", "find", "get",
      "come", "go", "walk", "drive", "take", "make", "look", "feel", "seem", "stay",
      "day", "night", "morning", "evening", "afternoon", "week", "weekend", "season", "year",
      "time", "hour", "minute", "moment", "while", "bit", "lot", "kind", "sort", "type",
      "style", "touch", "charm", "vibe", "feel", "mood", "scene", "crowd", "staff", "service",
  };
  return w;
}

struct Pools {
  std::vector<std::string> fillers;  // filler_vocab_size prefix
};

std::vector<std::string> pick_fillers(Rng& rng, const Pools& pools, int lo, int hi) {
  int n = lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i)
    out.push_back(pools.fillers[rng.next_below(pools.fillers.size())]);
  return out;
}

void append_phrase(std::vector<std::string>& out, const std::string& phrase) {
  for (auto& w : split_words(phrase)) out.push_back(w);
}

}  // namespace

bool is_placeholder(const std::string& token) {
  return token.size() > 2 && token.front() == '[' && token.back() == ']';
}

CorpusSpec CorpusSpec::defaults() {
  CorpusSpec s;
  s.domains = {
      {"restaurant",
       "[value_name]",
       {"[value_phone]", "[value_address]", "[value_area]", "[value_price]", "[value_food]"}},
      {"hotel",
       "[value_name]",
       {"[value_phone]", "[value_address]", "[value_area]", "[value_price]", "[value_stars]"}},
      {"attraction",
       "[value_name]",
       {"[value_phone]", "[value_address]", "[value_area]", "[value_price]"}},
      {"train",
       "[value_id]",
       {"[value_leave]", "[value_arrive]", "[value_time]", "[value_price]", "[value_ref]"}},
      {"taxi", "[value_id]", {"[value_phone]", "[value_leave]", "[value_arrive]"}},
  };
  return s;
}

void CorpusSpec::validate() const {
  if (n_train < 0 || n_valid < 0 || n_test < 0)
    throw ConfigError("corpus: episode counts must be non-negative");
  if (domains.empty()) throw ConfigError("corpus: at least one domain required");
  if (templates_per_domain < 1) throw ConfigError("corpus: templates_per_domain must be >= 1");
  if (filler_vocab_size < 10 ||
      filler_vocab_size > static_cast<int>(filler_words().size()))
    throw ConfigError("corpus: filler_vocab_size out of range [10, " +
                      std::to_string(filler_words().size()) + "]");
  for (const auto& d : domains) {
    if (d.name.empty()) throw ConfigError("corpus: domain with empty name");
    if (!is_placeholder(d.offer_slot))
      throw ConfigError("corpus: domain '" + d.name + "' offer slot must be a [placeholder]");
    if (d.requestables.size() < 2)
      throw ConfigError("corpus: domain '" + d.name + "' needs >= 2 requestable placeholders");
    for (const auto& r : d.requestables)
      if (!is_placeholder(r))
        throw ConfigError("corpus: requestable '" + r + "' must be a [placeholder]");
  }
}

Vocabulary Vocabulary::build(std::vector<std::string> all_tokens) {
  Vocabulary v;
  v.tokens = std::move(all_tokens);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    if (!v.to_id.emplace(v.tokens[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate vocabulary token: " + v.tokens[i]);
  }
  auto need = [&](const char* tok) {
    auto it = v.to_id.find(tok);
    if (it == v.to_id.end()) throw ValidationError(std::string("vocabulary missing ") + tok);
    return it->second;
  };
  v.specials.pad = need(kPad);
  v.specials.bos = need(kBos);
  v.specials.eos = need(kEos);
  v.specials.sep = need(kSep);
  v.is_key.resize(v.tokens.size());
  for (std::size_t i = 0; i < v.tokens.size(); ++i) v.is_key[i] = is_placeholder(v.tokens[i]);
  std::string joined;
  for (const auto& t : v.tokens) {
    joined += t;
    joined.push_back('\n');
  }
  v.hash = sha256(joined);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = to_id.find(token);
  if (it == to_id.end()) throw ValidationError("unknown token: '" + token + "'");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ValidationError("token id out of range: " + std::to_string(id));
  return tokens[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::key_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (is_key[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

namespace {

Vocabulary build_vocabulary(const CorpusSpec& spec, const Pools& pools) {
  std::set<std::string> words;
  auto add_phrase_pool = [&](const std::vector<std::string>& pool) {
    for (const auto& p : pool)
      for (const auto& w : split_words(p))
        if (w != "@" && w != "%") words.insert(w);
  };
  add_phrase_pool(intro_pool());
  add_phrase_pool(offer_pool());
  add_phrase_pool(connector_pool());
  add_phrase_pool(closing_pool());
  for (const auto& w : structural_words()) words.insert(w);
  for (const auto& w : price_words()) words.insert(w);
  for (const auto& w : area_words()) words.insert(w);
  for (const auto& w : pools.fillers) words.insert(w);
  for (const auto& d : spec.domains) {
    words.insert(d.name);
    words.insert(d.offer_slot);
    for (const auto& r : d.requestables) words.insert(r);
  }
  std::vector<std::string> tokens = {kPad, kBos, kEos, kSep};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary::build(std::move(tokens));
}

Episode make_episode(const CorpusSpec& spec, const Pools& pools, Rng rng, std::uint64_t* signature) {
  const auto& dom = spec.domains[rng.next_below(spec.domains.size())];
  int tpl = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.templates_per_domain)));
  bool offers = (tpl % 3) != 2;

  // Requested subset, canonical (domain declaration) order.
  int max_req = std::min<int>(3, static_cast<int>(dom.requestables.size()));
  int n_req = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_req)));
  std::vector<int> req_idx;
  for (int i = 0; i < static_cast<int>(dom.requestables.size()); ++i) req_idx.push_back(i);
  for (int i = 0; i < n_req; ++i) {
    auto j = i + static_cast<int>(rng.next_below(req_idx.size() - static_cast<std::size_t>(i)));
    std::swap(req_idx[static_cast<std::size_t>(i)], req_idx[static_cast<std::size_t>(j)]);
  }
  req_idx.resize(static_cast<std::size_t>(n_req));
  std::sort(req_idx.begin(), req_idx.end());

  int price = static_cast<int>(rng.next_below(price_words().size()));
  int area = static_cast<int>(rng.next_below(area_words().size()));
  int intro = static_cast<int>(rng.next_below(intro_pool().size()));
  int offer_v = static_cast<int>(rng.next_below(offer_pool().size()));
  int closing = static_cast<int>(rng.next_below(closing_pool().size()));
  std::vector<int> connectors;
  for (int i = 0; i < n_req; ++i)
    connectors.push_back(static_cast<int>(rng.next_below(connector_pool().size())));
  std::vector<std::string> decor = (tpl % 2 == 0) ? pick_fillers(rng, pools, 3, 5)
                                                  : std::vector<std::string>{};

  Episode e;
  e.domain = dom.name;
  e.offers_entity = offers;
  for (int i : req_idx) e.requested_slots.push_back(dom.requestables[static_cast<std::size_t>(i)]);

  // Context: user goal with constraints and the requested slots spelled out.
  e.context = {"user", "looking", "for", "a", price_words()[static_cast<std::size_t>(price)],
               dom.name, "in", "the", area_words()[static_cast<std::size_t>(area)], "part",
               "of", "town", "request"};
  for (const auto& r : e.requested_slots) e.context.push_back(r);
  e.context.emplace_back(kEos);

  // Response: intro, optional entity offer, one generic connector per
  // requested slot (the connector never names the slot), optional filler
  // decor, closing.
  append_phrase(e.response, intro_pool()[static_cast<std::size_t>(intro)]);
  if (offers) {
    for (const auto& w : split_words(offer_pool()[static_cast<std::size_t>(offer_v)])) {
      if (w == "@")
        e.response.push_back(dom.name);
      else if (w == "%")
        e.response.push_back(dom.offer_slot);
      else
        e.response.push_back(w);
    }
  }
  for (int i = 0; i < n_req; ++i) {
    append_phrase(e.response, connector_pool()[static_cast<std::size_t>(connectors[static_cast<std::size_t>(i)])]);
    e.response.push_back(e.requested_slots[static_cast<std::size_t>(i)]);
  }
  for (const auto& w : decor) e.response.push_back(w);
  append_phrase(e.response, closing_pool()[static_cast<std::size_t>(closing)]);
  e.response.emplace_back(kEos);

  e.key_mask.resize(e.response.size());
  for (std::size_t i = 0; i < e.response.size(); ++i) e.key_mask[i] = is_placeholder(e.response[i]);

  // Instantiation signature: all discrete choices (decor included).
  std::string sig = dom.name + "|" + std::to_string(tpl) + "|" + std::to_string(price) + "|" +
                    std::to_string(area) + "|" + std::to_string(intro) + "|" +
                    std::to_string(offer_v) + "|" + std::to_string(closing);
  for (int i : req_idx) sig += ",r" + std::to_string(i);
  for (int c : connectors) sig += ",c" + std::to_string(c);
  for (const auto& w : decor) sig += ",d" + w;
  Hash256 h = sha256(sig);
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s = (s << 8) | h[static_cast<std::size_t>(i)];
  *signature = s;
  return e;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Pools pools;
  pools.fillers.assign(filler_words().begin(),
                       filler_words().begin() + spec.filler_vocab_size);

  Corpus c;
  c.vocab = build_vocabulary(spec, pools);

  const int total = spec.n_train + spec.n_valid + spec.n_test;
  Rng root = Rng::from_seed(spec.seed);
  std::unordered_set<std::uint64_t> seen;
  std::vector<Episode> all;
  all.reserve(static_cast<std::size_t>(total));
  std::uint64_t attempt = 0;
  while (static_cast<int>(all.size()) < total) {
    if (attempt > static_cast<std::uint64_t>(total) * 1000 + 100000)
      throw ValidationError("corpus generation: instantiation space too small for requested size");
    std::uint64_t sig = 0;
    Episode e = make_episode(spec, pools, root.split(attempt++), &sig);
    if (!seen.insert(sig).second) continue;
    all.push_back(std::move(e));
  }
  c.train.assign(all.begin(), all.begin() + spec.n_train);
  c.valid.assign(all.begin() + spec.n_train, all.begin() + spec.n_train + spec.n_valid);
  c.test.assign(all.begin() + spec.n_train + spec.n_valid, all.end());
  validate_episodes(c.train);
  validate_episodes(c.valid);
  validate_episodes(c.test);
  return c;
}

EncodedEpisode encode_episode(const Episode& e, const Vocabulary& vocab) {
  EncodedEpisode out;
  out.context = encode(e.context, vocab);
  out.response = encode(e.response, vocab);
  out.key_mask = e.key_mask;
  out.requested_slots = encode(e.requested_slots, vocab);
  out.offers_entity = e.offers_entity;
  out.domain = e.domain;
  return out;
}

std::vector<EncodedEpisode> encode_episodes(const std::vector<Episode>& episodes,
                                            const Vocabulary& vocab) {
  std::vector<EncodedEpisode> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(encode_episode(e, vocab));
  return out;
}

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(vocab.id(t));
  return out;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(vocab.token(i));
  return out;
}

void validate_episode(const Episode& e, std::size_t index) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("episode " + std::to_string(index) + ": " + why);
  };
  if (e.context.empty() || e.context.back() != kEos) fail("context must end with <eos>");
  if (e.response.empty() || e.response.back() != kEos) fail("response must end with <eos>");
  if (e.key_mask.size() != e.response.size())
    fail("key_mask length " + std::to_string(e.key_mask.size()) + " != response length " +
         std::to_string(e.response.size()));
  for (std::size_t i = 0; i < e.response.size(); ++i)
    if (e.key_mask[i] != is_placeholder(e.response[i]))
      fail("key_mask disagrees with placeholder positions at " + std::to_string(i));
  for (const auto& slot : e.requested_slots) {
    if (!is_placeholder(slot)) fail("requested slot '" + slot + "' is not a placeholder");
    if (std::find(e.response.begin(), e.response.end(), slot) == e.response.end())
      fail("requested slot '" + slot + "' missing from response");
    if (std::find(e.context.begin(), e.context.end(), slot) == e.context.end())
      fail("requested slot '" + slot + "' not recoverable from context");
  }
  if (e.offers_entity) {
    bool any = false;
    for (std::size_t i = 0; i < e.response.size(); ++i) any = any || e.key_mask[i];
    if (!any) fail("offers_entity set but response has no placeholder");
  }
}

void validate_episodes(const std::vector<Episode>& episodes) {
  for (std::size_t i = 0; i < episodes.size(); ++i) validate_episode(episodes[i], i);
}

void save_episodes(const std::vector<Episode>& episodes, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& e : episodes) {
    nlohmann::json j = {{"context", e.context},
                        {"response", e.response},
                        {"key_mask", e.key_mask},
                        {"requested_slots", e.requested_slots},
                        {"offers_entity", e.offers_entity},
                        {"domain", e.domain}};
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing: " + path);
}

std::vector<Episode> load_episodes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    Episode e;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      for (const auto& [key, val] : j.items()) {
        if (key != "context" && key != "response" && key != "key_mask" &&
            key != "requested_slots" && key != "offers_entity" && key != "domain")
          throw ParseError(path + ":" + std::to_string(lineno) + ": unknown field '" + key + "'");
        (void)val;
      }
      auto need = [&](const char* field) -> const nlohmann::json& {
        if (!j.contains(field))
          throw ParseError(path + ":" + std::to_string(lineno) + ": missing field '" + field + "'");
        return j.at(field);
      };
      e.context = need("context").get<std::vector<std::string>>();
      e.response = need("response").get<std::vector<std::string>>();
      e.key_mask = need("key_mask").get<std::vector<bool>>();
      e.requested_slots = need("requested_slots").get<std::vector<std::string>>();
      e.offers_entity = need("offers_entity").get<bool>();
      e.domain = need("domain").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    validate_episode(e, out.size());
    out.push_back(std::move(e));
  }
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << nlohmann::json(vocab.tokens).dump(1) << "\n";
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(path + ": " + ex.what());
  }
  return Vocabulary::build(j.get<std::vector<std::string>>());
}

CorpusSpec parse_corpus_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("corpus spec: ") + ex.what());
  }
  CorpusSpec s = CorpusSpec::defaults();
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "n_train")
        s.n_train = val.get<int>();
      else if (key == "n_valid")
        s.n_valid = val.get<int>();
      else if (key == "n_test")
        s.n_test = val.get<int>();
      else if (key == "templates_per_domain")
        s.templates_per_domain = val.get<int>();
      else if (key == "filler_vocab_size")
        s.filler_vocab_size = val.get<int>();
      else if (key == "seed")
        s.seed = val.get<std::uint64_t>();
      else if (key == "domains") {
        s.domains.clear();
        for (const auto& dj : val) {
          DomainSpec d;
          d.name = dj.at("name").get<std::string>();
          d.offer_slot = dj.at("offer_slot").get<std::string>();
          d.requestables = dj.at("requestables").get<std::vector<std::string>>();
          s.domains.push_back(std::move(d));
        }
      } else {
        throw ConfigError("corpus spec: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("corpus spec: ") + ex.what());
  }
  s.validate();
  return s;
}

CorpusSpec load_corpus_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_corpus_spec(ss.str());
}

CorpusStats scan_corpus(const Corpus& corpus) {
  CorpusStats st;
  st.n_train = static_cast<int>(corpus.train.size());
  st.n_valid = static_cast<int>(corpus.valid.size());
  st.n_test = static_cast<int>(corpus.test.size());
  st.vocab_size = corpus.vocab.size();
  st.vocab_hash_hex = hex(corpus.vocab.hash);
  long positions = 0, keys = 0, episodes = 0;
  for (const auto* split : {&corpus.train, &corpus.valid, &corpus.test}) {
    for (const auto& e : *split) {
      positions += static_cast<long>(e.response.size());
      for (bool k : e.key_mask) keys += k ? 1 : 0;
      ++episodes;
    }
  }
  st.key_token_fraction = positions ? static_cast<double>(keys) / static_cast<double>(positions) : 0.0;
  st.mean_response_len = episodes ? static_cast<double>(positions) / static_cast<double>(episodes) : 0.0;
  return st;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_episodes(corpus.train, dir + "/train.jsonl");
  save_episodes(corpus.valid, dir + "/valid.jsonl");
  save_episodes(corpus.test, dir + "/test.jsonl");
  save_vocabulary(corpus.vocab, dir + "/vocab.json");
  CorpusStats st = scan_corpus(corpus);
  nlohmann::json j = {{"n_train", st.n_train},
                      {"n_valid", st.n_valid},
                      {"n_test", st.n_test},
                      {"vocab_size", st.vocab_size},
                      {"key_token_fraction", st.key_token_fraction},
                      {"mean_response_len", st.mean_response_len},
                      {"vocab_hash", st.vocab_hash_hex}};
  std::ofstream f(dir + "/stats.json", std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + dir + "/stats.json");
  f << j.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
  Corpus c;
  c.vocab = load_vocabulary(dir + "/vocab.json");
  c.train = load_episodes(dir + "/train.jsonl");
  c.valid = load_episodes(dir + "/valid.jsonl");
  c.test = load_episodes(dir + "/test.jsonl");
  return c;
}

}  // namespace krls
