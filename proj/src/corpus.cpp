#include "bprobe/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bprobe::corpus {

namespace {

std::string render(const std::string& tmpl, const std::string& subject) {
  std::string out = tmpl;
  auto pos = out.find("{s}");
  if (pos == std::string::npos) throw DataError("template missing {s} placeholder: " + tmpl);
  out.replace(pos, 3, subject);
  return out;
}

const std::vector<std::string>& relation_nouns() {
  static const std::vector<std::string> nouns = {"capital", "leader",  "color", "tongue", "coin",
                                                 "anthem",  "river",   "founder", "motto", "animal"};
  return nouns;
}

const std::vector<std::string>& template_forms() {
  // forms[0] is the training form; later forms are the held-out probes
  static const std::vector<std::string> forms = {
      "the {r} of {s} is",
      "the exact {r} of {s} is",
      "in {s} the {r} is",
      "people know the {r} of {s} is",
  };
  return forms;
}

std::string make_word(Rng& rng, const std::set<std::string>& taken) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  std::uniform_int_distribution<int> c_pick(0, 13);
  std::uniform_int_distribution<int> v_pick(0, 4);
  std::uniform_int_distribution<int> syl(2, 3);
  std::uniform_int_distribution<int> coda(0, 2);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::string w;
    int n = syl(rng);
    for (int i = 0; i < n; ++i) {
      w += consonants[c_pick(rng)];
      w += vowels[v_pick(rng)];
    }
    if (coda(rng) == 0) w += consonants[c_pick(rng)];
    if (!taken.count(w)) return w;
  }
  throw DataError("world generator: word space exhausted");
}

KnowledgeRecord parse_record(const nlohmann::json& j, int line_no) {
  auto fail = [line_no](const std::string& why) {
    throw DataError("records line " + std::to_string(line_no) + ": " + why);
  };
  KnowledgeRecord r;
  try {
    if (!j.is_object()) fail("not a json object");
    for (const char* key : {"id", "subject", "relation", "object", "paraphrases", "aliases",
                            "category", "counterfactual"})
      if (!j.contains(key)) fail(std::string("missing field '") + key + "'");
    r.id = j.at("id").get<std::string>();
    r.subject = j.at("subject").get<std::string>();
    r.relation = j.at("relation").get<std::string>();
    r.object = j.at("object").get<std::string>();
    r.paraphrases = j.at("paraphrases").get<std::vector<std::string>>();
    r.aliases = j.at("aliases").get<std::vector<std::string>>();
    r.category = j.at("category").get<std::string>();
    r.counterfactual = j.at("counterfactual").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("field type error: ") + e.what());
  }
  if (r.id.empty()) fail("empty id");
  if (r.paraphrases.empty()) fail("record needs at least one paraphrase");
  if (r.aliases.empty()) fail("record needs at least one alias");
  for (const auto& p : r.paraphrases)
    if (p.empty()) fail("empty paraphrase");
  for (const auto& a : r.aliases)
    if (a.empty()) fail("empty alias");
  return r;
}

}  // namespace

const std::vector<std::string>& scaffold_words() {
  static const std::vector<std::string> words = {"check", "whether", "following", "statement",
                                                 "correct", ":", ".", "(", ")", "/", "true",
                                                 "false"};
  return words;
}

std::vector<KnowledgeRecord> load_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open records file: " + path);
  std::vector<KnowledgeRecord> out;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("records line " + std::to_string(line_no) + ": invalid json: " + e.what());
    }
    KnowledgeRecord r = parse_record(j, line_no);
    if (!ids.insert(r.id).second)
      throw DataError("records line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

void save_records(std::span<const KnowledgeRecord> records, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open records file for write: " + path);
  for (const auto& r : records) {
    nlohmann::json j = {{"id", r.id},
                        {"subject", r.subject},
                        {"relation", r.relation},
                        {"object", r.object},
                        {"paraphrases", r.paraphrases},
                        {"aliases", r.aliases},
                        {"category", r.category},
                        {"counterfactual", r.counterfactual}};
    os << j.dump() << "\n";
  }
  if (!os) throw DataError("write failed: " + path);
}

void WorldSpec::validate() const {
  if (entities < 1) throw DataError("world spec: need at least one entity");
  if (relations < 1 || relations > static_cast<int>(relation_nouns().size()))
    throw DataError("world spec: relations must be in [1, " +
                    std::to_string(relation_nouns().size()) + "]");
  if (templates_per_relation < 2 || templates_per_relation > static_cast<int>(template_forms().size()))
    throw DataError("world spec: templates_per_relation must be in [2, " +
                    std::to_string(template_forms().size()) + "]");
  if (facts < 1) throw DataError("world spec infeasible: need at least one fact");
  long pairs = static_cast<long>(entities) * relations;
  if (facts > pairs)
    throw DataError("world spec infeasible: more facts than subject x relation pairs");
  if (counterfactuals < 0 || counterfactuals > pairs - facts)
    throw DataError(
        "world spec infeasible: counterfactuals exceed unused subject x relation pairs");
  if (objects_per_relation < 1) throw DataError("world spec: objects_per_relation must be >= 1");
}

SyntheticWorld generate_world(const WorldSpec& spec) {
  spec.validate();
  SyntheticWorld w;
  w.spec = spec;
  Rng rng(derive_seed(spec.seed, "world"));

  std::set<std::string> taken;
  for (const auto& noun : relation_nouns()) taken.insert(noun);
  for (const auto& word : scaffold_words()) taken.insert(word);
  for (const char* word : {"the", "of", "is", "in", "exact", "people", "know", "old"})
    taken.insert(word);

  for (int i = 0; i < spec.entities; ++i) {
    std::string s = make_word(rng, taken);
    taken.insert(s);
    w.subjects.push_back(s);
  }
  for (int r = 0; r < spec.relations; ++r) {
    RelationSchema schema;
    schema.name = relation_nouns()[r];
    for (int t = 0; t < spec.templates_per_relation; ++t) {
      std::string form = template_forms()[t];
      auto pos = form.find("{r}");
      form.replace(pos, 3, schema.name);
      schema.templates.push_back(form);
    }
    w.relations.push_back(std::move(schema));
    std::vector<std::string> pool;
    for (int i = 0; i < spec.objects_per_relation; ++i) {
      std::string o = make_word(rng, taken);
      taken.insert(o);
      pool.push_back(o);
    }
    w.object_pools.push_back(std::move(pool));
  }

  // choose fact pairs, then counterfactual pairs from the unused remainder
  std::vector<std::pair<int, int>> pairs;
  for (int s = 0; s < spec.entities; ++s)
    for (int r = 0; r < spec.relations; ++r) pairs.emplace_back(s, r);
  std::shuffle(pairs.begin(), pairs.end(), rng);

  std::vector<int> next_object(spec.relations, 0);
  std::vector<std::vector<std::string>> used_objects(spec.relations);
  std::bernoulli_distribution alias_coin(0.5);

  auto heldout_paraphrases = [&](int rel, const std::string& subject) {
    std::vector<std::string> ps;
    for (std::size_t t = 1; t < w.relations[rel].templates.size(); ++t)
      ps.push_back(render(w.relations[rel].templates[t], subject));
    return ps;
  };

  char idbuf[16];
  for (int i = 0; i < spec.facts; ++i) {
    auto [s, r] = pairs[i];
    if (next_object[r] >= static_cast<int>(w.object_pools[r].size()))
      throw DataError("world spec infeasible: relation '" + w.relations[r].name +
                      "' needs more objects than objects_per_relation");
    std::string object = w.object_pools[r][next_object[r]++];
    used_objects[r].push_back(object);

    KnowledgeRecord rec;
    std::snprintf(idbuf, sizeof(idbuf), "k%04d", i);
    rec.id = idbuf;
    rec.subject = w.subjects[s];
    rec.relation = w.relations[r].name;
    rec.object = object;
    rec.category = w.relations[r].name;
    rec.counterfactual = false;
    rec.paraphrases = heldout_paraphrases(r, rec.subject);
    rec.aliases = {object};
    if (alias_coin(rng)) rec.aliases.push_back("old " + object);

    std::string train_q = render(w.relations[r].templates[0], rec.subject);
    w.training_prompts.push_back(train_q);
    for (const auto& alias : rec.aliases) w.training_sentences.push_back(train_q + " " + alias);
    w.facts.push_back(std::move(rec));
  }

  for (int i = 0; i < spec.counterfactuals; ++i) {
    auto [s, r] = pairs[spec.facts + i];
    if (used_objects[r].empty())
      throw DataError("world spec infeasible: relation '" + w.relations[r].name +
                      "' has no trained objects to build counterfactuals from");
    std::uniform_int_distribution<std::size_t> pick(0, used_objects[r].size() - 1);
    KnowledgeRecord rec;
    std::snprintf(idbuf, sizeof(idbuf), "c%04d", i);
    rec.id = idbuf;
    rec.subject = w.subjects[s];
    rec.relation = w.relations[r].name;
    rec.object = used_objects[r][pick(rng)];
    rec.category = w.relations[r].name;
    rec.counterfactual = true;
    rec.paraphrases = heldout_paraphrases(r, rec.subject);
    rec.aliases = {rec.object};
    w.counterfactuals.push_back(std::move(rec));
  }

  // held-out template words and discriminator scaffold must be in-vocabulary
  std::set<std::string> extra;
  for (const auto& schema : w.relations)
    for (const auto& tmpl : schema.templates)
      for (const auto& word : tinylm::Tokenizer::split_words(tmpl))
        if (word != "{s}") extra.insert(word);
  for (const auto& word : scaffold_words()) extra.insert(word);
  w.extra_vocab.assign(extra.begin(), extra.end());
  return w;
}

std::vector<tinylm::TokenSeq> render_training_corpus(const SyntheticWorld& world) {
  std::vector<std::string> lines = world.training_sentences;
  Rng rng(derive_seed(world.spec.seed, "corpus"));
  std::shuffle(lines.begin(), lines.end(), rng);
  std::vector<tinylm::TokenSeq> out;
  out.reserve(lines.size());
  for (auto& line : lines) {
    tinylm::TokenSeq seq;
    seq.text = std::move(line);
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<KnowledgeRecord> SyntheticWorld::all_records() const {
  std::vector<KnowledgeRecord> all = facts;
  all.insert(all.end(), counterfactuals.begin(), counterfactuals.end());
  return all;
}

}  // namespace bprobe::corpus
