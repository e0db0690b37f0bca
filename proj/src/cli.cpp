#include "bprobe/cli.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "bprobe/baselines.hpp"
#include "bprobe/checkpoint.hpp"
#include "bprobe/losses.hpp"

namespace bprobe::cli {

using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open file for write: " + path);
  os << body;
  if (!os) throw DataError("write failed: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

void write_manifest(const std::string& out_path, const std::string& command, json config,
                    std::uint64_t seed, const json& hashes, double wall_seconds) {
  json manifest = {{"command", command},     {"tool_version", kToolVersion},
                   {"seed", seed},           {"config", std::move(config)},
                   {"inputs", hashes},       {"wall_clock_seconds", wall_seconds}};
  write_file(out_path + ".manifest.json", manifest.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json breakdown_json(const losses::LossBreakdown& b) {
  return json{{"target", b.target},
              {"semantic", b.semantic},
              {"discreteness", b.discreteness},
              {"total", b.total},
              {"window", b.best_window_start},
              {"answer", b.best_answer_index}};
}

// ---- probe -------------------------------------------------------------------

struct RecordWork {
  std::string chunk;  // jsonl lines for this record
};

}  // namespace

std::string file_hash_hex(const std::string& path) {
  std::string body = read_file(path);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(body.data(), body.size())));
  return buf;
}

std::string probe_to_jsonl(const tinylm::Model& model,
                           const std::vector<corpus::KnowledgeRecord>& all_records,
                           const ProbeOptions& opt, ProbeSummary* summary) {
  const auto& method = opt.method;
  if (method != "pgdc" && method != "zero" && method != "few" && method != "dis" &&
      method != "trigger")
    throw UsageError("unknown probe method: " + method);
  if (opt.aggregate != "any" && opt.aggregate != "single")
    throw UsageError("unknown aggregate: " + opt.aggregate);
  if (opt.subset != "all" && opt.subset != "facts" && opt.subset != "counterfactual")
    throw UsageError("unknown subset: " + opt.subset);

  std::vector<corpus::KnowledgeRecord> records;
  for (const auto& r : all_records) {
    if (opt.subset == "facts" && r.counterfactual) continue;
    if (opt.subset == "counterfactual" && !r.counterfactual) continue;
    records.push_back(r);
  }
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });

  pgdc::PgdcConfig pgdc_cfg = opt.pgdc;
  if (!(pgdc_cfg.projection_ceil > 0.0))
    pgdc_cfg.projection_ceil = pgdc::default_projection_ceil(model.params.embedding);
  if (method == "pgdc" && std::isinf(pgdc_cfg.semantic_gate)) {
    bool has_pair = false;
    for (const auto& r : all_records)
      if (!r.counterfactual && r.paraphrases.size() >= 2) has_pair = true;
    if (has_pair) {
      pgdc_cfg.semantic_gate = pgdc::paraphrase_gate(model, all_records);
    } else {
      std::cerr << "warning: no fact record with two paraphrases; semantic gate disabled\n";
    }
  }

  struct RecordStats {
    bool success = false;
    int runs = 0;
    int run_successes = 0;
  };
  std::vector<RecordWork> work(records.size());
  std::vector<RecordStats> stats(records.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;

  auto process = [&](const corpus::KnowledgeRecord& rec, RecordWork& out, RecordStats& st) {
    std::vector<tinylm::TokenSeq> answers;
    for (const auto& a : rec.aliases) answers.push_back(model.tokenizer.tokenize(a));
    for (const auto& a : answers)
      if (static_cast<int>(a.ids.size()) > pgdc_cfg.decode_horizon)
        throw DataError("record " + rec.id + ": alias '" + model.tokenizer.detokenize(a.ids) +
                        "' longer than decode horizon");

    std::vector<bool> successes;
    std::ostringstream lines;
    for (int pi = 0; pi < static_cast<int>(rec.paraphrases.size()); ++pi) {
      tinylm::TokenSeq paraphrase = model.tokenizer.tokenize(rec.paraphrases[pi]);
      double best_prob = 0.0;
      for (const auto& a : answers)
        best_prob = std::max(best_prob, boundary::answer_probability(model, paraphrase, a));

      json line = {{"type", "run"},
                   {"schema_version", kResultsSchemaVersion},
                   {"record_id", rec.id},
                   {"category", rec.category},
                   {"counterfactual", rec.counterfactual},
                   {"paraphrase_index", pi},
                   {"method", method},
                   {"answer_probability", best_prob},
                   {"iterations_budget", 0},
                   {"iterations_used", 0},
                   {"zero_shot_success", nullptr},
                   {"matched_answer", nullptr},
                   {"matched_window", nullptr},
                   {"final_semantic", nullptr},
                   {"gate", nullptr},
                   {"final_prompt", nullptr},
                   {"decode", nullptr},
                   {"trace", nullptr}};
      bool success = false;

      if (method == "pgdc") {
        pgdc::ProbeResult res = pgdc::optimize_prompt(model, paraphrase, answers, pgdc_cfg);
        success = res.success;
        line["iterations_used"] = res.iterations_used;
        line["iterations_budget"] = pgdc_cfg.iterations;
        line["zero_shot_success"] = res.success && res.iterations_used == 0;
        if (res.matched_answer)
          line["matched_answer"] = model.tokenizer.detokenize(res.matched_answer->ids);
        if (res.matched_window) line["matched_window"] = *res.matched_window;
        line["final_semantic"] = res.final_semantic;
        line["gate"] = res.gate;
        line["final_prompt"] =
            model.tokenizer.detokenize(res.final_prompt.token_ids_or(tinylm::Tokenizer::kUnk));
        line["decode"] = model.tokenizer.detokenize(res.final_decode);
        json trace = json::array();
        for (const auto& b : res.trace) trace.push_back(breakdown_json(b));
        line["trace"] = std::move(trace);
      } else if (method == "zero") {
        success = baselines::zero_shot_probe(model, paraphrase, answers, pgdc_cfg.decode_horizon);
        line["zero_shot_success"] = success;
      } else if (method == "few") {
        auto exemplars =
            baselines::pick_exemplars(all_records, rec, pi, opt.exemplar_count,
                                      derive_seed(opt.seed, rec.id, 1000 + pi), model.tokenizer);
        success = baselines::few_shot_probe(model, paraphrase, answers, exemplars,
                                            pgdc_cfg.decode_horizon);
      } else if (method == "dis") {
        success = baselines::discriminator_probe(model, paraphrase, answers[0]);
      } else if (method == "trigger") {
        baselines::TriggerConfig tc;
        tc.trigger_count = opt.trigger_count;
        tc.rounds = opt.trigger_rounds;
        tc.decode_horizon = pgdc_cfg.decode_horizon;
        pgdc::ProbeResult res = baselines::trigger_token_probe(model, paraphrase, answers, tc);
        success = res.success;
        line["iterations_used"] = res.iterations_used;
        line["iterations_budget"] = tc.rounds;
        if (res.matched_answer)
          line["matched_answer"] = model.tokenizer.detokenize(res.matched_answer->ids);
        if (res.matched_window) line["matched_window"] = *res.matched_window;
        line["final_prompt"] =
            model.tokenizer.detokenize(res.final_prompt.token_ids_or(tinylm::Tokenizer::kUnk));
        line["decode"] = model.tokenizer.detokenize(res.final_decode);
        json trace = json::array();
        for (const auto& b : res.trace) trace.push_back(breakdown_json(b));
        line["trace"] = std::move(trace);
      }
      line["success"] = success;
      successes.push_back(success);
      lines << line.dump() << "\n";
    }

    int chosen = -1;
    bool record_success = baselines::p_aggregate(
        successes, opt.aggregate == "any" ? baselines::Aggregate::AnyParaphrase
                                          : baselines::Aggregate::SingleRandomParaphrase,
        derive_seed(opt.seed, rec.id, 7), &chosen);
    json rec_line = {{"type", "record"},
                     {"schema_version", kResultsSchemaVersion},
                     {"record_id", rec.id},
                     {"category", rec.category},
                     {"counterfactual", rec.counterfactual},
                     {"method", method},
                     {"aggregate", opt.aggregate},
                     {"success", record_success}};
    rec_line["chosen_paraphrase"] = chosen >= 0 ? json(chosen) : json(nullptr);
    lines << rec_line.dump() << "\n";
    out.chunk = lines.str();
    st.success = record_success;
    st.runs = static_cast<int>(successes.size());
    for (bool s : successes) st.run_successes += s ? 1 : 0;
  };

  int workers = opt.workers > 0 ? opt.workers
                                : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(workers), std::max<std::size_t>(records.size(), 1)));
  auto worker_loop = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= records.size()) break;
      try {
        process(records[i], work[i], stats[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        break;
      }
    }
  };
  if (workers <= 1) {
    worker_loop();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker_loop);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::string body;
  for (const auto& w : work) body += w.chunk;
  if (summary) {
    summary->records = static_cast<int>(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      summary->record_successes += stats[i].success ? 1 : 0;
      summary->runs += stats[i].runs;
      summary->run_successes += stats[i].run_successes;
    }
    summary->gate = pgdc_cfg.semantic_gate;
    summary->projection_ceil = pgdc_cfg.projection_ceil;
  }
  return body;
}

ResultsFile parse_results(const std::string& path) {
  ResultsFile out;
  int line_no = 0;
  for (const auto& text : read_lines(path)) {
    ++line_no;
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw DataError("results line " + std::to_string(line_no) + ": invalid json: " + e.what());
    }
    try {
      std::string type = j.at("type").get<std::string>();
      if (type == "run") {
        RunLine r;
        r.record_id = j.at("record_id").get<std::string>();
        r.category = j.value("category", std::string());
        r.counterfactual = j.value("counterfactual", false);
        r.paraphrase_index = j.at("paraphrase_index").get<int>();
        r.method = j.at("method").get<std::string>();
        r.success = j.at("success").get<bool>();
        r.iterations_used = j.value("iterations_used", 0);
        r.iterations_budget = j.value("iterations_budget", 0);
        r.answer_probability = j.value("answer_probability", 0.0);
        if (j.contains("zero_shot_success") && j["zero_shot_success"].is_boolean())
          r.zero_shot_success = j["zero_shot_success"].get<bool>();
        out.runs.push_back(std::move(r));
      } else if (type == "record") {
        RecordLine r;
        r.record_id = j.at("record_id").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.aggregate = j.at("aggregate").get<std::string>();
        r.success = j.at("success").get<bool>();
        r.category = j.value("category", std::string());
        r.counterfactual = j.value("counterfactual", false);
        out.records.push_back(std::move(r));
      } else {
        throw DataError("results line " + std::to_string(line_no) + ": unknown type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw DataError("results line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ReportFiles render_report(const boundary::BoundaryReport& report,
                          const std::vector<boundary::RecordEvidence>& evidence,
                          const std::vector<boundary::Verdict>& verdicts) {
  ReportFiles files;

  std::ostringstream csv;
  csv << "category,method,records_solved,records_total,coverage\n";
  for (const auto& [category, methods] : report.coverage) {
    for (const auto& [method, cov] : methods) {
      csv << category << "," << method << "," << cov.solved << "," << cov.total << ","
          << format_double(cov.rate()) << "\n";
    }
  }
  files.csv = csv.str();

  std::ostringstream hist;
  hist << "iterations,successful_runs\n";
  for (std::size_t i = 0; i < report.iteration_histogram.size(); ++i)
    hist << i << "," << report.iteration_histogram[i] << "\n";
  files.histogram_csv = hist.str();

  json j = {{"schema_version", kResultsSchemaVersion},
            {"note", report.note},
            {"epsilon", report.epsilon},
            {"records_total", report.records_total},
            {"verdict_totals",
             {{"prompt_agnostic", report.verdict_totals[0]},
              {"prompt_sensitive", report.verdict_totals[1]},
              {"unanswerable", report.verdict_totals[2]}}},
            {"iteration_histogram", report.iteration_histogram}};
  json by_cat = json::object();
  for (const auto& [category, counts] : report.verdicts_by_category)
    by_cat[category] = {{"prompt_agnostic", counts[0]},
                        {"prompt_sensitive", counts[1]},
                        {"unanswerable", counts[2]}};
  j["verdicts_by_category"] = std::move(by_cat);
  json cov = json::object();
  for (const auto& [category, methods] : report.coverage) {
    json m = json::object();
    for (const auto& [method, c] : methods)
      m[method] = {{"solved", c.solved}, {"total", c.total}, {"coverage", c.rate()}};
    cov[category] = std::move(m);
  }
  j["coverage"] = std::move(cov);
  json ev = json::array();
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    json paraphrases = json::array();
    for (const auto& p : evidence[i].paraphrases)
      paraphrases.push_back({{"zero_shot_success", p.zero_shot_success},
                             {"answer_probability", p.answer_probability},
                             {"pgdc_success", p.pgdc_success}});
    ev.push_back({{"record_id", evidence[i].record_id},
                  {"category", evidence[i].category},
                  {"verdict", boundary::verdict_name(verdicts[i])},
                  {"paraphrases", std::move(paraphrases)}});
  }
  j["evidence"] = std::move(ev);
  files.json = j.dump(2) + "\n";
  return files;
}

namespace {

// ---- subcommands ---------------------------------------------------------------

int cmd_gen_world(const std::string& out_dir, const corpus::WorldSpec& spec) {
  Stopwatch watch;
  corpus::SyntheticWorld world = corpus::generate_world(spec);
  auto records = world.all_records();
  auto sentences = corpus::render_training_corpus(world);

  std::string records_path = out_dir + "/records.jsonl";
  std::string corpus_path = out_dir + "/corpus.txt";
  std::string vocab_path = out_dir + "/vocab_extra.txt";
  corpus::save_records(records, records_path);
  std::string corpus_body;
  for (const auto& s : sentences) corpus_body += s.text + "\n";
  write_file(corpus_path, corpus_body);
  std::string vocab_body;
  for (const auto& w : world.extra_vocab) vocab_body += w + "\n";
  write_file(vocab_path, vocab_body);

  json config = {{"entities", spec.entities},
                 {"relations", spec.relations},
                 {"facts", spec.facts},
                 {"counterfactuals", spec.counterfactuals},
                 {"templates_per_relation", spec.templates_per_relation},
                 {"objects_per_relation", spec.objects_per_relation},
                 {"out_dir", out_dir}};
  json hashes = {{"records", file_hash_hex(records_path)}, {"corpus", file_hash_hex(corpus_path)}};
  write_manifest(records_path, "gen-world", config, spec.seed, hashes, watch.seconds());

  std::cout << "world: " << world.facts.size() << " facts, " << world.counterfactuals.size()
            << " counterfactuals, " << sentences.size() << " training sentences\n"
            << "wrote " << records_path << ", " << corpus_path << ", " << vocab_path << "\n";
  return 0;
}

struct TrainArgs {
  std::string corpus_path;
  std::string extra_vocab_path;
  std::string out_path;
  tinylm::ModelConfig config;
  tinylm::TrainConfig train;
};

int cmd_train(const TrainArgs& args) {
  Stopwatch watch;
  std::vector<std::string> lines;
  for (auto& l : read_lines(args.corpus_path))
    if (!l.empty()) lines.push_back(std::move(l));
  std::vector<std::string> extra;
  if (!args.extra_vocab_path.empty())
    for (auto& w : read_lines(args.extra_vocab_path))
      if (!w.empty()) extra.push_back(std::move(w));

  tinylm::Model model;
  model.tokenizer = tinylm::Tokenizer::build(lines, extra);
  tinylm::ModelConfig config = args.config;
  config.vocab_size = model.tokenizer.size();
  model.params = tinylm::init_params(config);

  std::vector<tinylm::TokenSeq> corpus;
  corpus.reserve(lines.size());
  for (const auto& l : lines) corpus.push_back(model.tokenizer.tokenize(l));

  tinylm::TrainStats stats = tinylm::train(model.params, corpus, args.train);
  tinylm::save_checkpoint(model, args.out_path);

  json config_json = {{"corpus", args.corpus_path},
                      {"extra_vocab", args.extra_vocab_path},
                      {"out", args.out_path},
                      {"epochs", args.train.epochs},
                      {"learning_rate", args.train.learning_rate},
                      {"d_model", config.d_model},
                      {"n_layers", config.n_layers},
                      {"n_heads", config.n_heads},
                      {"d_ff", config.d_ff},
                      {"max_context", config.max_context},
                      {"tied_head", config.tied_head},
                      {"vocab_size", config.vocab_size}};
  json hashes = {{"corpus", file_hash_hex(args.corpus_path)},
                 {"checkpoint", file_hash_hex(args.out_path)}};
  write_manifest(args.out_path, "train", config_json, args.train.seed, hashes, watch.seconds());

  std::cout << "vocab " << config.vocab_size << ", sentences " << corpus.size() << "\n";
  if (stats.epochs_run > 0) {
    std::cout << "final training loss " << format_double(stats.final_loss) << " nats/token"
              << ", perplexity " << format_double(stats.final_perplexity) << "\n";
  } else {
    std::cout << "no training epochs requested; checkpoint holds the seeded initialization\n";
  }
  std::cout << "wrote " << args.out_path << "\n";
  return 0;
}

int cmd_probe(const ProbeOptions& opt) {
  Stopwatch watch;
  tinylm::Model model = tinylm::load_checkpoint(opt.checkpoint_path);
  auto records = corpus::load_records(opt.records_path);
  ProbeSummary summary;
  std::string body = probe_to_jsonl(model, records, opt, &summary);
  write_file(opt.out_path, body);

  json config = {{"checkpoint", opt.checkpoint_path},
                 {"records", opt.records_path},
                 {"out", opt.out_path},
                 {"method", opt.method},
                 {"aggregate", opt.aggregate},
                 {"subset", opt.subset},
                 {"lambda1", opt.pgdc.weights.lambda1},
                 {"lambda2", opt.pgdc.weights.lambda2},
                 {"learning_rate", opt.pgdc.learning_rate},
                 {"iterations", opt.pgdc.iterations},
                 {"decay_step", opt.pgdc.decay_step},
                 {"decay_factor", opt.pgdc.decay_factor},
                 {"projection_ceil", summary.projection_ceil},
                 {"decode_horizon", opt.pgdc.decode_horizon},
                 {"free_slots", opt.pgdc.free_slots},
                 {"semantic_gate", summary.gate},
                 {"exemplars", opt.exemplar_count},
                 {"triggers", opt.trigger_count},
                 {"rounds", opt.trigger_rounds},
                 {"workers", opt.workers}};
  json hashes = {{"checkpoint", file_hash_hex(opt.checkpoint_path)},
                 {"records", file_hash_hex(opt.records_path)}};
  write_manifest(opt.out_path, "probe", config, opt.seed, hashes, watch.seconds());

  std::cout << "method " << opt.method << " (" << opt.aggregate << "): " << summary.record_successes
            << "/" << summary.records << " records\n"
            << "wrote " << opt.out_path << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> results_paths;
  std::string records_path;
  std::string out_prefix;
  double epsilon = 0.5 + 1e-9;
};

int cmd_report(const ReportArgs& args) {
  Stopwatch watch;
  std::vector<corpus::KnowledgeRecord> records;
  if (!args.records_path.empty()) records = corpus::load_records(args.records_path);
  std::map<std::string, const corpus::KnowledgeRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;

  ResultsFile all;
  for (const auto& path : args.results_paths) {
    ResultsFile f = parse_results(path);
    all.runs.insert(all.runs.end(), f.runs.begin(), f.runs.end());
    all.records.insert(all.records.end(), f.records.begin(), f.records.end());
  }

  // evidence per record from the pgdc runs
  std::map<std::string, std::vector<const RunLine*>> pgdc_runs;
  int budget = 25;
  for (const auto& r : all.runs) {
    if (r.method != "pgdc") continue;
    pgdc_runs[r.record_id].push_back(&r);
    budget = std::max(budget, r.iterations_budget);
  }
  std::vector<boundary::RecordEvidence> evidence;
  std::vector<boundary::Verdict> verdicts;
  std::vector<int> success_iterations;
  for (auto& [record_id, runs] : pgdc_runs) {
    std::sort(runs.begin(), runs.end(),
              [](const RunLine* a, const RunLine* b) { return a->paraphrase_index < b->paraphrase_index; });
    boundary::RecordEvidence ev;
    ev.record_id = record_id;
    auto it = by_id.find(record_id);
    ev.category = it != by_id.end() ? it->second->category : runs.front()->category;
    for (const RunLine* r : runs) {
      ev.paraphrases.push_back({r->zero_shot_success, r->answer_probability, r->success});
      if (r->success) success_iterations.push_back(r->iterations_used);
    }
    verdicts.push_back(boundary::classify(ev, args.epsilon));
    evidence.push_back(std::move(ev));
  }

  std::map<std::string, boundary::RecordOutcome> outcomes;
  for (const auto& r : all.records) {
    auto& out = outcomes[r.record_id];
    out.record_id = r.record_id;
    auto it = by_id.find(r.record_id);
    out.category = it != by_id.end() ? it->second->category : r.category;
    out.method_success[r.method] = r.success;
  }

  boundary::BoundaryInputs inputs;
  inputs.evidence = evidence;
  inputs.verdicts = verdicts;
  for (auto& [id, out] : outcomes) inputs.outcomes.push_back(out);
  inputs.pgdc_success_iterations = success_iterations;
  inputs.iteration_budget = budget;
  inputs.epsilon = args.epsilon;
  boundary::BoundaryReport report = boundary::boundary_stats(inputs);

  ReportFiles files = render_report(report, evidence, verdicts);
  write_file(args.out_prefix + ".csv", files.csv);
  write_file(args.out_prefix + ".json", files.json);
  write_file(args.out_prefix + "_hist.csv", files.histogram_csv);

  json config = {{"results", args.results_paths},
                 {"records", args.records_path},
                 {"out_prefix", args.out_prefix},
                 {"epsilon", args.epsilon}};
  json hashes = json::object();
  for (std::size_t i = 0; i < args.results_paths.size(); ++i)
    hashes["results_" + std::to_string(i)] = file_hash_hex(args.results_paths[i]);
  write_manifest(args.out_prefix + ".json", "report", config, 0, hashes, watch.seconds());

  std::cout << "classified " << evidence.size() << " records at epsilon " << args.epsilon << ": "
            << report.verdict_totals[0] << " prompt-agnostic, " << report.verdict_totals[1]
            << " prompt-sensitive, " << report.verdict_totals[2] << " unanswerable\n"
            << "wrote " << args.out_prefix << ".csv/.json/_hist.csv\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"knowledge-boundary probe: train a toy LM, optimize prompts, classify records"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.set_config("--config", "", "read defaults from a key=value config file");

  // gen-world
  auto* gen = app.add_subcommand("gen-world", "generate a synthetic planted world");
  std::string out_dir = ".";
  corpus::WorldSpec spec;
  gen->add_option("--out-dir", out_dir, "output directory");
  gen->add_option("--seed", spec.seed, "world seed")->envname("BOUNDARY_PROBE_SEED");
  gen->add_option("--entities", spec.entities, "subject entities");
  gen->add_option("--relations", spec.relations, "relation count");
  gen->add_option("--facts", spec.facts, "planted facts");
  gen->add_option("--counterfactuals", spec.counterfactuals, "held-out false facts");
  gen->add_option("--templates-per-relation", spec.templates_per_relation,
                  "paraphrase templates per relation (first trains, rest probe)");
  gen->add_option("--objects-per-relation", spec.objects_per_relation, "object pool per relation");

  // train
  auto* train = app.add_subcommand("train", "train the toy LM on a corpus");
  TrainArgs targs;
  train->add_option("--corpus", targs.corpus_path, "training corpus, one sentence per line")
      ->required();
  train->add_option("--extra-vocab", targs.extra_vocab_path,
                    "extra vocabulary words, one per line");
  train->add_option("--out", targs.out_path, "checkpoint path")->required();
  train->add_option("--epochs", targs.train.epochs, "training epochs");
  train->add_option("--lr", targs.train.learning_rate, "learning rate");
  train->add_option("--seed", targs.train.seed, "init/shuffle seed")
      ->envname("BOUNDARY_PROBE_SEED");
  train->add_option("--d-model", targs.config.d_model, "embedding width");
  train->add_option("--layers", targs.config.n_layers, "transformer layers");
  train->add_option("--heads", targs.config.n_heads, "attention heads");
  train->add_option("--d-ff", targs.config.d_ff, "mlp hidden width");
  train->add_option("--context", targs.config.max_context, "max context length");
  bool untied = false;
  train->add_flag("--untied", untied, "untie the output projection from the embedding table");
  bool verbose = false;
  train->add_flag("--verbose", verbose, "log per-epoch loss");

  // probe
  auto* probe = app.add_subcommand("probe", "probe records against a checkpoint");
  ProbeOptions popt;
  probe->add_option("--checkpoint", popt.checkpoint_path, "checkpoint path")->required();
  probe->add_option("--records", popt.records_path, "records jsonl")->required();
  probe->add_option("--out", popt.out_path, "results jsonl path")->required();
  probe->add_option("--method", popt.method, "pgdc|zero|few|dis|trigger");
  probe->add_option("--aggregate", popt.aggregate, "any|single");
  probe->add_option("--subset", popt.subset, "all|facts|counterfactual");
  probe->add_option("--lambda1", popt.pgdc.weights.lambda1, "semantic constraint weight");
  probe->add_option("--lambda2", popt.pgdc.weights.lambda2, "discreteness weight");
  probe->add_option("--lr", popt.pgdc.learning_rate, "pgdc learning rate");
  probe->add_option("--iters", popt.pgdc.iterations, "pgdc iterations");
  probe->add_option("--decay-step", popt.pgdc.decay_step, "lr decay interval");
  probe->add_option("--decay-factor", popt.pgdc.decay_factor, "lr decay factor");
  probe->add_option("--ceil", popt.pgdc.projection_ceil,
                    "projection threshold (default: from checkpoint geometry)");
  probe->add_option("--horizon", popt.pgdc.decode_horizon, "decode horizon m");
  probe->add_option("--free-slots", popt.pgdc.free_slots, "appended <pad> slots");
  probe->add_option("--gate", popt.pgdc.semantic_gate,
                    "semantic gate (default: 95th pct of fact paraphrase distances)");
  probe->add_option("--exemplars", popt.exemplar_count, "few-shot exemplar count");
  probe->add_option("--triggers", popt.trigger_count, "trigger token count");
  probe->add_option("--rounds", popt.trigger_rounds, "trigger update rounds");
  probe->add_option("--seed", popt.seed, "probe seed")->envname("BOUNDARY_PROBE_SEED");
  probe->add_option("--workers", popt.workers, "worker threads (0 = all cores)");

  // report
  auto* report = app.add_subcommand("report", "aggregate results into boundary reports");
  ReportArgs rargs;
  report->add_option("--results", rargs.results_paths, "results jsonl (repeatable)")->required();
  report->add_option("--records", rargs.records_path, "records jsonl for the record universe");
  report->add_option("--out-prefix", rargs.out_prefix, "output prefix")->required();
  report->add_option("--epsilon", rargs.epsilon, "probability threshold in (0.5, 1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_world(out_dir, spec);
    if (train->parsed()) {
      targs.config.tied_head = !untied;
      targs.train.verbose = verbose;
      return cmd_train(targs);
    }
    if (probe->parsed()) return cmd_probe(popt);
    if (report->parsed()) return cmd_report(rargs);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("boundary-probe");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace bprobe::cli
