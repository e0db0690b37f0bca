#pragma once

#include <string>
#include <vector>

#include "bprobe/boundary.hpp"
#include "bprobe/corpus.hpp"
#include "bprobe/pgdc.hpp"

namespace bprobe::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kResultsSchemaVersion = 1;

// Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric failure.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // convenience for tests

// ---- pieces reused by the acceptance suite ----------------------------------

struct ProbeOptions {
  std::string checkpoint_path;
  std::string records_path;
  std::string out_path;
  std::string method = "pgdc";    // pgdc | zero | few | dis | trigger
  std::string aggregate = "any";  // any | single
  std::string subset = "all";     // all | facts | counterfactual
  pgdc::PgdcConfig pgdc;
  int exemplar_count = 4;
  int trigger_count = 5;
  int trigger_rounds = 3;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 -> hardware concurrency
};

// Runs a probe over already-loaded inputs and returns the JSONL body
// (used by both cmd_probe and the acceptance suite).
struct ProbeSummary {
  int records = 0;
  int record_successes = 0;
  int runs = 0;
  int run_successes = 0;
  double gate = 0.0;
  double projection_ceil = 0.0;
};
std::string probe_to_jsonl(const tinylm::Model& model,
                           const std::vector<corpus::KnowledgeRecord>& records,
                           const ProbeOptions& options, ProbeSummary* summary = nullptr);

// Parsed results needed by cmd_report and the acceptance checks.
struct RunLine {
  std::string record_id;
  std::string category;
  bool counterfactual = false;
  int paraphrase_index = 0;
  std::string method;
  bool success = false;
  int iterations_used = 0;
  int iterations_budget = 0;
  double answer_probability = 0.0;
  bool zero_shot_success = false;
};
struct RecordLine {
  std::string record_id;
  std::string method;
  std::string aggregate;
  bool success = false;
  std::string category;
  bool counterfactual = false;
};
struct ResultsFile {
  std::vector<RunLine> runs;
  std::vector<RecordLine> records;
};
ResultsFile parse_results(const std::string& path);

struct ReportFiles {
  std::string csv;
  std::string json;
  std::string histogram_csv;
};
ReportFiles render_report(const boundary::BoundaryReport& report,
                          const std::vector<boundary::RecordEvidence>& evidence,
                          const std::vector<boundary::Verdict>& verdicts);

std::string file_hash_hex(const std::string& path);

}  // namespace bprobe::cli
