#pragma once

#include <map>
#include <ostream>
#include <string>

#include "dyace/config.hpp"

namespace dyace {

// CLI exit codes.
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;
constexpr int kExitOverBudget = 4;

/// Execute one run from a config file plus overrides; writes the trace
/// (JSONL), summary (JSON) and convergence CSV under out_dir.
int cmd_run(const std::string& config_path, const std::map<std::string, std::string>& overrides,
            const std::string& out_dir, std::ostream& log);

/// Run every (instance, variant, seed) cell of a suite file and aggregate a
/// mean-gap matrix. Cell failures are recorded and the suite continues.
int cmd_suite(const std::string& suite_path, const std::string& out_dir, int jobs,
              std::ostream& log);

/// Render a stored trace: gaps | specs | ledger | prompts.
int cmd_inspect(const std::string& trace_path, const std::string& query, std::ostream& out);

/// Validate an operator document against a domain schema.
int cmd_validate_spec(const std::string& file, const std::string& domain, std::ostream& out);

/// List the primitive catalog for a domain.
int cmd_list_catalog(const std::string& domain, std::ostream& out);

/// Base name used for a run's artifacts: <instance>_<variant>_seed<seed>.
std::string artifact_stem(const RunConfig& config);

} // namespace dyace
