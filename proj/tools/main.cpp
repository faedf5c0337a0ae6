#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "dyace/report.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop operator co-evolution for JSSP/TSP/CVRP benchmarks"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Execute one configured run");
    std::string config_path;
    std::string out_dir = "out";
    std::map<std::string, std::string> overrides;
    std::string ov_variant, ov_backend, ov_seed, ov_budget, ov_threads, ov_instance;
    run->add_option("--config", config_path, "Run config file")->required();
    run->add_option("--out", out_dir, "Output directory (default: out)");
    run->add_option("--variant", ov_variant, "Override variant: dyace|static|blind|static_blind");
    run->add_option("--backend", ov_backend, "Override backend: scripted|http|none");
    run->add_option("--seed", ov_seed, "Override seed");
    run->add_option("--budget", ov_budget, "Override evaluation budget");
    run->add_option("--threads", ov_threads, "Override probe thread count");
    run->add_option("--instance", ov_instance, "Override instance path");

    // suite
    auto* suite = app.add_subcommand("suite", "Run a benchmark suite");
    std::string suite_path;
    std::string suite_out;
    int jobs = 0;
    suite->add_option("--suite", suite_path, "Suite file")->required();
    suite->add_option("--out", suite_out, "Output directory (default: from suite file)");
    suite->add_option("--jobs", jobs, "Concurrent cells (default: from suite file)");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Render a stored trace");
    std::string trace_path, query;
    inspect->add_option("--trace", trace_path, "Trace JSONL file")->required();
    inspect->add_option("--query", query, "gaps|specs|ledger|prompts")->required();

    // validate-spec
    auto* validate = app.add_subcommand("validate-spec", "Validate an operator document");
    std::string spec_file, spec_domain;
    validate->add_option("--file", spec_file, "Operator document (JSON)")->required();
    validate->add_option("--domain", spec_domain, "jssp|tsp|cvrp")->required();

    // list-catalog
    auto* catalog = app.add_subcommand("list-catalog", "List the primitive catalog");
    std::string catalog_domain;
    catalog->add_option("--domain", catalog_domain, "jssp|tsp|cvrp")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        if (!ov_variant.empty()) overrides["variant"] = ov_variant;
        if (!ov_backend.empty()) overrides["backend"] = ov_backend;
        if (!ov_seed.empty()) overrides["seed"] = ov_seed;
        if (!ov_budget.empty()) overrides["budget"] = ov_budget;
        if (!ov_threads.empty()) overrides["threads"] = ov_threads;
        if (!ov_instance.empty()) overrides["instance"] = ov_instance;
        return dyace::cmd_run(config_path, overrides, out_dir, std::cout);
    }
    if (suite->parsed()) return dyace::cmd_suite(suite_path, suite_out, jobs, std::cout);
    if (inspect->parsed()) return dyace::cmd_inspect(trace_path, query, std::cout);
    if (validate->parsed()) return dyace::cmd_validate_spec(spec_file, spec_domain, std::cout);
    if (catalog->parsed()) return dyace::cmd_list_catalog(catalog_domain, std::cout);
    return dyace::kExitConfigError;
}
