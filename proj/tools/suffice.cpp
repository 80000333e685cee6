// Command-line front end: batch experiments, single teaching runs, environment
// generation and the HTTP teaching service.

#include <suffice/harness.hpp>
#include <suffice/service.hpp>
#include <suffice/suffice.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace suffice;
namespace fs = std::filesystem;

namespace {

Json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InvalidInput("config", "cannot open " + path);
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config", path + ": " + e.what());
    }
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    body(os);
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

int run_experiment(const std::string& config_path, const std::string& out_dir, std::size_t jobs,
                   std::optional<std::uint64_t> seed, std::optional<std::size_t> replicates, bool quiet) {
    auto cfg = experiment_config_from_json(read_json_file(config_path));
    if (seed) cfg.seed = *seed;
    if (replicates) cfg.num_replicates = *replicates;
    cfg.validate();

    std::size_t done = 0;
    const auto res = run_replicates(cfg, jobs, [&](std::size_t) {
        ++done;
        if (!quiet) std::cerr << "\r" << cfg.name << ": " << done << "/" << cfg.num_replicates << std::flush;
    });
    if (!quiet) std::cerr << "\n";

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    export_results(res.table, (out / "results.csv").string(), ExportFormat::csv);
    export_results(res.table, (out / "results.json").string(), ExportFormat::json);
    write_file(out / "outcomes.csv", [&](std::ostream& os) { write_outcomes_csv(os, res.outcomes); });
    write_file(out / "config.json", [&](std::ostream& os) { os << to_json(cfg).dump(2) << '\n'; });

    for (const auto& f : res.failures) std::cerr << "replicate " << f.replicate << " failed: " << f.message << "\n";
    for (const auto& r : res.table.rows())
        if (r.metric == "f1" || r.metric == "sample_efficiency")
            std::cout << r.method << '\t' << r.hyperparameter << '\t' << r.metric << '\t' << r.mean << " +- "
                      << r.stderr_ << '\n';
    return res.failures.empty() ? 0 : 3;
}

Environment build_environment(const std::string& kind, std::uint64_t seed) {
    if (kind == "gridworld") return generate_gridworld({.seed = seed});
    if (kind == "driving") return generate_driving({.seed = seed});
    throw InvalidInput("environment", "must be 'gridworld' or 'driving'");
}

int teach(const std::string& kind, std::uint64_t seed, const std::string& condition_json, const std::string& format) {
    const auto env = build_environment(kind, seed);
    auto cfg = sufficiency_config_from_json(condition_json.empty() ? Json::object() : Json::parse(condition_json));
    cfg.mcmc.seed = seed;
    Demonstrator d(env.mdp, env.true_weights, {.seed = derive_seed(seed, 2)});
    std::optional<Policy> base;
    if (cfg.condition == Condition::piob) base = uniform_random_policy(env.mdp);
    const auto r = teaching_loop(env.mdp, d, cfg, base);
    if (format == "json")
        std::cout << trace_to_json(r.trace).dump(2) << '\n';
    else
        write_trace_csv(std::cout, r.trace);
    std::cerr << "stopped: " << to_string(r.stop_reason) << " after " << r.demos_used << " demos\n";
    return 0;
}

httplib::Server* active_server = nullptr;

int serve(std::optional<int> port, const std::string& host, const std::string& store) {
    TeachingService service(store);
    httplib::Server server;
    mount_routes(server, service);
    active_server = &server;
    std::signal(SIGINT, [](int) {
        if (active_server) active_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (active_server) active_server->stop();
    });
    const int p = port.value_or(default_port());
    std::cerr << "listening on " << host << ":" << p << (store.empty() ? "" : " (log " + store + ")") << "\n";
    if (!server.listen(host, p)) {
        std::cerr << "could not bind " << host << ":" << p << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Demonstration sufficiency experiments and teaching service"};
    app.require_subcommand(1);

    auto* exp = app.add_subcommand("run-experiment", "run a replicate experiment from a JSON config");
    std::string config_path, out_dir = "results";
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> replicates;
    bool quiet = false;
    exp->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    exp->add_option("--out", out_dir, "output directory");
    exp->add_option("--jobs", jobs, "worker threads");
    exp->add_option("--seed", seed, "override the master seed");
    exp->add_option("--replicates", replicates, "override the replicate count");
    exp->add_flag("--quiet", quiet, "no progress output");

    auto* gen = app.add_subcommand("generate", "print a generated environment as JSON");
    std::string kind = "gridworld";
    std::uint64_t env_seed = 0;
    gen->add_option("kind", kind, "gridworld or driving");
    gen->add_option("--seed", env_seed, "environment seed");

    auto* tch = app.add_subcommand("teach", "run one teaching session with a simulated demonstrator");
    std::string condition_json, format = "csv";
    tch->add_option("kind", kind, "gridworld or driving");
    tch->add_option("--seed", env_seed, "environment, demonstrator and sampler seed");
    tch->add_option("--condition", condition_json, "stopping condition as JSON, e.g. {\"epsilon\":0.2}");
    tch->add_option("--format", format, "trace format")->check(CLI::IsMember({"csv", "json"}));

    auto* srv = app.add_subcommand("serve", "run the HTTP teaching service");
    std::optional<int> port;
    std::string host = "0.0.0.0", store;
    srv->add_option("--port", port, "listen port (default: SUFFICE_PORT or 8080)");
    srv->add_option("--host", host, "bind address");
    srv->add_option("--store", store, "session log file (JSON lines); empty keeps sessions in memory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*exp) return run_experiment(config_path, out_dir, jobs, seed, replicates, quiet);
        if (*gen) {
            std::cout << to_json(build_environment(kind, env_seed)).dump(2) << '\n';
            return 0;
        }
        if (*tch) return teach(kind, env_seed, condition_json, format);
        if (*srv) return serve(port, host, store);
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
