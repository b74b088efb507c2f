#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "icl_lab/assumptions.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/experiments.hpp"
#include "icl_lab/serialization.hpp"
#include "icl_lab/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Status : int {
  kOk = 0,
  kFailed = 1,
  kUsage = 2,
  kSchema = 3,
  kRefused = 4,
};

struct Invocation {
  std::string subcommand;
  std::string config_path;
  std::string out_dir = "icl-lab-out";
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) icl::fail(icl::ErrorKind::Io, "cannot write " + path.string());
}

class Run {
 public:
  Run(Invocation inv, icl::ExperimentConfig config)
      : inv_(std::move(inv)), config_(std::move(config)), out_(inv_.out_dir) {}

  void record(const icl::Artifacts& artifacts) {
    for (const auto& p : icl::write_artifacts(out_, artifacts)) files_.push_back(p);
    if (inv_.verbosity >= 2) {
      std::cerr << artifacts.summary.dump(2) << "\n";
    } else if (inv_.verbosity == 1 && artifacts.summary.contains("verdicts")) {
      std::cerr << artifacts.name << ": " << artifacts.summary["verdicts"].dump() << "\n";
    }
  }

  void record_text(const std::string& name, const std::string& text) {
    const fs::path path = out_ / name;
    write_file(path, text);
    files_.push_back(path);
  }

  const icl::ExperimentConfig& config() const { return config_; }
  const Invocation& invocation() const { return inv_; }

  // Deterministic manifest; the wall time goes to a separate file so reruns
  // leave every artifact byte-identical.
  void finish(double seconds) {
    json files = json::array();
    for (const auto& p : files_) {
      files.push_back({{"path", p.filename().string()}, {"sha256", icl::sha256_hex(read_file(p))}});
    }
    json manifest = {
        {"subcommand", inv_.subcommand},
        {"config_hash", icl::config_hash(config_)},
        {"config", icl::config_to_json(config_)},
        {"seed", config_.seed},
        {"seed_override", inv_.seed.has_value()},
        {"versions",
         {{"icl_lab", icl::kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}}},
        {"files", files},
        {"timing", "timing.json"},
    };
    write_file(out_ / "manifest.json", manifest.dump(2) + "\n");
    write_file(out_ / "timing.json", json{{"wall_seconds", seconds}}.dump(2) + "\n");
  }

 private:
  Invocation inv_;
  icl::ExperimentConfig config_;
  fs::path out_;
  std::vector<fs::path> files_;
};

int dispatch(Run& run) {
  const auto& config = run.config();
  const std::string& sub = run.invocation().subcommand;
  if (sub == "generate-hmm") {
    const icl::Hmm hmm = icl::resolve_hmm(config);
    std::ostringstream text;
    icl::write_hmm(text, hmm);
    run.record_text("hmm.txt", text.str());
  } else if (sub == "check-assumptions") {
    const icl::Hmm hmm = icl::resolve_hmm(config);
    const icl::AssumptionReport report = icl::check_assumptions(hmm, config.assumption_config());
    json doc = {{"config_hash", icl::config_hash(config)}, {"assumptions", icl::to_json(report)}};
    run.record_text("assumptions.json", doc.dump(2) + "\n");
    run.record_text("assumptions.txt", icl::report_table(report));
    if (run.invocation().verbosity >= 1) std::cerr << icl::report_table(report);
  } else if (sub == "run-agreement") {
    run.record(icl::run_agreement(config).artifacts);
  } else if (sub == "run-identity") {
    run.record(icl::run_identity_check(config).artifacts);
  } else if (sub == "run-hoeffding") {
    run.record(icl::run_hoeffding_check(config).artifacts);
  } else if (sub == "run-concentration") {
    run.record(icl::run_concentration_check(config).artifacts);
  } else if (sub == "run-ablation") {
    switch (config.ablation.kind) {
      case icl::AblationKind::None:
        icl::fail(icl::ErrorKind::Schema,
                  "/ablation/kind: run-ablation needs retrieval | label_permute | ood");
      case icl::AblationKind::Retrieval:
        run.record(icl::run_retrieval_ablation(config).artifacts);
        break;
      case icl::AblationKind::LabelPermute:
        run.record(icl::run_label_permutation(config).artifacts);
        break;
      case icl::AblationKind::Ood:
        run.record(icl::run_ood_ablation(config).artifacts);
        break;
    }
  } else if (sub == "verify-eq2") {
    const icl::Eq2Report report = icl::run_eq2_check(config);
    run.record(report.artifacts);
    std::cout << "max relative deviation " << icl::format_real(report.max_relative_deviation)
              << " over " << report.sequences << " sequences on " << report.models
              << " models\n";
    if (!(report.max_relative_deviation <= 1e-10)) return kFailed;
  }
  return kOk;
}

int status_for(icl::ErrorKind kind) {
  switch (kind) {
    case icl::ErrorKind::Schema: return kSchema;
    case icl::ErrorKind::AssumptionRefusal: return kRefused;
    default: return kFailed;
  }
}

void write_error(const fs::path& dir, const icl::Error& e, int status) {
  json doc = {{"kind", std::string(icl::to_string(e.kind()))},
              {"message", e.what()},
              {"exit_status", status}};
  if (const auto* refused = dynamic_cast<const icl::AssumptionRefused*>(&e)) {
    doc["assumptions"] = icl::to_json(refused->report());
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream(dir / "error.json", std::ios::binary) << doc.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  Invocation inv;
  CLI::App app{"Synthetic in-context learning laboratory: Bayesian vs kernel-regression prediction "
               "on task-mixture HMMs"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", inv.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", inv.out_dir, "Output directory (created if absent)");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { inv.seed = s; }, "Override the config root seed");
  app.add_flag("-v", inv.verbosity, "Verbose output (-vv for more)");

  const std::vector<std::pair<std::string, std::string>> subcommands = {
      {"generate-hmm", "Write the configured model to hmm.txt"},
      {"check-assumptions", "Measure every assumption parameter and the sample-size threshold"},
      {"run-agreement", "Bayes vs kernel argmax agreement over the n grid"},
      {"run-identity", "Monte-Carlo check of the moment identity behind the kernel form"},
      {"run-hoeffding", "Coverage of the kernel-average error envelope"},
      {"run-concentration", "Task-posterior mass against its lower bound"},
      {"run-ablation", "Retrieval, label-permutation or OOD ablation (config ablation.kind)"},
      {"verify-eq2", "Operator-product vs forward likelihood on random models"},
  };
  for (const auto& [name, help] : subcommands) {
    app.add_subcommand(name, help)->callback([&inv, name = name] { inv.subcommand = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    icl::ExperimentConfig config;
    if (!inv.config_path.empty()) config = icl::load_config(inv.config_path);
    if (inv.seed) config.seed = *inv.seed;
    fs::create_directories(inv.out_dir);
    Run run(inv, config);
    const int status = dispatch(run);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    run.finish(seconds);
    return status;
  } catch (const icl::Error& e) {
    const int status = status_for(e.kind());
    std::cerr << "icl-lab: " << icl::to_string(e.kind()) << " error: " << e.what() << "\n";
    write_error(inv.out_dir, e, status);
    return status;
  } catch (const std::exception& e) {
    std::cerr << "icl-lab: " << e.what() << "\n";
    write_error(inv.out_dir, icl::Error(icl::ErrorKind::Io, e.what()), kFailed);
    return kFailed;
  }
}
