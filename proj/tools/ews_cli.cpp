// ews: command-line front end over the C API.
#include <csignal>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ews/ews.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitMissingArtifact = 2;
constexpr int kExitStaleArtifact = 3;
constexpr int kExitUsage = 4;

int exit_code(ews_status s) {
  switch (s) {
    case EWS_OK: return 0;
    case EWS_ERR_MISSING_ARTIFACT: return kExitMissingArtifact;
    case EWS_ERR_STALE_ARTIFACT: return kExitStaleArtifact;
    case EWS_ERR_CONFIG:
    case EWS_ERR_INVALID_ARGUMENT: return kExitUsage;
    default: return kExitFailure;
  }
}

int report(ews_status s, const std::string& context) {
  if (s == EWS_OK) return 0;
  std::cerr << "ews " << context << ": " << ews_status_name(s) << " error: " << ews_last_error() << "\n";
  if (s == EWS_ERR_STALE_ARTIFACT || s == EWS_ERR_MISSING_ARTIFACT) {
    std::cerr << "hint: re-run the upstream stage named above, or `ews pipeline` to rebuild everything\n";
  }
  return exit_code(s);
}

struct Common {
  std::string config;
  std::string run_dir = "run";
  long long seed = -1;
  int jobs = 0;
  std::vector<std::string> sets;
};

struct PipelineHandle {
  ews_pipeline* p = nullptr;
  ~PipelineHandle() { ews_pipeline_close(p); }
};

ews_status open_pipeline(const Common& c, PipelineHandle& h) {
  ews_status s = ews_pipeline_open(c.config.empty() ? nullptr : c.config.c_str(), c.run_dir.c_str(), &h.p);
  if (s != EWS_OK) return s;
  if (c.seed >= 0) {
    s = ews_pipeline_set(h.p, "seed", std::to_string(c.seed).c_str());
    if (s != EWS_OK) return s;
  }
  if (c.jobs > 0) {
    s = ews_pipeline_set(h.p, "jobs", std::to_string(c.jobs).c_str());
    if (s != EWS_OK) return s;
  }
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "ews: --set expects key=value, got '" << kv << "'\n";
      return EWS_ERR_INVALID_ARGUMENT;
    }
    s = ews_pipeline_set(h.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != EWS_OK) return s;
  }
  return EWS_OK;
}

void print_owned(char* s) {
  if (s) {
    std::cout << s << "\n";
    ews_string_free(s);
  }
}

int run_stage(const Common& c, const std::string& stage, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  PipelineHandle h;
  ews_status s = open_pipeline(c, h);
  if (s != EWS_OK) return report(s, stage);
  for (const auto& [k, v] : extra) {
    s = ews_pipeline_set(h.p, k.c_str(), v.c_str());
    if (s != EWS_OK) return report(s, stage);
  }
  char* summary = nullptr;
  s = stage == "pipeline" ? ews_pipeline_run_all(h.p, &summary) : ews_pipeline_run(h.p, stage.c_str(), &summary);
  print_owned(summary);
  return report(s, stage);
}

int serve(const Common& c, std::string data_dir, std::string host, int port, const std::string& store,
          const std::string& types, std::string epoch) {
  PipelineHandle h;
  ews_status s = open_pipeline(c, h);
  if (s != EWS_OK) return report(s, "serve");
  char* cfg_text = nullptr;
  s = ews_pipeline_config_json(h.p, &cfg_text);
  if (s != EWS_OK) return report(s, "serve");
  const auto cfg = nlohmann::json::parse(cfg_text);
  ews_string_free(cfg_text);
  const auto& svc = cfg.at("service");
  if (data_dir.empty()) data_dir = c.run_dir;
  if (host.empty()) host = svc.at("host").get<std::string>();
  if (port < 0) port = svc.at("port").get<int>();
  if (epoch.empty()) epoch = svc.at("epoch").get<std::string>();

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ews_service* service = nullptr;
  s = ews_service_create(data_dir.c_str(), host.c_str(), port, store.empty() ? nullptr : store.c_str(),
                         types.empty() ? nullptr : types.c_str(), epoch.c_str(), &service);
  if (s != EWS_OK) return report(s, "serve");
  int bound = 0;
  s = ews_service_start(service, &bound);
  if (s != EWS_OK) {
    ews_service_free(service);
    return report(s, "serve");
  }
  std::cout << "serving " << data_dir << " on http://" << host << ":" << bound << "/api" << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  ews_service_stop(service);
  ews_service_free(service);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICU respiratory-failure early-warning toolkit"};
  app.require_subcommand(1);
  Common c;
  app.add_option("--config", c.config, "pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--run-dir", c.run_dir, "run directory holding stage artifacts")->capture_default_str();
  app.add_option("--seed", c.seed, "root seed (overrides config)")->check(CLI::NonNegativeNumber);
  app.add_option("--jobs", c.jobs, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  app.add_option("--set", c.sets, "config override key.path=json (repeatable)");
  app.fallthrough();

  int n_stays = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  synth->add_option("--n", n_stays, "number of stays")->check(CLI::PositiveNumber);
  app.add_subcommand("train-pao2", "train and evaluate the PaO2 estimators");
  app.add_subcommand("label", "P/F track, failure events and labels per stay");
  app.add_subcommand("featurize", "feature matrix and cohort splits");
  app.add_subcommand("train-ews", "train the EWS and the clinical baselines per split");
  app.add_subcommand("evaluate", "event-based PR, time-point ROC, alarm timing, plots");
  app.add_subcommand("pipeline", "run every stage in order");
  auto* srv = app.add_subcommand("serve", "HTTP API for the ICU monitor");
  std::string data_dir, host, store, types, epoch;
  int port = -1;
  srv->add_option("--data-dir", data_dir, "run directory to serve (default: --run-dir)");
  srv->add_option("--host", host, "bind address");
  srv->add_option("--port", port, "port; 0 picks a free one")->check(CLI::Range(0, 65535));
  srv->add_option("--annotation-store", store, "annotation directory (default: <data-dir>/annotations)");
  srv->add_option("--annotation-types", types, "annotation type registry JSON")->check(CLI::ExistingFile);
  srv->add_option("--epoch", epoch, "ISO-8601 admission epoch for timestamps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (name == "synth") {
      std::vector<std::pair<std::string, std::string>> extra;
      if (n_stays > 0) extra.emplace_back("scenario.n_stays", std::to_string(n_stays));
      return run_stage(c, "synth", extra);
    }
    if (name == "serve") return serve(c, data_dir, host, port, store, types, epoch);
    return run_stage(c, name);
  } catch (const std::exception& e) {
    std::cerr << "ews " << name << ": " << e.what() << "\n";
    return kExitFailure;
  }
}
