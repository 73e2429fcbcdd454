// Command-line front end: one subcommand per run mode.
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "condcap/app.hpp"
#include "condcap/error.hpp"

namespace {

void print_summary(const condcap::RunReport& report, std::ostream& os) {
  const auto& res = report.results;
  os << "mode " << res.value("mode", std::string()) << "  config " << report.config_hash << "\n";
  if (res.contains("solve")) {
    const auto& s = res["solve"];
    os << "  capacity " << s["capacity"] << "  iterations " << s["iterations"]
       << "  worst-case gap " << s["worst_case_gap"] << "\n  constants " << s["constants"].dump()
       << "  (sum " << s["sum_constants"] << ")\n";
  }
  if (res.contains("certificate"))
    os << "  dual gap " << res["certificate"]["gap"] << "  support residual "
       << res["certificate"]["support_residual"] << " (" << res["certificate"]["ladder"].get<std::string>()
       << " ladder)\n";
  if (res.contains("dual_direct") && res["dual_direct"].contains("dual_energy"))
    os << "  direct dual energy " << res["dual_direct"]["dual_energy"] << "  gap "
       << res["dual_direct"]["gap"] << "\n";
  if (res.contains("oracle"))
    os << "  oracle " << res["oracle"]["name"].get<std::string>() << " capacity "
       << res["oracle"]["capacity"] << "  relative error "
       << res["oracle"]["capacity_relative_error"] << "\n";
  if (res.contains("exhaust")) {
    os << "  stage capacities";
    for (const auto& st : res["exhaust"]["stages"]) os << " " << st["capacity"];
    os << "  nondecreasing " << res["exhaust"]["nondecreasing"] << "\n";
  }
  if (res.contains("escape")) {
    os << "  beyond " << res["escape"]["reference_radius"] << ":";
    for (const auto& st : res["escape"]["stages"]) os << " " << st["beyond_fraction"].dump();
    os << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Condenser capacities by discrete minimum-energy problems"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::string formats_arg;
  std::optional<long long> seed_override;
  bool quiet = false;

  for (const char* name : {"solve", "dual", "exhaust", "oracle-compare", "escape"}) {
    CLI::App* sub = app.add_subcommand(name, std::string("run in ") + name + " mode");
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (default: config, then $" +
                                          std::string(condcap::kOutDirEnv) + ", then .)");
    sub->add_option("--format", formats_arg, "comma-separated subset of json,csv");
    sub->add_option("--seed-override", seed_override, "replace plate and solver seeds")
        ->check(CLI::NonNegativeNumber);
    sub->add_flag("--quiet", quiet, "no summary on stdout");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : condcap::exit_code(condcap::ErrorCategory::configuration);
  }

  try {
    condcap::RunConfig config = condcap::load_config(config_path);
    config.mode = condcap::parse_mode(app.get_subcommands().front()->get_name());
    if (seed_override) condcap::apply_seed_override(config, std::uint64_t(*seed_override));
    if (!formats_arg.empty()) {
      config.formats.clear();
      std::string item;
      std::istringstream in(formats_arg);
      while (std::getline(in, item, ',')) {
        if (item != "json" && item != "csv")
          throw condcap::ConfigError("--format accepts json and csv, got '" + item + "'");
        config.formats.push_back(item);
      }
    }
    const condcap::RunReport report = condcap::run(config);
    const auto files = condcap::export_report(report, config.formats,
                                              condcap::resolve_output_dir(config, out_dir));
    if (!quiet) {
      print_summary(report, std::cout);
      for (const auto& p : files.paths) std::cout << "  wrote " << p.string() << "\n";
    }
    return 0;
  } catch (const condcap::Error& e) {
    std::cerr << "error (" << condcap::to_string(e.category()) << "): " << e.what() << "\n";
    return condcap::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
