// Command-line front end.
//
//   sma run <file.sir>      instrument one program and execute it
//   sma corpus <manifest>   run every corpus program across modes and compare
//                           against the manifest's expectation table
//   sma check <file.sir>    parse, validate, instrument, and audit only
//
// Exit codes: a run mirrors the program (exit code & 0xff, 101 on trap, 139
// on segfault). Bad flags, unreadable inputs, and invalid programs are all
// usage errors, exit 2; an unwritable report is an I/O error, exit 3; corpus
// expectation mismatches and internal instrumentation audit failures exit 1.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <sma/harness.hpp>

namespace {

// Raised for problems with what the user handed us (as opposed to a report
// we failed to write, or a defect in our own instrumentation).
struct UsageError {
  std::string msg;
};

std::string read_input_file(const std::string& path) {
  try {
    return sma::read_file(path);
  } catch (const sma::IoError& e) {
    throw UsageError{e.what()};
  }
}

std::string program_name(const std::string& path) {
  const auto slash = path.find_last_of('/');
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  if (base.size() > 4 && base.substr(base.size() - 4) == ".sir")
    base.resize(base.size() - 4);
  return base;
}

void emit_report(const sma::ordered_json& j, const std::string& dest) {
  if (dest.empty())
    return;
  const std::string text = j.dump(2) + "\n";
  if (dest == "-") {
    std::fputs(text.c_str(), stdout);
    return;
  }
  std::ofstream out(dest, std::ios::binary);
  if (!out)
    throw sma::IoError("cannot write " + dest);
  out << text;
}

struct CommonFlags {
  std::string mode = "saturate";
  std::string codec = "buddy";
  bool address_tagging = false;
  sma::u64 step_budget = 100000000;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--mode", f.mode, "protection mode")
      ->check(CLI::IsMember({"saturate", "failstop", "oblivious", "off"}));
  cmd->add_option("--codec", f.codec, "tagged-pointer bounds codec")
      ->check(CLI::IsMember({"buddy", "floating"}));
  cmd->add_flag("--address-tagging", f.address_tagging,
                "assume hardware ignores tag bits on access (elides strips)");
  cmd->add_option("--step-budget", f.step_budget, "instruction budget before trapping");
}

int do_run(const std::string& file, const CommonFlags& flags, bool stats,
           const std::string& input_path, const std::string& report_path) {
  const std::string text = read_input_file(file);
  const std::string input =
      input_path.empty() ? std::string() : read_input_file(input_path);
  sma::RunConfig cfg;
  cfg.mode = *sma::parse_mode(flags.mode);
  cfg.codec = *sma::parse_codec(flags.codec);
  cfg.address_tagging = flags.address_tagging;
  cfg.step_budget = flags.step_budget;
  cfg.collect_stats = stats;
  sma::RunReport r = sma::run_single(program_name(file), text, cfg, input);
  if (!r.outcome.output.empty())
    std::fwrite(r.outcome.output.data(), 1, r.outcome.output.size(), stdout);
  if (r.outcome.status != sma::ExecStatus::Exited)
    std::fprintf(stderr, "%s: %s\n", sma::exec_status_name(r.outcome.status),
                 r.outcome.reason.c_str());
  emit_report(sma::report_json(r), report_path);
  return sma::outcome_exit_code(r.outcome);
}

int do_corpus(const std::string& manifest_path, const CommonFlags& flags, bool stats,
              const std::string& modes_csv, const std::string& filter,
              const std::string& report_path, bool quiet) {
  sma::CorpusOptions opt;
  opt.codec = *sma::parse_codec(flags.codec);
  opt.address_tagging = flags.address_tagging;
  opt.collect_stats = stats;
  opt.step_budget = flags.step_budget;
  opt.filter = filter;
  if (!modes_csv.empty()) {
    opt.modes.clear();
    std::string csv = modes_csv;
    while (!csv.empty()) {
      const auto comma = csv.find(',');
      const std::string tok = csv.substr(0, comma);
      csv = comma == std::string::npos ? std::string() : csv.substr(comma + 1);
      auto m = sma::parse_mode(tok);
      if (!m) {
        std::fprintf(stderr, "unknown mode '%s'\n", tok.c_str());
        return 2;
      }
      opt.modes.push_back(*m);
    }
  }
  sma::CorpusManifest manifest;
  try {
    manifest = sma::load_manifest(manifest_path);
  } catch (const sma::IoError& e) {
    throw UsageError{e.what()};
  }
  const sma::CorpusRun run = sma::run_corpus(manifest, opt);
  if (!quiet) {
    for (const auto& r : run.reports)
      std::printf("%-28s %-10s status=%-9s verdict=%s\n", r.program.c_str(),
                  sma::mode_name(r.cfg.mode), sma::exec_status_name(r.outcome.status),
                  r.verdict.c_str());
    std::printf("%d program(s), %zu run(s), %zu mismatch(es)\n", run.programs,
                run.reports.size(), run.mismatches.size());
  }
  for (const auto& mm : run.mismatches)
    std::fprintf(stderr, "mismatch: %s\n", mm.c_str());
  emit_report(sma::corpus_json(manifest_path, run, opt), report_path);
  return run.mismatches.empty() ? 0 : 1;
}

int do_check(const std::string& file, const CommonFlags& flags, bool dump) {
  const std::string text = read_input_file(file);
  sma::ParseResult pr = sma::parse_ir(text);
  if (!pr.ok()) {
    std::fprintf(stderr, "%s: %s\n", file.c_str(), sma::to_string(pr.error).c_str());
    return 2;
  }
  sma::IrProgram prog = std::move(*pr.program);
  auto diags = sma::validate(prog);
  if (!diags.empty()) {
    for (const auto& d : diags)
      std::fprintf(stderr, "%s: %s\n", file.c_str(), sma::to_string(d).c_str());
    return 2;
  }
  const sma::PassConfig cfg{*sma::parse_mode(flags.mode), *sma::parse_codec(flags.codec),
                            flags.address_tagging};
  sma::PassSummary sum;
  try {
    sum = sma::instrument(prog, cfg);
  } catch (const sma::PassError& e) {
    std::fprintf(stderr, "%s: %s\n", file.c_str(), e.what());
    return 1;
  }
  auto problems = sma::verify_instrumented(prog, cfg);
  for (const auto& p : problems)
    std::fprintf(stderr, "%s: audit: %s\n", file.c_str(), p.c_str());
  diags = sma::validate(prog);
  for (const auto& d : diags)
    std::fprintf(stderr, "%s: after instrumentation: %s\n", file.c_str(),
                 sma::to_string(d).c_str());
  if (!problems.empty() || !diags.empty())
    return 1;
  if (dump) {
    const std::string out = sma::pretty_print(prog);
    std::fwrite(out.data(), 1, out.size(), stdout);
  } else {
    std::printf("%s: ok (%d check(s), %d mask(s), %d shadow global(s), %d call clamp(s))\n",
                file.c_str(), sum.deref_checks, sum.deref_masks + sum.integer_masks,
                sum.shadow_globals, sum.call_clamps + sum.boundary_masks);
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"saturation memory access: instrument and run bounds-checked programs"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  std::string run_file, run_input, run_report;
  bool run_stats = false;
  auto* run = app.add_subcommand("run", "instrument one program and execute it");
  run->add_option("file", run_file, "program (.sir)")->required();
  add_common(run, run_flags);
  run->add_flag("--stats", run_stats, "include execution counters in the report");
  run->add_option("--input", run_input, "file whose bytes feed read_byte()");
  run->add_option("--report", run_report, "write a JSON run report here ('-' for stdout)");

  CommonFlags corpus_flags;
  std::string corpus_manifest, corpus_modes, corpus_filter, corpus_report;
  bool corpus_stats = false;
  bool corpus_quiet = false;
  auto* corpus = app.add_subcommand("corpus", "run a program corpus against its manifest");
  corpus->add_option("manifest", corpus_manifest, "manifest JSON")->required();
  add_common(corpus, corpus_flags);
  corpus->add_flag("--stats", corpus_stats, "include execution counters in reports");
  corpus->add_option("--modes", corpus_modes, "comma-separated mode list (default: all)");
  corpus->add_option("--filter", corpus_filter, "only programs whose name contains this");
  corpus->add_option("--report", corpus_report, "write the aggregate JSON report here");
  corpus->add_flag("--quiet", corpus_quiet, "suppress the per-run summary table");

  CommonFlags check_flags;
  std::string check_file;
  bool check_dump = false;
  auto* check = app.add_subcommand("check", "validate and audit without running");
  check->add_option("file", check_file, "program (.sir)")->required();
  add_common(check, check_flags);
  check->add_flag("--dump", check_dump, "print the instrumented program");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (run->parsed())
      return do_run(run_file, run_flags, run_stats, run_input, run_report);
    if (corpus->parsed())
      return do_corpus(corpus_manifest, corpus_flags, corpus_stats, corpus_modes,
                       corpus_filter, corpus_report, corpus_quiet);
    return do_check(check_file, check_flags, check_dump);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.msg.c_str());
    return 2;
  } catch (const sma::PassError& e) {
    // Our own instrumentation failed its audit; not the user's fault.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const sma::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const sma::Error& e) {
    // The program was unusable: parse or validation failure.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
