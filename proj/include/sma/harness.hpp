#pragma once

// Everything between the interpreter and the command line: loading programs,
// instrumenting and running them under one configuration, judging attack
// goals, and serializing run reports. The corpus side reads a manifest that
// lists programs with a per-mode expectation table, so one command can assert
// the whole protection matrix.

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "executor.hpp"
#include "ir_parse.hpp"
#include "ir_verify.hpp"
#include "pass.hpp"

namespace sma {

using ordered_json = nlohmann::ordered_json;

// Attack entries carry their class so corpus aggregates can separate
// object-granularity attacks (which bounded pointers should stop) from
// sub-object ones (which they cannot see).
enum class Category {
  Benign,
  OverflowWrite,
  OverflowRead,
  Underflow,
  AdjacentCorruption,
  SubObject,
  Tolerance,
};

inline const char* category_name(Category c) {
  switch (c) {
  case Category::Benign: return "benign";
  case Category::OverflowWrite: return "overflow_write";
  case Category::OverflowRead: return "overflow_read";
  case Category::Underflow: return "underflow";
  case Category::AdjacentCorruption: return "adjacent_corruption";
  case Category::SubObject: return "sub_object";
  default: return "tolerance";
  }
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (Category c : {Category::Benign, Category::OverflowWrite,
                     Category::OverflowRead, Category::Underflow,
                     Category::AdjacentCorruption, Category::SubObject,
                     Category::Tolerance})
    if (s == category_name(c))
      return c;
  return std::nullopt;
}

inline bool is_attack(Category c) {
  return c != Category::Benign && c != Category::Tolerance;
}

// What an attack is trying to achieve. Evaluated against the final machine
// state, so a run that trapped halfway still gets judged on what it changed.
struct Goal {
  enum class Kind { None, ObjectByte, OutputContains, ExitCode, Crash };
  Kind kind = Kind::None;
  std::string global;     // ObjectByte: non-empty selects a global by name
  size_t alloc_index = 0; // ObjectByte: else an index into the allocation log
  u64 offset = 0;
  u8 byte = 0;
  std::string text; // OutputContains
  u64 code = 0;     // ExitCode
};

struct RunConfig {
  Mode mode = Mode::Saturate;
  CodecKind codec = CodecKind::Buddy;
  bool address_tagging = false;
  u64 step_budget = 100000000;
  bool collect_stats = false;
};

struct RunReport {
  std::string program;
  RunConfig cfg;
  ExecOutcome outcome;
  FragReport frag;
  std::vector<ObjectRecord> objects;
  std::string verdict; // "Blocked", "Succeeded", or "NotApplicable"
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool eval_goal(const Goal& g, const Executor& ex, const ExecOutcome& out) {
  switch (g.kind) {
  case Goal::Kind::ObjectByte: {
    u64 base = 0;
    if (!g.global.empty()) {
      base = ex.global_base(g.global);
      if (base == 0)
        return false;
    } else {
      if (g.alloc_index >= ex.runtime_allocs().size())
        return false;
      base = ex.runtime_allocs()[g.alloc_index].base;
    }
    return ex.memory().read(base + g.offset, 1) == g.byte;
  }
  case Goal::Kind::OutputContains:
    return out.output.find(g.text) != std::string::npos;
  case Goal::Kind::ExitCode:
    return out.status == ExecStatus::Exited && out.exit_code == g.code;
  case Goal::Kind::Crash:
    // Denial of service. A trap is a controlled abort and counts as blocked;
    // only an uncontrolled fault gives the attacker the crash they wanted.
    return out.status == ExecStatus::Segfault;
  default:
    return false;
  }
}

// Parse, validate, instrument, audit, and execute one program. Throws
// sma::Error subclasses when the program itself is unusable; execution
// failures are not exceptions, they land in the report's outcome.
inline RunReport run_single(const std::string& name, const std::string& text,
                            const RunConfig& cfg, const std::string& input = {},
                            const Goal& goal = {}) {
  ParseResult pr = parse_ir(text);
  if (!pr.ok())
    throw Error(name + ": " + to_string(pr.error));
  IrProgram prog = std::move(*pr.program);
  auto diags = validate(prog);
  if (!diags.empty()) {
    std::string msg = name + ": invalid program";
    for (const auto& d : diags)
      msg += "\n  " + to_string(d);
    throw Error(msg);
  }
  const PassConfig pass_cfg{cfg.mode, cfg.codec, cfg.address_tagging};
  instrument(prog, pass_cfg);
  auto audit = verify_instrumented(prog, pass_cfg);
  if (!audit.empty()) {
    std::string msg = name + ": instrumentation audit failed";
    for (const auto& p : audit)
      msg += "\n  " + p;
    throw PassError(msg);
  }
  diags = validate(prog);
  if (!diags.empty()) {
    std::string msg = name + ": instrumented program is invalid";
    for (const auto& d : diags)
      msg += "\n  " + to_string(d);
    throw PassError(msg);
  }

  Executor ex(prog, ExecConfig{cfg.mode, cfg.codec, cfg.address_tagging, cfg.step_budget},
              input);
  RunReport r;
  r.program = name;
  r.cfg = cfg;
  r.outcome = ex.run();
  r.frag = ex.memory().fragmentation();
  r.objects = ex.memory().objects();
  if (goal.kind == Goal::Kind::None)
    r.verdict = "NotApplicable";
  else
    r.verdict = eval_goal(goal, ex, r.outcome) ? "Succeeded" : "Blocked";
  return r;
}

inline ordered_json stats_json(const ExecStats& s) {
  ordered_json j;
  j["instrs_total"] = s.instrs_total;
  j["checks_executed"] = s.checks_executed;
  j["masks_executed"] = s.masks_executed;
  j["corrections_overflow"] = s.corrections_overflow;
  j["corrections_underflow"] = s.corrections_underflow;
  j["oob_writes_redirected"] = s.oob_writes_redirected;
  j["oob_reads_redirected"] = s.oob_reads_redirected;
  return j;
}

inline ordered_json report_json(const RunReport& r) {
  ordered_json j;
  j["program"] = r.program;
  j["mode"] = mode_name(r.cfg.mode);
  j["codec"] = codec_name(r.cfg.codec);
  j["address_tagging"] = r.cfg.address_tagging;
  j["status"] = exec_status_name(r.outcome.status);
  if (r.outcome.status == ExecStatus::Exited)
    j["exit_code"] = r.outcome.exit_code;
  else
    j["exit_code"] = nullptr;
  if (r.cfg.collect_stats)
    j["stats"] = stats_json(r.outcome.stats);
  else
    j["stats"] = nullptr;
  ordered_json frag;
  frag["aggregate_ratio"] = r.frag.aggregate;
  frag["objects"] = ordered_json::array();
  for (const auto& o : r.objects) {
    ordered_json e;
    e["id"] = o.id;
    e["region"] = region_name(o.region);
    e["requested"] = o.requested;
    e["rounded"] = o.rounded;
    e["live"] = o.live;
    e["ratio"] = o.requested ? double(o.rounded) / double(o.requested) : 1.0;
    frag["objects"].push_back(std::move(e));
  }
  j["fragmentation"] = std::move(frag);
  j["verdict"] = r.verdict;
  return j;
}

// ---- corpus manifest ----

struct ModeExpectation {
  std::string verdict;
  std::string status;
  std::optional<u64> exit_code;
  std::optional<std::string> output;
};

struct CorpusEntry {
  std::string name;
  std::string file; // relative to the manifest's directory
  Category category = Category::Benign;
  std::string input;
  Goal goal;
  std::vector<std::pair<Mode, ModeExpectation>> expected;
};

struct CorpusManifest {
  std::string dir;
  std::vector<CorpusEntry> entries;
};

namespace detail {

inline Goal goal_from_json(const nlohmann::json& j, const std::string& where) {
  Goal g;
  const std::string kind = j.value("kind", "");
  if (kind == "object_byte") {
    g.kind = Goal::Kind::ObjectByte;
    if (j.contains("global"))
      g.global = j.at("global").get<std::string>();
    else
      g.alloc_index = j.at("alloc_index").get<size_t>();
    g.offset = j.value("offset", 0ull);
    g.byte = u8(j.at("equals").get<u64>());
  } else if (kind == "output_contains") {
    g.kind = Goal::Kind::OutputContains;
    g.text = j.at("text").get<std::string>();
  } else if (kind == "exit_code") {
    g.kind = Goal::Kind::ExitCode;
    g.code = j.at("equals").get<u64>();
  } else if (kind == "crash") {
    g.kind = Goal::Kind::Crash;
  } else {
    throw IoError(where + ": unknown goal kind '" + kind + "'");
  }
  return g;
}

} // namespace detail

inline CorpusManifest load_manifest(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  CorpusManifest m;
  const auto slash = path.find_last_of('/');
  m.dir = slash == std::string::npos ? "." : path.substr(0, slash);
  try {
    for (const auto& pj : j.at("programs")) {
      CorpusEntry e;
      e.name = pj.at("name").get<std::string>();
      e.file = pj.at("file").get<std::string>();
      auto cat = parse_category(pj.at("category").get<std::string>());
      if (!cat)
        throw IoError(e.name + ": unknown category");
      e.category = *cat;
      e.input = pj.value("input", "");
      if (pj.contains("goal") && !pj.at("goal").is_null())
        e.goal = detail::goal_from_json(pj.at("goal"), e.name);
      if (pj.contains("expected")) {
        for (const auto& [key, ej] : pj.at("expected").items()) {
          auto mode = parse_mode(key);
          if (!mode)
            throw IoError(e.name + ": unknown mode '" + key + "' in expected table");
          ModeExpectation ex;
          ex.verdict = ej.at("verdict").get<std::string>();
          ex.status = ej.at("status").get<std::string>();
          if (ej.contains("exit_code") && !ej.at("exit_code").is_null())
            ex.exit_code = ej.at("exit_code").get<u64>();
          if (ej.contains("output"))
            ex.output = ej.at("output").get<std::string>();
          e.expected.emplace_back(*mode, std::move(ex));
        }
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed manifest: " + e.what());
  }
  return m;
}

// Corpus-level outcome summary. Object-granularity attacks are every attack
// class except SubObject; those are the ones bounded pointers claim to stop.
struct CorpusAggregates {
  int object_attack_runs = 0;
  int object_attack_blocked = 0;
  std::vector<std::string> sub_object_succeeded; // entry names, deduplicated
  int tolerance_runs = 0;
  int tolerance_completed = 0; // runs that reached Exited
};

struct CorpusRun {
  std::vector<RunReport> reports;
  std::vector<std::string> mismatches;
  CorpusAggregates agg;
  int programs = 0;
};

struct CorpusOptions {
  CodecKind codec = CodecKind::Buddy;
  bool address_tagging = false;
  std::vector<Mode> modes = {Mode::Saturate, Mode::FailStop, Mode::Oblivious, Mode::Off};
  bool collect_stats = false;
  u64 step_budget = 100000000;
  std::string filter; // substring on the program name; empty keeps everything
};

inline CorpusRun run_corpus(const CorpusManifest& m, const CorpusOptions& opt) {
  CorpusRun result;
  for (const auto& e : m.entries) {
    if (!opt.filter.empty() && e.name.find(opt.filter) == std::string::npos)
      continue;
    ++result.programs;
    const std::string text = read_file(m.dir + "/" + e.file);
    for (Mode mode : opt.modes) {
      RunConfig cfg{mode, opt.codec, opt.address_tagging, opt.step_budget, opt.collect_stats};
      RunReport r = run_single(e.name, text, cfg, e.input, e.goal);
      const ModeExpectation* want = nullptr;
      for (const auto& [em, ex] : e.expected)
        if (em == mode)
          want = &ex;
      if (want) {
        auto complain = [&](const std::string& what) {
          result.mismatches.push_back(e.name + " [" + mode_name(mode) + "]: " + what);
        };
        if (want->verdict != r.verdict)
          complain("expected verdict " + want->verdict + ", got " + r.verdict);
        if (want->status != exec_status_name(r.outcome.status))
          complain("expected status " + want->status + ", got " +
                   exec_status_name(r.outcome.status) +
                   (r.outcome.reason.empty() ? "" : " (" + r.outcome.reason + ")"));
        if (want->exit_code && (r.outcome.status != ExecStatus::Exited ||
                                r.outcome.exit_code != *want->exit_code))
          complain("expected exit code " + std::to_string(*want->exit_code));
        if (want->output && r.outcome.output != *want->output)
          complain("output differs from the expected text");
      }
      if (is_attack(e.category) && e.category != Category::SubObject) {
        ++result.agg.object_attack_runs;
        if (r.verdict == "Blocked")
          ++result.agg.object_attack_blocked;
      }
      if (e.category == Category::SubObject && r.verdict == "Succeeded") {
        auto& names = result.agg.sub_object_succeeded;
        if (std::find(names.begin(), names.end(), e.name) == names.end())
          names.push_back(e.name);
      }
      if (e.category == Category::Tolerance) {
        ++result.agg.tolerance_runs;
        if (r.outcome.status == ExecStatus::Exited)
          ++result.agg.tolerance_completed;
      }
      result.reports.push_back(std::move(r));
    }
  }
  return result;
}

inline ordered_json corpus_json(const std::string& manifest_path, const CorpusRun& run,
                                const CorpusOptions& opt) {
  ordered_json j;
  j["manifest"] = manifest_path;
  j["codec"] = codec_name(opt.codec);
  j["address_tagging"] = opt.address_tagging;
  j["programs"] = run.programs;
  j["runs"] = ordered_json::array();
  for (const auto& r : run.reports)
    j["runs"].push_back(report_json(r));
  ordered_json agg;
  if (run.agg.object_attack_runs)
    agg["block_rate"] = double(run.agg.object_attack_blocked) /
                        double(run.agg.object_attack_runs);
  else
    agg["block_rate"] = nullptr;
  agg["sub_object_succeeded"] = run.agg.sub_object_succeeded;
  if (run.agg.tolerance_runs)
    agg["tolerance_completion_rate"] =
        double(run.agg.tolerance_completed) / double(run.agg.tolerance_runs);
  else
    agg["tolerance_completion_rate"] = nullptr;
  j["aggregates"] = std::move(agg);
  j["mismatches"] = ordered_json::array();
  for (const auto& mm : run.mismatches)
    j["mismatches"].push_back(mm);
  return j;
}

// Exit code the CLI uses for one executed program, mirroring how a real
// process would surface each outcome.
inline int outcome_exit_code(const ExecOutcome& out) {
  switch (out.status) {
  case ExecStatus::Exited: return int(out.exit_code & 0xFF);
  case ExecStatus::Trapped: return 101;
  default: return 139;
  }
}

} // namespace sma
