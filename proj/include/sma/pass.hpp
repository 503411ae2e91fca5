#pragma once

// Bounds instrumentation pass. Takes a validated program and rewrites it so
// every memory access goes through an explicit check instruction:
//
//   %v = load 4, %p        =>   %e1 = ebase %bp
//                               %e2 = ebound %bp
//                               %m  = mask %p    (elided under address tagging)
//                               %c  = saturate.load %m, %e1, %e2, 4
//                               %v  = load 4, %c
//
// where %bp is a pointer value carrying the tag that describes %p's object:
// the allocation it was derived from, the shadow slot of the global it names,
// or a parallel phi when the pointer itself came through a phi. Bounds travel
// in registers only; nothing the pass creates is ever stored to memory, so an
// attacker writing through a corrupted pointer cannot reach the metadata that
// will be used to check that same pointer.
//
// Pointers that leave the function are clamped at the call site (satptr or
// trapptr), and pointers observed as integers are stripped first, so tag bits
// never leak into arithmetic. Mode::Off keeps only the strip before each
// access that non-tagging hardware would need, which makes it the
// uninstrumented baseline the other modes are compared against.

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "ir.hpp"
#include "tag_codec.hpp"

namespace sma {

enum class Mode { Saturate, FailStop, Oblivious, Off };

inline const char* mode_name(Mode m) {
  switch (m) {
  case Mode::Saturate: return "saturate";
  case Mode::FailStop: return "failstop";
  case Mode::Oblivious: return "oblivious";
  default: return "off";
  }
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "saturate")
    return Mode::Saturate;
  if (s == "failstop")
    return Mode::FailStop;
  if (s == "oblivious")
    return Mode::Oblivious;
  if (s == "off")
    return Mode::Off;
  return std::nullopt;
}

inline const char* codec_name(CodecKind c) {
  return c == CodecKind::Buddy ? "buddy" : "floating";
}

inline std::optional<CodecKind> parse_codec(std::string_view s) {
  if (s == "buddy")
    return CodecKind::Buddy;
  if (s == "floating")
    return CodecKind::Floating;
  return std::nullopt;
}

struct PassConfig {
  Mode mode = Mode::Saturate;
  CodecKind codec = CodecKind::Buddy;
  bool address_tagging = false;
};

struct PassSummary {
  int shadow_globals = 0;
  int deref_checks = 0;
  int deref_masks = 0;
  int integer_masks = 0;
  int call_clamps = 0;
  int boundary_masks = 0; // byval and extern-call strips
  int base_phis = 0;
};

namespace detail {

constexpr std::string_view kPassPrefix = "__sma_";

inline bool pass_named(const std::string& name) {
  return name.size() >= kPassPrefix.size() &&
         std::string_view(name).substr(0, kPassPrefix.size()) == kPassPrefix;
}

inline std::string shadow_global_name(const std::string& global) {
  return std::string(kPassPrefix) + global;
}

inline Opcode deref_check_op(Mode m) {
  switch (m) {
  case Mode::Saturate: return Opcode::Saturate;
  case Mode::FailStop: return Opcode::TrapOob;
  default: return Opcode::Redirect;
  }
}

class FunctionInstrumenter {
public:
  FunctionInstrumenter(IrProgram& prog, IrFunction& fn, const PassConfig& cfg, PassSummary& sum)
      : prog_(prog), fn_(fn), cfg_(cfg), sum_(sum), inserts_(fn.blocks.size()) {
    for (const auto& p : fn_.params) {
      used_.insert(p.name);
      param_.insert(p.name);
    }
    for (size_t bi = 0; bi < fn_.blocks.size(); ++bi)
      for (size_t i = 0; i < fn_.blocks[bi].instrs.size(); ++i) {
        const auto& ins = fn_.blocks[bi].instrs[i];
        if (!ins.result.empty()) {
          used_.insert(ins.result);
          defs_[ins.result] = {bi, i};
        }
      }
  }

  void run() {
    // Global addresses are replaced by their shadow slots up front, so the
    // value the program works with is the tagged pointer itself and keeps
    // its bounds even when spilled to memory and reloaded.
    if (cfg_.mode != Mode::Off)
      for (auto& block : fn_.blocks)
        for (auto& ins : block.instrs)
          if (ins.op == Opcode::Gaddr &&
              prog_.find_global(detail::shadow_global_name(ins.sym))) {
            ins.op = Opcode::ShadowLoad;
            ins.sym = detail::shadow_global_name(ins.sym);
          }
    for (size_t bi = 0; bi < fn_.blocks.size(); ++bi) {
      auto& block = fn_.blocks[bi];
      for (size_t i = 0; i < block.instrs.size(); ++i) {
        // Instructions are only edited in place here; inserts are buffered
        // and spliced afterwards so positions stay stable during the sweep.
        IrInstr& ins = block.instrs[i];
        switch (ins.op) {
        case Opcode::Load:
          rewrite_access(ins, bi, i, /*addr_index=*/0, AccessKind::Load);
          break;
        case Opcode::Store:
          rewrite_access(ins, bi, i, /*addr_index=*/1, AccessKind::Store);
          break;
        case Opcode::PtrToInt:
          if (cfg_.mode != Mode::Off) {
            ins.args[0] = Operand::value(emit_mask(ins.args[0].name, bi, i));
            ++sum_.integer_masks;
          }
          break;
        case Opcode::Call:
          if (cfg_.mode != Mode::Off)
            clamp_call_args(ins, bi, i);
          break;
        case Opcode::CallExt:
          if (cfg_.mode != Mode::Off)
            strip_callext_args(ins, bi, i);
          break;
        default:
          break;
        }
      }
    }
    apply_inserts();
    reindex(fn_);
  }

private:
  IrProgram& prog_;
  IrFunction& fn_;
  const PassConfig& cfg_;
  PassSummary& sum_;
  std::unordered_set<std::string> used_;
  std::unordered_set<std::string> param_;
  std::unordered_map<std::string, std::pair<size_t, size_t>> defs_;
  std::unordered_map<std::string, std::string> base_memo_;
  std::vector<std::vector<std::pair<size_t, IrInstr>>> inserts_;
  u64 counter_ = 0;

  std::string fresh() {
    std::string name;
    do {
      name = std::string(kPassPrefix) + "t" + std::to_string(counter_++);
    } while (used_.count(name));
    used_.insert(name);
    return name;
  }

  void insert_before(size_t bi, size_t idx, IrInstr ins) {
    ins.synthetic = true;
    inserts_[bi].emplace_back(idx, std::move(ins));
  }

  IrInstr make_unary(Opcode op, std::string result, const std::string& arg) {
    IrInstr ins;
    ins.op = op;
    ins.result = std::move(result);
    ins.result_type = ValueType::Ptr;
    ins.args.push_back(Operand::value(arg));
    return ins;
  }

  std::string emit_mask(const std::string& value, size_t bi, size_t idx) {
    std::string name = fresh();
    insert_before(bi, idx, make_unary(Opcode::Mask, name, value));
    return name;
  }

  // Returns a value name whose run-time contents are the tagged pointer that
  // carries the bounds of `name`'s object, materializing shadow loads and
  // parallel phis as needed. The returned def dominates everything `name`'s
  // def dominates.
  std::string resolve_base(const std::string& name) {
    if (auto it = base_memo_.find(name); it != base_memo_.end())
      return it->second;
    if (param_.count(name)) {
      base_memo_[name] = name; // tagged at the call site
      return name;
    }
    auto def_it = defs_.find(name);
    if (def_it == defs_.end())
      throw PassError("no definition for %" + name + " in @" + fn_.name);
    auto [bi, idx] = def_it->second;
    IrInstr& def = fn_.blocks[bi].instrs[idx];
    switch (def.op) {
    case Opcode::Malloc:
    case Opcode::Alloca:
    case Opcode::IntToPtr:
    case Opcode::TagPtr:
    case Opcode::ShadowLoad:
    case Opcode::Call:
    case Opcode::CallExt:
    case Opcode::Load: // reloaded spill: the tag travelled through memory
    case Opcode::SatPtr:
    case Opcode::TrapPtr:
    case Opcode::Saturate:
    case Opcode::TrapOob:
    case Opcode::Redirect:
      base_memo_[name] = name;
      return name;
    case Opcode::PtrAdd:
    case Opcode::Cast:
    case Opcode::Mask: {
      std::string base = resolve_base(def.args[0].name);
      base_memo_[name] = base;
      return base;
    }
    case Opcode::Gaddr:
      // Only reachable when the global has no shadow slot (the rewrite in
      // run() has already claimed the others); a bare address is unbounded.
      base_memo_[name] = name;
      return name;
    case Opcode::Phi: {
      std::string result = fresh();
      base_memo_[name] = result; // memoized first to break phi cycles
      IrInstr bp;
      bp.op = Opcode::Phi;
      bp.result = result;
      bp.result_type = ValueType::Ptr;
      for (const auto& arm : def.phi)
        bp.phi.push_back({arm.pred, Operand::value(resolve_base(arm.value.name)), -1});
      insert_before(bi, idx, std::move(bp));
      ++sum_.base_phis;
      return result;
    }
    default:
      throw PassError("%" + name + " is not a pointer-producing instruction");
    }
  }

  void rewrite_access(IrInstr& ins, size_t bi, size_t idx, size_t addr_index, AccessKind kind) {
    const std::string addr = ins.args[addr_index].name;
    if (cfg_.mode == Mode::Off) {
      if (!cfg_.address_tagging) {
        ins.args[addr_index] = Operand::value(emit_mask(addr, bi, idx));
        ++sum_.deref_masks;
      }
      return;
    }
    std::string base = resolve_base(addr);
    IrInstr e1 = make_unary(Opcode::EBase, fresh(), base);
    IrInstr e2 = make_unary(Opcode::EBound, fresh(), base);
    std::string lo = e1.result;
    std::string hi = e2.result;
    insert_before(bi, idx, std::move(e1));
    insert_before(bi, idx, std::move(e2));
    std::string checked_addr = addr;
    if (!cfg_.address_tagging) {
      checked_addr = emit_mask(addr, bi, idx);
      ++sum_.deref_masks;
    }
    IrInstr check;
    check.op = deref_check_op(cfg_.mode);
    check.result = fresh();
    check.result_type = ValueType::Ptr;
    check.access = kind;
    check.access_size = ins.access_size;
    check.args.push_back(Operand::value(checked_addr));
    check.args.push_back(Operand::value(lo));
    check.args.push_back(Operand::value(hi));
    std::string checked = check.result;
    insert_before(bi, idx, std::move(check));
    ins.args[addr_index] = Operand::value(checked);
    ++sum_.deref_checks;
  }

  void clamp_call_args(IrInstr& ins, size_t bi, size_t idx) {
    const IrFunction* callee = prog_.find_func(ins.sym);
    if (!callee)
      throw PassError("call to unknown function @" + ins.sym);
    for (size_t a = 0; a < ins.args.size() && a < callee->params.size(); ++a) {
      if (callee->params[a].type != ValueType::Ptr || !ins.args[a].is_value())
        continue;
      const std::string arg = ins.args[a].name;
      IrInstr clamp;
      clamp.op = cfg_.mode == Mode::FailStop ? Opcode::TrapPtr : Opcode::SatPtr;
      clamp.result = fresh();
      clamp.result_type = ValueType::Ptr;
      clamp.args.push_back(Operand::value(arg));
      clamp.args.push_back(Operand::value(resolve_base(arg)));
      std::string clamped = clamp.result;
      insert_before(bi, idx, std::move(clamp));
      ++sum_.call_clamps;
      if (callee->params[a].byval) {
        // The callee treats a byval buffer as an escaped raw copy, so hand it
        // a clean address rather than a tagged one.
        clamped = emit_mask(clamped, bi, idx);
        ++sum_.boundary_masks;
      }
      ins.args[a] = Operand::value(clamped);
    }
  }

  void strip_callext_args(IrInstr& ins, size_t bi, size_t idx) {
    const IrExtern* callee = prog_.find_extern(ins.sym);
    if (!callee)
      throw PassError("callext to unknown extern @" + ins.sym);
    for (size_t a = 0; a < ins.args.size() && a < callee->params.size(); ++a) {
      if (callee->params[a] != ValueType::Ptr || !ins.args[a].is_value())
        continue;
      ins.args[a] = Operand::value(emit_mask(ins.args[a].name, bi, idx));
      ++sum_.boundary_masks;
    }
  }

  void apply_inserts() {
    for (size_t bi = 0; bi < fn_.blocks.size(); ++bi) {
      if (inserts_[bi].empty())
        continue;
      auto& old = fn_.blocks[bi].instrs;
      std::vector<IrInstr> merged;
      merged.reserve(old.size() + inserts_[bi].size());
      for (size_t i = 0; i <= old.size(); ++i) {
        for (auto& [at, ins] : inserts_[bi])
          if (at == i)
            merged.push_back(std::move(ins));
        if (i < old.size())
          merged.push_back(std::move(old[i]));
      }
      old = std::move(merged);
    }
  }
};

} // namespace detail

// Adds one 8-byte shadow slot per global plus a constructor that fills each
// slot with the tagged address of its global. The run-time executes the
// constructor before @main; shadowload is then the bounds source for any
// pointer obtained through gaddr.
inline int add_shadow_globals(IrProgram& prog) {
  const size_t original_count = prog.globals.size();
  if (original_count == 0)
    return 0; // nothing to shadow, no constructor needed
  IrFunction ctor;
  ctor.name = std::string(detail::kPassPrefix) + "ctor";
  ctor.line = 0;
  if (prog.find_func(ctor.name))
    throw PassError("@" + ctor.name + " already exists");
  ctor.blocks.push_back({"entry", {}, 0});
  auto& body = ctor.blocks.back().instrs;
  for (size_t gi = 0; gi < original_count; ++gi) {
    // Copied out first: the push_back below may reallocate prog.globals.
    const std::string gname = prog.globals[gi].name;
    const u64 gsize = prog.globals[gi].size;
    const std::string shadow = detail::shadow_global_name(gname);
    if (prog.find_global(shadow))
      throw PassError("shadow slot @" + shadow + " collides with an existing global");
    IrGlobal sg;
    sg.name = shadow;
    sg.size = 8;
    sg.synthetic = true;
    prog.globals.push_back(std::move(sg));

    const std::string raw = std::string(detail::kPassPrefix) + "g" + std::to_string(gi);
    const std::string tagged = std::string(detail::kPassPrefix) + "p" + std::to_string(gi);
    IrInstr ga;
    ga.op = Opcode::Gaddr;
    ga.result = raw;
    ga.result_type = ValueType::Ptr;
    ga.sym = gname;
    IrInstr tp;
    tp.op = Opcode::TagPtr;
    tp.result = tagged;
    tp.result_type = ValueType::Ptr;
    tp.args.push_back(Operand::value(raw));
    tp.literal = gsize;
    IrInstr ss;
    ss.op = Opcode::ShadowStore;
    ss.sym = shadow;
    ss.args.push_back(Operand::value(tagged));
    body.push_back(std::move(ga));
    body.push_back(std::move(tp));
    body.push_back(std::move(ss));
  }
  IrInstr ret;
  ret.op = Opcode::Ret;
  body.push_back(std::move(ret));
  for (auto& ins : body)
    ins.synthetic = true;
  reindex(ctor);
  prog.funcs.push_back(std::move(ctor));
  return int(original_count);
}

// Rewrites the whole program for the given mode. The input must be valid and
// not previously instrumented; the output validates cleanly again.
inline PassSummary instrument(IrProgram& prog, const PassConfig& cfg) {
  for (const auto& g : prog.globals)
    if (detail::pass_named(g.name))
      throw PassError("program is already instrumented (global @" + g.name + ")");
  for (const auto& f : prog.funcs) {
    if (detail::pass_named(f.name))
      throw PassError("program is already instrumented (func @" + f.name + ")");
    for (const auto& b : f.blocks)
      for (const auto& ins : b.instrs) {
        if (is_check(ins.op))
          throw PassError("program is already instrumented (check on line " +
                          std::to_string(ins.line) + ")");
        if (!ins.result.empty() && detail::pass_named(ins.result))
          throw PassError("program is already instrumented (%" + ins.result + ")");
      }
  }

  PassSummary sum;
  const size_t user_funcs = prog.funcs.size(); // the ctor appends after these
  if (cfg.mode != Mode::Off)
    sum.shadow_globals = add_shadow_globals(prog);
  for (size_t fi = 0; fi < user_funcs; ++fi)
    detail::FunctionInstrumenter(prog, prog.funcs[fi], cfg, sum).run();
  renumber(prog);
  return sum;
}

// Structural audit of an instrumented program. Returns human-readable
// problems; empty means every access, integer observation, and call boundary
// is protected the way `cfg` demands.
inline std::vector<std::string> verify_instrumented(const IrProgram& prog, const PassConfig& cfg) {
  std::vector<std::string> problems;
  auto problem = [&](const std::string& fn, const std::string& what) {
    problems.push_back("@" + fn + ": " + what);
  };

  if (cfg.mode != Mode::Off) {
    bool any_shadowed = false;
    for (const auto& g : prog.globals) {
      if (g.synthetic || detail::pass_named(g.name))
        continue;
      any_shadowed = true;
      if (!prog.find_global(detail::shadow_global_name(g.name)))
        problems.push_back("global @" + g.name + " has no shadow slot");
    }
    if (any_shadowed && !prog.find_func(std::string(detail::kPassPrefix) + "ctor"))
      problems.push_back("missing shadow constructor");
  }

  const Opcode want_check = detail::deref_check_op(cfg.mode);
  for (const auto& fn : prog.funcs) {
    if (detail::pass_named(fn.name))
      continue;
    std::unordered_map<std::string, const IrInstr*> defs;
    for (const auto& b : fn.blocks)
      for (const auto& ins : b.instrs)
        if (!ins.result.empty())
          defs[ins.result] = &ins;
    auto def_op = [&](const Operand& o) -> const IrInstr* {
      if (!o.is_value())
        return nullptr;
      auto it = defs.find(o.name);
      return it == defs.end() ? nullptr : it->second;
    };

    for (const auto& b : fn.blocks) {
      for (const auto& ins : b.instrs) {
        if (ins.op == Opcode::Load || ins.op == Opcode::Store) {
          const Operand& addr = ins.args[ins.op == Opcode::Store ? 1 : 0];
          const IrInstr* d = def_op(addr);
          if (cfg.mode == Mode::Off) {
            if (!cfg.address_tagging && (!d || d->op != Opcode::Mask))
              problem(fn.name, "access on line " + std::to_string(ins.line) +
                                   " is not behind a strip");
            continue;
          }
          const AccessKind kind = ins.op == Opcode::Store ? AccessKind::Store : AccessKind::Load;
          if (!d || d->op != want_check || d->access != kind || d->access_size != ins.access_size) {
            problem(fn.name,
                    "access on line " + std::to_string(ins.line) + " is not behind a check");
            continue;
          }
          const IrInstr* lo = def_op(d->args[1]);
          const IrInstr* hi = def_op(d->args[2]);
          if (!lo || lo->op != Opcode::EBase || !hi || hi->op != Opcode::EBound ||
              !lo->args[0].same(hi->args[0]))
            problem(fn.name, "check on line " + std::to_string(ins.line) +
                                 " lacks a matched bounds pair");
          const IrInstr* in = def_op(d->args[0]);
          if (!cfg.address_tagging && (!in || in->op != Opcode::Mask))
            problem(fn.name, "check on line " + std::to_string(ins.line) +
                                 " takes an unstripped address");
          if (ins.op == Opcode::Store && ins.ptr_access && ins.args[0].is_value() &&
              detail::pass_named(ins.args[0].name))
            problem(fn.name, "bounds value spilled to memory on line " + std::to_string(ins.line));
        }
        if (cfg.mode == Mode::Off)
          continue;
        if (ins.op == Opcode::Gaddr && prog.find_global(detail::shadow_global_name(ins.sym)))
          problem(fn.name, "global address on line " + std::to_string(ins.line) +
                               " was not rewritten to its shadow slot");
        if (ins.op == Opcode::PtrToInt) {
          const IrInstr* d = def_op(ins.args[0]);
          if (!d || d->op != Opcode::Mask)
            problem(fn.name, "integer observation on line " + std::to_string(ins.line) +
                                 " is not stripped");
        }
        if (ins.op == Opcode::Call) {
          const IrFunction* callee = prog.find_func(ins.sym);
          if (!callee)
            continue;
          for (size_t a = 0; a < ins.args.size() && a < callee->params.size(); ++a) {
            if (callee->params[a].type != ValueType::Ptr)
              continue;
            const IrInstr* d = def_op(ins.args[a]);
            const Opcode want_clamp =
                cfg.mode == Mode::FailStop ? Opcode::TrapPtr : Opcode::SatPtr;
            if (callee->params[a].byval) {
              const IrInstr* m = d;
              d = m && m->op == Opcode::Mask ? def_op(m->args[0]) : nullptr;
              if (!m || m->op != Opcode::Mask || !d || d->op != want_clamp)
                problem(fn.name, "byval argument on line " + std::to_string(ins.line) +
                                     " is not clamped and stripped");
            } else if (!d || d->op != want_clamp) {
              problem(fn.name,
                      "pointer argument on line " + std::to_string(ins.line) + " is not clamped");
            }
          }
        }
        if (ins.op == Opcode::CallExt) {
          const IrExtern* callee = prog.find_extern(ins.sym);
          if (!callee)
            continue;
          for (size_t a = 0; a < ins.args.size() && a < callee->params.size(); ++a) {
            if (callee->params[a] != ValueType::Ptr)
              continue;
            const IrInstr* d = def_op(ins.args[a]);
            if (!d || d->op != Opcode::Mask)
              problem(fn.name, "external pointer argument on line " + std::to_string(ins.line) +
                                   " is not stripped");
          }
        }
      }
    }
  }
  return problems;
}

} // namespace sma
