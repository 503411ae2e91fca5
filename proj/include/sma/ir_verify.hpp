#pragma once

// Semantic validation: name resolution, block structure, SSA dominance,
// typing, and call signatures. validate() mutates the program (slot and
// branch-target indices via reindex) and returns every problem it can find
// rather than stopping at the first.

#include <string>
#include <vector>

#include "ir.hpp"
#include "tag_codec.hpp"

namespace sma {

namespace detail {

// Dense bitset over block indices, for dominator sets.
class BlockSet {
public:
  explicit BlockSet(size_t n = 0) : bits_((n + 63) / 64, 0), n_(n) {}
  void fill() {
    for (auto& w : bits_)
      w = ~0ull;
  }
  void insert(size_t i) { bits_[i / 64] |= 1ull << (i % 64); }
  bool contains(size_t i) const { return (bits_[i / 64] >> (i % 64)) & 1; }
  bool intersect_with(const BlockSet& o) { // returns true when changed
    bool changed = false;
    for (size_t w = 0; w < bits_.size(); ++w) {
      u64 next = bits_[w] & o.bits_[w];
      changed |= next != bits_[w];
      bits_[w] = next;
    }
    return changed;
  }
  size_t size() const { return n_; }

private:
  std::vector<u64> bits_;
  size_t n_;
};

struct DefSite {
  bool is_param = false;
  int block = -1;
  int pos = -1;
  ValueType type = ValueType::I64;
};

class Validator {
public:
  explicit Validator(IrProgram& prog) : prog_(prog) {}

  std::vector<Diagnostic> run() {
    check_symbols();
    for (auto& fn : prog_.funcs)
      check_function(fn);
    check_main();
    return std::move(diags_);
  }

private:
  IrProgram& prog_;
  std::vector<Diagnostic> diags_;

  void diag(int line, std::string msg) { diags_.push_back({line, 0, std::move(msg)}); }

  void check_symbols() {
    for (const auto& g : prog_.globals)
      if (g.size > (1ull << MAX_EXPONENT))
        diag(g.line, "global @" + g.name + " exceeds the address space");
    for (size_t i = 0; i < prog_.globals.size(); ++i)
      for (size_t j = i + 1; j < prog_.globals.size(); ++j)
        if (prog_.globals[i].name == prog_.globals[j].name)
          diag(prog_.globals[j].line, "duplicate global @" + prog_.globals[j].name);
    for (size_t i = 0; i < prog_.funcs.size(); ++i)
      for (size_t j = i + 1; j < prog_.funcs.size(); ++j)
        if (prog_.funcs[i].name == prog_.funcs[j].name)
          diag(prog_.funcs[j].line, "duplicate function @" + prog_.funcs[j].name);
    for (size_t i = 0; i < prog_.externs.size(); ++i)
      for (size_t j = i + 1; j < prog_.externs.size(); ++j)
        if (prog_.externs[i].name == prog_.externs[j].name)
          diag(prog_.externs[j].line, "duplicate extern @" + prog_.externs[j].name);
    for (const auto& f : prog_.funcs)
      if (prog_.find_extern(f.name))
        diag(f.line, "@" + f.name + " declared both extern and func");
  }

  void check_main() {
    const IrFunction* main = prog_.find_func("main");
    if (!main) {
      diag(0, "program has no @main function");
      return;
    }
    if (!main->params.empty())
      diag(main->line, "@main takes no parameters");
  }

  void check_function(IrFunction& fn) {
    for (auto& d : reindex(fn))
      diags_.push_back(d);
    if (fn.blocks.empty()) {
      diag(fn.line, "@" + fn.name + " has no blocks");
      return;
    }

    // Call results take the callee's declared type before any type checking.
    for (auto& b : fn.blocks)
      for (auto& ins : b.instrs)
        if ((ins.op == Opcode::Call || ins.op == Opcode::CallExt) && !ins.result.empty()) {
          if (const IrFunction* f = prog_.find_func(ins.sym); f && f->ret)
            ins.result_type = *f->ret;
          else if (const IrExtern* e = prog_.find_extern(ins.sym); e && e->ret)
            ins.result_type = *e->ret;
        }

    // Block shape: one terminator, at the end; phis lead; entry has no phis.
    for (size_t bi = 0; bi < fn.blocks.size(); ++bi) {
      auto& b = fn.blocks[bi];
      if (b.instrs.empty() || !is_terminator(b.instrs.back().op)) {
        diag(b.instrs.empty() ? b.line : b.instrs.back().line,
             "block '" + b.label + "' does not end in br, brcond, or ret");
      }
      bool past_phis = false;
      for (size_t i = 0; i < b.instrs.size(); ++i) {
        const auto& ins = b.instrs[i];
        if (is_terminator(ins.op) && i + 1 != b.instrs.size())
          diag(ins.line, "terminator in the middle of block '" + b.label + "'");
        if (ins.op != Opcode::Phi)
          past_phis = true;
        else if (past_phis)
          diag(ins.line, "phi after non-phi instruction");
        else if (bi == 0)
          diag(ins.line, "phi in the entry block");
      }
    }

    // CFG, reachability, predecessors.
    const size_t n = fn.blocks.size();
    std::vector<std::vector<int>> preds(n);
    std::vector<std::vector<int>> succs(n);
    for (size_t bi = 0; bi < n; ++bi) {
      const auto& b = fn.blocks[bi];
      if (b.instrs.empty())
        continue;
      const auto& t = b.instrs.back();
      auto edge = [&](int to) {
        if (to < 0)
          return;
        succs[bi].push_back(to);
        for (int p : preds[to])
          if (p == int(bi))
            return; // brcond with equal targets: one edge
        preds[to].push_back(int(bi));
      };
      if (t.op == Opcode::Br)
        edge(t.target_index);
      if (t.op == Opcode::BrCond) {
        edge(t.target_index);
        edge(t.target2_index);
      }
    }
    std::vector<bool> reachable(n, false);
    std::vector<int> work{0};
    reachable[0] = true;
    while (!work.empty()) {
      int b = work.back();
      work.pop_back();
      for (int s : succs[b])
        if (!reachable[s]) {
          reachable[s] = true;
          work.push_back(s);
        }
    }
    for (size_t bi = 0; bi < n; ++bi)
      if (!reachable[bi])
        diag(fn.blocks[bi].line, "block '" + fn.blocks[bi].label + "' is unreachable");

    // Dominators (iterative), over reachable blocks only.
    std::vector<BlockSet> dom(n, BlockSet(n));
    for (size_t bi = 0; bi < n; ++bi)
      dom[bi].fill();
    dom[0] = BlockSet(n);
    dom[0].insert(0);
    bool changed = true;
    while (changed) {
      changed = false;
      for (size_t bi = 1; bi < n; ++bi) {
        if (!reachable[bi])
          continue;
        BlockSet next(n);
        next.fill();
        for (int p : preds[bi])
          if (reachable[p])
            next.intersect_with(dom[p]);
        next.insert(bi);
        if (dom[bi].intersect_with(next))
          changed = true;
      }
    }
    auto dominates = [&](int a, int b) { return dom[b].contains(size_t(a)); };

    // Definition sites and slot types.
    std::vector<DefSite> defs(size_t(fn.value_slots));
    for (const auto& p : fn.params)
      if (p.slot >= 0)
        defs[size_t(p.slot)] = {true, -1, -1, p.type};
    for (size_t bi = 0; bi < n; ++bi)
      for (size_t i = 0; i < fn.blocks[bi].instrs.size(); ++i) {
        const auto& ins = fn.blocks[bi].instrs[i];
        if (ins.result_slot >= 0)
          defs[size_t(ins.result_slot)] = {false, int(bi), int(i), ins.result_type};
      }

    auto type_of = [&](const Operand& o) {
      if (!o.is_value())
        return ValueType::I64;
      return o.slot >= 0 ? defs[size_t(o.slot)].type : ValueType::I64;
    };
    auto want = [&](const IrInstr& ins, size_t idx, ValueType t, const char* what) {
      if (idx >= ins.args.size())
        return;
      const Operand& o = ins.args[idx];
      if (o.is_value() && o.slot < 0)
        return; // undefined-value diagnostic already emitted by reindex
      if (t == ValueType::Ptr && !o.is_value()) {
        diag(ins.line, std::string(what) + " must be a pointer value, not a constant");
        return;
      }
      if (type_of(o) != t)
        diag(ins.line, std::string(what) + " must have type " + type_name(t));
    };

    // Per-instruction operand typing and symbol references.
    for (size_t bi = 0; bi < n; ++bi) {
      for (auto& ins : fn.blocks[bi].instrs)
        check_instr(fn, ins, int(bi), want, type_of);
    }

    // Phi arms must cover the predecessor set exactly.
    for (size_t bi = 0; bi < n; ++bi) {
      for (auto& ins : fn.blocks[bi].instrs) {
        if (ins.op != Opcode::Phi)
          continue;
        if (!reachable[bi])
          continue;
        for (int p : preds[bi]) {
          int hits = 0;
          for (const auto& arm : ins.phi)
            if (arm.pred_index == p)
              ++hits;
          if (hits != 1)
            diag(ins.line, "phi must name predecessor '" + fn.blocks[size_t(p)].label +
                               "' exactly once");
        }
        for (const auto& arm : ins.phi) {
          if (arm.pred_index < 0)
            continue;
          bool is_pred = false;
          for (int p : preds[bi])
            is_pred |= p == arm.pred_index;
          if (!is_pred)
            diag(ins.line, "phi arm names '" + arm.pred + "', which is not a predecessor");
        }
      }
    }

    // SSA dominance: every use is reached by its definition.
    for (size_t bi = 0; bi < n; ++bi) {
      if (!reachable[bi])
        continue;
      for (size_t i = 0; i < fn.blocks[bi].instrs.size(); ++i) {
        const auto& ins = fn.blocks[bi].instrs[i];
        auto check_use = [&](const Operand& o, int use_block, int use_pos, bool at_block_end) {
          if (!o.is_value() || o.slot < 0)
            return;
          const DefSite& d = defs[size_t(o.slot)];
          if (d.is_param)
            return;
          if (use_block < 0 || !reachable[size_t(use_block)])
            return;
          bool ok;
          if (at_block_end)
            ok = dominates(d.block, use_block);
          else if (d.block == use_block)
            ok = d.pos < use_pos;
          else
            ok = dominates(d.block, use_block);
          if (!ok)
            diag(ins.line, "%" + o.name + " does not dominate this use");
        };
        if (ins.op == Opcode::Phi) {
          // Arm values are consumed on the incoming edge, not in this block.
          for (const auto& arm : ins.phi)
            check_use(arm.value, arm.pred_index, 0, true);
        } else {
          for (const auto& a : ins.args)
            check_use(a, int(bi), int(i), false);
        }
      }
    }
  }

  template <class WantFn, class TypeOfFn>
  void check_instr(IrFunction& fn, IrInstr& ins, int bi, WantFn& want, TypeOfFn& type_of) {
    switch (ins.op) {
    case Opcode::Alloca:
      if (ins.literal == 0)
        diag(ins.line, "alloca size must be positive");
      else if (ins.literal > (1ull << MAX_EXPONENT))
        diag(ins.line, "alloca size exceeds the address space");
      break;
    case Opcode::Malloc:
      want(ins, 0, ValueType::I64, "malloc size");
      break;
    case Opcode::Free:
      want(ins, 0, ValueType::Ptr, "free operand");
      break;
    case Opcode::Gaddr:
    case Opcode::ShadowLoad:
    case Opcode::ShadowStore:
      if (!prog_.find_global(ins.sym))
        diag(ins.line, "unknown global @" + ins.sym);
      if (ins.op == Opcode::ShadowStore)
        want(ins, 0, ValueType::Ptr, "shadowstore value");
      break;
    case Opcode::PtrAdd:
      want(ins, 0, ValueType::Ptr, "ptradd base");
      want(ins, 1, ValueType::I64, "ptradd offset");
      break;
    case Opcode::Cast:
      want(ins, 0, ValueType::Ptr, "cast operand");
      break;
    case Opcode::PtrToInt:
      want(ins, 0, ValueType::Ptr, "ptrtoint operand");
      break;
    case Opcode::IntToPtr:
      want(ins, 0, ValueType::I64, "inttoptr operand");
      break;
    case Opcode::Phi:
      if (bi == 0)
        break; // already diagnosed
      for (const auto& arm : ins.phi) {
        if (!arm.value.is_value()) {
          if (ins.result_type == ValueType::Ptr)
            diag(ins.line, "phi ptr arm must be a pointer value, not a constant");
        } else if (arm.value.slot >= 0 && type_of(arm.value) != ins.result_type) {
          diag(ins.line, "phi arm type does not match the phi type");
        }
      }
      break;
    case Opcode::Load:
      want(ins, 0, ValueType::Ptr, "load address");
      break;
    case Opcode::Store:
      want(ins, 0, ins.ptr_access ? ValueType::Ptr : ValueType::I64, "stored value");
      want(ins, 1, ValueType::Ptr, "store address");
      break;
    case Opcode::Icmp: {
      // Pointer compares are legal (equality and ordering on raw words).
      ValueType a = type_of(ins.args[0]);
      ValueType b = type_of(ins.args[1]);
      bool a_known = !ins.args[0].is_value() || ins.args[0].slot >= 0;
      bool b_known = !ins.args[1].is_value() || ins.args[1].slot >= 0;
      if (a_known && b_known && a != b)
        diag(ins.line, "icmp operands must have the same type");
      break;
    }
    case Opcode::Bin:
      want(ins, 0, ValueType::I64, "arithmetic operand");
      want(ins, 1, ValueType::I64, "arithmetic operand");
      break;
    case Opcode::Call: {
      const IrFunction* callee = prog_.find_func(ins.sym);
      if (!callee) {
        diag(ins.line, prog_.find_extern(ins.sym)
                           ? "@" + ins.sym + " is extern; use callext"
                           : "call to unknown function @" + ins.sym);
        break;
      }
      if (ins.args.size() != callee->params.size()) {
        diag(ins.line, "@" + ins.sym + " takes " + std::to_string(callee->params.size()) +
                           " argument(s), got " + std::to_string(ins.args.size()));
        break;
      }
      for (size_t i = 0; i < ins.args.size(); ++i)
        want(ins, i, callee->params[i].type, "call argument");
      check_call_result(ins, callee->ret);
      break;
    }
    case Opcode::CallExt: {
      const IrExtern* callee = prog_.find_extern(ins.sym);
      if (!callee) {
        diag(ins.line, prog_.find_func(ins.sym) ? "@" + ins.sym + " is a function; use call"
                                                : "callext to unknown extern @" + ins.sym);
        break;
      }
      if (ins.args.size() != callee->params.size()) {
        diag(ins.line, "@" + ins.sym + " takes " + std::to_string(callee->params.size()) +
                           " argument(s), got " + std::to_string(ins.args.size()));
        break;
      }
      for (size_t i = 0; i < ins.args.size(); ++i)
        want(ins, i, callee->params[i], "callext argument");
      check_call_result(ins, callee->ret);
      break;
    }
    case Opcode::Br:
      break;
    case Opcode::BrCond:
      want(ins, 0, ValueType::I64, "brcond condition");
      break;
    case Opcode::Ret:
      if (fn.ret && ins.args.empty())
        diag(ins.line, "@" + fn.name + " must return a value");
      if (!fn.ret && !ins.args.empty())
        diag(ins.line, "@" + fn.name + " returns no value");
      if (fn.ret && !ins.args.empty())
        want(ins, 0, *fn.ret, "return value");
      break;
    case Opcode::Mask:
    case Opcode::EBase:
    case Opcode::EBound:
      want(ins, 0, ValueType::Ptr, "pointer operand");
      break;
    case Opcode::Saturate:
    case Opcode::TrapOob:
    case Opcode::Redirect:
      want(ins, 0, ValueType::Ptr, "checked address");
      want(ins, 1, ValueType::Ptr, "lower bound");
      want(ins, 2, ValueType::Ptr, "upper bound");
      break;
    case Opcode::SatPtr:
    case Opcode::TrapPtr:
      want(ins, 0, ValueType::Ptr, "checked pointer");
      want(ins, 1, ValueType::Ptr, "bounds source");
      break;
    case Opcode::TagPtr:
      want(ins, 0, ValueType::Ptr, "tagged base");
      if (ins.literal == 0)
        diag(ins.line, "tagptr size must be positive");
      else if (ins.literal > (1ull << MAX_EXPONENT))
        diag(ins.line, "tagptr size exceeds the address space");
      break;
    }

    // Result presence for calls depends on the callee and is handled above;
    // every other opcode's arity is fixed by the parser or pass construction.
  }

  void check_call_result(IrInstr& ins, const std::optional<ValueType>& ret) {
    if (!ins.result.empty() && !ret)
      diag(ins.line, "@" + ins.sym + " returns no value");
  }
};

} // namespace detail

// Validates and finishes name resolution. Returns all diagnostics; an empty
// result means the program is ready for instrumentation and execution.
inline std::vector<Diagnostic> validate(IrProgram& prog) {
  return detail::Validator(prog).run();
}

} // namespace sma
