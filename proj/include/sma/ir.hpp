#pragma once

// Mini SSA IR. Two value types (i64, ptr), named blocks with explicit
// terminators, and a small instruction set split in two layers: the source
// set programs are written in, and the instrumentation set the bounds pass
// emits (mask/ebase/ebound/checks/shadow accesses). The printer and parser
// round-trip both layers.

#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace sma {

enum class ValueType { I64, Ptr };

inline const char* type_name(ValueType t) { return t == ValueType::Ptr ? "ptr" : "i64"; }

enum class Opcode {
  // source set
  Alloca,
  Malloc,
  Free,
  Gaddr,
  PtrAdd,
  Cast,
  PtrToInt,
  IntToPtr,
  Phi,
  Load,
  Store,
  Icmp,
  Bin,
  Call,
  CallExt,
  Br,
  BrCond,
  Ret,
  // instrumentation set
  Mask,       // %r = mask %p            clear tag bits
  EBase,      // %r = ebase %bp          lower bound of %bp's object
  EBound,     // %r = ebound %bp         upper bound of %bp's object
  Saturate,   // %r = saturate.store %p, %base, %bound, 4   clamp into bounds
  TrapOob,    // %r = trapoob.load ...   trap instead of clamping
  Redirect,   // %r = redirect.store ... discard/manufacture instead
  SatPtr,     // %r = satptr %p, %bp     clamp a pointer, tag preserved
  TrapPtr,    // %r = trapptr %p, %bp    trap when the pointer is out of bounds
  ShadowLoad, // %r = shadowload @g      read a shadow slot (runtime-internal)
  ShadowStore,// shadowstore @g, %v      write a shadow slot
  TagPtr,     // %r = tagptr %p, 24      tag a base address for a 24-byte object
};

enum class CmpOp { Eq, Ne, Ult, Ule, Ugt, Uge, Slt, Sle, Sgt, Sge };
enum class BinOp { Add, Sub, Mul, Udiv, Sdiv, Urem, Srem, And, Or, Xor, Shl, Lshr, Ashr };
enum class AccessKind { None, Load, Store };

inline const char* cmp_name(CmpOp c) {
  switch (c) {
  case CmpOp::Eq: return "eq";
  case CmpOp::Ne: return "ne";
  case CmpOp::Ult: return "ult";
  case CmpOp::Ule: return "ule";
  case CmpOp::Ugt: return "ugt";
  case CmpOp::Uge: return "uge";
  case CmpOp::Slt: return "slt";
  case CmpOp::Sle: return "sle";
  case CmpOp::Sgt: return "sgt";
  default: return "sge";
  }
}

inline const char* bin_name(BinOp b) {
  switch (b) {
  case BinOp::Add: return "add";
  case BinOp::Sub: return "sub";
  case BinOp::Mul: return "mul";
  case BinOp::Udiv: return "udiv";
  case BinOp::Sdiv: return "sdiv";
  case BinOp::Urem: return "urem";
  case BinOp::Srem: return "srem";
  case BinOp::And: return "and";
  case BinOp::Or: return "or";
  case BinOp::Xor: return "xor";
  case BinOp::Shl: return "shl";
  case BinOp::Lshr: return "lshr";
  default: return "ashr";
  }
}

struct Operand {
  enum class Kind { Const, Value };
  Kind kind = Kind::Const;
  u64 imm = 0;
  std::string name; // without the % sigil
  int slot = -1;    // assigned by reindex

  static Operand constant(u64 v) {
    Operand o;
    o.kind = Kind::Const;
    o.imm = v;
    return o;
  }
  static Operand value(std::string n) {
    Operand o;
    o.kind = Kind::Value;
    o.name = std::move(n);
    return o;
  }
  bool is_value() const { return kind == Kind::Value; }
  bool same(const Operand& o) const {
    if (kind != o.kind)
      return false;
    return kind == Kind::Const ? imm == o.imm : name == o.name;
  }
};

struct PhiArm {
  std::string pred;
  Operand value;
  int pred_index = -1; // assigned by reindex
};

struct IrInstr {
  Opcode op = Opcode::Ret;
  std::string result; // empty when the instruction produces nothing
  ValueType result_type = ValueType::I64;
  int result_slot = -1;
  u32 access_size = 0;     // load/store/check width in bytes
  bool ptr_access = false; // load/store moves a pointer value (width 8)
  u64 literal = 0;         // alloca/tagptr byte count
  AccessKind access = AccessKind::None;
  CmpOp cmp = CmpOp::Eq;
  BinOp bin = BinOp::Add;
  std::string sym; // callee / global, without the @ sigil
  std::vector<Operand> args;
  std::vector<PhiArm> phi;
  std::string target;  // br / brcond true edge
  std::string target2; // brcond false edge
  int target_index = -1;
  int target2_index = -1;
  int line = 0;
  bool synthetic = false; // inserted by the pass
  u64 id = 0;             // program-wide ordinal, assigned by renumber
};

inline bool is_terminator(Opcode op) {
  return op == Opcode::Br || op == Opcode::BrCond || op == Opcode::Ret;
}

inline bool is_check(Opcode op) {
  return op == Opcode::Saturate || op == Opcode::TrapOob || op == Opcode::Redirect ||
         op == Opcode::SatPtr || op == Opcode::TrapPtr;
}

struct IrBlock {
  std::string label;
  std::vector<IrInstr> instrs;
  int line = 0;
};

struct IrParam {
  std::string name;
  ValueType type = ValueType::I64;
  bool byval = false;
  int slot = -1;
};

struct IrFunction {
  std::string name;
  std::vector<IrParam> params;
  std::optional<ValueType> ret;
  std::vector<IrBlock> blocks;
  int value_slots = 0;
  int line = 0;

  int block_index(const std::string& label) const {
    for (size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].label == label)
        return int(i);
    return -1;
  }
};

struct IrGlobal {
  std::string name;
  u64 size = 0;
  std::vector<u8> init;
  int line = 0;
  bool synthetic = false;
};

struct IrExtern {
  std::string name;
  std::vector<ValueType> params;
  std::optional<ValueType> ret;
  int line = 0;
};

struct IrProgram {
  std::vector<IrGlobal> globals;
  std::vector<IrExtern> externs;
  std::vector<IrFunction> funcs;

  IrFunction* find_func(const std::string& name) {
    for (auto& f : funcs)
      if (f.name == name)
        return &f;
    return nullptr;
  }
  const IrFunction* find_func(const std::string& name) const {
    return const_cast<IrProgram*>(this)->find_func(name);
  }
  IrGlobal* find_global(const std::string& name) {
    for (auto& g : globals)
      if (g.name == name)
        return &g;
    return nullptr;
  }
  const IrGlobal* find_global(const std::string& name) const {
    return const_cast<IrProgram*>(this)->find_global(name);
  }
  const IrExtern* find_extern(const std::string& name) const {
    for (const auto& e : externs)
      if (e.name == name)
        return &e;
    return nullptr;
  }
};

struct Diagnostic {
  int line = 0;
  int col = 0;
  std::string message;
};

inline std::string to_string(const Diagnostic& d) {
  return "line " + std::to_string(d.line) + ":" + std::to_string(d.col) + ": " + d.message;
}

// ---- name resolution ------------------------------------------------------

// Assigns value slots, resolves operand and branch references, and records
// duplicate definitions. Purely structural; validate() adds semantic checks.
inline std::vector<Diagnostic> reindex(IrFunction& fn) {
  std::vector<Diagnostic> diags;
  std::vector<std::pair<std::string, int>> slots; // name -> slot, insertion order
  auto lookup = [&](const std::string& n) {
    for (auto& [name, slot] : slots)
      if (name == n)
        return slot;
    return -1;
  };
  auto define = [&](const std::string& n, int line) {
    if (lookup(n) >= 0) {
      diags.push_back({line, 0, "duplicate definition of %" + n});
      return lookup(n);
    }
    slots.emplace_back(n, int(slots.size()));
    return int(slots.size()) - 1;
  };

  for (auto& p : fn.params)
    p.slot = define(p.name, fn.line);
  for (auto& b : fn.blocks)
    for (auto& ins : b.instrs)
      if (!ins.result.empty())
        ins.result_slot = define(ins.result, ins.line);

  auto resolve = [&](Operand& o, int line) {
    if (!o.is_value())
      return;
    o.slot = lookup(o.name);
    if (o.slot < 0)
      diags.push_back({line, 0, "use of undefined value %" + o.name});
  };
  auto resolve_label = [&](const std::string& label, int& out, int line) {
    out = fn.block_index(label);
    if (out < 0)
      diags.push_back({line, 0, "branch to unknown block '" + label + "'"});
  };

  for (size_t bi = 0; bi < fn.blocks.size(); ++bi) {
    auto& b = fn.blocks[bi];
    for (size_t i = bi + 1; i < fn.blocks.size(); ++i)
      if (fn.blocks[i].label == b.label)
        diags.push_back({fn.blocks[i].line, 0, "duplicate block label '" + b.label + "'"});
    for (auto& ins : b.instrs) {
      for (auto& a : ins.args)
        resolve(a, ins.line);
      for (auto& arm : ins.phi) {
        resolve(arm.value, ins.line);
        arm.pred_index = fn.block_index(arm.pred);
        if (arm.pred_index < 0)
          diags.push_back({ins.line, 0, "phi references unknown block '" + arm.pred + "'"});
      }
      if (ins.op == Opcode::Br)
        resolve_label(ins.target, ins.target_index, ins.line);
      if (ins.op == Opcode::BrCond) {
        resolve_label(ins.target, ins.target_index, ins.line);
        resolve_label(ins.target2, ins.target2_index, ins.line);
      }
    }
  }
  fn.value_slots = int(slots.size());
  return diags;
}

// Stamps program-wide instruction ordinals (printing order).
inline void renumber(IrProgram& p) {
  u64 next = 0;
  for (auto& f : p.funcs)
    for (auto& b : f.blocks)
      for (auto& ins : b.instrs)
        ins.id = next++;
}

// ---- printing -------------------------------------------------------------

namespace detail {

inline void print_operand(std::string& out, const Operand& o) {
  if (o.is_value()) {
    out += '%';
    out += o.name;
  } else if (o.imm >> 63) {
    out += '-';
    out += std::to_string(~o.imm + 1);
  } else {
    out += std::to_string(o.imm);
  }
}

inline void print_args(std::string& out, const IrInstr& ins, size_t first = 0) {
  for (size_t i = first; i < ins.args.size(); ++i) {
    out += i == first ? "" : ", ";
    print_operand(out, ins.args[i]);
  }
}

inline std::string check_name(const IrInstr& ins) {
  std::string base;
  switch (ins.op) {
  case Opcode::Saturate: base = "saturate"; break;
  case Opcode::TrapOob: base = "trapoob"; break;
  default: base = "redirect"; break;
  }
  return base + (ins.access == AccessKind::Store ? ".store" : ".load");
}

} // namespace detail

inline std::string to_string(const IrInstr& ins) {
  std::string out;
  if (!ins.result.empty()) {
    out += '%';
    out += ins.result;
    out += " = ";
  }
  auto args = [&](size_t first = 0) { detail::print_args(out, ins, first); };
  switch (ins.op) {
  case Opcode::Alloca:
    out += "alloca " + std::to_string(ins.literal);
    break;
  case Opcode::Malloc:
    out += "malloc ";
    args();
    break;
  case Opcode::Free:
    out += "free ";
    args();
    break;
  case Opcode::Gaddr:
    out += "gaddr @" + ins.sym;
    break;
  case Opcode::PtrAdd:
    out += "ptradd ";
    args();
    break;
  case Opcode::Cast:
    out += "cast ";
    args();
    break;
  case Opcode::PtrToInt:
    out += "ptrtoint ";
    args();
    break;
  case Opcode::IntToPtr:
    out += "inttoptr ";
    args();
    break;
  case Opcode::Phi:
    out += "phi ";
    out += type_name(ins.result_type);
    for (const auto& arm : ins.phi) {
      out += " [" + arm.pred + ": ";
      detail::print_operand(out, arm.value);
      out += ']';
    }
    break;
  case Opcode::Load:
    out += "load ";
    out += ins.ptr_access ? "ptr" : std::to_string(ins.access_size);
    out += ", ";
    args();
    break;
  case Opcode::Store:
    out += "store ";
    out += ins.ptr_access ? "ptr" : std::to_string(ins.access_size);
    out += ", ";
    args();
    break;
  case Opcode::Icmp:
    out += "icmp ";
    out += cmp_name(ins.cmp);
    out += ' ';
    args();
    break;
  case Opcode::Bin:
    out += bin_name(ins.bin);
    out += ' ';
    args();
    break;
  case Opcode::Call:
  case Opcode::CallExt:
    out += ins.op == Opcode::Call ? "call @" : "callext @";
    out += ins.sym;
    if (!ins.args.empty()) {
      out += ", ";
      args();
    }
    break;
  case Opcode::Br:
    out += "br " + ins.target;
    break;
  case Opcode::BrCond:
    out += "brcond ";
    args();
    out += ", " + ins.target + ", " + ins.target2;
    break;
  case Opcode::Ret:
    out += "ret";
    if (!ins.args.empty()) {
      out += ' ';
      args();
    }
    break;
  case Opcode::Mask:
    out += "mask ";
    args();
    break;
  case Opcode::EBase:
    out += "ebase ";
    args();
    break;
  case Opcode::EBound:
    out += "ebound ";
    args();
    break;
  case Opcode::Saturate:
  case Opcode::TrapOob:
  case Opcode::Redirect:
    out += detail::check_name(ins);
    out += ' ';
    args();
    out += ", " + std::to_string(ins.access_size);
    break;
  case Opcode::SatPtr:
    out += "satptr ";
    args();
    break;
  case Opcode::TrapPtr:
    out += "trapptr ";
    args();
    break;
  case Opcode::ShadowLoad:
    out += "shadowload @" + ins.sym;
    break;
  case Opcode::ShadowStore:
    out += "shadowstore @" + ins.sym + ", ";
    args();
    break;
  case Opcode::TagPtr:
    out += "tagptr ";
    args();
    out += ", " + std::to_string(ins.literal);
    break;
  }
  return out;
}

inline std::string pretty_print(const IrFunction& fn) {
  std::string out = "func @" + fn.name + "(";
  for (size_t i = 0; i < fn.params.size(); ++i) {
    const auto& p = fn.params[i];
    out += i ? ", " : "";
    out += type_name(p.type);
    if (p.byval)
      out += " byval";
    out += " %" + p.name;
  }
  out += ")";
  if (fn.ret)
    out += std::string(" -> ") + type_name(*fn.ret);
  out += " {\n";
  if (fn.blocks.empty()) {
    // Keeps the output parseable even for bodies validation has rejected.
    out += "entry:\n  ret\n";
  }
  for (const auto& b : fn.blocks) {
    out += b.label + ":\n";
    for (const auto& ins : b.instrs) {
      out += "  ";
      out += to_string(ins);
      out += '\n';
    }
  }
  out += "}\n";
  return out;
}

inline std::string pretty_print(const IrProgram& p) {
  std::string out;
  static const char* hex = "0123456789abcdef";
  for (const auto& g : p.globals) {
    out += "global @" + g.name + " " + std::to_string(g.size);
    if (!g.init.empty()) {
      out += " = [";
      for (size_t i = 0; i < g.init.size(); ++i) {
        if (i)
          out += ' ';
        out += hex[g.init[i] >> 4];
        out += hex[g.init[i] & 0xF];
      }
      out += ']';
    }
    out += '\n';
  }
  for (const auto& e : p.externs) {
    out += "extern @" + e.name + "(";
    for (size_t i = 0; i < e.params.size(); ++i) {
      out += i ? ", " : "";
      out += type_name(e.params[i]);
    }
    out += ")";
    if (e.ret)
      out += std::string(" -> ") + type_name(*e.ret);
    out += '\n';
  }
  for (const auto& f : p.funcs) {
    if (!out.empty())
      out += '\n';
    out += pretty_print(f);
  }
  return out;
}

// ---- structural equality (modulo slots, ids, lines) ------------------------

inline bool structurally_equal(const IrInstr& a, const IrInstr& b) {
  if (a.op != b.op || a.result != b.result || a.sym != b.sym || a.target != b.target ||
      a.target2 != b.target2 || a.literal != b.literal || a.access_size != b.access_size ||
      a.ptr_access != b.ptr_access || a.access != b.access || a.args.size() != b.args.size() ||
      a.phi.size() != b.phi.size())
    return false;
  if (a.op == Opcode::Icmp && a.cmp != b.cmp)
    return false;
  if (a.op == Opcode::Bin && a.bin != b.bin)
    return false;
  if ((a.op == Opcode::Phi || !a.result.empty()) && a.result_type != b.result_type)
    return false;
  for (size_t i = 0; i < a.args.size(); ++i)
    if (!a.args[i].same(b.args[i]))
      return false;
  for (size_t i = 0; i < a.phi.size(); ++i)
    if (a.phi[i].pred != b.phi[i].pred || !a.phi[i].value.same(b.phi[i].value))
      return false;
  return true;
}

inline bool structurally_equal(const IrFunction& a, const IrFunction& b) {
  if (a.name != b.name || a.ret != b.ret || a.params.size() != b.params.size() ||
      a.blocks.size() != b.blocks.size())
    return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    const auto& pa = a.params[i];
    const auto& pb = b.params[i];
    if (pa.name != pb.name || pa.type != pb.type || pa.byval != pb.byval)
      return false;
  }
  for (size_t i = 0; i < a.blocks.size(); ++i) {
    if (a.blocks[i].label != b.blocks[i].label ||
        a.blocks[i].instrs.size() != b.blocks[i].instrs.size())
      return false;
    for (size_t j = 0; j < a.blocks[i].instrs.size(); ++j)
      if (!structurally_equal(a.blocks[i].instrs[j], b.blocks[i].instrs[j]))
        return false;
  }
  return true;
}

inline bool structurally_equal(const IrProgram& a, const IrProgram& b) {
  if (a.globals.size() != b.globals.size() || a.externs.size() != b.externs.size() ||
      a.funcs.size() != b.funcs.size())
    return false;
  for (size_t i = 0; i < a.globals.size(); ++i) {
    const auto& ga = a.globals[i];
    const auto& gb = b.globals[i];
    if (ga.name != gb.name || ga.size != gb.size || ga.init != gb.init)
      return false;
  }
  for (size_t i = 0; i < a.externs.size(); ++i) {
    const auto& ea = a.externs[i];
    const auto& eb = b.externs[i];
    if (ea.name != eb.name || ea.params != eb.params || ea.ret != eb.ret)
      return false;
  }
  for (size_t i = 0; i < a.funcs.size(); ++i)
    if (!structurally_equal(a.funcs[i], b.funcs[i]))
      return false;
  return true;
}

} // namespace sma
