#pragma once

// Interpreter for instrumented programs. The machine is deliberately simple:
// every value is a 64-bit word, memory is the simulated address space from
// object_store.hpp, and the check instructions the pass emitted are where all
// bounds behavior lives. Run validate() on the program first; the interpreter
// relies on the slot and branch indices that validation fills in.
//
// Fault model:
//   - bounds traps come only from trapoob/trapptr, so only failstop-
//     instrumented programs can trap on an out-of-bounds access;
//   - resource and arithmetic faults (allocation failure, bad free, division
//     by zero, step budget, call depth) trap in every mode;
//   - segmentation faults exist only in off mode, which checks each access
//     against what the allocator has actually handed out. The checked modes
//     never produce one: every checked address lands inside an object, and
//     unbounded pointers read the sparse address space, which yields zeros.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "ir.hpp"
#include "object_store.hpp"
#include "pass.hpp"
#include "tag_codec.hpp"

namespace sma {

struct ExecStats {
  u64 instrs_total = 0;
  u64 checks_executed = 0;
  u64 masks_executed = 0;
  u64 corrections_overflow = 0;
  u64 corrections_underflow = 0;
  u64 oob_writes_redirected = 0;
  u64 oob_reads_redirected = 0;
};

enum class ExecStatus { Exited, Trapped, Segfault };

inline const char* exec_status_name(ExecStatus s) {
  switch (s) {
  case ExecStatus::Exited: return "exited";
  case ExecStatus::Trapped: return "trapped";
  default: return "segfault";
  }
}

struct ExecOutcome {
  ExecStatus status = ExecStatus::Exited;
  u64 exit_code = 0;  // meaningful when status == Exited
  std::string reason; // meaningful when Trapped or Segfault
  ExecStats stats;
  std::string output; // everything the program printed
};

struct ExecHooks {
  // Observes every dereference check: the stripped input address, the address
  // the access will actually use (or the discard sentinel), and the verdict.
  std::function<void(const IrInstr&, u64 addr_in, u64 addr_out, Verdict)> on_checked_access;
};

struct ExecConfig {
  Mode mode = Mode::Saturate;
  CodecKind codec = CodecKind::Buddy;
  bool address_tagging = false;
  u64 step_budget = 100000000;
};

// One entry per malloc/alloca/lib_alloc, in execution order. Globals are not
// listed; their placement is fixed by declaration order instead.
struct RuntimeAlloc {
  u64 id = 0;
  u64 base = 0;
  u64 requested = 0;
};

class Executor {
public:
  // Address value produced by a redirect check for an out-of-bounds access:
  // stores to it vanish, loads from it read zero.
  static constexpr u64 DISCARD = ~u64(0);

  Executor(const IrProgram& prog, ExecConfig cfg, std::string input = {}, ExecHooks hooks = {})
      : prog_(prog), cfg_(cfg), mem_(cfg.codec), input_(std::move(input)),
        hooks_(std::move(hooks)) {}

  ExecOutcome run() {
    ExecOutcome out;
    try {
      setup_globals();
      if (const IrFunction* ctor = prog_.find_func("__sma_ctor"))
        run_function(*ctor);
      const IrFunction* main_fn = prog_.find_func("main");
      if (!main_fn)
        throw TrapSig{"program has no @main"};
      run_function(*main_fn);
      out.status = ExecStatus::Exited;
      out.exit_code = last_ret_;
    } catch (const ExitSig& e) {
      out.status = ExecStatus::Exited;
      out.exit_code = e.code;
    } catch (const TrapSig& t) {
      out.status = ExecStatus::Trapped;
      out.reason = t.reason;
    } catch (const SegSig& s) {
      out.status = ExecStatus::Segfault;
      out.reason = s.reason;
    } catch (const Error& e) {
      out.status = ExecStatus::Trapped;
      out.reason = e.what();
    }
    out.stats = stats_;
    out.output = std::move(output_);
    return out;
  }

  AddressSpace& memory() { return mem_; }
  const AddressSpace& memory() const { return mem_; }
  const std::vector<RuntimeAlloc>& runtime_allocs() const { return rt_allocs_; }

  // Base address of a global, or 0 when the program has none by that name.
  u64 global_base(const std::string& name) const {
    for (const auto& [n, b] : global_base_)
      if (n == name)
        return b;
    return 0;
  }

private:
  struct ExitSig {
    u64 code;
  };
  struct TrapSig {
    std::string reason;
  };
  struct SegSig {
    std::string reason;
  };

  struct Frame {
    const IrFunction* fn = nullptr;
    std::vector<u64> regs;
    std::vector<u64> allocas; // released when the frame returns
    int block = 0;
    size_t ip = 0;
  };

  const IrProgram& prog_;
  ExecConfig cfg_;
  AddressSpace mem_;
  std::string input_;
  size_t input_pos_ = 0;
  ExecHooks hooks_;
  ExecStats stats_;
  std::string output_;
  std::vector<std::pair<std::string, u64>> global_base_;
  std::vector<RuntimeAlloc> rt_allocs_;
  std::vector<Frame> frames_;
  u64 last_ret_ = 0;

  static constexpr u64 PRINT_CAP = u64(1) << 20;
  static constexpr size_t DEPTH_CAP = size_t(1) << 16;

  void setup_globals() {
    for (const auto& g : prog_.globals) {
      auto alloc = mem_.allocate(g.size, Region::Global);
      global_base_.emplace_back(g.name, alloc.base);
      if (!g.init.empty())
        mem_.write_bytes(alloc.base, g.init);
    }
    check_intrinsic_signatures();
  }

  void check_intrinsic_signatures() {
    auto expect = [&](const IrExtern& e, std::vector<ValueType> params, bool returns,
                      ValueType ret) {
      bool ok = e.params == params &&
                (returns ? e.ret.has_value() && *e.ret == ret : !e.ret.has_value());
      if (!ok)
        throw TrapSig{"extern @" + e.name + " does not match its built-in signature"};
    };
    for (const auto& e : prog_.externs) {
      if (e.name == "print")
        expect(e, {ValueType::Ptr, ValueType::I64}, false, ValueType::I64);
      else if (e.name == "read_byte")
        expect(e, {}, true, ValueType::I64);
      else if (e.name == "exit")
        expect(e, {ValueType::I64}, false, ValueType::I64);
      else if (e.name == "lib_alloc")
        expect(e, {ValueType::I64}, true, ValueType::Ptr);
    }
  }

  void run_function(const IrFunction& fn) {
    push_frame(fn, {});
    while (!frames_.empty())
      step();
  }

  void push_frame(const IrFunction& fn, const std::vector<u64>& args) {
    if (frames_.size() >= DEPTH_CAP)
      throw TrapSig{"call depth limit exceeded"};
    Frame f;
    f.fn = &fn;
    f.regs.assign(size_t(fn.value_slots), 0);
    for (size_t i = 0; i < fn.params.size() && i < args.size(); ++i)
      f.regs[size_t(fn.params[i].slot)] = args[i];
    frames_.push_back(std::move(f));
  }

  void bump() {
    if (++stats_.instrs_total > cfg_.step_budget)
      throw TrapSig{"step budget exceeded"};
  }

  u64 val(const Frame& f, const Operand& o) const {
    return o.is_value() ? f.regs[size_t(o.slot)] : o.imm;
  }

  void set(Frame& f, const IrInstr& ins, u64 v) {
    if (ins.result_slot >= 0)
      f.regs[size_t(ins.result_slot)] = v;
  }

  // Moves the frame into `target`, running the phi cluster as one parallel
  // copy read against the predecessor's register state.
  void enter(Frame& f, int target) {
    const IrBlock& b = f.fn->blocks[size_t(target)];
    size_t nphi = 0;
    while (nphi < b.instrs.size() && b.instrs[nphi].op == Opcode::Phi)
      ++nphi;
    std::vector<std::pair<int, u64>> writes;
    writes.reserve(nphi);
    for (size_t i = 0; i < nphi; ++i) {
      const IrInstr& phi = b.instrs[i];
      bump();
      bool matched = false;
      for (const auto& arm : phi.phi)
        if (arm.pred_index == f.block) {
          writes.emplace_back(phi.result_slot, val(f, arm.value));
          matched = true;
          break;
        }
      if (!matched)
        throw TrapSig{"phi has no arm for the incoming edge"};
    }
    for (const auto& [slot, v] : writes)
      f.regs[size_t(slot)] = v;
    f.block = target;
    f.ip = nphi;
  }

  // The address an access will really touch. Hardware address tagging drops
  // the tag bits; without it a tagged address is non-canonical. Off mode is
  // the only mode that can reach here with an unchecked address, so it is the
  // only mode that consults the allocator's notion of mapped memory.
  u64 effective(u64 raw, u32 size) {
    u64 a = raw;
    if (cfg_.address_tagging)
      a &= ADDRESS_MASK;
    else if (a >> ADDRESS_BITS)
      throw SegSig{"access to a non-canonical address"};
    if (cfg_.mode == Mode::Off && !mem_.accessible(a, size))
      throw SegSig{"access outside allocated memory"};
    return a;
  }

  u64 global_of(const std::string& name) const {
    for (const auto& [n, b] : global_base_)
      if (n == name)
        return b;
    throw TrapSig{"unknown global @" + name};
  }

  void step() {
    Frame& f = frames_.back();
    const IrInstr& ins = f.fn->blocks[size_t(f.block)].instrs[f.ip];
    bump();
    switch (ins.op) {
    case Opcode::Alloca: {
      auto alloc = mem_.allocate(ins.literal, Region::Stack);
      f.allocas.push_back(alloc.id);
      rt_allocs_.push_back({alloc.id, alloc.base, ins.literal});
      set(f, ins, alloc.ptr.raw);
      ++f.ip;
      break;
    }
    case Opcode::Malloc: {
      auto alloc = mem_.allocate(val(f, ins.args[0]), Region::Heap);
      rt_allocs_.push_back({alloc.id, alloc.base, val(f, ins.args[0])});
      set(f, ins, alloc.ptr.raw);
      ++f.ip;
      break;
    }
    case Opcode::Free: {
      const u64 base = strip(val(f, ins.args[0]));
      const ObjectRecord* rec = mem_.find_live_by_base(base);
      if (!rec)
        throw FreeError("free of a pointer that is not a live allocation base");
      if (rec->region != Region::Heap)
        throw FreeError("free of a non-heap object");
      mem_.release(rec->id);
      ++f.ip;
      break;
    }
    case Opcode::Gaddr:
      set(f, ins, global_of(ins.sym));
      ++f.ip;
      break;
    case Opcode::PtrAdd:
      set(f, ins, val(f, ins.args[0]) + val(f, ins.args[1]));
      ++f.ip;
      break;
    case Opcode::Cast:
    case Opcode::PtrToInt:
    case Opcode::IntToPtr:
      set(f, ins, val(f, ins.args[0]));
      ++f.ip;
      break;
    case Opcode::Phi:
      throw TrapSig{"phi outside a block entry"}; // unreachable on valid programs
    case Opcode::Load: {
      const u64 raw = val(f, ins.args[0]);
      if (raw == DISCARD && cfg_.mode == Mode::Oblivious)
        set(f, ins, 0); // manufactured value for a redirected read
      else
        set(f, ins, mem_.read(effective(raw, ins.access_size), ins.access_size));
      ++f.ip;
      break;
    }
    case Opcode::Store: {
      const u64 raw = val(f, ins.args[1]);
      if (!(raw == DISCARD && cfg_.mode == Mode::Oblivious))
        mem_.write(effective(raw, ins.access_size), ins.access_size, val(f, ins.args[0]));
      ++f.ip;
      break;
    }
    case Opcode::Icmp: {
      const u64 a = val(f, ins.args[0]);
      const u64 b = val(f, ins.args[1]);
      const i64 sa = i64(a);
      const i64 sb = i64(b);
      bool r = false;
      switch (ins.cmp) {
      case CmpOp::Eq: r = a == b; break;
      case CmpOp::Ne: r = a != b; break;
      case CmpOp::Ult: r = a < b; break;
      case CmpOp::Ule: r = a <= b; break;
      case CmpOp::Ugt: r = a > b; break;
      case CmpOp::Uge: r = a >= b; break;
      case CmpOp::Slt: r = sa < sb; break;
      case CmpOp::Sle: r = sa <= sb; break;
      case CmpOp::Sgt: r = sa > sb; break;
      case CmpOp::Sge: r = sa >= sb; break;
      }
      set(f, ins, r ? 1 : 0);
      ++f.ip;
      break;
    }
    case Opcode::Bin:
      set(f, ins, binop(ins.bin, val(f, ins.args[0]), val(f, ins.args[1])));
      ++f.ip;
      break;
    case Opcode::Call: {
      const IrFunction* callee = prog_.find_func(ins.sym);
      if (!callee)
        throw TrapSig{"call to unknown function @" + ins.sym};
      std::vector<u64> args;
      args.reserve(ins.args.size());
      for (const auto& a : ins.args)
        args.push_back(val(f, a));
      push_frame(*callee, args); // the caller's ip advances when the callee returns
      break;
    }
    case Opcode::CallExt:
      call_extern(f, ins);
      break;
    case Opcode::Br:
      enter(f, ins.target_index);
      break;
    case Opcode::BrCond:
      enter(f, val(f, ins.args[0]) != 0 ? ins.target_index : ins.target2_index);
      break;
    case Opcode::Ret: {
      const u64 v = ins.args.empty() ? 0 : val(f, ins.args[0]);
      for (auto it = f.allocas.rbegin(); it != f.allocas.rend(); ++it)
        mem_.release(*it);
      frames_.pop_back();
      if (frames_.empty()) {
        last_ret_ = v;
        break;
      }
      Frame& caller = frames_.back();
      const IrInstr& call = caller.fn->blocks[size_t(caller.block)].instrs[caller.ip];
      set(caller, call, v);
      ++caller.ip;
      break;
    }
    case Opcode::Mask:
      ++stats_.masks_executed;
      set(f, ins, val(f, ins.args[0]) & ADDRESS_MASK);
      ++f.ip;
      break;
    case Opcode::EBase:
      set(f, ins, decode(val(f, ins.args[0]), cfg_.codec).base);
      ++f.ip;
      break;
    case Opcode::EBound:
      set(f, ins, decode(val(f, ins.args[0]), cfg_.codec).bound);
      ++f.ip;
      break;
    case Opcode::Saturate:
    case Opcode::TrapOob:
    case Opcode::Redirect:
      run_access_check(f, ins);
      ++f.ip;
      break;
    case Opcode::SatPtr:
    case Opcode::TrapPtr:
      run_pointer_check(f, ins);
      ++f.ip;
      break;
    case Opcode::ShadowLoad:
      set(f, ins, mem_.read(global_of(ins.sym), 8));
      ++f.ip;
      break;
    case Opcode::ShadowStore:
      mem_.write(global_of(ins.sym), 8, val(f, ins.args[0]));
      ++f.ip;
      break;
    case Opcode::TagPtr: {
      const RoundedSize rs = round_size(ins.literal);
      set(f, ins, make_tagged(strip(val(f, ins.args[0])), rs.exponent, cfg_.codec).raw);
      ++f.ip;
      break;
    }
    }
  }

  u64 binop(BinOp op, u64 a, u64 b) {
    const i64 sa = i64(a);
    const i64 sb = i64(b);
    switch (op) {
    case BinOp::Add: return a + b;
    case BinOp::Sub: return a - b;
    case BinOp::Mul: return a * b;
    case BinOp::Udiv:
      if (b == 0)
        throw TrapSig{"division by zero"};
      return a / b;
    case BinOp::Urem:
      if (b == 0)
        throw TrapSig{"division by zero"};
      return a % b;
    case BinOp::Sdiv:
      if (b == 0)
        throw TrapSig{"division by zero"};
      if (sa == i64(u64(1) << 63) && sb == -1)
        throw TrapSig{"signed division overflow"};
      return u64(sa / sb);
    case BinOp::Srem:
      if (b == 0)
        throw TrapSig{"division by zero"};
      if (sa == i64(u64(1) << 63) && sb == -1)
        throw TrapSig{"signed division overflow"};
      return u64(sa % sb);
    case BinOp::And: return a & b;
    case BinOp::Or: return a | b;
    case BinOp::Xor: return a ^ b;
    case BinOp::Shl: return a << (b & 63);
    case BinOp::Lshr: return a >> (b & 63);
    default: return u64(sa >> (b & 63));
    }
  }

  // saturate/trapoob/redirect: clamp, trap, or discard an access address.
  void run_access_check(Frame& f, const IrInstr& ins) {
    ++stats_.checks_executed;
    const u64 a = strip(val(f, ins.args[0]));
    const u64 lo = val(f, ins.args[1]);
    const u64 hi = val(f, ins.args[2]);
    u64 out;
    Verdict v;
    if (hi < lo || hi - lo < ins.access_size) {
      // Bounds too small for the access: only reachable through a corrupted
      // tag on a reloaded pointer. Pin to the decoded base.
      v = Verdict::Overflow;
      out = lo;
    } else {
      const SaturateResult r = saturate(a, ins.access_size, Bounds{lo, hi});
      v = r.verdict;
      out = r.addr;
    }
    const bool store = ins.access == AccessKind::Store;
    if (ins.op == Opcode::TrapOob) {
      if (v != Verdict::InBounds) {
        if (hooks_.on_checked_access)
          hooks_.on_checked_access(ins, a, out, v);
        throw TrapSig{std::string("out-of-bounds ") + (store ? "store" : "load")};
      }
    } else if (v != Verdict::InBounds) {
      if (ins.op == Opcode::Saturate) {
        ++(v == Verdict::Overflow ? stats_.corrections_overflow : stats_.corrections_underflow);
      } else {
        out = DISCARD;
      }
      ++(store ? stats_.oob_writes_redirected : stats_.oob_reads_redirected);
    }
    if (hooks_.on_checked_access)
      hooks_.on_checked_access(ins, a, out, v);
    set(f, ins, out);
  }

  // satptr/trapptr: boundary clamp on a whole pointer, tag preserved.
  void run_pointer_check(Frame& f, const IrInstr& ins) {
    ++stats_.checks_executed;
    const u64 p = val(f, ins.args[0]);
    const Bounds b = decode(val(f, ins.args[1]), cfg_.codec);
    if (b.unbounded()) {
      set(f, ins, p);
      return;
    }
    const u64 a = strip(p);
    u64 clamped;
    Verdict v;
    if (b.bound <= b.base) {
      v = Verdict::Overflow;
      clamped = b.base;
    } else {
      const SaturateResult r = saturate(a, 1, b);
      v = r.verdict;
      clamped = r.addr;
    }
    if (ins.op == Opcode::TrapPtr) {
      if (v != Verdict::InBounds)
        throw TrapSig{"out-of-bounds pointer escape"};
      set(f, ins, p);
      return;
    }
    if (v != Verdict::InBounds)
      ++(v == Verdict::Overflow ? stats_.corrections_overflow : stats_.corrections_underflow);
    set(f, ins, (p & ~ADDRESS_MASK) | clamped);
  }

  void call_extern(Frame& f, const IrInstr& ins) {
    const std::string& name = ins.sym;
    if (name == "print") {
      u64 addr = strip(val(f, ins.args[0]));
      u64 len = val(f, ins.args[1]);
      if (len > PRINT_CAP)
        len = PRINT_CAP;
      if (addr + len > ADDRESS_LIMIT)
        len = ADDRESS_LIMIT - addr;
      const std::vector<u8> bytes = mem_.read_bytes(addr, len);
      output_.append(bytes.begin(), bytes.end());
    } else if (name == "read_byte") {
      const u64 v = input_pos_ < input_.size() ? u64(u8(input_[input_pos_++])) : ~u64(0);
      set(f, ins, v);
    } else if (name == "exit") {
      throw ExitSig{val(f, ins.args[0])};
    } else if (name == "lib_alloc") {
      // Models an allocation made by uninstrumented library code: real
      // memory, but the returned pointer carries no tag.
      auto alloc = mem_.allocate(val(f, ins.args[0]), Region::Heap);
      rt_allocs_.push_back({alloc.id, alloc.base, val(f, ins.args[0])});
      set(f, ins, alloc.base);
    } else {
      throw TrapSig{"call to unbound extern @" + name};
    }
    ++f.ip;
  }
};

} // namespace sma
