#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "sma/ir.hpp"
#include "sma/ir_parse.hpp"
#include "sma/ir_verify.hpp"
#include "sma/pass.hpp"

using namespace sma;

namespace {

IrProgram parse_valid(const std::string& text) {
  ParseResult res = parse_ir(text);
  if (!res.ok())
    INFO("parse error: " << to_string(res.error));
  REQUIRE(res.ok());
  IrProgram p = std::move(*res.program);
  auto ds = validate(p);
  std::string msgs;
  for (const auto& d : ds)
    msgs += to_string(d) + "\n";
  INFO(msgs);
  REQUIRE(ds.empty());
  return p;
}

const IrInstr* find_op(const IrFunction& fn, Opcode op, int nth = 0) {
  for (const auto& b : fn.blocks)
    for (const auto& ins : b.instrs)
      if (ins.op == op && nth-- == 0)
        return &ins;
  return nullptr;
}

int count_op(const IrFunction& fn, Opcode op) {
  int n = 0;
  for (const auto& b : fn.blocks)
    for (const auto& ins : b.instrs)
      n += ins.op == op;
  return n;
}

const IrInstr* def_of(const IrFunction& fn, const std::string& name) {
  for (const auto& b : fn.blocks)
    for (const auto& ins : b.instrs)
      if (ins.result == name)
        return &ins;
  return nullptr;
}

// One pointer produced each way the program can get one, flowing through a
// loop phi, a spill, integer observation, and both call boundaries.
const char* const kDriver = R"(global @tab 32 = [01 02]
extern @print(ptr, i64)

func @sum(ptr %q, i64 %n) -> i64 {
  br loop
loop:
  %i = phi i64 [entry: 0] [loop: %i2]
  %acc = phi i64 [entry: 0] [loop: %acc2]
  %c = phi ptr [entry: %q] [loop: %c2]
  %b = load 1, %c
  %acc2 = add %acc, %b
  %c2 = ptradd %c, 1
  %i2 = add %i, 1
  %t = icmp ult %i2, %n
  brcond %t, loop, out
out:
  ret %acc2
}

func @frob(ptr byval %buf) {
  store 1, 9, %buf
  ret
}

func @main() -> i64 {
  %g = gaddr @tab
  %p = malloc 40
  %addr = ptrtoint %p
  %lo = and %addr, 63
  store 8, %lo, %p
  call @frob, %p
  %s = call @sum, %g, 4
  callext @print, %g, 2
  %spill = alloca 8
  store ptr, %g, %spill
  %re = load ptr, %spill
  %v = load 1, %re
  %r = add %s, %v
  ret %r
}
)";

} // namespace

TEST_CASE("small program instruments to the exact expected text") {
  IrProgram p = parse_valid("global @buf 24\n"
                            "func @main() -> i64 {\n"
                            "  %p = malloc 16\n"
                            "  store 4, 7, %p\n"
                            "  %v = load 4, %p\n"
                            "  ret %v\n}\n");
  PassSummary sum = instrument(p, {Mode::Saturate, CodecKind::Buddy, false});
  CHECK(sum.deref_checks == 2);
  CHECK(sum.deref_masks == 2);
  CHECK(sum.shadow_globals == 1);
  const char* expected = R"(global @buf 24
global @__sma_buf 8

func @main() -> i64 {
entry:
  %p = malloc 16
  %__sma_t0 = ebase %p
  %__sma_t1 = ebound %p
  %__sma_t2 = mask %p
  %__sma_t3 = saturate.store %__sma_t2, %__sma_t0, %__sma_t1, 4
  store 4, 7, %__sma_t3
  %__sma_t4 = ebase %p
  %__sma_t5 = ebound %p
  %__sma_t6 = mask %p
  %__sma_t7 = saturate.load %__sma_t6, %__sma_t4, %__sma_t5, 4
  %v = load 4, %__sma_t7
  ret %v
}

func @__sma_ctor() {
entry:
  %__sma_g0 = gaddr @buf
  %__sma_p0 = tagptr %__sma_g0, 24
  shadowstore @__sma_buf, %__sma_p0
  ret
}
)";
  CHECK(pretty_print(p) == expected);
}

TEST_CASE("instrumented programs validate and audit cleanly in every config") {
  for (Mode mode : {Mode::Saturate, Mode::FailStop, Mode::Oblivious, Mode::Off}) {
    for (bool at : {false, true}) {
      for (CodecKind codec : {CodecKind::Buddy, CodecKind::Floating}) {
        DYNAMIC_SECTION("mode=" << mode_name(mode) << " at=" << at
                                << " codec=" << (codec == CodecKind::Buddy ? "buddy" : "floating")) {
          IrProgram p = parse_valid(kDriver);
          PassConfig cfg{mode, codec, at};
          instrument(p, cfg);
          auto ds = validate(p);
          std::string msgs;
          for (const auto& d : ds)
            msgs += to_string(d) + "\n";
          INFO(msgs);
          CHECK(ds.empty());
          auto problems = verify_instrumented(p, cfg);
          std::string joined;
          for (const auto& s : problems)
            joined += s + "\n";
          INFO(joined);
          CHECK(problems.empty());

          // The rewritten text is still a well-formed program.
          IrProgram p2 = parse_valid(pretty_print(p));
          CHECK(structurally_equal(p, p2));
        }
      }
    }
  }
}

TEST_CASE("check opcode and call clamp follow the mode") {
  auto get = [&](Mode m) {
    IrProgram p = parse_valid(kDriver);
    instrument(p, {m, CodecKind::Buddy, false});
    return p;
  };
  IrProgram sat = get(Mode::Saturate);
  IrProgram stop = get(Mode::FailStop);
  IrProgram obl = get(Mode::Oblivious);
  const IrFunction* f;

  f = sat.find_func("main");
  CHECK(count_op(*f, Opcode::Saturate) == 4); // store 8, store ptr, load ptr, load 1
  CHECK(count_op(*f, Opcode::TrapOob) == 0);
  CHECK(count_op(*f, Opcode::SatPtr) == 2); // %p to @frob, %g to @sum
  CHECK(count_op(*f, Opcode::TrapPtr) == 0);

  f = stop.find_func("main");
  CHECK(count_op(*f, Opcode::TrapOob) == 4);
  CHECK(count_op(*f, Opcode::Saturate) == 0);
  CHECK(count_op(*f, Opcode::TrapPtr) == 2);

  f = obl.find_func("main");
  CHECK(count_op(*f, Opcode::Redirect) == 4);
  CHECK(count_op(*f, Opcode::SatPtr) == 2);
}

TEST_CASE("global addresses become shadow loads") {
  IrProgram p = parse_valid(kDriver);
  instrument(p, {Mode::Saturate, CodecKind::Buddy, false});
  const IrFunction* main_fn = p.find_func("main");
  CHECK(count_op(*main_fn, Opcode::Gaddr) == 0);
  const IrInstr* sl = find_op(*main_fn, Opcode::ShadowLoad);
  REQUIRE(sl != nullptr);
  CHECK(sl->sym == "__sma_tab");
  CHECK(sl->result == "g"); // the original value name survives

  REQUIRE(p.find_global("__sma_tab") != nullptr);
  CHECK(p.find_global("__sma_tab")->size == 8);
  CHECK(p.find_global("__sma_tab")->synthetic);

  const IrFunction* ctor = p.find_func("__sma_ctor");
  REQUIRE(ctor != nullptr);
  const IrInstr* ga = find_op(*ctor, Opcode::Gaddr);
  const IrInstr* tp = find_op(*ctor, Opcode::TagPtr);
  const IrInstr* ss = find_op(*ctor, Opcode::ShadowStore);
  REQUIRE((ga && tp && ss));
  CHECK(ga->sym == "tab");
  CHECK(tp->literal == 32);
  CHECK(tp->args[0].name == ga->result);
  CHECK(ss->sym == "__sma_tab");
  CHECK(ss->args[0].name == tp->result);
}

TEST_CASE("loop phi pointers get a parallel bounds phi") {
  IrProgram p = parse_valid(kDriver);
  PassSummary sum = instrument(p, {Mode::Saturate, CodecKind::Buddy, false});
  CHECK(sum.base_phis == 1);
  const IrFunction* f = p.find_func("sum");
  const IrBlock* loop = nullptr;
  for (const auto& b : f->blocks)
    if (b.label == "loop")
      loop = &b;
  REQUIRE(loop != nullptr);

  // Leading phi cluster: the synthetic bounds phi joins the user phis.
  std::vector<const IrInstr*> phis;
  for (const auto& ins : loop->instrs) {
    if (ins.op != Opcode::Phi)
      break;
    phis.push_back(&ins);
  }
  REQUIRE(phis.size() == 4);
  const IrInstr* bp = nullptr;
  for (const auto* ph : phis)
    if (ph->synthetic)
      bp = ph;
  REQUIRE(bp != nullptr);
  CHECK(bp->result_type == ValueType::Ptr);

  // Entry arm carries the parameter (tagged at the call site); the back edge
  // carries the phi itself, closing the cycle without a second copy.
  REQUIRE(bp->phi.size() == 2);
  for (const auto& arm : bp->phi) {
    if (arm.pred == "entry")
      CHECK(arm.value.name == "q");
    else
      CHECK(arm.value.name == bp->result);
  }

  // The loop body's access checks against that phi's bounds.
  const IrInstr* check = find_op(*f, Opcode::Saturate);
  REQUIRE(check != nullptr);
  const IrInstr* lo = def_of(*f, check->args[1].name);
  REQUIRE(lo != nullptr);
  CHECK(lo->op == Opcode::EBase);
  CHECK(lo->args[0].name == bp->result);
}

TEST_CASE("integer observations and call boundaries are stripped or clamped") {
  IrProgram p = parse_valid(kDriver);
  PassSummary sum = instrument(p, {Mode::Saturate, CodecKind::Buddy, false});
  CHECK(sum.integer_masks == 1);
  CHECK(sum.call_clamps == 2);
  CHECK(sum.boundary_masks == 2); // one byval strip, one extern strip
  const IrFunction* f = p.find_func("main");

  const IrInstr* p2i = find_op(*f, Opcode::PtrToInt);
  REQUIRE(p2i != nullptr);
  const IrInstr* m = def_of(*f, p2i->args[0].name);
  REQUIRE(m != nullptr);
  CHECK(m->op == Opcode::Mask);
  CHECK(m->args[0].name == "p");

  const IrInstr* byval_call = find_op(*f, Opcode::Call); // @frob comes first
  REQUIRE(byval_call != nullptr);
  REQUIRE(byval_call->sym == "frob");
  const IrInstr* arg = def_of(*f, byval_call->args[0].name);
  REQUIRE(arg != nullptr);
  CHECK(arg->op == Opcode::Mask);
  const IrInstr* clamp = def_of(*f, arg->args[0].name);
  REQUIRE(clamp != nullptr);
  CHECK(clamp->op == Opcode::SatPtr);
  CHECK(clamp->args[0].name == "p");
  CHECK(clamp->args[1].name == "p"); // its own tag carries the bounds

  const IrInstr* plain_call = find_op(*f, Opcode::Call, 1);
  REQUIRE(plain_call != nullptr);
  REQUIRE(plain_call->sym == "sum");
  const IrInstr* clamp2 = def_of(*f, plain_call->args[0].name);
  REQUIRE(clamp2 != nullptr);
  CHECK(clamp2->op == Opcode::SatPtr);
  CHECK(clamp2->args[0].name == "g");
  CHECK(clamp2->args[1].name == "g"); // shadow-loaded value is its own bounds source

  const IrInstr* ext = find_op(*f, Opcode::CallExt);
  REQUIRE(ext != nullptr);
  const IrInstr* ext_arg = def_of(*f, ext->args[0].name);
  REQUIRE(ext_arg != nullptr);
  CHECK(ext_arg->op == Opcode::Mask);
}

TEST_CASE("address tagging elides dereference strips only") {
  IrProgram p = parse_valid(kDriver);
  PassSummary sum = instrument(p, {Mode::Saturate, CodecKind::Buddy, true});
  CHECK(sum.deref_masks == 0);
  CHECK(sum.deref_checks == 6);
  CHECK(sum.integer_masks == 1);
  CHECK(sum.boundary_masks == 2);

  // Checks take the raw pointer; the machine ignores tag bits on access.
  const IrFunction* f = p.find_func("main");
  const IrInstr* check = find_op(*f, Opcode::Saturate);
  REQUIRE(check != nullptr);
  CHECK(check->args[0].name == "p");
}

TEST_CASE("baseline mode strips dereferences and nothing else") {
  IrProgram p = parse_valid(kDriver);
  PassSummary sum = instrument(p, {Mode::Off, CodecKind::Buddy, false});
  CHECK(sum.deref_masks == 6);
  CHECK(sum.deref_checks == 0);
  CHECK(sum.shadow_globals == 0);
  CHECK(sum.call_clamps == 0);
  CHECK(sum.integer_masks == 0);
  CHECK(p.find_func("__sma_ctor") == nullptr);
  CHECK(p.find_global("__sma_tab") == nullptr);
  const IrFunction* f = p.find_func("main");
  CHECK(count_op(*f, Opcode::Gaddr) == 1); // not rewritten
  const IrInstr* p2i = find_op(*f, Opcode::PtrToInt);
  CHECK(p2i->args[0].name == "p"); // unstripped
  auto problems = verify_instrumented(p, {Mode::Off, CodecKind::Buddy, false});
  CHECK(problems.empty());
  CHECK(validate(p).empty());
}

TEST_CASE("baseline mode with address tagging is the identity") {
  IrProgram p = parse_valid(kDriver);
  IrProgram original = parse_valid(kDriver);
  PassSummary sum = instrument(p, {Mode::Off, CodecKind::Buddy, true});
  CHECK(sum.deref_masks == 0);
  CHECK(sum.deref_checks == 0);
  CHECK(structurally_equal(p, original));
}

TEST_CASE("reinstrumentation is refused") {
  IrProgram p = parse_valid(kDriver);
  PassConfig cfg{Mode::Saturate, CodecKind::Buddy, false};
  instrument(p, cfg);
  CHECK_THROWS_AS(instrument(p, cfg), PassError);

  IrProgram off = parse_valid(kDriver);
  instrument(off, {Mode::Off, CodecKind::Buddy, false});
  CHECK_THROWS_AS(instrument(off, cfg), PassError); // strips carry the pass prefix

  IrProgram named = parse_valid("func @main() -> i64 {\n  %__sma_x = malloc 8\n  ret 0\n}\n");
  CHECK_THROWS_AS(instrument(named, cfg), PassError);
}

TEST_CASE("shadow slot name collision is refused") {
  IrProgram p = parse_valid("global @x 16\nglobal @__sma_x 8\n"
                            "func @main() -> i64 {\n  ret 0\n}\n");
  CHECK_THROWS_AS(add_shadow_globals(p), PassError);
}

TEST_CASE("the audit notices hand-weakened programs") {
  PassConfig cfg{Mode::Saturate, CodecKind::Buddy, false};

  SECTION("check width no longer matches the access") {
    IrProgram p = parse_valid(kDriver);
    instrument(p, cfg);
    for (auto& b : p.find_func("main")->blocks)
      for (auto& ins : b.instrs)
        if (ins.op == Opcode::Saturate)
          ins.access_size = ins.access_size == 8 ? 4 : 8;
    CHECK_FALSE(verify_instrumented(p, cfg).empty());
  }
  SECTION("a check was deleted") {
    IrProgram p = parse_valid("func @main() -> i64 {\n  %p = malloc 16\n"
                              "  %v = load 4, %p\n  ret %v\n}\n");
    instrument(p, cfg);
    auto& instrs = p.find_func("main")->blocks[0].instrs;
    for (auto& ins : instrs)
      if (ins.op == Opcode::Load)
        ins.args[0] = Operand::value("p"); // point back at the raw pointer
    CHECK_FALSE(verify_instrumented(p, cfg).empty());
  }
  SECTION("wrong mode's check opcode") {
    IrProgram p = parse_valid(kDriver);
    instrument(p, cfg);
    CHECK_FALSE(verify_instrumented(p, {Mode::FailStop, CodecKind::Buddy, false}).empty());
  }
}
