#pragma once

// Line-oriented text parser for the IR. Parsing is purely structural: it
// builds the program shape and reports the first syntax error with line and
// column. Name resolution and semantic rules live in ir_verify.hpp, so a
// program that parses may still fail validation.
//
// Shape of the language:
//
//   global @msg 16 = [68 69 00]
//   extern @print(ptr, i64)
//
//   func @main() -> i64 {
//     %p = malloc 24          # block 'entry' is implicit before any label
//     br loop
//   loop:
//     %i = phi i64 [entry: 0] [loop: %n]
//     ...
//   }

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ir.hpp"

namespace sma {

struct ParseResult {
  std::optional<IrProgram> program;
  Diagnostic error;
  bool ok() const { return program.has_value(); }
};

namespace detail {

struct Token {
  std::string text;
  int col = 0; // 1-based
  bool is_punct = false;
};

// Splits one line into word and punctuation tokens. '#' starts a comment.
inline bool tokenize_line(std::string_view line, std::vector<Token>& out, int& bad_col) {
  out.clear();
  size_t i = 0;
  auto is_punct_char = [](char c) {
    return c == '(' || c == ')' || c == '[' || c == ']' || c == '{' || c == '}' || c == ',' ||
           c == ':' || c == '=';
  };
  while (i < line.size()) {
    char c = line[i];
    if (c == '#')
      break;
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '-' && i + 1 < line.size() && line[i + 1] == '>') {
      out.push_back({"->", int(i) + 1, true});
      i += 2;
      continue;
    }
    if (is_punct_char(c)) {
      out.push_back({std::string(1, c), int(i) + 1, true});
      ++i;
      continue;
    }
    size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) &&
           !is_punct_char(line[i]) && line[i] != '#') {
      if (line[i] == '-' && i + 1 < line.size() && line[i + 1] == '>' && i != start)
        break;
      ++i;
    }
    if (i == start) {
      bad_col = int(i) + 1;
      return false;
    }
    out.push_back({std::string(line.substr(start, i - start)), int(start) + 1, false});
  }
  return true;
}

class IrParser {
public:
  explicit IrParser(std::string_view text) : text_(text) {}

  ParseResult run() {
    ParseResult res;
    try {
      parse_program();
      res.program = std::move(prog_);
    } catch (const Diagnostic& d) {
      res.error = d;
    }
    return res;
  }

private:
  std::string_view text_;
  IrProgram prog_;
  std::vector<Token> toks_;
  size_t pos_ = 0;
  int line_no_ = 0;

  [[noreturn]] void fail(const std::string& msg, int col = 0) {
    if (col == 0)
      col = pos_ < toks_.size() ? toks_[pos_].col : (toks_.empty() ? 1 : toks_.back().col + 1);
    throw Diagnostic{line_no_, col, msg};
  }

  bool at_end() const { return pos_ >= toks_.size(); }
  const Token& peek() {
    if (at_end())
      fail("unexpected end of line");
    return toks_[pos_];
  }
  Token take() {
    const Token t = peek();
    ++pos_;
    return t;
  }
  bool accept_punct(const char* p) {
    if (!at_end() && toks_[pos_].is_punct && toks_[pos_].text == p) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_punct(const char* p) {
    if (!accept_punct(p))
      fail(std::string("expected '") + p + "'");
  }
  void expect_line_end() {
    if (!at_end())
      fail("trailing tokens after instruction");
  }
  std::string expect_word(const char* what) {
    const Token t = take();
    if (t.is_punct)
      fail(std::string("expected ") + what, t.col);
    return t.text;
  }
  std::string expect_sigil(char sigil, const char* what) {
    const Token t = take();
    if (t.is_punct || t.text.size() < 2 || t.text[0] != sigil)
      fail(std::string("expected ") + what, t.col);
    return t.text.substr(1);
  }
  ValueType expect_type() {
    const Token t = take();
    if (!t.is_punct) {
      if (t.text == "i64")
        return ValueType::I64;
      if (t.text == "ptr")
        return ValueType::Ptr;
    }
    fail("expected type 'i64' or 'ptr'", t.col);
  }

  std::optional<u64> parse_int(const std::string& w) {
    bool neg = false;
    size_t i = 0;
    if (i < w.size() && w[i] == '-') {
      neg = true;
      ++i;
    }
    int base = 10;
    if (w.size() >= i + 2 && w[i] == '0' && (w[i + 1] == 'x' || w[i + 1] == 'X')) {
      base = 16;
      i += 2;
    }
    if (i >= w.size())
      return std::nullopt;
    u64 v = 0;
    for (; i < w.size(); ++i) {
      char c = w[i];
      int digit;
      if (c >= '0' && c <= '9')
        digit = c - '0';
      else if (base == 16 && c >= 'a' && c <= 'f')
        digit = c - 'a' + 10;
      else if (base == 16 && c >= 'A' && c <= 'F')
        digit = c - 'A' + 10;
      else
        return std::nullopt;
      u64 next = v * base + u64(digit);
      if (next / base != v) // wrapped past 2^64
        return std::nullopt;
      v = next;
    }
    return neg ? ~v + 1 : v;
  }

  u64 expect_int(const char* what) {
    const Token t = take();
    if (!t.is_punct)
      if (auto v = parse_int(t.text))
        return *v;
    fail(std::string("expected ") + what, t.col);
  }

  Operand expect_operand() {
    const Token t = take();
    if (!t.is_punct) {
      if (t.text[0] == '%') {
        if (t.text.size() < 2)
          fail("expected value name after '%'", t.col);
        return Operand::value(t.text.substr(1));
      }
      if (auto v = parse_int(t.text))
        return Operand::constant(*v);
    }
    fail("expected operand (constant or %value)", t.col);
  }

  // ---- top level ----

  void parse_program() {
    size_t offset = 0;
    IrFunction* cur_fn = nullptr;
    IrBlock* cur_block = nullptr;
    while (offset < text_.size()) {
      size_t nl = text_.find('\n', offset);
      std::string_view line = text_.substr(offset, nl == std::string_view::npos ? std::string_view::npos
                                                                                : nl - offset);
      offset = nl == std::string_view::npos ? text_.size() : nl + 1;
      ++line_no_;
      int bad_col = 0;
      if (!tokenize_line(line, toks_, bad_col))
        throw Diagnostic{line_no_, bad_col, "unreadable character"};
      pos_ = 0;
      if (toks_.empty())
        continue;

      if (cur_fn == nullptr) {
        const Token head = peek();
        if (head.text == "global") {
          ++pos_;
          parse_global();
        } else if (head.text == "extern") {
          ++pos_;
          parse_extern();
        } else if (head.text == "func") {
          ++pos_;
          cur_fn = parse_func_header();
          cur_block = nullptr;
        } else {
          fail("expected 'global', 'extern', or 'func'", head.col);
        }
        continue;
      }

      // inside a function body
      if (toks_.size() == 1 && toks_[0].is_punct && toks_[0].text == "}") {
        cur_fn = nullptr;
        cur_block = nullptr;
        continue;
      }
      if (toks_.size() == 2 && !toks_[0].is_punct && toks_[1].is_punct && toks_[1].text == ":") {
        if (toks_[0].text[0] == '%' || toks_[0].text[0] == '@')
          fail("block label cannot start with a sigil", toks_[0].col);
        cur_fn->blocks.push_back({toks_[0].text, {}, line_no_});
        cur_block = &cur_fn->blocks.back();
        continue;
      }
      if (cur_block == nullptr) {
        cur_fn->blocks.push_back({"entry", {}, line_no_});
        cur_block = &cur_fn->blocks.back();
      }
      cur_block->instrs.push_back(parse_instr());
    }
    if (cur_fn != nullptr)
      throw Diagnostic{line_no_, 1, "unexpected end of input inside @" + cur_fn->name};
  }

  void parse_global() {
    IrGlobal g;
    g.line = line_no_;
    g.name = expect_sigil('@', "global name '@name'");
    g.size = expect_int("byte size");
    if (g.size == 0)
      fail("global size must be positive");
    if (accept_punct("=")) {
      expect_punct("[");
      while (!accept_punct("]")) {
        const Token t = take();
        std::optional<u64> v;
        if (!t.is_punct && t.text.size() <= 2)
          v = parse_int("0x" + t.text);
        if (!v || *v > 0xFF)
          fail("expected initializer byte (two hex digits)", t.col);
        g.init.push_back(u8(*v));
      }
      if (g.init.size() > g.size)
        fail("initializer longer than global size");
    }
    expect_line_end();
    prog_.globals.push_back(std::move(g));
  }

  void parse_extern() {
    IrExtern e;
    e.line = line_no_;
    e.name = expect_sigil('@', "extern name '@name'");
    expect_punct("(");
    if (!accept_punct(")")) {
      e.params.push_back(expect_type());
      while (accept_punct(","))
        e.params.push_back(expect_type());
      expect_punct(")");
    }
    if (accept_punct("->"))
      e.ret = expect_type();
    expect_line_end();
    prog_.externs.push_back(std::move(e));
  }

  IrFunction* parse_func_header() {
    IrFunction fn;
    fn.line = line_no_;
    fn.name = expect_sigil('@', "function name '@name'");
    expect_punct("(");
    if (!accept_punct(")")) {
      do {
        IrParam p;
        p.type = expect_type();
        if (!at_end() && !peek().is_punct && peek().text == "byval") {
          ++pos_;
          if (p.type != ValueType::Ptr)
            fail("byval applies only to ptr parameters");
          p.byval = true;
        }
        p.name = expect_sigil('%', "parameter name '%name'");
        fn.params.push_back(std::move(p));
      } while (accept_punct(","));
      expect_punct(")");
    }
    if (accept_punct("->"))
      fn.ret = expect_type();
    expect_punct("{");
    expect_line_end();
    prog_.funcs.push_back(std::move(fn));
    return &prog_.funcs.back();
  }

  // ---- instructions ----

  IrInstr parse_instr() {
    IrInstr ins;
    ins.line = line_no_;
    if (!peek().is_punct && peek().text[0] == '%' && pos_ + 1 < toks_.size() &&
        toks_[pos_ + 1].is_punct && toks_[pos_ + 1].text == "=") {
      ins.result = expect_sigil('%', "result name");
      ++pos_; // '='
    }
    const Token op_tok = take();
    if (op_tok.is_punct)
      fail("expected an instruction", op_tok.col);
    const std::string& op = op_tok.text;

    auto need_result = [&] {
      if (ins.result.empty())
        fail("'" + op + "' produces a value; assign it with '%name ='", op_tok.col);
    };
    auto no_result = [&] {
      if (!ins.result.empty())
        fail("'" + op + "' produces no value", op_tok.col);
    };
    auto operands = [&](int n) {
      for (int i = 0; i < n; ++i) {
        if (i)
          expect_punct(",");
        ins.args.push_back(expect_operand());
      }
    };
    auto access_width = [&] {
      const Token t = peek();
      if (!t.is_punct && t.text == "ptr") {
        ++pos_;
        ins.ptr_access = true;
        ins.access_size = 8;
        return;
      }
      u64 w = expect_int("access width (1, 2, 4, 8, or 'ptr')");
      if (w != 1 && w != 2 && w != 4 && w != 8)
        fail("access width must be 1, 2, 4, or 8", t.col);
      ins.access_size = u32(w);
    };

    if (op == "alloca") {
      need_result();
      ins.op = Opcode::Alloca;
      ins.result_type = ValueType::Ptr;
      ins.literal = expect_int("byte size");
    } else if (op == "malloc") {
      need_result();
      ins.op = Opcode::Malloc;
      ins.result_type = ValueType::Ptr;
      operands(1);
    } else if (op == "free") {
      no_result();
      ins.op = Opcode::Free;
      operands(1);
    } else if (op == "gaddr") {
      need_result();
      ins.op = Opcode::Gaddr;
      ins.result_type = ValueType::Ptr;
      ins.sym = expect_sigil('@', "global name '@name'");
    } else if (op == "ptradd") {
      need_result();
      ins.op = Opcode::PtrAdd;
      ins.result_type = ValueType::Ptr;
      operands(2);
    } else if (op == "cast") {
      need_result();
      ins.op = Opcode::Cast;
      ins.result_type = ValueType::Ptr;
      operands(1);
    } else if (op == "ptrtoint") {
      need_result();
      ins.op = Opcode::PtrToInt;
      ins.result_type = ValueType::I64;
      operands(1);
    } else if (op == "inttoptr") {
      need_result();
      ins.op = Opcode::IntToPtr;
      ins.result_type = ValueType::Ptr;
      operands(1);
    } else if (op == "phi") {
      need_result();
      ins.op = Opcode::Phi;
      ins.result_type = expect_type();
      while (accept_punct("[")) {
        PhiArm arm;
        arm.pred = expect_word("predecessor label");
        expect_punct(":");
        arm.value = expect_operand();
        expect_punct("]");
        ins.phi.push_back(std::move(arm));
      }
      if (ins.phi.empty())
        fail("phi needs at least one [pred: value] arm");
    } else if (op == "load") {
      need_result();
      ins.op = Opcode::Load;
      access_width();
      ins.result_type = ins.ptr_access ? ValueType::Ptr : ValueType::I64;
      expect_punct(",");
      operands(1);
    } else if (op == "store") {
      no_result();
      ins.op = Opcode::Store;
      access_width();
      expect_punct(",");
      operands(1); // value
      expect_punct(",");
      operands(1); // address
    } else if (op == "icmp") {
      need_result();
      ins.op = Opcode::Icmp;
      static const std::pair<const char*, CmpOp> cmps[] = {
          {"eq", CmpOp::Eq},   {"ne", CmpOp::Ne},   {"ult", CmpOp::Ult}, {"ule", CmpOp::Ule},
          {"ugt", CmpOp::Ugt}, {"uge", CmpOp::Uge}, {"slt", CmpOp::Slt}, {"sle", CmpOp::Sle},
          {"sgt", CmpOp::Sgt}, {"sge", CmpOp::Sge}};
      const std::string w = expect_word("comparison kind");
      bool found = false;
      for (auto& [name, c] : cmps)
        if (w == name) {
          ins.cmp = c;
          found = true;
        }
      if (!found)
        fail("unknown comparison '" + w + "'");
      operands(2);
    } else if (auto b = bin_lookup(op)) {
      need_result();
      ins.op = Opcode::Bin;
      ins.bin = *b;
      operands(2);
    } else if (op == "call" || op == "callext") {
      ins.op = op == "call" ? Opcode::Call : Opcode::CallExt;
      ins.sym = expect_sigil('@', "callee name '@name'");
      while (accept_punct(","))
        ins.args.push_back(expect_operand());
      // result presence is checked against the callee signature by validate()
    } else if (op == "br") {
      no_result();
      ins.op = Opcode::Br;
      ins.target = expect_word("block label");
    } else if (op == "brcond") {
      no_result();
      ins.op = Opcode::BrCond;
      operands(1);
      expect_punct(",");
      ins.target = expect_word("block label");
      expect_punct(",");
      ins.target2 = expect_word("block label");
    } else if (op == "ret") {
      no_result();
      ins.op = Opcode::Ret;
      if (!at_end())
        operands(1);
    } else if (op == "mask") {
      need_result();
      ins.op = Opcode::Mask;
      ins.result_type = ValueType::Ptr;
      operands(1);
    } else if (op == "ebase") {
      need_result();
      ins.op = Opcode::EBase;
      ins.result_type = ValueType::Ptr;
      operands(1);
    } else if (op == "ebound") {
      need_result();
      ins.op = Opcode::EBound;
      ins.result_type = ValueType::Ptr;
      operands(1);
    } else if (op == "saturate.load" || op == "saturate.store" || op == "trapoob.load" ||
               op == "trapoob.store" || op == "redirect.load" || op == "redirect.store") {
      need_result();
      const bool store = op.size() > 6 && op.substr(op.size() - 5) == "store";
      ins.op = op[0] == 's' ? Opcode::Saturate : op[0] == 't' ? Opcode::TrapOob : Opcode::Redirect;
      ins.access = store ? AccessKind::Store : AccessKind::Load;
      ins.result_type = ValueType::Ptr;
      operands(3);
      expect_punct(",");
      u64 w = expect_int("access width");
      if (w != 1 && w != 2 && w != 4 && w != 8)
        fail("access width must be 1, 2, 4, or 8");
      ins.access_size = u32(w);
    } else if (op == "satptr") {
      need_result();
      ins.op = Opcode::SatPtr;
      ins.result_type = ValueType::Ptr;
      operands(2);
    } else if (op == "trapptr") {
      need_result();
      ins.op = Opcode::TrapPtr;
      ins.result_type = ValueType::Ptr;
      operands(2);
    } else if (op == "shadowload") {
      need_result();
      ins.op = Opcode::ShadowLoad;
      ins.result_type = ValueType::Ptr;
      ins.sym = expect_sigil('@', "global name '@name'");
    } else if (op == "shadowstore") {
      no_result();
      ins.op = Opcode::ShadowStore;
      ins.sym = expect_sigil('@', "global name '@name'");
      expect_punct(",");
      operands(1);
    } else if (op == "tagptr") {
      need_result();
      ins.op = Opcode::TagPtr;
      ins.result_type = ValueType::Ptr;
      operands(1);
      expect_punct(",");
      ins.literal = expect_int("object byte size");
      if (ins.literal == 0)
        fail("tagptr size must be positive");
    } else {
      fail("unknown instruction '" + op + "'", op_tok.col);
    }
    expect_line_end();
    return ins;
  }

  static std::optional<BinOp> bin_lookup(const std::string& w) {
    static const std::pair<const char*, BinOp> bins[] = {
        {"add", BinOp::Add},   {"sub", BinOp::Sub},   {"mul", BinOp::Mul},
        {"udiv", BinOp::Udiv}, {"sdiv", BinOp::Sdiv}, {"urem", BinOp::Urem},
        {"srem", BinOp::Srem}, {"and", BinOp::And},   {"or", BinOp::Or},
        {"xor", BinOp::Xor},   {"shl", BinOp::Shl},   {"lshr", BinOp::Lshr},
        {"ashr", BinOp::Ashr}};
    for (auto& [name, b] : bins)
      if (w == name)
        return b;
    return std::nullopt;
  }
};

} // namespace detail

inline ParseResult parse_ir(std::string_view text) { return detail::IrParser(text).run(); }

} // namespace sma
