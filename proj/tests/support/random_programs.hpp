#pragma once

// Random program generator for neighbor-integrity and differential testing.
//
// Each generated program allocates a few heap and stack objects, paints every
// object except one (the attacker) with a deterministic sentinel pattern, then
// fires a burst of loads and stores through pointers derived from the attacker
// at offsets ranging from in-bounds to wildly out of range, including offsets
// that carry into the tag bits. The sentinel bytes of every other object form
// the oracle: no matter what the burst did, a correct clamping run leaves them
// untouched.
//
// The generator emits program text only; it has no dependency on the library
// under test, so the oracle cannot inherit its bugs.

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testgen {

struct GenObject {
  uint64_t size = 0;
  bool heap = true; // else a stack allocation
};

struct GenProgram {
  std::string text;
  std::vector<GenObject> objects; // allocation order matches the runtime log
  size_t attacker = 0;
  int oob_writes = 0; // burst stores with an offset outside [0, size)

  // Deterministic pattern for object v at byte i. Never zero, so an
  // untouched byte is distinguishable from a zero-filled one.
  static uint8_t sentinel(size_t v, uint64_t i) {
    return uint8_t(1 + (v * 37 + i * 11) % 251);
  }
};

struct GenConfig {
  int min_objects = 2;
  int max_objects = 6;
  uint64_t max_size = 80;
  int min_burst = 12;
  int max_burst = 30;
};

namespace detail {

inline uint64_t pick(std::mt19937_64& rng, uint64_t lo, uint64_t hi) {
  return lo + rng() % (hi - lo + 1);
}

// Offset classes, from harmless to hostile. Classes above 0 are expected to
// leave the attacker's requested region most of the time.
inline int64_t pick_offset(std::mt19937_64& rng, uint64_t size, int cls) {
  switch (cls) {
  case 0: // in bounds
    return int64_t(rng() % size);
  case 1: // just past the end
    return int64_t(size + rng() % 16);
  case 2: // just before the base
    return -1 - int64_t(rng() % 16);
  case 3: // far positive
    return int64_t(rng() % (1ull << 20));
  case 4: // far negative
    return -int64_t(rng() % (1ull << 20));
  case 5: // wild, up to half the address space either way
    return (rng() & 1) ? int64_t(rng() % (1ull << 45))
                       : -int64_t(rng() % (1ull << 45));
  default: // carries into the tag bits
    return int64_t((1ull << 46) * (1 + rng() % 3) + rng() % 256);
  }
}

} // namespace detail

inline GenProgram generate_program(std::mt19937_64& rng,
                                   const GenConfig& cfg = {}) {
  using detail::pick;
  GenProgram g;

  const int n_objects = int(pick(rng, cfg.min_objects, cfg.max_objects));
  for (int i = 0; i < n_objects; ++i)
    g.objects.push_back({pick(rng, 1, cfg.max_size), (rng() & 3) != 0});
  g.attacker = rng() % g.objects.size();

  const bool with_helper = rng() % 4 == 0;
  const int burst = int(pick(rng, cfg.min_burst, cfg.max_burst));

  std::ostringstream out;
  if (with_helper) {
    out << "func @poke(ptr %p, i64 %off, i64 %val) -> i64 {\n"
        << "entry:\n"
        << "  %t = ptradd %p, %off\n"
        << "  store 1, %val, %t\n"
        << "  ret 0\n"
        << "}\n\n";
  }

  out << "func @main() -> i64 {\nentry:\n";
  for (size_t v = 0; v < g.objects.size(); ++v) {
    out << "  %o" << v << " = "
        << (g.objects[v].heap ? "malloc " : "alloca ") << g.objects[v].size
        << "\n";
  }

  // Paint the victims.
  for (size_t v = 0; v < g.objects.size(); ++v) {
    if (v == g.attacker)
      continue;
    for (uint64_t i = 0; i < g.objects[v].size; ++i) {
      out << "  %s" << v << "_" << i << " = ptradd %o" << v << ", " << i
          << "\n";
      out << "  store 1, " << unsigned(GenProgram::sentinel(v, i)) << ", %s"
          << v << "_" << i << "\n";
    }
  }

  // The burst. Force a few hostile stores so every program really does
  // attempt out-of-bounds writes; the rest is an arbitrary mix.
  const uint64_t asz = g.objects[g.attacker].size;
  for (int j = 0; j < burst; ++j) {
    const int cls = j < 4 ? int(1 + rng() % 6) : int(rng() % 7);
    const int64_t off = detail::pick_offset(rng, asz, cls);
    const bool hostile = off < 0 || uint64_t(off) >= asz;

    const bool two_hop = rng() % 4 == 0;
    std::string ptr_reg = "%c" + std::to_string(j);
    if (two_hop) {
      const int64_t first = detail::pick_offset(rng, asz, int(rng() % 3));
      out << "  %h" << j << " = ptradd %o" << g.attacker << ", " << first
          << "\n";
      out << "  " << ptr_reg << " = ptradd %h" << j << ", " << (off - first)
          << "\n";
    } else {
      out << "  " << ptr_reg << " = ptradd %o" << g.attacker << ", " << off
          << "\n";
    }

    const bool is_store = j < 4 || rng() % 3 != 0;
    if (is_store && with_helper && rng() % 3 == 0) {
      // Route the write through the call boundary instead.
      out << "  %r" << j << " = call @poke, %o" << g.attacker << ", " << off
          << ", " << rng() % 256 << "\n";
      if (hostile)
        ++g.oob_writes;
      continue;
    }

    static const unsigned widths[4] = {1, 2, 4, 8};
    const unsigned w = widths[rng() % 4];
    if (is_store) {
      out << "  store " << w << ", " << rng() % 256 << ", " << ptr_reg << "\n";
      if (hostile || uint64_t(off) + w > asz)
        ++g.oob_writes;
    } else {
      out << "  %l" << j << " = load " << w << ", " << ptr_reg << "\n";
    }
  }

  out << "  ret 0\n}\n";
  g.text = out.str();
  return g;
}

} // namespace testgen
