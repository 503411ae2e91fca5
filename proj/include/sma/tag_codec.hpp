#pragma once

// Tagged-pointer codec: object bounds are carried in the unused high bits of
// a 64-bit pointer over a 46-bit canonical address space.  Tag fields are
// stored complemented, so an untagged pointer (high bits all zero) reads back
// as the unbounded sentinel instead of a bogus small object.

#include <bit>
#include <string>

#include "common.hpp"
#include "errors.hpp"

namespace sma {

inline constexpr u32 ADDRESS_BITS = 46;
inline constexpr u64 ADDRESS_LIMIT = u64(1) << ADDRESS_BITS;
inline constexpr u64 ADDRESS_MASK = ADDRESS_LIMIT - 1;

// Smallest allocation granule is 2^4: every object is padded by at least 8
// bytes, so even a 1-byte request rounds to 16.
inline constexpr u32 MIN_EXPONENT = 4;
// Largest exponent a tag can carry; 46 and above decode as unbounded.
inline constexpr u32 MAX_EXPONENT = 45;

inline constexpr u32 BUDDY_TAG_SHIFT = 58;

enum class CodecKind { Buddy, Floating };

// [base, bound) in untagged address units.  base <= bound <= 2^46.
struct Bounds {
  u64 base = 0;
  u64 bound = 0;

  bool unbounded() const { return base == 0 && bound == ADDRESS_LIMIT; }
  u64 size() const { return bound - base; }
  bool operator==(const Bounds&) const = default;
};

inline constexpr Bounds UNBOUNDED{0, ADDRESS_LIMIT};

struct TaggedPointer {
  u64 raw = 0;
  CodecKind codec = CodecKind::Buddy;
};

struct RoundedSize {
  u32 exponent = 0;
  u64 rounded = 0;
  bool operator==(const RoundedSize&) const = default;
};

enum class Verdict { InBounds, Overflow, Underflow };

struct SaturateResult {
  u64 addr = 0;
  Verdict verdict = Verdict::InBounds;
  bool operator==(const SaturateResult&) const = default;
};

// Clears every bit above the canonical address width.  Both codecs keep their
// tag fields in bits 63..46, so one mask serves both and also discards any
// junk an attacker smuggled into the reserved bits.
inline u64 strip(u64 raw) { return raw & ADDRESS_MASK; }

// Smallest power of two that fits the request plus 8 bytes of padding.
// rounded = 2^exponent >= requested + 8, exponent >= 4.  The padding means a
// saturated overflow access lands on allocator-owned bytes, never a neighbor.
inline RoundedSize round_size(u64 requested) {
  if (requested == 0)
    throw SizeError("allocation size must be nonzero");
  if (requested > (u64(1) << MAX_EXPONENT))
    throw SizeError("allocation size exceeds 2^45: " + std::to_string(requested));
  u64 padded = requested + 8;
  // padded >= 9, so bit_width(padded - 1) >= 4 and MIN_EXPONENT needs no clamp.
  u32 exponent = static_cast<u32>(std::bit_width(padded - 1));
  return {exponent, u64(1) << exponent};
}

namespace detail {

inline u64 field(u64 raw, u32 shift) { return (~(raw >> shift)) & 0x3F; }

inline void require_base(u64 base_addr, u32 exponent) {
  if (exponent < MIN_EXPONENT || exponent > MAX_EXPONENT)
    throw SizeError("tag exponent out of range: " + std::to_string(exponent));
  if (base_addr >= ADDRESS_LIMIT)
    throw AlignmentError("base address beyond canonical range");
  if (base_addr & ((u64(1) << exponent) - 1))
    throw AlignmentError("base address not aligned to its rounded size");
}

// Floating layout: bits 63..58 block exponent E, 57..52 base block index,
// 51..46 end block index, each stored complemented.  The object covers whole
// 2^E blocks inside the 2^(E+6)-aligned window containing the address.  An
// end index of 0 means 64: an object touching the last block of its window
// is otherwise unrepresentable in 6 bits.
inline u64 make_floating(u64 base_addr, u32 exponent) {
  u32 e = exponent > 5 ? exponent - 5 : 0;
  u64 blocks = u64(1) << (exponent - e); // 16..32
  u64 base_blk = (base_addr >> e) & 0x3F;
  u64 end_blk = (base_blk + blocks) & 0x3F; // 64 stored as 0
  return base_addr | ((~u64(e) & 0x3F) << 58) | ((~base_blk & 0x3F) << 52) |
         ((~end_blk & 0x3F) << 46);
}

inline Bounds decode_floating(u64 raw) {
  u64 e = field(raw, 58);
  if (e >= ADDRESS_BITS)
    return UNBOUNDED;
  u64 base_blk = field(raw, 52);
  u64 end_blk = field(raw, 46);
  if (end_blk == 0)
    end_blk = 64;
  u64 window = u64(1) << (e + 6);
  u64 window_base = strip(raw) & ~(window - 1);
  u64 base = window_base + (base_blk << e);
  u64 bound = window_base + (end_blk << e);
  // Arbitrary bit patterns (corrupted tags) must still produce valid Bounds.
  if (base > ADDRESS_LIMIT)
    base = ADDRESS_LIMIT;
  if (bound > ADDRESS_LIMIT)
    bound = ADDRESS_LIMIT;
  if (bound < base)
    bound = base;
  return {base, bound};
}

} // namespace detail

// Tags a rounded object's base address.  The object is [base, base + 2^exponent),
// base aligned to 2^exponent.
inline TaggedPointer make_tagged(u64 base_addr, u32 exponent,
                                 CodecKind codec = CodecKind::Buddy) {
  detail::require_base(base_addr, exponent);
  if (codec == CodecKind::Buddy)
    return {base_addr | ((~u64(exponent) & 0x3F) << BUDDY_TAG_SHIFT), codec};
  return {detail::make_floating(base_addr, exponent), codec};
}

// Total over arbitrary 64-bit patterns.  Tagless pointers (and any exponent
// >= 46 after complementing) decode to the unbounded sentinel {0, 2^46}.
inline Bounds decode(u64 raw, CodecKind codec = CodecKind::Buddy) {
  if (codec == CodecKind::Floating)
    return detail::decode_floating(raw);
  u64 exponent = detail::field(raw, BUDDY_TAG_SHIFT);
  if (exponent >= ADDRESS_BITS)
    return UNBOUNDED;
  u64 base = strip(raw) & ~((u64(1) << exponent) - 1);
  return {base, base + (u64(1) << exponent)}; // <= 2^46 since base is aligned
}

inline Bounds decode(const TaggedPointer& p) { return decode(p.raw, p.codec); }

// Clamps an access of access_size bytes at addr into bounds: underflow snaps
// to base, overflow to the last in-bounds slot.  addr is an untagged address.
inline SaturateResult saturate(u64 addr, u32 access_size, const Bounds& b) {
  if (access_size != 1 && access_size != 2 && access_size != 4 && access_size != 8)
    throw CheckConfigError("unsupported access width: " + std::to_string(access_size));
  if (b.bound < b.base || b.bound > ADDRESS_LIMIT)
    throw CheckConfigError("malformed bounds");
  if (access_size > b.size())
    throw CheckConfigError("access wider than the object");
  if (addr < b.base)
    return {b.base, Verdict::Underflow};
  if (addr > b.bound - access_size)
    return {b.bound - access_size, Verdict::Overflow};
  return {addr, Verdict::InBounds};
}

} // namespace sma
