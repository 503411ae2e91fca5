#pragma once

// Simulated 46-bit address space with three bump-allocated regions.  Objects
// are rounded to powers of two, aligned to their rounded size, and never
// reused within one execution, so every address identifies at most one object
// for the whole run.  Byte storage is sparse: pages materialize on first
// write and absent bytes read as zero, which also gives zero-filled
// allocations for free.

#include <string>
#include <unordered_map>
#include <vector>

#include "tag_codec.hpp"

namespace sma {

enum class Region { Global, Heap, Stack };

inline const char* region_name(Region r) {
  switch (r) {
  case Region::Global: return "global";
  case Region::Heap: return "heap";
  default: return "stack";
  }
}

struct ObjectRecord {
  u64 id = 0;
  u64 base = 0; // untagged
  u64 requested = 0;
  u64 rounded = 0;
  u32 exponent = 0;
  Region region = Region::Heap;
  bool live = false;
};

struct FragEntry {
  u64 requested = 0;
  u64 rounded = 0;
  double ratio = 1.0;
};

struct FragReport {
  std::vector<FragEntry> objects;
  u64 total_requested = 0;
  u64 total_rounded = 0;
  double aggregate = 1.0; // total_rounded / total_requested; 1.0 when empty
};

class AddressSpace {
public:
  static constexpr u64 PAGE_SIZE = 4096;
  // Region r occupies [region_base(r), 2 * region_base(r)).  Nothing lives
  // below 2^40, so small and wild addresses stay unbacked.
  static constexpr u64 GLOBAL_BASE = u64(1) << 40;
  static constexpr u64 HEAP_BASE = u64(1) << 41;
  static constexpr u64 STACK_BASE = u64(1) << 42;

  explicit AddressSpace(CodecKind codec = CodecKind::Buddy) : codec_(codec) {
    cursor_[0] = GLOBAL_BASE;
    cursor_[1] = HEAP_BASE;
    cursor_[2] = STACK_BASE;
  }

  CodecKind codec() const { return codec_; }

  static constexpr u64 region_base(Region r) {
    switch (r) {
    case Region::Global: return GLOBAL_BASE;
    case Region::Heap: return HEAP_BASE;
    default: return STACK_BASE;
    }
  }
  static constexpr u64 region_end(Region r) { return region_base(r) * 2; }

  struct Allocation {
    TaggedPointer ptr;
    u64 id = 0;
    u64 base = 0;
  };

  // Rounds, aligns, and carves a fresh object; the returned pointer carries
  // the object's tag.  The new region [base, base + rounded) reads as zero.
  Allocation allocate(u64 requested, Region r) {
    RoundedSize rs = round_size(requested);
    if (rs.exponent > MAX_EXPONENT)
      throw OutOfMemoryError("allocation too large for any region");
    u64 base = align_up(cursor_[index(r)], rs.rounded);
    if (base + rs.rounded > region_end(r) || base + rs.rounded < base)
      throw OutOfMemoryError(std::string("out of ") + region_name(r) + " memory");
    cursor_[index(r)] = base + rs.rounded;
    u64 id = records_.size();
    records_.push_back({id, base, requested, rs.rounded, rs.exponent, r, true});
    live_by_base_.emplace(base, id);
    return {make_tagged(base, rs.exponent, codec_), id, base};
  }

  // Marks the object dead.  Its bytes stay readable (no address reuse), which
  // keeps dangling reads deterministic and out of scope.
  void release(u64 id) {
    if (id >= records_.size() || !records_[id].live)
      throw FreeError("release of unknown or dead object " + std::to_string(id));
    records_[id].live = false;
    live_by_base_.erase(records_[id].base);
  }

  const std::vector<ObjectRecord>& objects() const { return records_; }

  const ObjectRecord& object(u64 id) const {
    if (id >= records_.size())
      throw Error("no such object id");
    return records_[id];
  }

  // Live object whose base is exactly `base`, or null.
  const ObjectRecord* find_live_by_base(u64 base) const {
    auto it = live_by_base_.find(base);
    return it == live_by_base_.end() ? nullptr : &records_[it->second];
  }

  // True when the whole access lies inside memory the allocator has handed
  // out (including padding and dead objects).  The off mode uses the negation
  // to emulate a segmentation fault.
  bool accessible(u64 addr, u64 size) const {
    for (Region r : {Region::Global, Region::Heap, Region::Stack}) {
      if (addr >= region_base(r) && addr + size <= cursor_[index(r)])
        return true;
    }
    return false;
  }

  // Little-endian load of 1/2/4/8 bytes.  Unwritten bytes read as zero.
  u64 read(u64 addr, u32 size) const {
    check_access(addr, size);
    u64 v = 0;
    for (u32 i = 0; i < size; ++i)
      v |= u64(read_byte(addr + i)) << (8 * i);
    return v;
  }

  void write(u64 addr, u32 size, u64 value) {
    check_access(addr, size);
    for (u32 i = 0; i < size; ++i)
      write_byte(addr + i, u8(value >> (8 * i)));
  }

  std::vector<u8> read_bytes(u64 addr, u64 len) const {
    if (addr + len > ADDRESS_LIMIT || addr + len < addr)
      throw CheckConfigError("read beyond canonical range");
    std::vector<u8> out(len);
    for (u64 i = 0; i < len; ++i)
      out[i] = read_byte(addr + i);
    return out;
  }

  void write_bytes(u64 addr, const std::vector<u8>& bytes) {
    if (addr + bytes.size() > ADDRESS_LIMIT || addr + bytes.size() < addr)
      throw CheckConfigError("write beyond canonical range");
    for (u64 i = 0; i < bytes.size(); ++i)
      write_byte(addr + i, bytes[i]);
  }

  // Every allocation ever made, in order, plus the aggregate padding cost.
  FragReport fragmentation() const {
    FragReport rep;
    for (const auto& rec : records_) {
      rep.objects.push_back({rec.requested, rec.rounded,
                             double(rec.rounded) / double(rec.requested)});
      rep.total_requested += rec.requested;
      rep.total_rounded += rec.rounded;
    }
    if (rep.total_requested)
      rep.aggregate = double(rep.total_rounded) / double(rep.total_requested);
    return rep;
  }

private:
  static size_t index(Region r) { return static_cast<size_t>(r); }

  static u64 align_up(u64 v, u64 align) { return (v + align - 1) & ~(align - 1); }

  static void check_access(u64 addr, u32 size) {
    if (size != 1 && size != 2 && size != 4 && size != 8)
      throw CheckConfigError("unsupported access width");
    if (addr + size > ADDRESS_LIMIT)
      throw CheckConfigError("access beyond canonical range");
  }

  u8 read_byte(u64 addr) const {
    auto it = pages_.find(addr / PAGE_SIZE);
    return it == pages_.end() ? 0 : it->second[addr % PAGE_SIZE];
  }

  void write_byte(u64 addr, u8 v) {
    auto [it, fresh] = pages_.try_emplace(addr / PAGE_SIZE);
    if (fresh)
      it->second.resize(PAGE_SIZE, 0);
    it->second[addr % PAGE_SIZE] = v;
  }

  CodecKind codec_;
  u64 cursor_[3] = {};
  std::vector<ObjectRecord> records_;
  std::unordered_map<u64, u64> live_by_base_;
  std::unordered_map<u64, std::vector<u8>> pages_;
};

} // namespace sma
