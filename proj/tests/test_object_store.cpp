#include <catch2/catch_amalgamated.hpp>

#include <random>

#include <sma/object_store.hpp>

using namespace sma;

TEST_CASE("allocate: tag decodes to the padded object") {
  for (CodecKind codec : {CodecKind::Buddy, CodecKind::Floating}) {
    AddressSpace space(codec);
    auto a = space.allocate(24, Region::Heap);
    const ObjectRecord& rec = space.object(a.id);
    CHECK(rec.requested == 24);
    CHECK(rec.rounded == 32);
    CHECK(rec.base % 32 == 0);
    CHECK(rec.base >= AddressSpace::HEAP_BASE);
    CHECK(rec.base + rec.rounded <= AddressSpace::region_end(Region::Heap));
    CHECK(decode(a.ptr) == Bounds{rec.base, rec.base + 32});
  }
}

TEST_CASE("allocate: objects are disjoint, aligned, and zero-filled") {
  std::mt19937_64 rng(21);
  AddressSpace space;
  std::vector<u64> ids;
  for (int i = 0; i < 64; ++i) {
    Region r = i % 3 == 0 ? Region::Stack : Region::Heap;
    ids.push_back(space.allocate(1 + rng() % 500, r).id);
  }
  const auto& objs = space.objects();
  for (u64 id : ids) {
    const auto& rec = objs[id];
    CHECK(rec.base % rec.rounded == 0);
    CHECK(rec.rounded == round_size(rec.requested).rounded);
    for (u8 byte : space.read_bytes(rec.base, rec.rounded))
      REQUIRE(byte == 0);
    for (u64 other : ids) {
      if (other == id)
        continue;
      const auto& o = objs[other];
      bool disjoint = rec.base + rec.rounded <= o.base || o.base + o.rounded <= rec.base;
      REQUIRE(disjoint);
    }
  }
}

TEST_CASE("raw access: little-endian byte overlap") {
  AddressSpace space;
  space.write(0x1001, 2, 0xBEEF);
  CHECK(space.read(0x1000, 4) == 0x00BEEF00);
  CHECK(space.read(0x1001, 2) == 0xBEEF);
  CHECK(space.read(0x1001, 1) == 0xEF);
  CHECK(space.read(0x1002, 1) == 0xBE);
}

TEST_CASE("raw access: unwritten memory reads as zero, writes round-trip") {
  std::mt19937_64 rng(22);
  AddressSpace space;
  CHECK(space.read(0x123456, 8) == 0);
  for (int i = 0; i < 2000; ++i) {
    u64 addr = rng() % (ADDRESS_LIMIT - 8);
    u32 size = 1u << (rng() % 4);
    u64 val = rng();
    u64 kept = size == 8 ? val : val & ((u64(1) << (8 * size)) - 1);
    space.write(addr, size, val);
    CHECK(space.read(addr, size) == kept);
  }
}

TEST_CASE("raw access: spans page boundaries") {
  AddressSpace space;
  u64 addr = AddressSpace::HEAP_BASE + AddressSpace::PAGE_SIZE - 3;
  space.write(addr, 8, 0x1122334455667788ull);
  CHECK(space.read(addr, 8) == 0x1122334455667788ull);
  CHECK(space.read(addr + 4, 4) == 0x11223344);
}

TEST_CASE("raw access: rejects bad widths and non-canonical ranges") {
  AddressSpace space;
  CHECK_THROWS_AS(space.write(0x1000, 3, 0), CheckConfigError);
  CHECK_THROWS_AS(space.read(ADDRESS_LIMIT - 4, 8), CheckConfigError);
}

TEST_CASE("release: marks dead, keeps bytes, rejects misuse") {
  AddressSpace space;
  auto a = space.allocate(40, Region::Heap);
  space.write(a.base, 8, 0xAB);
  CHECK(space.find_live_by_base(a.base) != nullptr);
  space.release(a.id);
  CHECK(space.find_live_by_base(a.base) == nullptr);
  CHECK_FALSE(space.object(a.id).live);
  CHECK(space.read(a.base, 8) == 0xAB);
  CHECK_THROWS_AS(space.release(a.id), FreeError);
  CHECK_THROWS_AS(space.release(999), FreeError);
  // No reuse: the next allocation lives above the dead one.
  auto b = space.allocate(40, Region::Heap);
  CHECK(b.base >= a.base + 64);
}

TEST_CASE("accessible: tracks the allocator's handed-out extent") {
  AddressSpace space;
  auto a = space.allocate(16, Region::Heap);  // rounded 32
  auto b = space.allocate(100, Region::Heap); // rounded 128, alignment gap
  CHECK(space.accessible(a.base, 8));
  CHECK(space.accessible(a.base + 31, 1));
  // Alignment slack between objects belongs to the allocator: no fault there.
  CHECK(space.accessible(a.base + 32, 8));
  CHECK(space.accessible(b.base + 127, 1));
  CHECK_FALSE(space.accessible(b.base + 128, 1));
  CHECK_FALSE(space.accessible(0x1000, 1));
  CHECK_FALSE(space.accessible(0, 1));
  auto s = space.allocate(8, Region::Stack);
  CHECK(space.accessible(s.base, 8));
  CHECK_FALSE(space.accessible(AddressSpace::GLOBAL_BASE, 1));
}

TEST_CASE("fragmentation: pinned traces") {
  AddressSpace space;
  CHECK(space.fragmentation().aggregate == 1.0);
  for (u64 s : {24, 56, 120})
    space.allocate(s, Region::Heap);
  FragReport rep = space.fragmentation();
  REQUIRE(rep.objects.size() == 3);
  CHECK(rep.total_requested == 200);
  CHECK(rep.total_rounded == 224);
  CHECK(rep.aggregate == 224.0 / 200.0);
  CHECK(rep.objects[0].rounded == 32);
  CHECK(rep.objects[1].rounded == 64);
  CHECK(rep.objects[2].rounded == 128);
}

TEST_CASE("fragmentation: powers-of-two-plus-one cost a factor of two") {
  AddressSpace space;
  u64 want_req = 0, want_round = 0;
  for (u32 n = 4; n <= 30; ++n) {
    u64 s = (u64(1) << n) + 1;
    space.allocate(s, Region::Heap);
    want_req += s;
    want_round += round_size(s).rounded;
  }
  FragReport rep = space.fragmentation();
  CHECK(rep.total_requested == want_req);
  CHECK(rep.total_rounded == want_round);
  CHECK(rep.aggregate > 1.98);
  CHECK(rep.aggregate < 2.005);
  // Released objects stay in the trace.
  space.release(0);
  CHECK(space.fragmentation().objects.size() == rep.objects.size());
}

TEST_CASE("allocate: size and capacity errors") {
  AddressSpace space;
  CHECK_THROWS_AS(space.allocate(0, Region::Heap), SizeError);
  CHECK_THROWS_AS(space.allocate(u64(1) << 45, Region::Heap), OutOfMemoryError);
  // Heap region is 2^41 bytes: two 2^40 carvings fit, the third cannot.
  space.allocate((u64(1) << 40) - 8, Region::Heap);
  space.allocate((u64(1) << 40) - 8, Region::Heap);
  CHECK_THROWS_AS(space.allocate((u64(1) << 40) - 8, Region::Heap), OutOfMemoryError);
  // Other regions are unaffected.
  CHECK(space.allocate(16, Region::Stack).base >= AddressSpace::STACK_BASE);
}
