#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "piodb/lsmap.hpp"
#include "piodb/opq.hpp"

using namespace piodb;

namespace {
OpqEntry ins(std::uint64_t k, std::uint64_t p = 0) { return {{k, p ? p : k * 10}, OpFlag::kInsert}; }
OpqEntry del(std::uint64_t k) { return {{k, 0}, OpFlag::kDelete}; }
}  // namespace

TEST_CASE("append fills the unsorted tail until the sort period") {
    OpQueue q(64, /*speriod=*/3);
    q.append(ins(7));
    CHECK(q.size() == 1);
    CHECK(q.sorted_offset() == 0);
    q.append(ins(3));
    CHECK(q.sorted_offset() == 0);
    q.append(del(5));
    // Third append hits speriod: whole queue sorted.
    CHECK(q.sorted_offset() == 3);
    REQUIRE(q.size() == 3);
    CHECK(q.entries()[0].rec.key == 3);
    CHECK(q.entries()[1].rec.key == 5);
    CHECK(q.entries()[2].rec.key == 7);
    CHECK(q.entries()[1].op == OpFlag::kDelete);
}

TEST_CASE("sort_merge merges the tail into the sorted region, stably") {
    OpQueue q(64, 100);
    q.append(ins(3));
    q.append(ins(7));
    q.sort_merge();
    q.append(del(5));
    q.sort_merge();
    REQUIRE(q.size() == 3);
    CHECK(q.entries()[0].rec.key == 3);
    CHECK(q.entries()[1].rec.key == 5);
    CHECK(q.entries()[2].rec.key == 7);

    // Idempotent on an already-sorted queue.
    auto before = std::vector<OpqEntry>(q.entries().begin(), q.entries().end());
    q.sort_merge();
    CHECK(std::equal(before.begin(), before.end(), q.entries().begin()));

    // Equal keys keep append order: (i,5) then (d,5).
    OpQueue q2(64, 100);
    q2.append(ins(5, 50));
    q2.sort_merge();
    q2.append(del(5));
    q2.sort_merge();
    CHECK(q2.entries()[0].op == OpFlag::kInsert);
    CHECK(q2.entries()[1].op == OpFlag::kDelete);
}

TEST_CASE("find unions binary-search hits with the linear tail, in append order") {
    OpQueue q(64, 100);
    q.append(ins(3, 31));
    q.sort_merge();
    q.append(del(3));  // unsorted tail
    auto got = q.find(3);
    REQUIRE(got.size() == 2);
    CHECK(got[0].op == OpFlag::kInsert);
    CHECK(got[1].op == OpFlag::kDelete);
    CHECK(q.find(9).empty());
    OpQueue empty(8, 4);
    CHECK(empty.find(3).empty());
}

TEST_CASE("peek/drop lowest selects the sorted prefix and keeps equal-key order") {
    OpQueue q(64, 1000);
    q.append(ins(9));
    q.append(ins(2, 21));
    q.append(del(2));
    q.append(ins(5));
    auto low = q.peek_lowest(3);
    REQUIRE(low.size() == 3);
    CHECK(low[0].rec.key == 2);
    CHECK(low[0].op == OpFlag::kInsert);  // older first
    CHECK(low[1].rec.key == 2);
    CHECK(low[1].op == OpFlag::kDelete);
    CHECK(low[2].rec.key == 5);
    q.drop_lowest(3);
    CHECK(q.size() == 1);
    CHECK(q.entries()[0].rec.key == 9);
    CHECK(q.sorted_offset() == 1);
}

TEST_CASE("property: sorted region invariant survives random traffic") {
    std::mt19937_64 rng(5);
    OpQueue q(256, 7);
    for (int i = 0; i < 2000; ++i) {
        if (q.full() || (q.size() > 0 && rng() % 10 == 0)) {
            q.drop_lowest(1 + rng() % q.size());
        } else {
            q.append(ins(rng() % 100));
        }
        auto view = q.entries().subspan(0, q.sorted_offset());
        CHECK(std::is_sorted(view.begin(), view.end(),
                             [](const OpqEntry& a, const OpqEntry& b) { return a.rec.key < b.rec.key; }));
        CHECK(q.sorted_offset() <= q.size());
    }
}

TEST_CASE("LSMap offset arithmetic and bit widths") {
    LsMap m4(4);
    CHECK(m4.bits_per_entry() == 1);
    m4.set(100, 3);
    CHECK(m4.get(100) == 3);
    m4.set(100, 2);
    CHECK(m4.get(100) == 2);
    CHECK_THROWS_AS(m4.set(100, 1), UsageError);  // below floor(L/2)
    CHECK_THROWS_AS(m4.set(100, 4), UsageError);  // beyond L-1

    LsMap m2(2);
    CHECK(m2.bits_per_entry() == 1);  // ceil(log2(1)) rounds up to one bit
    LsMap m8(8);
    CHECK(m8.bits_per_entry() == 2);
    LsMap m16(16);
    CHECK(m16.bits_per_entry() == 3);
    LsMap m1(1);
    m1.set(5, 0);
    CHECK(m1.get(5) == 0);
}

TEST_CASE("LSMap young-leaf cursors clamp up to the encodable floor") {
    LsMap m(8);
    CHECK(m.clamp(0) == 4);
    CHECK(m.clamp(4) == 4);
    CHECK(m.clamp(7) == 7);
}

TEST_CASE("LSMap slot reuse and serialization round-trip") {
    LsMap m(4);
    for (PageId leaf = 0; leaf < 100; ++leaf) m.set(leaf * 4, 2 + leaf % 2);
    m.remove(12);
    m.set(400, 3);
    CHECK(m.leaf_count() == 100);
    CHECK_FALSE(m.contains(12));
    auto blob = m.serialize();
    LsMap back = LsMap::deserialize(blob);
    CHECK(back.leaf_count() == 100);
    CHECK(back.get(400) == 3);
    CHECK(back.get(0) == 2);
    CHECK(back.get(4) == 3);
    // ~1 bit per leaf, not bytes: 100 leaves fit two 64-bit words.
    CHECK(m.memory_bytes() <= 16);
}
