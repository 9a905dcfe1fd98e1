#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "piodb/pio_btree.hpp"

using namespace piodb;

namespace {

DeviceConfig small_cfg(int channels = 16) {
    DeviceConfig cfg;
    cfg.page_count = 1 << 16;
    cfg.channels = channels;
    return cfg;
}

PioConfig t1_cfg(std::uint32_t opq_pages = 8, std::uint32_t bcnt = 0) {
    PioConfig cfg;
    cfg.fanout = 4;
    cfg.leaf_capacity = 4;
    cfg.leaf_segments = 1;
    cfg.opq_pages = opq_pages;
    cfg.bcnt = bcnt ? bcnt : opq_pages * 3;  // OPQ capacity = O * (F-1)
    cfg.speriod = 5;
    cfg.pio_max = 64;
    return cfg;
}

// Fixture T1 on the PIO side: same shape as the baseline fixture.
PioBtree make_t1(Device& dev, PioConfig cfg = t1_cfg(), std::size_t pool = 0) {
    PioBtree tree = PioBtree::create(dev, cfg, pool);
    std::vector<Record> recs;
    for (std::uint64_t k : {1, 5, 10, 15, 20, 25, 30, 35}) recs.push_back({k, k * 10});
    tree.bulk_load(recs, 0.5);
    return tree;
}

OpqEntry ins(std::uint64_t k, std::uint64_t p) { return {{k, p}, OpFlag::kInsert}; }
OpqEntry del(std::uint64_t k, std::uint64_t p = 0) { return {{k, p}, OpFlag::kDelete}; }
OpqEntry upd(std::uint64_t k, std::uint64_t p) { return {{k, p}, OpFlag::kUpdate}; }

}  // namespace

TEST_CASE("check_search_needed implements the child-interval predicate") {
    std::vector<std::uint64_t> keys{10, 20, 30};
    std::vector<std::uint64_t> s1{5};
    CHECK(PioBtree::check_search_needed(1, keys, s1));
    std::vector<std::uint64_t> s2{5, 35};
    CHECK_FALSE(PioBtree::check_search_needed(2, keys, s2));
    std::vector<std::uint64_t> s3{35};
    CHECK(PioBtree::check_search_needed(4, keys, s3));
    CHECK_THROWS_AS(PioBtree::check_search_needed(0, keys, s1), UsageError);
}

TEST_CASE("shrink cancellation kernel") {
    SUBCASE("insert dies to a later delete of the same record") {
        std::vector<OpqEntry> in{ins(7, 70), del(7, 70), ins(8, 80)};
        auto out = PioBtree::shrink_entries(in);
        REQUIRE(out.size() == 1);
        CHECK(out[0].rec.key == 8);
    }
    SUBCASE("update acts as delete-then-insert matched by key") {
        std::vector<OpqEntry> in{ins(7, 70), upd(7, 72)};
        auto out = PioBtree::shrink_entries(in);
        REQUIRE(out.size() == 1);
        CHECK(out[0].rec.key == 7);
        CHECK(out[0].rec.data_ptr == 72);
        CHECK(out[0].op == OpFlag::kInsert);
    }
    SUBCASE("no cancellable pairs: surviving records unchanged") {
        std::vector<OpqEntry> in{ins(1, 10), ins(2, 20), ins(3, 30)};
        auto out = PioBtree::shrink_entries(in);
        REQUIRE(out.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(out[i].rec == in[i].rec);
    }
    SUBCASE("delete-by-key wildcard matches any pointer") {
        std::vector<OpqEntry> in{ins(7, 70), del(7)};
        CHECK(PioBtree::shrink_entries(in).empty());
    }
    SUBCASE("a delete with a different pointer does not cancel") {
        std::vector<OpqEntry> in{ins(7, 70), del(7, 71)};
        auto out = PioBtree::shrink_entries(in);
        REQUIRE(out.size() == 1);
    }
    SUBCASE("earlier delete does not cancel a later insert") {
        std::vector<OpqEntry> in{del(7), ins(7, 70)};
        auto out = PioBtree::shrink_entries(in);
        REQUIRE(out.size() == 1);
        CHECK(out[0].rec.data_ptr == 70);
    }
    SUBCASE("update of an absent key drops out") {
        std::vector<OpqEntry> in{upd(7, 70)};
        CHECK(PioBtree::shrink_entries(in).empty());
    }
}

TEST_CASE("mpsearch returns covering leaves with one psync per level") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);
    REQUIRE(tree.height() == 2);

    SUBCASE("two keys, two leaves, one leaf-level batch") {
        dev.reset_stats();
        std::vector<std::uint64_t> s{5, 25};
        auto matches = tree.mpsearch(s);
        REQUIRE(matches.size() == 2);
        CHECK(matches[0].entries[0].rec.key == 1);  // L0
        CHECK(matches[1].entries[0].rec.key == 20); // L2
        CHECK(dev.stats().read_batches == 2);  // root + one leaf batch of two
        CHECK(dev.stats().pages_read == 3);
    }
    SUBCASE("single key degenerates to a plain descent") {
        dev.reset_stats();
        std::vector<std::uint64_t> s{5};
        auto matches = tree.mpsearch(s);
        REQUIRE(matches.size() == 1);
        CHECK(matches[0].entries[0].rec.key == 1);
        CHECK(dev.stats().pages_read == 2);
    }
    SUBCASE("PioMax chunking splits the leaf level into two batches") {
        PioConfig cfg = t1_cfg();
        cfg.pio_max = 2;
        Device dev2 = Device::make_mem(small_cfg());
        PioBtree tree2 = make_t1(dev2, cfg);
        dev2.reset_stats();
        std::vector<std::uint64_t> s{1, 15, 35};
        auto matches = tree2.mpsearch(s);
        REQUIRE(matches.size() == 3);
        CHECK(matches[0].entries[0].rec.key == 1);
        CHECK(matches[1].entries[0].rec.key == 10);
        CHECK(matches[2].entries[0].rec.key == 30);
        CHECK(dev2.stats().read_batches == 3);  // root + {L0,L1} + {L3}
    }
}

TEST_CASE("prange search merges leaves with pending OPQ entries") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);

    SUBCASE("T1 [12,27) via one batched leaf read") {
        dev.reset_stats();
        auto got = tree.prange_search(12, 27);
        REQUIRE(got.size() == 3);
        CHECK(got[0].key == 15);
        CHECK(got[1].key == 20);
        CHECK(got[2].key == 25);
        CHECK(dev.stats().read_batches == 2);  // root + one leaf batch {L1,L2}
    }
    SUBCASE("empty range does no leaf I/O") {
        dev.reset_stats();
        CHECK(tree.prange_search(5, 5).empty());
        CHECK(dev.stats().pages_read == 0);
    }
    SUBCASE("full range with PioMax=2 needs ceil(4/2) leaf batches") {
        PioConfig cfg = t1_cfg();
        cfg.pio_max = 2;
        Device dev2 = Device::make_mem(small_cfg());
        PioBtree tree2 = make_t1(dev2, cfg);
        dev2.reset_stats();
        auto got = tree2.prange_search(0, 1000);
        CHECK(got.size() == 8);
        CHECK(dev2.stats().read_batches == 3);  // root + 2 leaf batches
    }
    SUBCASE("pending OPQ entries overlay the leaves") {
        tree.pio_insert({12, 120});
        tree.pio_delete(15);
        tree.pio_update({20, 999});
        auto got = tree.prange_search(10, 30);
        REQUIRE(got.size() == 4);
        CHECK(got[0] == Record{10, 100});
        CHECK(got[1] == Record{12, 120});
        CHECK(got[2] == Record{20, 999});
        CHECK(got[3] == Record{25, 250});
    }
}

TEST_CASE("point search combines OPQ and leaf history") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);
    SUBCASE("delete in OPQ hides a tree key") {
        tree.pio_delete(5);
        CHECK(tree.point_search(5) == std::nullopt);
    }
    SUBCASE("insert in OPQ found before any flush") {
        tree.pio_insert({7, 77});
        CHECK(tree.point_search(7) == 77);
    }
    SUBCASE("plain tree hit") {
        CHECK(tree.point_search(5) == 50);
    }
    SUBCASE("update of an absent key yields not-found") {
        tree.pio_update({8, 88});
        CHECK(tree.point_search(8) == std::nullopt);
    }
}

TEST_CASE("bupdate appends through the last segment only") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);
    tree.pio_insert({7, 70});
    tree.pio_insert({22, 220});
    dev.reset_stats();
    tree.flush_all();
    // Leaf economy: batch read of the two last segments, batch write of the
    // same two pages, root untouched by fences.
    CHECK(dev.stats().read_batches == 2);   // root + last-LS batch
    CHECK(dev.stats().pages_read == 3);
    CHECK(dev.stats().write_batches == 1);
    CHECK(dev.stats().pages_written == 2);
    CHECK(tree.opq().empty());
    CHECK(tree.point_search(7) == 70);
    CHECK(tree.point_search(22) == 220);
    tree.check_structure();
}

TEST_CASE("empty flush is a no-op with zero I/O") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);
    dev.reset_stats();
    tree.flush_all();
    CHECK(dev.stats().pages_read == 0);
    CHECK(dev.stats().pages_written == 0);
}

TEST_CASE("a filled leaf shrinks, then splits, and the fence reaches the root") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);
    for (std::uint64_t k : {2, 3, 4}) tree.pio_insert({k, k * 10});
    tree.flush_all();
    tree.check_structure();
    CHECK(tree.leaf_count() > 4);
    for (std::uint64_t k : {1, 2, 3, 4, 5, 10, 15, 20, 25, 30, 35}) {
        CHECK(tree.point_search(k) == k * 10);
    }
}

TEST_CASE("shrink inside a flush cancels matched insert/delete pairs") {
    Device dev = Device::make_mem(small_cfg());
    PioBtree tree = make_t1(dev);
    // Fill L0's leaf page with a churn of inserts and deletes; survivors fit.
    tree.pio_insert({2, 20});
    tree.pio_delete(2);
    tree.pio_insert({3, 30});
    tree.flush_all();
    tree.check_structure();
    CHECK(tree.point_search(2) == std::nullopt);
    CHECK(tree.point_search(3) == 30);
    auto all = tree.prange_search(0, 100);
    CHECK(all.size() == 9);
}

TEST_CASE("OPQ overflow triggers a full flush before the append succeeds") {
    Device dev = Device::make_mem(small_cfg());
    PioConfig cfg = t1_cfg(/*opq_pages=*/1, /*bcnt=*/3);  // capacity 3 entries
    PioBtree tree = make_t1(dev, cfg);
    tree.pio_insert({2, 20});
    tree.pio_insert({3, 30});
    tree.pio_insert({4, 40});
    CHECK(tree.opq().size() == 3);
    tree.pio_insert({6, 60});  // trigger
    CHECK(tree.opq().size() == 1);
    CHECK(tree.point_search(2) == 20);
    CHECK(tree.point_search(6) == 60);
    tree.check_structure();
}

TEST_CASE("multi-segment leaves: appends touch one page, searches read L pages") {
    DeviceConfig dcfg = small_cfg();
    Device dev = Device::make_mem(dcfg);
    PioConfig cfg;
    cfg.fanout = 16;
    cfg.leaf_capacity = 4;   // per segment
    cfg.leaf_segments = 4;   // leaf = 4 pages, 16 entries total
    cfg.opq_pages = 8;
    cfg.bcnt = 64;
    cfg.speriod = 1000;
    PioBtree tree = PioBtree::create(dev, cfg, 0);
    std::vector<Record> recs;
    for (std::uint64_t k = 1; k <= 64; ++k) recs.push_back({k * 2, k});
    tree.bulk_load(recs, 0.5);  // 8 entries per leaf -> cursor at segment 1
    tree.check_structure();
    REQUIRE(tree.height() == 2);

    // A point search reads the whole covering leaf: 4 pages in one unit.
    dev.reset_stats();
    CHECK(tree.point_search(2) == 1);
    CHECK(dev.stats().pages_read == 1 + 4);
    CHECK(dev.stats().simulated_time_us ==
          doctest::Approx(100.0 + 100.0 * 1.6));  // Pr + Pr(4)

    // An update flush reads and writes exactly one page of the leaf. The
    // cursor is clamped to floor(L/2) = 2, past the bulk-loaded segment 1.
    tree.pio_insert({3, 33});
    dev.reset_stats();
    tree.flush_all();
    CHECK(dev.stats().pages_read == 2);     // root + leaf's last LS only
    CHECK(dev.stats().pages_written == 1);  // that LS page
    CHECK(tree.point_search(3) == 33);
    tree.check_structure();
}

TEST_CASE("LSMap stays consistent with the true cursor across operations") {
    Device dev = Device::make_mem(small_cfg());
    PioConfig cfg;
    cfg.fanout = 8;
    cfg.leaf_capacity = 3;
    cfg.leaf_segments = 4;
    cfg.opq_pages = 4;
    cfg.bcnt = 28;
    cfg.speriod = 1000;
    PioBtree tree = PioBtree::create(dev, cfg, 0);
    std::vector<Record> recs;
    for (std::uint64_t k = 1; k <= 30; ++k) recs.push_back({k * 3, k});
    tree.bulk_load(recs, 0.6);
    tree.check_structure();  // includes the LSMap consistency audit
    std::mt19937_64 rng(9);
    for (int round = 0; round < 40; ++round) {
        for (int i = 0; i < 5; ++i) {
            std::uint64_t key = 1 + rng() % 120;
            if (rng() % 3 == 0) {
                tree.pio_delete(key);
            } else {
                tree.pio_insert({key, rng()});
                tree.pio_delete(key);  // keep logical size bounded
            }
        }
        tree.flush_all();
        tree.check_structure();
    }
}

namespace {

// Counts per-page reads so descent dedup is directly observable.
class CountingStore final : public PageStore {
public:
    CountingStore(std::size_t page_size, std::uint64_t page_count)
        : inner_(page_size, page_count) {}
    void read_page(PageId id, std::span<std::uint8_t> out) override {
        reads[id] += 1;
        inner_.read_page(id, out);
    }
    void write_page(PageId id, std::span<const std::uint8_t> in) override {
        inner_.write_page(id, in);
    }
    std::map<PageId, int> reads;

private:
    MemStore inner_;
};

}  // namespace

TEST_CASE("duplicate-node elimination: one flush reads an internal page at most once") {
    auto dcfg = small_cfg();
    auto store = std::make_unique<CountingStore>(dcfg.page_size, dcfg.page_count);
    CountingStore* counts = store.get();
    Device dev(dcfg, std::move(store));
    PioConfig cfg;
    cfg.fanout = 16;
    cfg.leaf_capacity = 6;
    cfg.opq_pages = 16;
    cfg.bcnt = 240;  // one descent drains the whole queue
    cfg.speriod = 1000;
    PioBtree tree = PioBtree::create(dev, cfg, 0);
    std::vector<Record> recs;
    for (std::uint64_t k = 1; k <= 400; ++k) recs.push_back({k * 2, k});
    tree.bulk_load(recs, 0.7);
    REQUIRE(tree.height() == 3);

    std::set<PageId> leaf_pages;
    std::set<PageId> internal_pages;
    for (PageId p : tree.reachable_pages()) internal_pages.insert(p);
    internal_pages.erase(0);
    // Leaves are the pages the LSMap tracks (L = 1 here).
    for (PageId p : tree.reachable_pages()) {
        if (tree.lsmap().contains(p)) {
            leaf_pages.insert(p);
            internal_pages.erase(p);
        }
    }
    REQUIRE(internal_pages.size() > 1);

    // Sixty scattered updates: without dedup each level-1 node would be read
    // once per touched leaf under it.
    std::mt19937_64 rng(17);
    for (int i = 0; i < 60; ++i) {
        tree.pio_insert({801 + 2 * static_cast<std::uint64_t>(rng() % 2000), 5});
    }
    counts->reads.clear();
    tree.flush(cfg.bcnt);  // single bupdate descent
    for (const auto& [page, n] : counts->reads) {
        if (internal_pages.count(page)) CHECK(n <= 1);
    }
    tree.check_structure();
}

TEST_CASE("property: PIO tree matches a reference map under random flush schedules") {
    std::mt19937_64 master(23);
    for (int schedule = 0; schedule < 3; ++schedule) {
        Device dev = Device::make_mem(small_cfg());
        PioConfig cfg;
        cfg.fanout = 6;
        cfg.leaf_capacity = 3;
        cfg.leaf_segments = schedule + 1;  // exercise L = 1, 2, 3
        cfg.opq_pages = 4;                 // capacity 20
        cfg.bcnt = schedule == 1 ? 7 : 20; // partial and full drains
        cfg.speriod = 6;
        PioBtree tree = PioBtree::create(dev, cfg, schedule == 2 ? 64 : 0);
        std::map<std::uint64_t, std::uint64_t> oracle;
        std::mt19937_64 rng(master());
        const std::uint64_t domain = 400;
        for (int i = 0; i < 3000; ++i) {
            std::uint64_t key = 1 + rng() % domain;
            switch (rng() % 5) {
                case 0:
                    if (!oracle.count(key)) {
                        tree.pio_insert({key, key + 1000});
                        oracle[key] = key + 1000;
                    }
                    break;
                case 1:
                    tree.pio_delete(key);
                    oracle.erase(key);
                    break;
                case 2: {
                    tree.pio_update({key, i + 5000u});
                    auto it = oracle.find(key);
                    if (it != oracle.end()) it->second = i + 5000u;
                    break;
                }
                case 3: {
                    auto got = tree.point_search(key);
                    auto it = oracle.find(key);
                    if (it == oracle.end()) {
                        REQUIRE(got == std::nullopt);
                    } else {
                        REQUIRE(got == it->second);
                    }
                    break;
                }
                default: {
                    std::uint64_t lo = 1 + rng() % domain;
                    std::uint64_t hi = lo + rng() % 60;
                    auto got = tree.prange_search(lo, hi);
                    std::vector<Record> want;
                    for (auto it = oracle.lower_bound(lo); it != oracle.end() && it->first < hi; ++it) {
                        want.push_back({it->first, it->second});
                    }
                    REQUIRE(got.size() == want.size());
                    for (std::size_t k = 0; k < got.size(); ++k) REQUIRE(got[k] == want[k]);
                }
            }
            if (rng() % 97 == 0) tree.flush_all();  // forced schedule
            if (i % 750 == 0) {
                tree.flush_all();
                tree.check_structure();
            }
        }
        tree.flush_all();
        tree.check_structure();
        auto all = tree.prange_search(0, ~0ull);
        REQUIRE(all.size() == oracle.size());
    }
}

TEST_CASE("close persists the LSMap; reopen restores it or rebuilds it") {
    auto dcfg = small_cfg();
    std::string path = "/tmp/piodb_pio_reopen.bin";
    std::remove(path.c_str());
    PioConfig cfg = t1_cfg();
    {
        Device dev = Device::make_file(dcfg, path);
        PioBtree tree = make_t1(dev, cfg);
        tree.pio_insert({7, 70});
        tree.close();
    }
    {
        Device dev = Device::make_file(dcfg, path);
        dev.assume_allocated_up_to(dcfg.page_count);
        PioBtree tree = PioBtree::open(dev, 0);
        CHECK(tree.point_search(7) == 70);
        tree.check_structure();
    }
    // Reopen again: the previous open marked the file dirty, so this run
    // must rebuild the LSMap from the leaves.
    {
        Device dev = Device::make_file(dcfg, path);
        dev.assume_allocated_up_to(dcfg.page_count);
        PioBtree tree = PioBtree::open(dev, 0);
        CHECK(tree.point_search(35) == 350);
        tree.check_structure();
    }
    std::remove(path.c_str());
}
