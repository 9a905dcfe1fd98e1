#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "piodb/device.hpp"

using namespace piodb;

namespace {

DeviceConfig emu_cfg(int channels = 16, double pr = 100.0, double pw = 200.0) {
    DeviceConfig cfg;
    cfg.page_count = 4096;
    cfg.channels = channels;
    cfg.read_latency_us = pr;
    cfg.write_latency_us = pw;
    return cfg;
}

// Independent evaluation of the batch cost law the emulator must follow.
double batch_cost_oracle(const DeviceConfig& cfg, std::size_t units, IoKind kind, int unit_pages,
                         bool mixed) {
    double base = kind == IoKind::kRead ? cfg.read_latency_us : cfg.write_latency_us;
    double factor;
    auto it = cfg.size_latency_curve.find(unit_pages);
    if (it != cfg.size_latency_curve.end()) {
        factor = it->second;
    } else {
        auto last = cfg.size_latency_curve.rbegin();
        factor = last->second * static_cast<double>(unit_pages) / last->first;
    }
    double rounds = (units + cfg.channels - 1) / cfg.channels;
    return rounds * base * factor * (mixed ? cfg.interleave_penalty : 1.0);
}

std::vector<PageId> alloc_n(Device& dev, std::size_t n) {
    std::vector<PageId> out(n);
    for (auto& p : out) p = dev.alloc_page();
    return out;
}

}  // namespace

TEST_CASE("single-page read costs the base latency") {
    Device dev = Device::make_mem(emu_cfg());
    auto pages = alloc_n(dev, 1);
    dev.psync_read(pages);
    CHECK(dev.stats().simulated_time_us == doctest::Approx(100.0));
    CHECK(dev.stats().pages_read == 1);
    CHECK(dev.stats().read_batches == 1);
}

TEST_CASE("batch reads follow the channel-bounded cost law") {
    auto cfg = emu_cfg();
    Device dev = Device::make_mem(cfg);
    auto pages = alloc_n(dev, 33);

    dev.psync_read(std::span<const PageId>(pages.data(), 16));
    CHECK(dev.stats().simulated_time_us ==
          doctest::Approx(batch_cost_oracle(cfg, 16, IoKind::kRead, 1, false)));
    CHECK(dev.stats().simulated_time_us == doctest::Approx(100.0));

    dev.reset_stats();
    dev.psync_read(pages);  // 33 pages
    CHECK(dev.stats().simulated_time_us ==
          doctest::Approx(batch_cost_oracle(cfg, 33, IoKind::kRead, 1, false)));
    CHECK(dev.stats().simulated_time_us == doctest::Approx(300.0));
}

TEST_CASE("batch_cost pinned values") {
    auto cfg = emu_cfg();
    Device dev = Device::make_mem(cfg);
    CHECK(dev.batch_cost_us(1, IoKind::kRead, 1, false) == doctest::Approx(100.0));
    CHECK(dev.batch_cost_us(32, IoKind::kRead, 1, false) == doctest::Approx(200.0));
    // Interference penalty default comes from the measured 1.25-1.37x band.
    CHECK(dev.batch_cost_us(16, IoKind::kRead, 1, true) == doctest::Approx(130.0));
    CHECK_THROWS_AS(dev.batch_cost_us(0, IoKind::kRead, 1, false), UsageError);
}

TEST_CASE("size factor: table hits, interpolation, linear extrapolation") {
    Device dev = Device::make_mem(emu_cfg());
    CHECK(dev.size_factor(1) == doctest::Approx(1.0));
    CHECK(dev.size_factor(2) == doctest::Approx(1.0));
    CHECK(dev.size_factor(4) == doctest::Approx(1.6));
    CHECK(dev.size_factor(8) == doctest::Approx(2.5));
    CHECK(dev.size_factor(3) == doctest::Approx(1.3));    // between 2 and 4
    CHECK(dev.size_factor(16) == doctest::Approx(5.0));   // 2.5 * 16/8
}

TEST_CASE("writes are durable and charged with the write latency") {
    auto cfg = emu_cfg();
    Device dev = Device::make_mem(cfg);
    auto pages = alloc_n(dev, 16);
    PageBuffer buf(cfg.page_size, 0xAB);
    dev.psync_write(pages[0], buf);
    CHECK(dev.stats().simulated_time_us == doctest::Approx(200.0));
    dev.reset_stats();
    std::vector<std::pair<PageId, PageBuffer>> batch;
    for (PageId p : pages) batch.emplace_back(p, buf);
    dev.psync_write(batch);
    CHECK(dev.stats().simulated_time_us == doctest::Approx(200.0));  // ceil(16/16) * 200
    auto back = dev.psync_read(pages);
    for (const auto& b : back) CHECK(b == buf);
}

TEST_CASE("address and usage errors") {
    Device dev = Device::make_mem(emu_cfg());
    auto pages = alloc_n(dev, 2);
    CHECK_THROWS_AS(dev.psync_read(std::vector<PageId>{99}), AddressError);
    PageBuffer small(16);
    CHECK_THROWS_AS(dev.psync_write(pages[0], small), UsageError);
    CHECK_THROWS_AS(dev.psync_read(std::vector<PageId>{}), UsageError);
    PageBuffer ok(dev.page_size());
    std::pair<PageId, PageBuffer> w{7, ok};  // unallocated
    CHECK_THROWS_AS(dev.psync_write(std::span<const std::pair<PageId, PageBuffer>>(&w, 1), 1),
                    AddressError);
}

TEST_CASE("allocation returns lowest free id and rejects double free") {
    Device dev = Device::make_mem(emu_cfg());
    CHECK(dev.alloc_page() == 0);
    CHECK(dev.alloc_page() == 1);
    dev.free_page(0);
    CHECK(dev.alloc_page() == 0);
    CHECK_THROWS_AS(dev.free_page(7), AddressError);
    dev.free_page(1);
    CHECK_THROWS_AS(dev.free_page(1), AddressError);
}

TEST_CASE("extent allocation finds the lowest contiguous run") {
    Device dev = Device::make_mem(emu_cfg());
    auto pages = alloc_n(dev, 8);
    (void)pages;
    dev.free_page(2);
    dev.free_page(3);
    dev.free_page(5);
    CHECK(dev.alloc_extent(2) == 2);  // run {2,3} beats {5}
    CHECK(dev.alloc_extent(2) == 8);  // nothing contiguous left below
}

TEST_CASE("stats count pages and batches; reset zeroes") {
    auto cfg = emu_cfg();
    Device dev = Device::make_mem(cfg);
    auto pages = alloc_n(dev, 16);
    dev.psync_read(std::span<const PageId>(pages.data(), 3));
    CHECK(dev.stats().pages_read == 3);
    CHECK(dev.stats().read_batches == 1);
    dev.reset_stats();
    CHECK(dev.stats().pages_read == 0);
    CHECK(dev.stats().simulated_time_us == doctest::Approx(0.0));
    // read batch(16) + write batch(16): 100 + 200
    dev.psync_read(pages);
    std::vector<std::pair<PageId, PageBuffer>> batch;
    for (PageId p : pages) batch.emplace_back(p, PageBuffer(cfg.page_size));
    dev.psync_write(batch);
    CHECK(dev.stats().simulated_time_us == doctest::Approx(300.0));
}

TEST_CASE("property: one batch never costs more than singles, equal only at one channel") {
    for (int channels : {1, 2, 4, 16}) {
        auto cfg = emu_cfg(channels);
        Device dev = Device::make_mem(cfg);
        auto pages = alloc_n(dev, 64);
        for (std::size_t k : {1u, 5u, 16u, 33u, 64u}) {
            double batched = dev.batch_cost_us(k, IoKind::kRead, 1, false);
            double singles = static_cast<double>(k) * dev.batch_cost_us(1, IoKind::kRead, 1, false);
            CHECK(batched <= singles + 1e-9);
            if (channels == 1) CHECK(batched == doctest::Approx(singles));
        }
    }
}

TEST_CASE("property: mixed batch costs exactly the interleave penalty more") {
    auto cfg = emu_cfg();
    Device dev = Device::make_mem(cfg);
    auto pages = alloc_n(dev, 32);
    IoBatch mixed;
    mixed.io_unit_pages = 1;
    for (std::size_t i = 0; i < 32; ++i) {
        IoRequest req;
        req.kind = (i % 2 == 0) ? IoKind::kRead : IoKind::kWrite;
        req.page = pages[i];
        if (req.kind == IoKind::kWrite) req.buffer.assign(cfg.page_size, 0x55);
        mixed.requests.push_back(std::move(req));
    }
    dev.psync(mixed);
    double mixed_cost = dev.stats().simulated_time_us;
    double homogeneous = batch_cost_oracle(cfg, 16, IoKind::kRead, 1, false) +
                         batch_cost_oracle(cfg, 16, IoKind::kWrite, 1, false);
    CHECK(mixed_cost == doctest::Approx(homogeneous * cfg.interleave_penalty));
    CHECK(mixed_cost >= homogeneous);
}

TEST_CASE("property: file backend round-trips random batches byte-identically") {
    auto cfg = emu_cfg();
    cfg.page_count = 256;
    std::string path = "/tmp/piodb_test_pages.bin";
    std::remove(path.c_str());
    Device dev = Device::make_file(cfg, path);
    auto pages = alloc_n(dev, 64);
    std::mt19937_64 rng(7);
    std::vector<PageBuffer> shadow(64, PageBuffer(cfg.page_size, 0));
    for (int round = 0; round < 20; ++round) {
        std::shuffle(pages.begin(), pages.end(), rng);
        std::size_t n = 1 + rng() % 32;
        std::vector<std::pair<PageId, PageBuffer>> batch;
        for (std::size_t i = 0; i < n; ++i) {
            PageBuffer buf(cfg.page_size);
            for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
            shadow[pages[i]] = buf;
            batch.emplace_back(pages[i], std::move(buf));
        }
        dev.psync_write(batch);
        std::shuffle(pages.begin(), pages.end(), rng);
        auto got = dev.psync_read(pages);
        for (std::size_t i = 0; i < pages.size(); ++i) {
            REQUIRE(got[i] == shadow[pages[i]]);  // order preservation too
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("device config round-trips through key=value text") {
    auto cfg = emu_cfg(4, 80.0, 160.0);
    cfg.size_latency_curve = {{1, 1.0}, {4, 1.5}};
    auto parsed = DeviceConfig::from_text(cfg.to_text());
    CHECK(parsed.channels == 4);
    CHECK(parsed.read_latency_us == doctest::Approx(80.0));
    CHECK(parsed.size_latency_curve.at(4) == doctest::Approx(1.5));
    CHECK_THROWS_AS(DeviceConfig::from_text("nonsense"), UsageError);
    CHECK_THROWS_AS(DeviceConfig::from_text("channels=0"), UsageError);
}
