#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace piodb {

using PageId = std::uint64_t;
inline constexpr PageId kNoPage = ~static_cast<PageId>(0);

enum class IoKind : std::uint8_t { kRead, kWrite };

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct AddressError : std::out_of_range {
    using std::out_of_range::out_of_range;
};
struct StorageFullError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using PageBuffer = std::vector<std::uint8_t>;

// One page-granular I/O request; buffer is the source for writes and the
// destination for reads. Buffer length must equal the device page size.
struct IoRequest {
    IoKind kind;
    PageId page;
    PageBuffer buffer;
};

// Ordered group of requests submitted and completed as one psync call.
struct IoBatch {
    std::vector<IoRequest> requests;
    int io_unit_pages = 1;  // consecutive pages forming one logical I/O
};

struct DeviceConfig {
    std::size_t page_size = 4096;
    std::uint64_t page_count = 1 << 20;
    int channels = 16;
    int packages_per_channel = 4;  // folded into size_latency_curve, kept for reporting
    double read_latency_us = 100.0;
    double write_latency_us = 200.0;
    double interleave_penalty = 1.3;
    // I/O-unit size (pages) -> latency scale factor. Sub-linear growth mimics
    // striped flash packages; sizes beyond the last entry scale linearly from it.
    std::map<int, double> size_latency_curve = {{1, 1.0}, {2, 1.0}, {4, 1.6}, {8, 2.5}};

    void validate() const;
    static DeviceConfig from_file(const std::string& path);
    static DeviceConfig from_text(const std::string& text);
    std::string to_text() const;
};

struct DeviceStats {
    std::uint64_t pages_read = 0;
    std::uint64_t pages_written = 0;
    std::uint64_t read_batches = 0;
    std::uint64_t write_batches = 0;
    double simulated_time_us = 0.0;
};

// Storage behind the latency model: raw page array semantics only.
class PageStore {
public:
    virtual ~PageStore() = default;
    virtual void read_page(PageId id, std::span<std::uint8_t> out) = 0;
    virtual void write_page(PageId id, std::span<const std::uint8_t> in) = 0;
};

class MemStore final : public PageStore {
public:
    MemStore(std::size_t page_size, std::uint64_t page_count);
    void read_page(PageId id, std::span<std::uint8_t> out) override;
    void write_page(PageId id, std::span<const std::uint8_t> in) override;

private:
    std::size_t page_size_;
    std::vector<PageBuffer> pages_;
};

// Pages live at byte offset page_id * page_size in a single data file.
class FileStore final : public PageStore {
public:
    FileStore(const std::string& path, std::size_t page_size);
    ~FileStore() override;
    void read_page(PageId id, std::span<std::uint8_t> out) override;
    void write_page(PageId id, std::span<const std::uint8_t> in) override;

private:
    int fd_ = -1;
    std::size_t page_size_;
};

// Test hook: throws CrashInjected after a configured number of page writes,
// leaving a prefix of the batch applied (models a torn batch on power loss).
struct CrashInjected : std::runtime_error {
    CrashInjected() : std::runtime_error("injected crash") {}
};

// Batched parallel block device. All I/O goes through psync calls: a blocking
// submission of a request array whose cost is charged per batch as
//   ceil(units / channels) * base_latency * size_factor(unit_pages) * penalty.
// Simulated time is a logical accumulator, not wall-clock sleeping.
class Device {
public:
    Device(DeviceConfig cfg, std::unique_ptr<PageStore> store);

    static Device make_mem(DeviceConfig cfg);
    static Device make_file(DeviceConfig cfg, const std::string& path);

    const DeviceConfig& config() const { return cfg_; }
    std::size_t page_size() const { return cfg_.page_size; }

    // Reads `pages` and returns buffers positionally aligned with the request
    // list. Every group of io_unit_pages ids must be consecutive.
    std::vector<PageBuffer> psync_read(std::span<const PageId> pages, int io_unit_pages = 1);

    // All writes are durable in the backend before return.
    void psync_write(std::span<const std::pair<PageId, PageBuffer>> pages, int io_unit_pages = 1);
    void psync_write(PageId page, const PageBuffer& buf);

    // General form; charges the interleave penalty when kinds are mingled.
    void psync(IoBatch& batch);

    double batch_cost_us(std::size_t batch_units, IoKind kind, int io_unit_pages, bool mixed) const;
    double size_factor(int io_unit_pages) const;

    PageId alloc_page();
    // Lowest run of `count` consecutive free pages (leaf extents need
    // physically contiguous pages so an L-page node is one large I/O).
    PageId alloc_extent(std::uint64_t count);
    void free_page(PageId id);
    void free_extent(PageId first, std::uint64_t count);
    bool is_allocated(PageId id) const;
    std::uint64_t allocated_pages() const;
    // Recovery rebuilds allocation state from the set of reachable pages.
    void reset_allocations(const std::set<PageId>& live);
    // Reopen support: treat [0, n) as allocated until the live set is known.
    void assume_allocated_up_to(PageId n);

    const DeviceStats& stats() const { return stats_; }
    void reset_stats() { stats_ = DeviceStats{}; }

    void set_write_crash_countdown(std::int64_t pages) { write_crash_countdown_ = pages; }
    std::int64_t write_crash_countdown() const { return write_crash_countdown_; }

private:
    void check_allocated(PageId id) const;
    void charge(std::size_t units, IoKind kind, int io_unit_pages, bool mixed);
    void do_write(PageId id, std::span<const std::uint8_t> in);

    DeviceConfig cfg_;
    std::unique_ptr<PageStore> store_;
    DeviceStats stats_;
    std::set<PageId> free_below_;  // freed ids below next_unused_
    PageId next_unused_ = 0;
    std::int64_t write_crash_countdown_ = -1;  // <0: disabled
};

}  // namespace piodb
