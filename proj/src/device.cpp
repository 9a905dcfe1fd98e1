#include "piodb/device.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace piodb {

void DeviceConfig::validate() const {
    if (page_size == 0 || page_size % 512 != 0) throw UsageError("page_size must be a positive multiple of 512");
    if (page_count == 0) throw UsageError("page_count must be positive");
    if (channels < 1) throw UsageError("channels must be >= 1");
    if (packages_per_channel < 1) throw UsageError("packages_per_channel must be >= 1");
    if (read_latency_us <= 0 || write_latency_us <= 0) throw UsageError("latencies must be positive");
    if (interleave_penalty < 1.0) throw UsageError("interleave_penalty must be >= 1");
    if (size_latency_curve.empty()) throw UsageError("size_latency_curve must be non-empty");
    double prev = 0.0;
    for (const auto& [pages, factor] : size_latency_curve) {
        if (pages < 1 || factor <= 0) throw UsageError("size_latency_curve entries must be positive");
        if (factor < prev) throw UsageError("size_latency_curve must be non-decreasing");
        prev = factor;
    }
}

static std::map<int, double> parse_curve(const std::string& value) {
    std::map<int, double> curve;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos) throw UsageError("bad size_latency_curve entry: " + item);
        curve[std::stoi(item.substr(0, colon))] = std::stod(item.substr(colon + 1));
    }
    return curve;
}

DeviceConfig DeviceConfig::from_text(const std::string& text) {
    DeviceConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("bad config line: " + line);
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "page_size") cfg.page_size = std::stoull(value);
        else if (key == "page_count") cfg.page_count = std::stoull(value);
        else if (key == "channels") cfg.channels = std::stoi(value);
        else if (key == "packages_per_channel") cfg.packages_per_channel = std::stoi(value);
        else if (key == "read_latency_us") cfg.read_latency_us = std::stod(value);
        else if (key == "write_latency_us") cfg.write_latency_us = std::stod(value);
        else if (key == "interleave_penalty") cfg.interleave_penalty = std::stod(value);
        else if (key == "size_latency_curve") cfg.size_latency_curve = parse_curve(value);
        else throw UsageError("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

DeviceConfig DeviceConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open device config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::string DeviceConfig::to_text() const {
    std::ostringstream out;
    out << "page_size=" << page_size << "\n"
        << "page_count=" << page_count << "\n"
        << "channels=" << channels << "\n"
        << "packages_per_channel=" << packages_per_channel << "\n"
        << "read_latency_us=" << read_latency_us << "\n"
        << "write_latency_us=" << write_latency_us << "\n"
        << "interleave_penalty=" << interleave_penalty << "\n"
        << "size_latency_curve=";
    bool first = true;
    for (const auto& [pages, factor] : size_latency_curve) {
        if (!first) out << ",";
        out << pages << ":" << factor;
        first = false;
    }
    out << "\n";
    return out.str();
}

MemStore::MemStore(std::size_t page_size, std::uint64_t page_count) : page_size_(page_size) {
    pages_.resize(page_count);
}

void MemStore::read_page(PageId id, std::span<std::uint8_t> out) {
    const PageBuffer& page = pages_[id];
    if (page.empty()) {
        std::memset(out.data(), 0, page_size_);
    } else {
        std::memcpy(out.data(), page.data(), page_size_);
    }
}

void MemStore::write_page(PageId id, std::span<const std::uint8_t> in) {
    pages_[id].assign(in.begin(), in.end());
}

FileStore::FileStore(const std::string& path, std::size_t page_size) : page_size_(page_size) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw UsageError("cannot open data file " + path + ": " + std::strerror(errno));
}

FileStore::~FileStore() {
    if (fd_ >= 0) ::close(fd_);
}

void FileStore::read_page(PageId id, std::span<std::uint8_t> out) {
    ssize_t n = ::pread(fd_, out.data(), page_size_, static_cast<off_t>(id * page_size_));
    if (n < 0) throw AddressError("pread failed: " + std::string(std::strerror(errno)));
    // Reads past EOF are pages never written; they are all-zero.
    if (static_cast<std::size_t>(n) < page_size_) {
        std::memset(out.data() + n, 0, page_size_ - static_cast<std::size_t>(n));
    }
}

void FileStore::write_page(PageId id, std::span<const std::uint8_t> in) {
    ssize_t n = ::pwrite(fd_, in.data(), page_size_, static_cast<off_t>(id * page_size_));
    if (n != static_cast<ssize_t>(page_size_)) {
        throw StorageFullError("pwrite failed: " + std::string(std::strerror(errno)));
    }
}

Device::Device(DeviceConfig cfg, std::unique_ptr<PageStore> store)
    : cfg_(std::move(cfg)), store_(std::move(store)) {
    cfg_.validate();
}

Device Device::make_mem(DeviceConfig cfg) {
    cfg.validate();
    auto store = std::make_unique<MemStore>(cfg.page_size, cfg.page_count);
    return Device(std::move(cfg), std::move(store));
}

Device Device::make_file(DeviceConfig cfg, const std::string& path) {
    cfg.validate();
    auto store = std::make_unique<FileStore>(path, cfg.page_size);
    return Device(std::move(cfg), std::move(store));
}

double Device::size_factor(int io_unit_pages) const {
    if (io_unit_pages < 1) throw UsageError("io_unit_pages must be >= 1");
    const auto& curve = cfg_.size_latency_curve;
    auto exact = curve.find(io_unit_pages);
    if (exact != curve.end()) return exact->second;
    auto above = curve.lower_bound(io_unit_pages);
    if (above == curve.end()) {
        // Beyond the table: scale linearly from the last entry.
        const auto& [last_pages, last_factor] = *curve.rbegin();
        return last_factor * static_cast<double>(io_unit_pages) / last_pages;
    }
    if (above == curve.begin()) {
        const auto& [first_pages, first_factor] = *curve.begin();
        return first_factor * static_cast<double>(io_unit_pages) / first_pages;
    }
    auto below = std::prev(above);
    double t = static_cast<double>(io_unit_pages - below->first) /
               static_cast<double>(above->first - below->first);
    return below->second + t * (above->second - below->second);
}

double Device::batch_cost_us(std::size_t batch_units, IoKind kind, int io_unit_pages, bool mixed) const {
    if (batch_units < 1) throw UsageError("batch size must be >= 1");
    double base = (kind == IoKind::kRead) ? cfg_.read_latency_us : cfg_.write_latency_us;
    double rounds = std::ceil(static_cast<double>(batch_units) / cfg_.channels);
    return rounds * base * size_factor(io_unit_pages) * (mixed ? cfg_.interleave_penalty : 1.0);
}

void Device::charge(std::size_t units, IoKind kind, int io_unit_pages, bool mixed) {
    stats_.simulated_time_us += batch_cost_us(units, kind, io_unit_pages, mixed);
}

void Device::check_allocated(PageId id) const {
    if (!is_allocated(id)) throw AddressError("page " + std::to_string(id) + " is not allocated");
}

bool Device::is_allocated(PageId id) const {
    return id < next_unused_ && !free_below_.count(id);
}

std::uint64_t Device::allocated_pages() const {
    return next_unused_ - free_below_.size();
}

std::vector<PageBuffer> Device::psync_read(std::span<const PageId> pages, int io_unit_pages) {
    if (pages.empty()) throw UsageError("empty psync read batch");
    if (io_unit_pages < 1 || pages.size() % io_unit_pages != 0) {
        throw UsageError("batch length must be a multiple of io_unit_pages");
    }
    for (std::size_t i = 0; i < pages.size(); ++i) {
        check_allocated(pages[i]);
        if (i % io_unit_pages != 0 && pages[i] != pages[i - 1] + 1) {
            throw UsageError("pages within an I/O unit must be consecutive");
        }
    }
    std::vector<PageBuffer> out(pages.size());
    for (std::size_t i = 0; i < pages.size(); ++i) {
        out[i].resize(cfg_.page_size);
        store_->read_page(pages[i], out[i]);
    }
    stats_.pages_read += pages.size();
    stats_.read_batches += 1;
    charge(pages.size() / io_unit_pages, IoKind::kRead, io_unit_pages, false);
    return out;
}

void Device::do_write(PageId id, std::span<const std::uint8_t> in) {
    if (write_crash_countdown_ == 0) throw CrashInjected{};
    store_->write_page(id, in);
    if (write_crash_countdown_ > 0) --write_crash_countdown_;
}

void Device::psync_write(std::span<const std::pair<PageId, PageBuffer>> pages, int io_unit_pages) {
    if (pages.empty()) throw UsageError("empty psync write batch");
    if (io_unit_pages < 1 || pages.size() % io_unit_pages != 0) {
        throw UsageError("batch length must be a multiple of io_unit_pages");
    }
    for (std::size_t i = 0; i < pages.size(); ++i) {
        check_allocated(pages[i].first);
        if (pages[i].second.size() != cfg_.page_size) throw UsageError("write buffer size != page size");
        if (i % io_unit_pages != 0 && pages[i].first != pages[i - 1].first + 1) {
            throw UsageError("pages within an I/O unit must be consecutive");
        }
    }
    for (const auto& [id, buf] : pages) do_write(id, buf);
    stats_.pages_written += pages.size();
    stats_.write_batches += 1;
    charge(pages.size() / io_unit_pages, IoKind::kWrite, io_unit_pages, false);
}

void Device::psync_write(PageId page, const PageBuffer& buf) {
    std::pair<PageId, PageBuffer> one{page, buf};
    psync_write(std::span<const std::pair<PageId, PageBuffer>>(&one, 1), 1);
}

void Device::psync(IoBatch& batch) {
    if (batch.requests.empty()) throw UsageError("empty psync batch");
    bool has_read = false, has_write = false;
    for (auto& req : batch.requests) {
        check_allocated(req.page);
        if (req.kind == IoKind::kRead) {
            has_read = true;
            req.buffer.resize(cfg_.page_size);
        } else {
            has_write = true;
            if (req.buffer.size() != cfg_.page_size) throw UsageError("write buffer size != page size");
        }
    }
    std::size_t reads = 0, writes = 0;
    for (auto& req : batch.requests) {
        if (req.kind == IoKind::kRead) {
            store_->read_page(req.page, req.buffer);
            ++reads;
        } else {
            do_write(req.page, req.buffer);
            ++writes;
        }
    }
    bool mixed = has_read && has_write;
    stats_.pages_read += reads;
    stats_.pages_written += writes;
    if (has_read) stats_.read_batches += 1;
    if (has_write) stats_.write_batches += 1;
    if (mixed) {
        // A mingled batch is charged as one pass at the dominant kind's count,
        // scaled by the interference penalty for each kind's share.
        charge(reads, IoKind::kRead, batch.io_unit_pages, true);
        charge(writes, IoKind::kWrite, batch.io_unit_pages, true);
    } else {
        charge(batch.requests.size(), has_read ? IoKind::kRead : IoKind::kWrite,
               batch.io_unit_pages, false);
    }
}

PageId Device::alloc_page() {
    return alloc_extent(1);
}

PageId Device::alloc_extent(std::uint64_t count) {
    if (count == 0) throw UsageError("alloc_extent of zero pages");
    // Lowest free id first, for deterministic fixtures and traces.
    if (count == 1 && !free_below_.empty()) {
        PageId id = *free_below_.begin();
        free_below_.erase(free_below_.begin());
        return id;
    }
    if (count > 1) {
        std::uint64_t run = 0;
        PageId start = 0;
        for (PageId id : free_below_) {
            if (run > 0 && id == start + run) {
                ++run;
            } else {
                start = id;
                run = 1;
            }
            if (run == count) {
                for (PageId p = start; p < start + count; ++p) free_below_.erase(p);
                return start;
            }
        }
    }
    if (next_unused_ + count > cfg_.page_count) throw StorageFullError("device out of pages");
    PageId start = next_unused_;
    next_unused_ += count;
    return start;
}

void Device::free_page(PageId id) {
    if (id >= next_unused_ || free_below_.count(id)) {
        throw AddressError("double free of page " + std::to_string(id));
    }
    free_below_.insert(id);
    while (next_unused_ > 0) {
        auto it = free_below_.find(next_unused_ - 1);
        if (it == free_below_.end()) break;
        free_below_.erase(it);
        --next_unused_;
    }
}

void Device::free_extent(PageId first, std::uint64_t count) {
    for (PageId p = first; p < first + count; ++p) free_page(p);
}

void Device::assume_allocated_up_to(PageId n) {
    if (n > cfg_.page_count) throw UsageError("watermark beyond device size");
    if (n <= next_unused_) return;
    next_unused_ = n;
}

void Device::reset_allocations(const std::set<PageId>& live) {
    free_below_.clear();
    next_unused_ = live.empty() ? 0 : (*live.rbegin() + 1);
    for (PageId p = 0; p < next_unused_; ++p) {
        if (!live.count(p)) free_below_.insert(p);
    }
}

}  // namespace piodb
