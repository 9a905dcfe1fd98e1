#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "piodb/pages.hpp"

namespace piodb {

enum class LogType : std::uint8_t {
    kRedo = 1,        // logical redo: one update operation's index record
    kFlushStart = 2,  // key range of a starting OPQ flush
    kFlushEnd = 3,
    kFlushUndo = 4,   // pre-image of an index page the flush overwrites
    kCommit = 5,
    kCheckpoint = 6,
};

struct LogRecord {
    std::uint64_t lsn = 0;
    std::uint64_t txn = 0;  // 0: auto-committed statement
    LogType type = LogType::kRedo;
    OpqEntry entry;            // kRedo
    std::uint64_t range_lo = 0;  // kFlushStart / kFlushEnd
    std::uint64_t range_hi = 0;
    PageId page = kNoPage;     // kFlushUndo
    PageBuffer image;          // kFlushUndo
};

// Append-only byte store with an explicit durability watermark. Data past the
// watermark is lost by a (simulated) crash.
class LogStore {
public:
    virtual ~LogStore() = default;
    virtual void append(std::span<const std::uint8_t> bytes) = 0;
    virtual void force() = 0;
    virtual std::vector<std::uint8_t> read_durable() = 0;
    virtual void truncate_all() = 0;
    // Drops everything past the last force, as a power failure would.
    virtual void crash() = 0;
};

class MemLogStore final : public LogStore {
public:
    void append(std::span<const std::uint8_t> bytes) override;
    void force() override { forced_ = bytes_.size(); }
    std::vector<std::uint8_t> read_durable() override;
    void truncate_all() override;
    void crash() override { bytes_.resize(forced_); }
    std::size_t size() const { return bytes_.size(); }
    // Torn-tail injection for framing tests.
    void corrupt_tail(std::size_t drop_bytes);

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t forced_ = 0;
};

class FileLogStore final : public LogStore {
public:
    explicit FileLogStore(const std::string& path);
    ~FileLogStore() override;
    void append(std::span<const std::uint8_t> bytes) override;
    void force() override;
    std::vector<std::uint8_t> read_durable() override;
    void truncate_all() override;
    void crash() override;

private:
    int fd_ = -1;
    std::size_t size_ = 0;
    std::size_t forced_ = 0;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Length-prefixed, checksummed framing over a LogStore. A torn tail fails the
// checksum and is discarded by the scan.
class Wal {
public:
    explicit Wal(LogStore& store);

    std::uint64_t append(LogRecord rec);  // assigns the lsn
    void force() { store_.force(); }
    void truncate() { store_.truncate_all(); }
    std::uint64_t next_lsn() const { return next_lsn_; }

    static std::vector<LogRecord> scan(LogStore& store);
    static std::vector<std::uint8_t> encode(const LogRecord& rec);

private:
    LogStore& store_;
    std::uint64_t next_lsn_ = 1;
};

}  // namespace piodb
