#include "piodb/wal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

namespace piodb {

namespace {
constexpr std::uint32_t kFrameMagic = 0x50'4c'4f'47;  // "PLOG"

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
    std::uint32_t v = 0;
    std::memcpy(&v, in.data() + off, 4);
    return v;
}
std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t off) {
    std::uint64_t v = 0;
    std::memcpy(&v, in.data() + off, 8);
    return v;
}
}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void MemLogStore::append(std::span<const std::uint8_t> bytes) {
    bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
}

std::vector<std::uint8_t> MemLogStore::read_durable() {
    return std::vector<std::uint8_t>(bytes_.begin(), bytes_.begin() + static_cast<std::ptrdiff_t>(forced_));
}

void MemLogStore::truncate_all() {
    bytes_.clear();
    forced_ = 0;
}

void MemLogStore::corrupt_tail(std::size_t drop_bytes) {
    drop_bytes = std::min(drop_bytes, bytes_.size());
    bytes_.resize(bytes_.size() - drop_bytes);
    forced_ = std::min(forced_, bytes_.size());
    forced_ = bytes_.size();  // pretend the torn frame made it to disk
}

FileLogStore::FileLogStore(const std::string& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw UsageError("cannot open log file " + path + ": " + std::strerror(errno));
    off_t end = ::lseek(fd_, 0, SEEK_END);
    size_ = static_cast<std::size_t>(end);
    forced_ = size_;  // existing content is durable by definition
}

FileLogStore::~FileLogStore() {
    if (fd_ >= 0) ::close(fd_);
}

void FileLogStore::append(std::span<const std::uint8_t> bytes) {
    ssize_t n = ::pwrite(fd_, bytes.data(), bytes.size(), static_cast<off_t>(size_));
    if (n != static_cast<ssize_t>(bytes.size())) throw StorageFullError("log append failed");
    size_ += bytes.size();
}

void FileLogStore::force() {
    forced_ = size_;
}

std::vector<std::uint8_t> FileLogStore::read_durable() {
    std::vector<std::uint8_t> out(forced_);
    std::size_t got = 0;
    while (got < forced_) {
        ssize_t n = ::pread(fd_, out.data() + got, forced_ - got, static_cast<off_t>(got));
        if (n <= 0) throw UsageError("log read failed");
        got += static_cast<std::size_t>(n);
    }
    return out;
}

void FileLogStore::truncate_all() {
    if (::ftruncate(fd_, 0) != 0) throw UsageError("log truncate failed");
    size_ = 0;
    forced_ = 0;
}

void FileLogStore::crash() {
    if (::ftruncate(fd_, static_cast<off_t>(forced_)) != 0) throw UsageError("log truncate failed");
    size_ = forced_;
}

Wal::Wal(LogStore& store) : store_(store) {
    auto existing = scan(store);
    if (!existing.empty()) next_lsn_ = existing.back().lsn + 1;
}

std::vector<std::uint8_t> Wal::encode(const LogRecord& rec) {
    std::vector<std::uint8_t> payload;
    put_u64(payload, rec.lsn);
    put_u64(payload, rec.txn);
    payload.push_back(static_cast<std::uint8_t>(rec.type));
    switch (rec.type) {
        case LogType::kRedo:
            put_u64(payload, rec.entry.rec.key);
            put_u64(payload, rec.entry.rec.data_ptr);
            payload.push_back(static_cast<std::uint8_t>(rec.entry.op));
            break;
        case LogType::kFlushStart:
        case LogType::kFlushEnd:
            put_u64(payload, rec.range_lo);
            put_u64(payload, rec.range_hi);
            break;
        case LogType::kFlushUndo:
            put_u64(payload, rec.page);
            payload.insert(payload.end(), rec.image.begin(), rec.image.end());
            break;
        case LogType::kCommit:
        case LogType::kCheckpoint:
            break;
    }
    std::vector<std::uint8_t> frame;
    frame.reserve(payload.size() + 12);
    put_u32(frame, kFrameMagic);
    put_u32(frame, static_cast<std::uint32_t>(payload.size()));
    frame.insert(frame.end(), payload.begin(), payload.end());
    put_u32(frame, crc32(payload));
    return frame;
}

std::uint64_t Wal::append(LogRecord rec) {
    rec.lsn = next_lsn_++;
    auto frame = encode(rec);
    store_.append(frame);
    return rec.lsn;
}

std::vector<LogRecord> Wal::scan(LogStore& store) {
    auto bytes = store.read_durable();
    std::vector<LogRecord> out;
    std::size_t off = 0;
    while (off + 12 <= bytes.size()) {
        if (get_u32(bytes, off) != kFrameMagic) break;
        std::uint32_t len = get_u32(bytes, off + 4);
        if (off + 8 + len + 4 > bytes.size()) break;  // torn frame
        std::span<const std::uint8_t> payload(bytes.data() + off + 8, len);
        if (crc32(payload) != get_u32(bytes, off + 8 + len)) break;  // corrupt tail
        LogRecord rec;
        rec.lsn = get_u64(payload, 0);
        rec.txn = get_u64(payload, 8);
        rec.type = static_cast<LogType>(payload[16]);
        switch (rec.type) {
            case LogType::kRedo:
                rec.entry.rec.key = get_u64(payload, 17);
                rec.entry.rec.data_ptr = get_u64(payload, 25);
                rec.entry.op = static_cast<OpFlag>(payload[33]);
                break;
            case LogType::kFlushStart:
            case LogType::kFlushEnd:
                rec.range_lo = get_u64(payload, 17);
                rec.range_hi = get_u64(payload, 25);
                break;
            case LogType::kFlushUndo:
                rec.page = get_u64(payload, 17);
                rec.image.assign(payload.begin() + 25, payload.end());
                break;
            case LogType::kCommit:
            case LogType::kCheckpoint:
                break;
            default:
                return out;  // unknown type: stop at last valid record
        }
        out.push_back(std::move(rec));
        off += 8 + len + 4;
    }
    return out;
}

}  // namespace piodb
