#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "piodb/device.hpp"

namespace piodb {

// Fixed-width records: 8-byte unsigned keys, 8-byte data-page pointers.
// Fixed widths keep per-page capacities exact for the cost model.
struct Record {
    std::uint64_t key = 0;
    std::uint64_t data_ptr = 0;

    friend bool operator==(const Record&, const Record&) = default;
};

enum class OpFlag : std::uint8_t { kInsert = 'i', kDelete = 'd', kUpdate = 'u' };

// Unit stored in the operation queue and appended to leaf segments.
struct OpqEntry {
    Record rec;
    OpFlag op = OpFlag::kInsert;

    friend bool operator==(const OpqEntry&, const OpqEntry&) = default;
};

// On-page layout (all little-endian, offsets stable across runs):
//   0  u16  node type (1 internal, 2 leaf, 3 pio leaf segment)
//   2  u16  reserved
//   4  u32  record count
//   8  u64  next leaf page (leaves and segment 0 only; kNoPage when none)
//   16 payload
// Internal payload: (fanout-1) u64 key slots, then fanout u64 child slots.
// Leaf payload: count * 16-byte records.
// Segment payload: count * 24-byte entries (key, ptr, op flag, 7 pad bytes).
inline constexpr std::uint16_t kTypeInternal = 1;
inline constexpr std::uint16_t kTypeLeaf = 2;
inline constexpr std::uint16_t kTypeSegment = 3;
inline constexpr std::size_t kNodeHeaderBytes = 16;
inline constexpr std::size_t kLeafRecordBytes = 16;
inline constexpr std::size_t kSegmentEntryBytes = 24;

namespace detail {

template <typename T>
inline T load(std::span<const std::uint8_t> bytes, std::size_t off) {
    T v;
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    return v;
}

template <typename T>
inline void store(std::span<std::uint8_t> bytes, std::size_t off, T v) {
    std::memcpy(bytes.data() + off, &v, sizeof(T));
}

}  // namespace detail

inline std::uint16_t page_type(std::span<const std::uint8_t> page) {
    return detail::load<std::uint16_t>(page, 0);
}

struct InternalNode {
    std::vector<std::uint64_t> keys;
    std::vector<PageId> children;  // children.size() == keys.size() + 1
};

struct LeafNode {
    std::vector<Record> records;
    PageId next_leaf = kNoPage;
};

struct SegmentNode {
    std::vector<OpqEntry> entries;
    PageId next_leaf = kNoPage;
};

// Max pointers that fit an internal node of `bytes` total size.
inline std::uint32_t max_fanout_for(std::size_t node_bytes) {
    return static_cast<std::uint32_t>((node_bytes - kNodeHeaderBytes + 8) / 16);
}

inline std::uint32_t max_leaf_records_for(std::size_t node_bytes) {
    return static_cast<std::uint32_t>((node_bytes - kNodeHeaderBytes) / kLeafRecordBytes);
}

inline std::uint32_t max_segment_entries_for(std::size_t page_bytes) {
    return static_cast<std::uint32_t>((page_bytes - kNodeHeaderBytes) / kSegmentEntryBytes);
}

InternalNode decode_internal(std::span<const std::uint8_t> bytes, std::uint32_t fanout);
void encode_internal(const InternalNode& node, std::uint32_t fanout, std::span<std::uint8_t> bytes);

LeafNode decode_leaf(std::span<const std::uint8_t> bytes);
void encode_leaf(const LeafNode& node, std::span<std::uint8_t> bytes);

SegmentNode decode_segment(std::span<const std::uint8_t> bytes);
void encode_segment(const SegmentNode& node, std::span<std::uint8_t> bytes);

// Superblock at page 0: root location, geometry, and tuning parameters.
struct Superblock {
    static constexpr std::uint64_t kMagic = 0x5049'4f42'5452'4545ull;  // "PIOBTREE"
    static constexpr std::uint32_t kVersion = 1;
    static constexpr std::uint32_t kKindBaseline = 1;
    static constexpr std::uint32_t kKindPio = 2;

    std::uint32_t kind = kKindBaseline;
    std::uint32_t page_size = 4096;
    std::uint32_t fanout = 0;         // F: max pointers per internal node
    std::uint32_t leaf_capacity = 0;  // records per leaf page / entries per segment
    std::uint32_t leaf_segments = 1;  // L
    std::uint32_t node_pages = 1;     // baseline node size in pages
    PageId root_page = kNoPage;
    std::uint32_t height = 0;  // levels including the leaf level; 0 = empty tree
    std::uint32_t clean_shutdown = 0;
    std::uint64_t entry_count = 0;
    // PIO tuning block
    std::uint32_t pio_max = 64;
    std::uint32_t speriod = 5000;
    std::uint32_t bcnt = 5000;
    std::uint32_t opq_pages = 1;
    PageId lsmap_page = kNoPage;
    std::uint32_t lsmap_pages = 0;

    void encode(std::span<std::uint8_t> page) const;
    static Superblock decode(std::span<const std::uint8_t> page);
};

}  // namespace piodb
