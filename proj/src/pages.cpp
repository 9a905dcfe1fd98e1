#include "piodb/pages.hpp"

namespace piodb {

using detail::load;
using detail::store;

InternalNode decode_internal(std::span<const std::uint8_t> bytes, std::uint32_t fanout) {
    if (page_type(bytes) != kTypeInternal) throw UsageError("page is not an internal node");
    InternalNode node;
    std::uint32_t count = load<std::uint32_t>(bytes, 4);
    node.keys.resize(count);
    node.children.resize(count + 1);
    std::size_t keys_off = kNodeHeaderBytes;
    std::size_t children_off = kNodeHeaderBytes + 8 * (fanout - 1);
    for (std::uint32_t i = 0; i < count; ++i) node.keys[i] = load<std::uint64_t>(bytes, keys_off + 8 * i);
    for (std::uint32_t i = 0; i <= count; ++i) node.children[i] = load<PageId>(bytes, children_off + 8 * i);
    return node;
}

void encode_internal(const InternalNode& node, std::uint32_t fanout, std::span<std::uint8_t> bytes) {
    if (node.children.size() != node.keys.size() + 1) throw UsageError("internal node shape mismatch");
    if (node.children.size() > fanout) throw UsageError("internal node overflow");
    std::memset(bytes.data(), 0, bytes.size());
    store<std::uint16_t>(bytes, 0, kTypeInternal);
    store<std::uint32_t>(bytes, 4, static_cast<std::uint32_t>(node.keys.size()));
    store<std::uint64_t>(bytes, 8, kNoPage);
    std::size_t keys_off = kNodeHeaderBytes;
    std::size_t children_off = kNodeHeaderBytes + 8 * (fanout - 1);
    for (std::size_t i = 0; i < node.keys.size(); ++i) store<std::uint64_t>(bytes, keys_off + 8 * i, node.keys[i]);
    for (std::size_t i = 0; i < node.children.size(); ++i) store<PageId>(bytes, children_off + 8 * i, node.children[i]);
}

LeafNode decode_leaf(std::span<const std::uint8_t> bytes) {
    if (page_type(bytes) != kTypeLeaf) throw UsageError("page is not a leaf node");
    LeafNode node;
    std::uint32_t count = load<std::uint32_t>(bytes, 4);
    node.next_leaf = load<PageId>(bytes, 8);
    node.records.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::size_t off = kNodeHeaderBytes + kLeafRecordBytes * i;
        node.records[i].key = load<std::uint64_t>(bytes, off);
        node.records[i].data_ptr = load<std::uint64_t>(bytes, off + 8);
    }
    return node;
}

void encode_leaf(const LeafNode& node, std::span<std::uint8_t> bytes) {
    std::memset(bytes.data(), 0, bytes.size());
    store<std::uint16_t>(bytes, 0, kTypeLeaf);
    store<std::uint32_t>(bytes, 4, static_cast<std::uint32_t>(node.records.size()));
    store<PageId>(bytes, 8, node.next_leaf);
    for (std::size_t i = 0; i < node.records.size(); ++i) {
        std::size_t off = kNodeHeaderBytes + kLeafRecordBytes * i;
        store<std::uint64_t>(bytes, off, node.records[i].key);
        store<std::uint64_t>(bytes, off + 8, node.records[i].data_ptr);
    }
}

SegmentNode decode_segment(std::span<const std::uint8_t> bytes) {
    SegmentNode node;
    if (page_type(bytes) == 0) return node;  // untouched page: empty segment
    if (page_type(bytes) != kTypeSegment) throw UsageError("page is not a leaf segment");
    std::uint32_t count = load<std::uint32_t>(bytes, 4);
    node.next_leaf = load<PageId>(bytes, 8);
    node.entries.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::size_t off = kNodeHeaderBytes + kSegmentEntryBytes * i;
        node.entries[i].rec.key = load<std::uint64_t>(bytes, off);
        node.entries[i].rec.data_ptr = load<std::uint64_t>(bytes, off + 8);
        node.entries[i].op = static_cast<OpFlag>(load<std::uint8_t>(bytes, off + 16));
    }
    return node;
}

void encode_segment(const SegmentNode& node, std::span<std::uint8_t> bytes) {
    std::memset(bytes.data(), 0, bytes.size());
    store<std::uint16_t>(bytes, 0, kTypeSegment);
    store<std::uint32_t>(bytes, 4, static_cast<std::uint32_t>(node.entries.size()));
    store<PageId>(bytes, 8, node.next_leaf);
    for (std::size_t i = 0; i < node.entries.size(); ++i) {
        std::size_t off = kNodeHeaderBytes + kSegmentEntryBytes * i;
        store<std::uint64_t>(bytes, off, node.entries[i].rec.key);
        store<std::uint64_t>(bytes, off + 8, node.entries[i].rec.data_ptr);
        store<std::uint8_t>(bytes, off + 16, static_cast<std::uint8_t>(node.entries[i].op));
    }
}

void Superblock::encode(std::span<std::uint8_t> page) const {
    std::memset(page.data(), 0, page.size());
    std::size_t off = 0;
    auto put64 = [&](std::uint64_t v) { store<std::uint64_t>(page, off, v); off += 8; };
    auto put32 = [&](std::uint32_t v) { store<std::uint32_t>(page, off, v); off += 4; };
    put64(kMagic);
    put32(kVersion);
    put32(kind);
    put32(page_size);
    put32(fanout);
    put32(leaf_capacity);
    put32(leaf_segments);
    put32(node_pages);
    put32(height);
    put64(root_page);
    put32(clean_shutdown);
    put32(pio_max);
    put64(entry_count);
    put32(speriod);
    put32(bcnt);
    put32(opq_pages);
    put32(lsmap_pages);
    put64(lsmap_page);
}

Superblock Superblock::decode(std::span<const std::uint8_t> page) {
    std::size_t off = 0;
    auto get64 = [&]() { auto v = load<std::uint64_t>(page, off); off += 8; return v; };
    auto get32 = [&]() { auto v = load<std::uint32_t>(page, off); off += 4; return v; };
    if (get64() != kMagic) throw UsageError("bad superblock magic");
    if (get32() != kVersion) throw UsageError("unsupported superblock version");
    Superblock sb;
    sb.kind = get32();
    sb.page_size = get32();
    sb.fanout = get32();
    sb.leaf_capacity = get32();
    sb.leaf_segments = get32();
    sb.node_pages = get32();
    sb.height = get32();
    sb.root_page = get64();
    sb.clean_shutdown = get32();
    sb.pio_max = get32();
    sb.entry_count = get64();
    sb.speriod = get32();
    sb.bcnt = get32();
    sb.opq_pages = get32();
    sb.lsmap_pages = get32();
    sb.lsmap_page = get64();
    return sb;
}

}  // namespace piodb
