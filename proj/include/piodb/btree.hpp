#pragma once

#include <optional>
#include <span>
#include <vector>

#include "piodb/buffer_pool.hpp"
#include "piodb/device.hpp"
#include "piodb/pages.hpp"

namespace piodb {

struct DuplicateKeyError : UsageError {
    using UsageError::UsageError;
};

struct TreeConfig {
    std::uint32_t fanout = 0;         // 0: derive from node size
    std::uint32_t leaf_capacity = 0;  // 0: derive from node size
    std::uint32_t node_pages = 1;
};

// Baseline B+-tree with an LRU buffer pool. Single-page (or fixed multi-page)
// nodes, sorted leaves linked left to right, write-back caching.
class BTree {
public:
    static BTree create(Device& dev, TreeConfig cfg, std::size_t pool_pages);
    static BTree open(Device& dev, std::size_t pool_pages);

    std::optional<std::uint64_t> search(std::uint64_t key);
    void insert(const Record& rec);
    bool erase(std::uint64_t key);        // absent key: successful no-op (false)
    bool update(const Record& rec);       // absent key: no-op (false)
    std::vector<Record> range_search_legacy(std::uint64_t start, std::uint64_t end);

    // Input must be sorted and duplicate-free; leaves are packed to
    // fill * capacity and parents are built bottom-up.
    void bulk_load(std::span<const Record> records, double fill);

    void flush_all();

    BufferPool& pool() { return pool_; }
    const Superblock& meta() const { return meta_; }
    std::uint32_t height() const { return meta_.height; }
    std::uint64_t entry_count() const { return meta_.entry_count; }
    std::uint64_t leaf_node_count();
    std::uint64_t node_count();

    // Full-tree audit: sortedness, separator bounds, utilization, sibling
    // chain order. Throws on violation.
    void check_structure();

    std::vector<PageId> reachable_pages();

private:
    BTree(Device& dev, Superblock meta, std::size_t pool_pages);

    InternalNode read_internal(PageId page);
    LeafNode read_leaf(PageId page);
    void write_internal(PageId page, const InternalNode& node);
    void write_leaf(PageId page, const LeafNode& node);
    PageId alloc_node();
    void free_node(PageId page);
    void persist_meta();

    PageId find_leaf(std::uint64_t key);

    struct Split {
        std::uint64_t sep;
        PageId right;
    };
    std::optional<Split> insert_rec(PageId page, std::uint32_t level, const Record& rec);
    bool erase_rec(PageId page, std::uint32_t level, std::uint64_t key, bool& removed);
    void rebalance_child(InternalNode& parent, std::size_t child_idx, std::uint32_t child_level);

    std::uint32_t min_leaf_records() const { return meta_.leaf_capacity / 2; }
    std::uint32_t min_children() const { return (meta_.fanout + 1) / 2; }

    void audit_rec(PageId page, std::uint32_t level, std::uint64_t lo, bool has_lo,
                   std::uint64_t hi, bool has_hi, std::vector<PageId>& leaves,
                   std::uint64_t& entries);

    Device& dev_;
    Superblock meta_;
    BufferPool pool_;
};

}  // namespace piodb
