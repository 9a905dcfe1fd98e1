#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "piodb/buffer_pool.hpp"
#include "piodb/device.hpp"
#include "piodb/lsmap.hpp"
#include "piodb/opq.hpp"
#include "piodb/pages.hpp"

namespace piodb {

struct PioConfig {
    std::uint32_t pio_max = 64;       // max I/Os per psync call
    std::uint32_t speriod = 5000;     // appends between OPQ sorts
    std::uint32_t bcnt = 5000;        // entries per partial flush
    std::uint32_t leaf_segments = 1;  // L
    std::uint32_t opq_pages = 1;      // O
    std::uint32_t fanout = 0;         // 0: derive from page size
    std::uint32_t leaf_capacity = 0;  // entries per segment; 0: derive
};

struct KeyRange {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;
};

// WAL hook points around a flush. Pre-images are the durable bytes of every
// page about to be overwritten, delivered before the write happens.
class FlushObserver {
public:
    virtual ~FlushObserver() = default;
    virtual void flush_begin(const KeyRange&, std::span<const OpqEntry> /*selected*/) {}
    virtual void node_preimages(std::span<const std::pair<PageId, PageBuffer>>) {}
    virtual void flush_end(const KeyRange&, std::span<const OpqEntry> /*survivors_in_range*/) {}
};

struct LeafMatch {
    PageId first_page = kNoPage;
    std::vector<OpqEntry> entries;  // physical (append) order
};

// PIO B-tree: baseline internal nodes over append-only leaves made of L leaf
// segments, an in-memory operation queue, MPSearch-style batched descent for
// searches and flushes, and an LSMap caching each leaf's write cursor.
class PioBtree {
public:
    static PioBtree create(Device& dev, PioConfig cfg, std::size_t pool_pages);
    static PioBtree open(Device& dev, std::size_t pool_pages);

    // Sorted duplicate-free input; leaves packed to fill * (L * capacity).
    void bulk_load(std::span<const Record> records, double fill);

    // Update operations complete by appending to the OPQ; a full OPQ is
    // drained through repeated bcnt-sized flushes first.
    void pio_insert(const Record& rec);
    void pio_delete(std::uint64_t key);  // data_ptr 0 acts as a match-any wildcard
    void pio_update(const Record& rec);

    std::optional<std::uint64_t> point_search(std::uint64_t key);
    std::vector<Record> prange_search(std::uint64_t start, std::uint64_t end);

    // Batched multi-path descent; returns every leaf whose range intersects
    // the (sorted, possibly duplicated) key set.
    std::vector<LeafMatch> mpsearch(std::span<const std::uint64_t> keys);

    // Partial flush of the max_entries lowest-keyed OPQ entries.
    void flush(std::size_t max_entries);
    void flush_all();

    OpQueue& opq() { return opq_; }
    const OpQueue& opq() const { return opq_; }
    LsMap& lsmap() { return lsmap_; }
    const Superblock& meta() const { return meta_; }
    const PioConfig& config() const { return cfg_; }
    std::uint32_t height() const { return meta_.height; }
    BufferPool* pool() { return pool_pages_ > 0 ? &pool_ : nullptr; }
    void set_observer(FlushObserver* obs) { observer_ = obs; }

    // Redo-path append: no flush trigger, queue must have room.
    void opq_append_raw(const OpqEntry& entry);

    // Clean shutdown: persists the LSMap and marks the superblock clean.
    void close();

    void check_structure();
    std::vector<PageId> reachable_pages();
    void rebuild_lsmap();
    std::uint64_t leaf_count();

    // Eq.-(1) predicate: does any s in S fall into [K[i-1], K[i]) with
    // K[0] = -inf and K[F] = +inf? `i` is the 1-based child index.
    static bool check_search_needed(std::size_t i, std::span<const std::uint64_t> node_keys,
                                    std::span<const std::uint64_t> search_keys);

    // Cancellation kernel: inserts die to later matching deletes (same key
    // and pointer, or wildcard pointer); updates act as delete-then-insert
    // matched by key alone. Unmatched delete/update entries drop out.
    static std::vector<OpqEntry> shrink_entries(std::span<const OpqEntry> entries);

    // Chronological reduction of one key's entries to its surviving pointer.
    static std::optional<std::uint64_t> reduce_entries(std::span<const OpqEntry> entries);

private:
    PioBtree(Device& dev, Superblock meta, PioConfig cfg, std::size_t pool_pages);

    struct Group {
        PageId node = kNoPage;
        std::span<const OpqEntry> entries;
    };
    struct SearchGroup {
        PageId node = kNoPage;
        std::span<const std::uint64_t> keys;
    };
    // Child frames report splits (fence key records, op 'i') and underflow
    // signals upward; separator updates and removals (the paper's 'u' and 'd'
    // fence records) are carried out by the parent while resolving them.
    struct Fence {
        enum Kind : std::uint8_t { kInsert = 'i', kUnderflow = 'f' };
        Kind kind;
        std::uint64_t key = 0;
        PageId node = kNoPage;
        PageId anchor = kNoPage;  // kInsert: node the new one follows
    };
    struct LoadedLeaf {
        PageId first = kNoPage;
        std::vector<SegmentNode> segs;
    };

    // Page plumbing
    std::vector<InternalNode> fetch_internals(std::span<const PageId> pages);
    InternalNode fetch_internal(PageId page);
    void write_internals(const std::vector<std::pair<PageId, InternalNode>>& nodes);
    LoadedLeaf read_full_leaf(PageId first);
    std::vector<LoadedLeaf> read_full_leaves(std::span<const PageId> firsts);
    void emit_preimages(std::vector<std::pair<PageId, PageBuffer>>& preimages);
    PageBuffer encode_leaf_pages(const LoadedLeaf& leaf) const;

    // Descent machinery
    void mpsearch_rec(std::uint32_t level, std::vector<SearchGroup>& groups,
                      std::vector<LeafMatch>& out);
    void prange_rec(std::uint32_t level, std::vector<PageId>& nodes, std::uint64_t start,
                    std::uint64_t end, std::vector<LeafMatch>& out);
    void read_leaf_matches(std::span<const PageId> leaves, std::vector<LeafMatch>& out);

    // Flush machinery
    void bupdate(std::span<const OpqEntry> entries);
    std::vector<Fence> bupdate_rec(std::uint32_t level, std::vector<Group>& groups);
    std::vector<Fence> leaf_frame(std::vector<Group>& groups);
    void apply_fences(InternalNode& parent, std::vector<Fence>& fences, std::size_t begin,
                      std::size_t end, std::uint32_t child_level);
    void resolve_underflow(InternalNode& parent, PageId child, std::uint32_t child_level);
    std::vector<Fence> split_internal(PageId page, InternalNode& node);
    std::vector<Fence> rewrite_leaf(PageId first, std::vector<OpqEntry> survivors, PageId next_leaf,
                                    std::vector<std::pair<PageId, PageBuffer>>& writes);
    void grow_root(std::vector<Fence>& fences);
    void collapse_root();
    void persist_meta_in_flush(const Superblock& old_meta);
    void defer_free(PageId first, std::uint32_t count);

    static std::uint64_t entry_key(const OpqEntry& e) { return e.rec.key; }
    std::uint32_t seg_capacity() const { return meta_.leaf_capacity; }
    std::uint32_t leaf_capacity_total() const { return meta_.leaf_capacity * meta_.leaf_segments; }

    PageId alloc_leaf();
    void free_leaf(PageId first);
    void persist_meta();

    void maybe_flush_before_append();
    void audit_rec(PageId page, std::uint32_t level, std::uint64_t lo, bool has_lo,
                   std::uint64_t hi, bool has_hi, std::vector<PageId>& leaves);

    Device& dev_;
    Superblock meta_;
    PioConfig cfg_;
    std::size_t pool_pages_;
    BufferPool pool_;
    OpQueue opq_;
    LsMap lsmap_;
    FlushObserver* observer_ = nullptr;
    bool in_flush_ = false;
    // Pages freed mid-flush are returned to the allocator only after the
    // flush completes, so an undone flush never clobbers pre-flush content.
    std::vector<std::pair<PageId, std::uint32_t>> pending_frees_;
};

}  // namespace piodb
