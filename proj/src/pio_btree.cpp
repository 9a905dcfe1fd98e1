#include "piodb/pio_btree.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace piodb {

namespace {

bool entry_key_less(const OpqEntry& a, const OpqEntry& b) {
    return a.rec.key < b.rec.key;
}

// psync calls never carry more than pio_max logical I/Os.
void write_chunked(Device& dev, std::vector<std::pair<PageId, PageBuffer>>& writes, int unit,
                   std::uint32_t pio_max) {
    std::size_t per_call = static_cast<std::size_t>(pio_max) * static_cast<std::size_t>(unit);
    for (std::size_t off = 0; off < writes.size(); off += per_call) {
        std::size_t len = std::min(per_call, writes.size() - off);
        dev.psync_write(std::span<const std::pair<PageId, PageBuffer>>(writes.data() + off, len), unit);
    }
}

}  // namespace

PioBtree::PioBtree(Device& dev, Superblock meta, PioConfig cfg, std::size_t pool_pages)
    : dev_(dev),
      meta_(meta),
      cfg_(cfg),
      pool_pages_(pool_pages),
      pool_(dev, pool_pages, 1),
      opq_(static_cast<std::size_t>(cfg.opq_pages) * (meta.fanout - 1), cfg.speriod),
      lsmap_(meta.leaf_segments) {}

PioBtree PioBtree::create(Device& dev, PioConfig cfg, std::size_t pool_pages) {
    Superblock meta;
    meta.kind = Superblock::kKindPio;
    meta.page_size = static_cast<std::uint32_t>(dev.page_size());
    meta.fanout = cfg.fanout ? cfg.fanout : max_fanout_for(dev.page_size());
    meta.leaf_capacity = cfg.leaf_capacity ? cfg.leaf_capacity : max_segment_entries_for(dev.page_size());
    meta.leaf_segments = cfg.leaf_segments;
    meta.node_pages = 1;
    meta.pio_max = cfg.pio_max;
    meta.speriod = cfg.speriod;
    meta.bcnt = cfg.bcnt;
    meta.opq_pages = cfg.opq_pages;
    if (meta.fanout < 3) throw UsageError("fanout must be >= 3");
    if (meta.fanout > max_fanout_for(dev.page_size())) throw UsageError("fanout exceeds page size");
    if (meta.leaf_capacity < 2) throw UsageError("segment capacity must be >= 2");
    if (meta.leaf_capacity > max_segment_entries_for(dev.page_size())) {
        throw UsageError("segment capacity exceeds page size");
    }
    if (meta.leaf_segments < 1) throw UsageError("leaf_segments must be >= 1");
    if (cfg.pio_max < 1) throw UsageError("pio_max must be >= 1");
    if (cfg.opq_pages < 1) throw UsageError("opq_pages must be >= 1");
    std::size_t opq_capacity = static_cast<std::size_t>(cfg.opq_pages) * (meta.fanout - 1);
    if (cfg.bcnt < 1 || cfg.bcnt > opq_capacity) throw UsageError("bcnt must be in [1, OPQ capacity]");
    PageId sb_page = dev.alloc_page();
    if (sb_page != 0) throw UsageError("superblock must live at page 0 of a fresh device");
    PioBtree tree(dev, meta, cfg, pool_pages);
    tree.persist_meta();
    return tree;
}

PioBtree PioBtree::open(Device& dev, std::size_t pool_pages) {
    auto pages = dev.psync_read(std::vector<PageId>{0});
    Superblock meta = Superblock::decode(pages[0]);
    if (meta.kind != Superblock::kKindPio) throw UsageError("not a PIO B-tree file");
    PioConfig cfg;
    cfg.pio_max = meta.pio_max;
    cfg.speriod = meta.speriod;
    cfg.bcnt = meta.bcnt;
    cfg.leaf_segments = meta.leaf_segments;
    cfg.opq_pages = meta.opq_pages;
    cfg.fanout = meta.fanout;
    cfg.leaf_capacity = meta.leaf_capacity;
    PioBtree tree(dev, meta, cfg, pool_pages);
    bool clean = meta.clean_shutdown != 0;
    if (clean && meta.lsmap_page != kNoPage) {
        std::vector<PageId> ids(meta.lsmap_pages);
        for (std::uint32_t i = 0; i < meta.lsmap_pages; ++i) ids[i] = meta.lsmap_page + i;
        auto blob_pages = dev.psync_read(ids, 1);
        std::vector<std::uint8_t> blob;
        for (auto& p : blob_pages) blob.insert(blob.end(), p.begin(), p.end());
        tree.lsmap_ = LsMap::deserialize(blob);
    } else {
        tree.rebuild_lsmap();
    }
    auto live_vec = tree.reachable_pages();
    dev.reset_allocations(std::set<PageId>(live_vec.begin(), live_vec.end()));
    tree.meta_.clean_shutdown = 0;
    tree.persist_meta();
    return tree;
}

void PioBtree::persist_meta() {
    PageBuffer page(dev_.page_size());
    meta_.encode(page);
    dev_.psync_write(0, page);
}

void PioBtree::persist_meta_in_flush(const Superblock& old_meta) {
    if (observer_ && in_flush_) {
        std::vector<std::pair<PageId, PageBuffer>> pre;
        pre.emplace_back(0, PageBuffer(dev_.page_size()));
        old_meta.encode(pre.back().second);
        emit_preimages(pre);
    }
    persist_meta();
}

void PioBtree::emit_preimages(std::vector<std::pair<PageId, PageBuffer>>& preimages) {
    if (observer_ && in_flush_ && !preimages.empty()) observer_->node_preimages(preimages);
    preimages.clear();
}

void PioBtree::defer_free(PageId first, std::uint32_t count) {
    if (in_flush_) {
        pending_frees_.push_back({first, count});
    } else {
        dev_.free_extent(first, count);
    }
}

PageId PioBtree::alloc_leaf() {
    return dev_.alloc_extent(meta_.leaf_segments);
}

void PioBtree::free_leaf(PageId first) {
    lsmap_.remove(first);
    defer_free(first, meta_.leaf_segments);
}

// ---------------------------------------------------------------------------
// Entry kernels

bool PioBtree::check_search_needed(std::size_t i, std::span<const std::uint64_t> node_keys,
                                   std::span<const std::uint64_t> search_keys) {
    if (i < 1 || i > node_keys.size() + 1) throw UsageError("child index out of range");
    bool has_lo = i > 1;
    bool has_hi = i <= node_keys.size();
    std::uint64_t lo = has_lo ? node_keys[i - 2] : 0;
    std::uint64_t hi = has_hi ? node_keys[i - 1] : 0;
    for (std::uint64_t s : search_keys) {
        if ((!has_lo || s >= lo) && (!has_hi || s < hi)) return true;
    }
    return false;
}

std::vector<OpqEntry> PioBtree::shrink_entries(std::span<const OpqEntry> entries) {
    std::size_t n = entries.size();
    std::vector<char> alive(n, 0);
    std::vector<Record> value(n);
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> open;  // key -> live insert idxs
    for (std::size_t idx = 0; idx < n; ++idx) {
        const OpqEntry& e = entries[idx];
        switch (e.op) {
            case OpFlag::kInsert: {
                alive[idx] = 1;
                value[idx] = e.rec;
                open[e.rec.key].push_back(idx);
                break;
            }
            case OpFlag::kDelete: {
                auto it = open.find(e.rec.key);
                if (it == open.end()) break;
                auto& stack = it->second;
                // Most recent unmatched insert with the same index record;
                // data_ptr 0 is the match-any wildcard for delete-by-key.
                for (std::size_t j = stack.size(); j-- > 0;) {
                    std::size_t cand = stack[j];
                    if (e.rec.data_ptr == 0 || value[cand].data_ptr == e.rec.data_ptr) {
                        alive[cand] = 0;
                        stack.erase(stack.begin() + static_cast<std::ptrdiff_t>(j));
                        break;
                    }
                }
                if (stack.empty()) open.erase(it);
                break;
            }
            case OpFlag::kUpdate: {
                // Delete-then-insert, matched by key alone.
                auto it = open.find(e.rec.key);
                if (it == open.end() || it->second.empty()) break;
                std::size_t cand = it->second.back();
                it->second.pop_back();
                alive[cand] = 0;
                alive[idx] = 1;
                value[idx] = e.rec;
                it->second.push_back(idx);
                break;
            }
        }
    }
    std::vector<OpqEntry> out;
    for (std::size_t idx = 0; idx < n; ++idx) {
        if (alive[idx]) out.push_back(OpqEntry{value[idx], OpFlag::kInsert});
    }
    return out;
}

std::optional<std::uint64_t> PioBtree::reduce_entries(std::span<const OpqEntry> entries) {
    std::optional<std::uint64_t> cur;
    for (const OpqEntry& e : entries) {
        switch (e.op) {
            case OpFlag::kInsert:
                cur = e.rec.data_ptr;
                break;
            case OpFlag::kDelete:
                if (cur && (e.rec.data_ptr == 0 || e.rec.data_ptr == *cur)) cur.reset();
                break;
            case OpFlag::kUpdate:
                if (cur) cur = e.rec.data_ptr;
                break;
        }
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Page plumbing

std::vector<InternalNode> PioBtree::fetch_internals(std::span<const PageId> pages) {
    std::vector<InternalNode> out(pages.size());
    if (pool_pages_ == 0) {
        auto bufs = dev_.psync_read(pages, 1);
        for (std::size_t i = 0; i < pages.size(); ++i) out[i] = decode_internal(bufs[i], meta_.fanout);
        return out;
    }
    std::vector<PageId> misses;
    for (PageId p : pages) {
        if (!pool_.contains(p)) misses.push_back(p);
    }
    if (!misses.empty()) {
        auto bufs = dev_.psync_read(misses, 1);
        for (std::size_t i = 0; i < misses.size(); ++i) pool_.put_clean(misses[i], std::move(bufs[i]));
    }
    for (std::size_t i = 0; i < pages.size(); ++i) out[i] = decode_internal(pool_.get(pages[i]), meta_.fanout);
    return out;
}

InternalNode PioBtree::fetch_internal(PageId page) {
    std::array<PageId, 1> one{page};
    return std::move(fetch_internals(one)[0]);
}

void PioBtree::write_internals(const std::vector<std::pair<PageId, InternalNode>>& nodes) {
    if (nodes.empty()) return;
    std::vector<std::pair<PageId, PageBuffer>> writes;
    writes.reserve(nodes.size());
    for (const auto& [page, node] : nodes) {
        PageBuffer bytes(dev_.page_size());
        encode_internal(node, meta_.fanout, bytes);
        writes.emplace_back(page, bytes);
    }
    // Write-through so recovery never depends on pool contents.
    write_chunked(dev_, writes, 1, cfg_.pio_max);
    for (auto& [page, bytes] : writes) pool_.put_clean(page, std::move(bytes));
}

PioBtree::LoadedLeaf PioBtree::read_full_leaf(PageId first) {
    std::vector<PageId> ids(meta_.leaf_segments);
    for (std::uint32_t i = 0; i < meta_.leaf_segments; ++i) ids[i] = first + i;
    auto bufs = dev_.psync_read(ids, static_cast<int>(meta_.leaf_segments));
    LoadedLeaf leaf;
    leaf.first = first;
    leaf.segs.resize(meta_.leaf_segments);
    for (std::uint32_t i = 0; i < meta_.leaf_segments; ++i) leaf.segs[i] = decode_segment(bufs[i]);
    return leaf;
}

std::vector<PioBtree::LoadedLeaf> PioBtree::read_full_leaves(std::span<const PageId> firsts) {
    std::vector<LoadedLeaf> out;
    out.reserve(firsts.size());
    if (firsts.empty()) return out;
    std::size_t per_call = cfg_.pio_max;
    for (std::size_t off = 0; off < firsts.size(); off += per_call) {
        std::size_t count = std::min(per_call, firsts.size() - off);
        std::vector<PageId> ids;
        ids.reserve(count * meta_.leaf_segments);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) ids.push_back(firsts[off + i] + s);
        }
        auto bufs = dev_.psync_read(ids, static_cast<int>(meta_.leaf_segments));
        for (std::size_t i = 0; i < count; ++i) {
            LoadedLeaf leaf;
            leaf.first = firsts[off + i];
            leaf.segs.resize(meta_.leaf_segments);
            for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
                leaf.segs[s] = decode_segment(bufs[i * meta_.leaf_segments + s]);
            }
            out.push_back(std::move(leaf));
        }
    }
    return out;
}

PageBuffer PioBtree::encode_leaf_pages(const LoadedLeaf& leaf) const {
    PageBuffer all(meta_.leaf_segments * dev_.page_size());
    for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
        std::span<std::uint8_t> page(all.data() + s * dev_.page_size(), dev_.page_size());
        // Canonical form: segments past the cursor stay all-zero unless they
        // carry the chain pointer (segment 0).
        if (s == 0 || !leaf.segs[s].entries.empty()) {
            encode_segment(leaf.segs[s], page);
        }
    }
    return all;
}

// ---------------------------------------------------------------------------
// Searches

std::vector<LeafMatch> PioBtree::mpsearch(std::span<const std::uint64_t> keys) {
    std::vector<LeafMatch> out;
    if (meta_.height == 0 || keys.empty()) return out;
    if (!std::is_sorted(keys.begin(), keys.end())) throw UsageError("mpsearch keys must be sorted");
    std::vector<SearchGroup> top{{meta_.root_page, keys}};
    mpsearch_rec(0, top, out);
    return out;
}

void PioBtree::read_leaf_matches(std::span<const PageId> leaves, std::vector<LeafMatch>& out) {
    auto loaded = read_full_leaves(leaves);
    for (auto& leaf : loaded) {
        LeafMatch m;
        m.first_page = leaf.first;
        for (auto& seg : leaf.segs) {
            m.entries.insert(m.entries.end(), seg.entries.begin(), seg.entries.end());
        }
        out.push_back(std::move(m));
    }
}

void PioBtree::mpsearch_rec(std::uint32_t level, std::vector<SearchGroup>& groups,
                            std::vector<LeafMatch>& out) {
    if (level + 1 == meta_.height) {
        std::vector<PageId> leaves;
        leaves.reserve(groups.size());
        for (const auto& g : groups) leaves.push_back(g.node);
        read_leaf_matches(leaves, out);
        return;
    }
    std::vector<PageId> pages;
    pages.reserve(groups.size());
    for (const auto& g : groups) pages.push_back(g.node);
    auto nodes = fetch_internals(pages);

    std::vector<SearchGroup> chunk;
    auto flush_chunk = [&]() {
        if (chunk.empty()) return;
        mpsearch_rec(level + 1, chunk, out);
        chunk.clear();
    };
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const InternalNode& node = nodes[gi];
        std::span<const std::uint64_t> keys = groups[gi].keys;
        std::size_t start = 0;
        for (std::size_t ci = 0; ci < node.children.size(); ++ci) {
            std::size_t end =
                (ci < node.keys.size())
                    ? static_cast<std::size_t>(std::lower_bound(keys.begin() + start, keys.end(),
                                                                node.keys[ci]) -
                                               keys.begin())
                    : keys.size();
            if (end > start) {
                chunk.push_back({node.children[ci], keys.subspan(start, end - start)});
                if (chunk.size() == cfg_.pio_max) flush_chunk();
            }
            start = end;
        }
    }
    flush_chunk();
}

std::optional<std::uint64_t> PioBtree::point_search(std::uint64_t key) {
    std::vector<OpqEntry> history;
    if (meta_.height > 0) {
        std::array<std::uint64_t, 1> keys{key};
        auto matches = mpsearch(keys);
        for (const auto& m : matches) {
            for (const auto& e : m.entries) {
                if (e.rec.key == key) history.push_back(e);
            }
        }
    }
    // OPQ entries are strictly newer than anything already flushed to leaves.
    auto pending = opq_.find(key);
    history.insert(history.end(), pending.begin(), pending.end());
    return reduce_entries(history);
}

void PioBtree::prange_rec(std::uint32_t level, std::vector<PageId>& nodes, std::uint64_t start,
                          std::uint64_t end, std::vector<LeafMatch>& out) {
    if (level + 1 == meta_.height) {
        read_leaf_matches(nodes, out);
        return;
    }
    std::vector<PageId> next;
    for (std::size_t off = 0; off < nodes.size(); off += cfg_.pio_max) {
        std::size_t count = std::min<std::size_t>(cfg_.pio_max, nodes.size() - off);
        auto batch = fetch_internals(std::span<const PageId>(nodes.data() + off, count));
        for (const auto& node : batch) {
            // Children route(start) .. route(end-1) intersect the range.
            std::size_t lo = static_cast<std::size_t>(
                std::upper_bound(node.keys.begin(), node.keys.end(), start) - node.keys.begin());
            std::size_t hi = static_cast<std::size_t>(
                std::upper_bound(node.keys.begin(), node.keys.end(), end - 1) - node.keys.begin());
            for (std::size_t ci = lo; ci <= hi; ++ci) next.push_back(node.children[ci]);
        }
    }
    prange_rec(level + 1, next, start, end, out);
}

std::vector<Record> PioBtree::prange_search(std::uint64_t start, std::uint64_t end) {
    std::vector<Record> out;
    if (start >= end) return out;
    std::vector<LeafMatch> matches;
    if (meta_.height > 0) {
        std::vector<PageId> roots{meta_.root_page};
        prange_rec(0, roots, start, end, matches);
    }
    // Chronological per-key reduction over leaf entries, then pending OPQ
    // entries (always newer).
    std::map<std::uint64_t, std::optional<std::uint64_t>> state;
    auto step = [&](const OpqEntry& e) {
        if (e.rec.key < start || e.rec.key >= end) return;
        auto& cur = state[e.rec.key];
        switch (e.op) {
            case OpFlag::kInsert:
                cur = e.rec.data_ptr;
                break;
            case OpFlag::kDelete:
                if (cur && (e.rec.data_ptr == 0 || e.rec.data_ptr == *cur)) cur.reset();
                break;
            case OpFlag::kUpdate:
                if (cur) cur = e.rec.data_ptr;
                break;
        }
    };
    for (const auto& m : matches) {
        for (const auto& e : m.entries) step(e);
    }
    for (const auto& e : opq_.find_in_range(start, end - 1)) step(e);
    for (const auto& [key, ptr] : state) {
        if (ptr) out.push_back(Record{key, *ptr});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Update path

void PioBtree::maybe_flush_before_append() {
    if (!opq_.full()) return;
    flush_all();
}

void PioBtree::pio_insert(const Record& rec) {
    maybe_flush_before_append();
    opq_.append(OpqEntry{rec, OpFlag::kInsert});
}

void PioBtree::pio_delete(std::uint64_t key) {
    maybe_flush_before_append();
    opq_.append(OpqEntry{Record{key, 0}, OpFlag::kDelete});
}

void PioBtree::pio_update(const Record& rec) {
    maybe_flush_before_append();
    opq_.append(OpqEntry{rec, OpFlag::kUpdate});
}

void PioBtree::opq_append_raw(const OpqEntry& entry) {
    opq_.append(entry);
}

void PioBtree::flush_all() {
    while (!opq_.empty()) flush(cfg_.bcnt);
}

void PioBtree::flush(std::size_t max_entries) {
    if (opq_.empty() || max_entries == 0) return;
    auto selected = opq_.peek_lowest(max_entries);
    KeyRange range{selected.front().rec.key, selected.back().rec.key};
    if (observer_) observer_->flush_begin(range, selected);
    in_flush_ = true;
    try {
        bupdate(selected);
    } catch (...) {
        in_flush_ = false;
        pending_frees_.clear();
        throw;
    }
    in_flush_ = false;
    for (const auto& [page, count] : pending_frees_) dev_.free_extent(page, count);
    pending_frees_.clear();
    opq_.drop_lowest(selected.size());
    if (observer_) observer_->flush_end(range, opq_.find_in_range(range.lo, range.hi));
}

void PioBtree::bupdate(std::span<const OpqEntry> entries) {
    if (entries.empty()) return;
    if (meta_.height == 0) {
        Superblock old_meta = meta_;
        PageId first = alloc_leaf();
        LoadedLeaf leaf;
        leaf.first = first;
        leaf.segs.resize(meta_.leaf_segments);
        PageBuffer bytes = encode_leaf_pages(leaf);
        std::vector<std::pair<PageId, PageBuffer>> writes;
        for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
            writes.emplace_back(first + s, PageBuffer(bytes.begin() + s * dev_.page_size(),
                                                      bytes.begin() + (s + 1) * dev_.page_size()));
        }
        write_chunked(dev_, writes, 1, cfg_.pio_max);
        lsmap_.set(first, lsmap_.clamp(0));
        meta_.root_page = first;
        meta_.height = 1;
        persist_meta_in_flush(old_meta);
    }
    std::vector<Group> top{{meta_.root_page, entries}};
    auto fences = bupdate_rec(0, top);
    grow_root(fences);
    for (const Fence& f : fences) {
        if (f.kind == Fence::kUnderflow && f.node == meta_.root_page) {
            collapse_root();
            break;
        }
    }
}

std::vector<PioBtree::Fence> PioBtree::bupdate_rec(std::uint32_t level, std::vector<Group>& groups) {
    if (level + 1 == meta_.height) return leaf_frame(groups);

    std::vector<PageId> pages;
    pages.reserve(groups.size());
    for (const auto& g : groups) pages.push_back(g.node);
    auto nodes = fetch_internals(pages);
    std::vector<InternalNode> pre_state = nodes;
    std::vector<char> modified(groups.size(), 0);

    std::unordered_map<PageId, std::size_t> owner;  // child or new node -> parent idx
    std::vector<Fence> child_fences;
    std::vector<Group> chunk;
    auto flush_chunk = [&]() {
        if (chunk.empty()) return;
        auto fences = bupdate_rec(level + 1, chunk);
        child_fences.insert(child_fences.end(), fences.begin(), fences.end());
        chunk.clear();
    };
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const InternalNode& node = nodes[gi];
        std::span<const OpqEntry> span = groups[gi].entries;
        std::size_t start = 0;
        for (std::size_t ci = 0; ci < node.children.size(); ++ci) {
            owner[node.children[ci]] = gi;
            std::size_t end =
                (ci < node.keys.size())
                    ? static_cast<std::size_t>(
                          std::lower_bound(span.begin() + start, span.end(),
                                           OpqEntry{{node.keys[ci], 0}, OpFlag::kInsert},
                                           entry_key_less) -
                          span.begin())
                    : span.size();
            if (end > start) {
                chunk.push_back({node.children[ci], span.subspan(start, end - start)});
                if (chunk.size() == cfg_.pio_max) flush_chunk();
            }
            start = end;
        }
    }
    flush_chunk();

    // Fence-key propagation (Alg. 2's updateNode on internal nodes).
    for (const Fence& f : child_fences) {
        if (f.kind == Fence::kInsert) {
            std::size_t gi = owner.at(f.anchor);
            InternalNode& node = nodes[gi];
            auto pos = std::find(node.children.begin(), node.children.end(), f.anchor);
            if (pos == node.children.end()) throw UsageError("fence anchor vanished");
            std::size_t j = static_cast<std::size_t>(pos - node.children.begin());
            node.keys.insert(node.keys.begin() + static_cast<std::ptrdiff_t>(j), f.key);
            node.children.insert(node.children.begin() + static_cast<std::ptrdiff_t>(j) + 1, f.node);
            owner[f.node] = gi;
            modified[gi] = 1;
        } else {
            std::size_t gi = owner.at(f.node);
            InternalNode& node = nodes[gi];
            if (node.children.size() < 2) continue;  // bare root, handled by the driver
            resolve_underflow(node, f.node, level + 1);
            modified[gi] = 1;
        }
    }

    std::vector<Fence> up;
    std::vector<std::pair<PageId, InternalNode>> writes;
    std::vector<std::pair<PageId, PageBuffer>> preimages;
    bool track_pre = observer_ != nullptr && in_flush_;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        InternalNode& node = nodes[gi];
        if (!modified[gi]) continue;
        if (track_pre) {
            PageBuffer pre(dev_.page_size());
            encode_internal(pre_state[gi], meta_.fanout, pre);
            preimages.emplace_back(groups[gi].node, std::move(pre));
        }
        if (node.children.size() > meta_.fanout) {
            emit_preimages(preimages);
            auto split_fences = split_internal(groups[gi].node, node);
            up.insert(up.end(), split_fences.begin(), split_fences.end());
            continue;
        }
        writes.emplace_back(groups[gi].node, node);
        if (level > 0 && node.children.size() < (meta_.fanout + 1) / 2) {
            up.push_back(Fence{Fence::kUnderflow, 0, groups[gi].node, kNoPage});
        }
        if (level == 0 && node.children.size() < 2) {
            // Bare root: the driver collapses it after the unwind.
            up.push_back(Fence{Fence::kUnderflow, 0, groups[gi].node, kNoPage});
        }
    }
    emit_preimages(preimages);
    write_internals(writes);
    return up;
}

std::vector<PioBtree::Fence> PioBtree::split_internal(PageId page, InternalNode& node) {
    // Balanced split into the minimum number of fitting nodes. The caller has
    // already emitted the pre-image for `page`; new pages need none.
    std::size_t c = node.children.size();
    std::size_t m = (c + meta_.fanout - 1) / meta_.fanout;
    std::size_t base = c / m;
    std::size_t extra = c % m;
    std::vector<Fence> fences;
    std::vector<std::pair<PageId, InternalNode>> writes;
    std::size_t child_pos = 0;
    PageId prev_page = page;
    for (std::size_t part = 0; part < m; ++part) {
        std::size_t take = base + (part < extra ? 1 : 0);
        InternalNode piece;
        piece.children.assign(node.children.begin() + static_cast<std::ptrdiff_t>(child_pos),
                              node.children.begin() + static_cast<std::ptrdiff_t>(child_pos + take));
        piece.keys.assign(node.keys.begin() + static_cast<std::ptrdiff_t>(child_pos),
                          node.keys.begin() + static_cast<std::ptrdiff_t>(child_pos + take - 1));
        if (part == 0) {
            writes.emplace_back(page, std::move(piece));
        } else {
            std::uint64_t up_key = node.keys[child_pos - 1];  // key between the parts
            PageId new_page = dev_.alloc_page();
            writes.emplace_back(new_page, std::move(piece));
            fences.push_back(Fence{Fence::kInsert, up_key, new_page, prev_page});
            prev_page = new_page;
        }
        child_pos += take;
    }
    write_internals(writes);
    return fences;
}

// ---------------------------------------------------------------------------
// Leaf level

std::vector<PioBtree::Fence> PioBtree::rewrite_leaf(PageId first, std::vector<OpqEntry> survivors,
                                                    PageId next_leaf,
                                                    std::vector<std::pair<PageId, PageBuffer>>& writes) {
    std::vector<Fence> fences;
    std::size_t total_cap = leaf_capacity_total();
    if (survivors.size() <= total_cap) {
        LoadedLeaf leaf;
        leaf.first = first;
        leaf.segs.resize(meta_.leaf_segments);
        leaf.segs[0].next_leaf = next_leaf;
        std::uint32_t cursor = 0;
        for (std::size_t i = 0; i < survivors.size(); ++i) {
            std::uint32_t seg = static_cast<std::uint32_t>(i / seg_capacity());
            leaf.segs[seg].entries.push_back(survivors[i]);
            cursor = seg;
        }
        PageBuffer all = encode_leaf_pages(leaf);
        for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
            writes.emplace_back(first + s, PageBuffer(all.begin() + s * dev_.page_size(),
                                                      all.begin() + (s + 1) * dev_.page_size()));
        }
        lsmap_.set(first, lsmap_.clamp(cursor));
        if (survivors.size() < (total_cap + 1) / 2) {
            fences.push_back(Fence{Fence::kUnderflow, 0, first, kNoPage});
        }
        return fences;
    }

    // Over capacity even after the shrink: sort and divide (multi-way when a
    // single flush overfills the leaf more than twofold).
    std::stable_sort(survivors.begin(), survivors.end(), entry_key_less);
    std::size_t n = survivors.size();
    std::size_t m = (n + total_cap - 1) / total_cap;
    std::size_t base = n / m;
    std::size_t extra = n % m;
    std::vector<PageId> extents{first};
    for (std::size_t part = 1; part < m; ++part) extents.push_back(alloc_leaf());
    std::size_t pos = 0;
    for (std::size_t part = 0; part < m; ++part) {
        std::size_t take = base + (part < extra ? 1 : 0);
        LoadedLeaf piece;
        piece.first = extents[part];
        piece.segs.resize(meta_.leaf_segments);
        piece.segs[0].next_leaf = (part + 1 < m) ? extents[part + 1] : next_leaf;
        std::uint32_t cursor = 0;
        for (std::size_t i = 0; i < take; ++i) {
            std::uint32_t seg = static_cast<std::uint32_t>(i / seg_capacity());
            piece.segs[seg].entries.push_back(survivors[pos + i]);
            cursor = seg;
        }
        PageBuffer all = encode_leaf_pages(piece);
        for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
            writes.emplace_back(extents[part] + s,
                                PageBuffer(all.begin() + s * dev_.page_size(),
                                           all.begin() + (s + 1) * dev_.page_size()));
        }
        lsmap_.set(extents[part], lsmap_.clamp(cursor));
        if (part > 0) {
            fences.push_back(
                Fence{Fence::kInsert, survivors[pos].rec.key, extents[part], extents[part - 1]});
        }
        pos += take;
    }
    return fences;
}

std::vector<PioBtree::Fence> PioBtree::leaf_frame(std::vector<Group>& groups) {
    std::uint32_t L = meta_.leaf_segments;
    std::uint32_t cap = seg_capacity();

    // Phase A: one psync for the last segment of every touched leaf; the
    // LSMap supplies the cursor so the other L-1 pages stay untouched.
    std::vector<std::uint32_t> cursor(groups.size());
    std::vector<PageId> last_pages(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        cursor[i] = lsmap_.get(groups[i].node);
        last_pages[i] = groups[i].node + cursor[i];
    }
    auto last_bufs = dev_.psync_read(last_pages, 1);
    std::vector<SegmentNode> last_segs(groups.size());
    std::vector<char> need_full(groups.size(), 0);
    std::vector<PageId> full_ids;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        last_segs[i] = decode_segment(last_bufs[i]);
        std::size_t rest = static_cast<std::size_t>(L - 1 - cursor[i]) * cap +
                           (cap - last_segs[i].entries.size());
        if (groups[i].entries.size() > rest) {
            need_full[i] = 1;
            full_ids.push_back(groups[i].node);
        }
    }

    // Phase B: whole-leaf reads for the ones that must shrink.
    auto full_leaves = read_full_leaves(full_ids);
    std::unordered_map<PageId, LoadedLeaf*> full_by_id;
    for (auto& leaf : full_leaves) full_by_id[leaf.first] = &leaf;

    // Phase C: apply in memory and stage the writes.
    std::vector<Fence> fences;
    std::vector<std::pair<PageId, PageBuffer>> single_writes;  // unit 1
    std::vector<std::pair<PageId, PageBuffer>> extent_writes;  // unit L
    std::vector<std::pair<PageId, PageBuffer>> preimages;
    bool track_pre = observer_ != nullptr && in_flush_;

    for (std::size_t i = 0; i < groups.size(); ++i) {
        PageId first = groups[i].node;
        if (!need_full[i]) {
            if (track_pre) {
                PageBuffer pre(dev_.page_size());
                if (!last_segs[i].entries.empty() || cursor[i] == 0) {
                    encode_segment(last_segs[i], pre);
                }
                preimages.emplace_back(last_pages[i], std::move(pre));
            }
            std::uint32_t cur = cursor[i];
            SegmentNode seg = last_segs[i];
            std::vector<std::pair<PageId, SegmentNode>> touched;
            for (const OpqEntry& e : groups[i].entries) {
                if (seg.entries.size() == cap) {
                    touched.emplace_back(first + cur, std::move(seg));
                    ++cur;
                    seg = SegmentNode{};
                    if (track_pre) preimages.emplace_back(first + cur, PageBuffer(dev_.page_size()));
                }
                seg.entries.push_back(e);
            }
            touched.emplace_back(first + cur, std::move(seg));
            for (auto& [page, s] : touched) {
                PageBuffer bytes(dev_.page_size());
                encode_segment(s, bytes);
                single_writes.emplace_back(page, std::move(bytes));
            }
            lsmap_.set(first, lsmap_.clamp(cur));
            continue;
        }
        LoadedLeaf& leaf = *full_by_id.at(first);
        std::vector<OpqEntry> all;
        for (const auto& seg : leaf.segs) {
            all.insert(all.end(), seg.entries.begin(), seg.entries.end());
        }
        all.insert(all.end(), groups[i].entries.begin(), groups[i].entries.end());
        auto survivors = shrink_entries(all);
        if (track_pre) {
            PageBuffer pre_all = encode_leaf_pages(leaf);
            for (std::uint32_t s = 0; s < L; ++s) {
                preimages.emplace_back(first + s,
                                       PageBuffer(pre_all.begin() + s * dev_.page_size(),
                                                  pre_all.begin() + (s + 1) * dev_.page_size()));
            }
        }
        auto f = rewrite_leaf(first, std::move(survivors), leaf.segs[0].next_leaf, extent_writes);
        fences.insert(fences.end(), f.begin(), f.end());
    }

    // Phase D: pre-images first, then the batched writes.
    emit_preimages(preimages);
    if (!single_writes.empty()) write_chunked(dev_, single_writes, 1, cfg_.pio_max);
    if (!extent_writes.empty()) write_chunked(dev_, extent_writes, static_cast<int>(L), cfg_.pio_max);
    return fences;
}

void PioBtree::resolve_underflow(InternalNode& parent, PageId child, std::uint32_t child_level) {
    auto pos = std::find(parent.children.begin(), parent.children.end(), child);
    if (pos == parent.children.end()) return;  // merged away by an earlier fence
    std::size_t j = static_cast<std::size_t>(pos - parent.children.begin());
    std::size_t li = j > 0 ? j - 1 : j;
    std::size_t ri = li + 1;
    if (ri >= parent.children.size()) return;
    PageId left_page = parent.children[li];
    PageId right_page = parent.children[ri];
    bool child_is_leaf = (child_level + 1 == meta_.height);
    bool track_pre = observer_ != nullptr && in_flush_;
    std::vector<std::pair<PageId, PageBuffer>> preimages;

    if (child_is_leaf) {
        LoadedLeaf left = read_full_leaf(left_page);
        LoadedLeaf right = read_full_leaf(right_page);
        auto collect = [](const LoadedLeaf& l) {
            std::vector<OpqEntry> all;
            for (const auto& seg : l.segs) all.insert(all.end(), seg.entries.begin(), seg.entries.end());
            return all;
        };
        auto lsur = shrink_entries(collect(left));
        auto rsur = shrink_entries(collect(right));
        std::size_t total_cap = leaf_capacity_total();
        std::size_t min_fill = total_cap / 2;
        if (lsur.size() >= min_fill && rsur.size() >= min_fill) return;  // repaired meanwhile
        std::stable_sort(lsur.begin(), lsur.end(), entry_key_less);
        std::stable_sort(rsur.begin(), rsur.end(), entry_key_less);
        if (track_pre) {
            for (auto* l : {&left, &right}) {
                PageBuffer pre = encode_leaf_pages(*l);
                for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
                    preimages.emplace_back(l->first + s,
                                           PageBuffer(pre.begin() + s * dev_.page_size(),
                                                      pre.begin() + (s + 1) * dev_.page_size()));
                }
            }
        }
        std::vector<std::pair<PageId, PageBuffer>> writes;
        if (lsur.size() + rsur.size() <= total_cap) {
            // Merge right into left; the right node leaves the parent.
            lsur.insert(lsur.end(), rsur.begin(), rsur.end());
            rewrite_leaf(left_page, std::move(lsur), right.segs[0].next_leaf, writes);
            emit_preimages(preimages);
            write_chunked(dev_, writes, static_cast<int>(meta_.leaf_segments), cfg_.pio_max);
            free_leaf(right_page);
            parent.keys.erase(parent.keys.begin() + static_cast<std::ptrdiff_t>(li));
            parent.children.erase(parent.children.begin() + static_cast<std::ptrdiff_t>(ri));
        } else {
            std::vector<OpqEntry> all(std::move(lsur));
            all.insert(all.end(), rsur.begin(), rsur.end());
            std::size_t half = all.size() / 2;
            std::vector<OpqEntry> lpart(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(half));
            std::vector<OpqEntry> rpart(all.begin() + static_cast<std::ptrdiff_t>(half), all.end());
            parent.keys[li] = rpart.front().rec.key;
            rewrite_leaf(left_page, std::move(lpart), left.segs[0].next_leaf, writes);
            rewrite_leaf(right_page, std::move(rpart), right.segs[0].next_leaf, writes);
            emit_preimages(preimages);
            write_chunked(dev_, writes, static_cast<int>(meta_.leaf_segments), cfg_.pio_max);
        }
        return;
    }

    InternalNode left = fetch_internal(left_page);
    InternalNode right = fetch_internal(right_page);
    std::uint32_t min_children = (meta_.fanout + 1) / 2;
    if (left.children.size() >= min_children && right.children.size() >= min_children) return;
    if (track_pre) {
        for (auto [pg, nd] : {std::pair{left_page, &left}, std::pair{right_page, &right}}) {
            PageBuffer pre(dev_.page_size());
            encode_internal(*nd, meta_.fanout, pre);
            preimages.emplace_back(pg, std::move(pre));
        }
    }
    std::uint64_t sep = parent.keys[li];
    if (left.children.size() + right.children.size() <= meta_.fanout) {
        left.keys.push_back(sep);
        left.keys.insert(left.keys.end(), right.keys.begin(), right.keys.end());
        left.children.insert(left.children.end(), right.children.begin(), right.children.end());
        emit_preimages(preimages);
        write_internals({{left_page, left}});
        pool_.discard(right_page);
        defer_free(right_page, 1);
        parent.keys.erase(parent.keys.begin() + static_cast<std::ptrdiff_t>(li));
        parent.children.erase(parent.children.begin() + static_cast<std::ptrdiff_t>(ri));
    } else {
        // Rotate through the separator to even the pair out.
        std::vector<std::uint64_t> keys(std::move(left.keys));
        keys.push_back(sep);
        keys.insert(keys.end(), right.keys.begin(), right.keys.end());
        std::vector<PageId> children(std::move(left.children));
        children.insert(children.end(), right.children.begin(), right.children.end());
        std::size_t lc = children.size() / 2;
        left.children.assign(children.begin(), children.begin() + static_cast<std::ptrdiff_t>(lc));
        left.keys.assign(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(lc - 1));
        parent.keys[li] = keys[lc - 1];
        right.children.assign(children.begin() + static_cast<std::ptrdiff_t>(lc), children.end());
        right.keys.assign(keys.begin() + static_cast<std::ptrdiff_t>(lc), keys.end());
        emit_preimages(preimages);
        write_internals({{left_page, left}, {right_page, right}});
    }
}

void PioBtree::grow_root(std::vector<Fence>& fences) {
    std::vector<std::pair<std::uint64_t, PageId>> level;  // (separator/min key, page)
    level.emplace_back(0, meta_.root_page);
    for (const Fence& f : fences) {
        if (f.kind == Fence::kInsert) level.emplace_back(f.key, f.node);
    }
    if (level.size() == 1) return;
    Superblock old_meta = meta_;
    std::uint32_t added = 0;
    while (level.size() > 1) {
        std::vector<std::pair<std::uint64_t, PageId>> next;
        std::size_t c = level.size();
        std::size_t m = (c + meta_.fanout - 1) / meta_.fanout;
        std::size_t base = c / m;
        std::size_t extra = c % m;
        std::size_t pos = 0;
        std::vector<std::pair<PageId, InternalNode>> writes;
        for (std::size_t part = 0; part < m; ++part) {
            std::size_t take = base + (part < extra ? 1 : 0);
            InternalNode node;
            for (std::size_t i = 0; i < take; ++i) {
                if (i > 0) node.keys.push_back(level[pos + i].first);
                node.children.push_back(level[pos + i].second);
            }
            PageId page = dev_.alloc_page();
            writes.emplace_back(page, std::move(node));
            next.emplace_back(level[pos].first, page);
            pos += take;
        }
        write_internals(writes);
        level = std::move(next);
        ++added;
    }
    meta_.root_page = level.front().second;
    meta_.height += added;
    persist_meta_in_flush(old_meta);
}

void PioBtree::collapse_root() {
    Superblock old_meta = meta_;
    bool changed = false;
    while (meta_.height > 1) {
        InternalNode root = fetch_internal(meta_.root_page);
        if (root.children.size() > 1) break;
        PageId old_root = meta_.root_page;
        meta_.root_page = root.children[0];
        meta_.height -= 1;
        pool_.discard(old_root);
        defer_free(old_root, 1);
        changed = true;
    }
    if (changed) persist_meta_in_flush(old_meta);
}

// ---------------------------------------------------------------------------
// Bulk load and maintenance

void PioBtree::bulk_load(std::span<const Record> records, double fill) {
    if (meta_.height != 0) throw UsageError("bulk_load requires an empty tree");
    if (fill <= 0.0 || fill > 1.0) throw UsageError("fill factor must be in (0, 1]");
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].key <= records[i - 1].key) throw UsageError("bulk_load input must be sorted and unique");
    }
    if (records.empty()) return;

    std::size_t total_cap = leaf_capacity_total();
    std::size_t per_leaf = std::clamp<std::size_t>(
        static_cast<std::size_t>(fill * static_cast<double>(total_cap)), 1, total_cap);
    std::size_t leaf_count = (records.size() + per_leaf - 1) / per_leaf;
    std::vector<PageId> extents(leaf_count);
    for (std::size_t i = 0; i < leaf_count; ++i) extents[i] = alloc_leaf();

    std::vector<std::pair<std::uint64_t, PageId>> level;
    std::vector<std::pair<PageId, PageBuffer>> writes;
    for (std::size_t i = 0; i < leaf_count; ++i) {
        std::size_t lo = i * per_leaf;
        std::size_t hi = std::min(records.size(), lo + per_leaf);
        LoadedLeaf leaf;
        leaf.first = extents[i];
        leaf.segs.resize(meta_.leaf_segments);
        leaf.segs[0].next_leaf = (i + 1 < leaf_count) ? extents[i + 1] : kNoPage;
        std::uint32_t cursor = 0;
        for (std::size_t r = lo; r < hi; ++r) {
            std::uint32_t seg = static_cast<std::uint32_t>((r - lo) / seg_capacity());
            leaf.segs[seg].entries.push_back(OpqEntry{records[r], OpFlag::kInsert});
            cursor = seg;
        }
        PageBuffer all = encode_leaf_pages(leaf);
        for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
            writes.emplace_back(extents[i] + s, PageBuffer(all.begin() + s * dev_.page_size(),
                                                           all.begin() + (s + 1) * dev_.page_size()));
        }
        lsmap_.set(extents[i], lsmap_.clamp(cursor));
        level.emplace_back(records[lo].key, extents[i]);
        if (writes.size() >= static_cast<std::size_t>(cfg_.pio_max) * meta_.leaf_segments) {
            write_chunked(dev_, writes, static_cast<int>(meta_.leaf_segments), cfg_.pio_max);
            writes.clear();
        }
    }
    if (!writes.empty()) write_chunked(dev_, writes, static_cast<int>(meta_.leaf_segments), cfg_.pio_max);
    meta_.height = 1;

    std::size_t per_node_keys = std::clamp<std::size_t>(
        static_cast<std::size_t>(fill * (meta_.fanout - 1)), 1, meta_.fanout - 1);
    while (level.size() > 1) {
        std::size_t group = level.size() <= meta_.fanout ? level.size() : per_node_keys + 1;
        std::vector<std::pair<std::uint64_t, PageId>> next;
        std::vector<std::pair<PageId, InternalNode>> node_writes;
        std::size_t i = 0;
        while (i < level.size()) {
            std::size_t take = std::min(group, level.size() - i);
            if (level.size() - i - take == 1) take -= 1;  // never leave a 1-child node
            InternalNode node;
            for (std::size_t j = 0; j < take; ++j) {
                if (j > 0) node.keys.push_back(level[i + j].first);
                node.children.push_back(level[i + j].second);
            }
            PageId page = dev_.alloc_page();
            node_writes.emplace_back(page, std::move(node));
            next.emplace_back(level[i].first, page);
            i += take;
        }
        write_internals(node_writes);
        level = std::move(next);
        meta_.height += 1;
    }
    meta_.root_page = level.front().second;
    meta_.entry_count = records.size();
    persist_meta();
}

void PioBtree::close() {
    flush_all();
    if (meta_.lsmap_page != kNoPage) {
        dev_.free_extent(meta_.lsmap_page, meta_.lsmap_pages);
        meta_.lsmap_page = kNoPage;
        meta_.lsmap_pages = 0;
    }
    auto blob = lsmap_.serialize();
    std::uint32_t pages = static_cast<std::uint32_t>((blob.size() + dev_.page_size() - 1) / dev_.page_size());
    if (pages > 0) {
        blob.resize(static_cast<std::size_t>(pages) * dev_.page_size(), 0);
        PageId first = dev_.alloc_extent(pages);
        std::vector<std::pair<PageId, PageBuffer>> writes;
        for (std::uint32_t i = 0; i < pages; ++i) {
            writes.emplace_back(first + i, PageBuffer(blob.begin() + i * dev_.page_size(),
                                                      blob.begin() + (i + 1) * dev_.page_size()));
        }
        write_chunked(dev_, writes, 1, cfg_.pio_max);
        meta_.lsmap_page = first;
        meta_.lsmap_pages = pages;
    }
    meta_.clean_shutdown = 1;
    persist_meta();
}

void PioBtree::rebuild_lsmap() {
    lsmap_.clear();
    if (meta_.height == 0) return;
    PageId page = meta_.root_page;
    for (std::uint32_t level = 0; level + 1 < meta_.height; ++level) {
        InternalNode node = fetch_internal(page);
        page = node.children.front();
    }
    while (page != kNoPage) {
        LoadedLeaf leaf = read_full_leaf(page);
        std::uint32_t cursor = 0;
        for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
            if (!leaf.segs[s].entries.empty()) cursor = s;
        }
        lsmap_.set(page, lsmap_.clamp(cursor));
        page = leaf.segs[0].next_leaf;
    }
}

std::uint64_t PioBtree::leaf_count() {
    return lsmap_.leaf_count();
}

void PioBtree::audit_rec(PageId page, std::uint32_t level, std::uint64_t lo, bool has_lo,
                         std::uint64_t hi, bool has_hi, std::vector<PageId>& leaves) {
    bool is_root = (level == 0);
    if (level + 1 == meta_.height) {
        LoadedLeaf leaf = read_full_leaf(page);
        std::uint32_t true_last = 0;
        std::size_t total = 0;
        for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) {
            const auto& seg = leaf.segs[s];
            if (seg.entries.size() > seg_capacity()) throw UsageError("segment overflow");
            if (!seg.entries.empty()) true_last = s;
            total += seg.entries.size();
            for (const auto& e : seg.entries) {
                if (has_lo && e.rec.key < lo) throw UsageError("leaf entry below separator");
                if (has_hi && e.rec.key >= hi) throw UsageError("leaf entry above separator");
            }
        }
        if (total > leaf_capacity_total()) throw UsageError("leaf overflow");
        if (lsmap_.get(page) != lsmap_.clamp(true_last)) throw UsageError("LSMap out of sync");
        leaves.push_back(page);
        return;
    }
    InternalNode node = fetch_internal(page);
    if (!is_root && node.children.size() < (meta_.fanout + 1) / 2) throw UsageError("internal underflow");
    if (node.children.size() > meta_.fanout) throw UsageError("internal overflow");
    if (is_root && node.children.size() < 2) throw UsageError("internal root must have >= 2 children");
    for (std::size_t i = 0; i < node.keys.size(); ++i) {
        if (i > 0 && node.keys[i - 1] >= node.keys[i]) throw UsageError("internal keys out of order");
        if (has_lo && node.keys[i] < lo) throw UsageError("separator below bound");
        if (has_hi && node.keys[i] >= hi) throw UsageError("separator above bound");
    }
    for (std::size_t i = 0; i < node.children.size(); ++i) {
        std::uint64_t clo = (i == 0) ? lo : node.keys[i - 1];
        bool chas_lo = (i == 0) ? has_lo : true;
        std::uint64_t chi = (i == node.keys.size()) ? hi : node.keys[i];
        bool chas_hi = (i == node.keys.size()) ? has_hi : true;
        audit_rec(node.children[i], level + 1, clo, chas_lo, chi, chas_hi, leaves);
    }
}

void PioBtree::check_structure() {
    if (meta_.height == 0) return;
    std::vector<PageId> leaves;
    audit_rec(meta_.root_page, 0, 0, false, 0, false, leaves);
    for (std::size_t i = 0; i + 1 < leaves.size(); ++i) {
        LoadedLeaf leaf = read_full_leaf(leaves[i]);
        if (leaf.segs[0].next_leaf != leaves[i + 1]) throw UsageError("broken leaf chain");
    }
    if (!leaves.empty()) {
        LoadedLeaf last = read_full_leaf(leaves.back());
        if (last.segs[0].next_leaf != kNoPage) throw UsageError("leaf chain does not terminate");
    }
    if (leaves.size() != lsmap_.leaf_count()) throw UsageError("LSMap leaf count mismatch");
}

std::vector<PageId> PioBtree::reachable_pages() {
    std::vector<PageId> out{0};
    if (meta_.lsmap_page != kNoPage) {
        for (std::uint32_t i = 0; i < meta_.lsmap_pages; ++i) out.push_back(meta_.lsmap_page + i);
    }
    if (meta_.height == 0) return out;
    std::vector<std::pair<PageId, std::uint32_t>> stack{{meta_.root_page, 0}};
    while (!stack.empty()) {
        auto [page, level] = stack.back();
        stack.pop_back();
        if (level + 1 == meta_.height) {
            for (std::uint32_t s = 0; s < meta_.leaf_segments; ++s) out.push_back(page + s);
            continue;
        }
        out.push_back(page);
        InternalNode node = fetch_internal(page);
        for (PageId child : node.children) stack.push_back({child, level + 1});
    }
    return out;
}

}  // namespace piodb
