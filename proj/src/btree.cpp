#include "piodb/btree.hpp"

#include <algorithm>
#include <cmath>

namespace piodb {

BTree::BTree(Device& dev, Superblock meta, std::size_t pool_pages)
    : dev_(dev), meta_(meta), pool_(dev, pool_pages, static_cast<int>(meta.node_pages)) {}

BTree BTree::create(Device& dev, TreeConfig cfg, std::size_t pool_pages) {
    Superblock meta;
    meta.kind = Superblock::kKindBaseline;
    meta.page_size = static_cast<std::uint32_t>(dev.page_size());
    meta.node_pages = cfg.node_pages ? cfg.node_pages : 1;
    std::size_t node_bytes = meta.node_pages * dev.page_size();
    meta.fanout = cfg.fanout ? cfg.fanout : max_fanout_for(node_bytes);
    meta.leaf_capacity = cfg.leaf_capacity ? cfg.leaf_capacity : max_leaf_records_for(node_bytes);
    meta.leaf_segments = 1;
    if (meta.fanout < 3) throw UsageError("fanout must be >= 3");
    if (meta.leaf_capacity < 2) throw UsageError("leaf capacity must be >= 2");
    if (meta.fanout > max_fanout_for(node_bytes)) throw UsageError("fanout exceeds node size");
    if (meta.leaf_capacity > max_leaf_records_for(node_bytes)) throw UsageError("leaf capacity exceeds node size");
    PageId sb_page = dev.alloc_page();
    if (sb_page != 0) throw UsageError("superblock must live at page 0 of a fresh device");
    BTree tree(dev, meta, pool_pages);
    tree.persist_meta();
    return tree;
}

BTree BTree::open(Device& dev, std::size_t pool_pages) {
    auto pages = dev.psync_read(std::vector<PageId>{0});
    Superblock meta = Superblock::decode(pages[0]);
    if (meta.kind != Superblock::kKindBaseline) throw UsageError("not a baseline B+-tree file");
    return BTree(dev, meta, pool_pages);
}

void BTree::persist_meta() {
    PageBuffer page(dev_.page_size());
    meta_.encode(page);
    dev_.psync_write(0, page);
}

InternalNode BTree::read_internal(PageId page) {
    return decode_internal(pool_.get(page), meta_.fanout);
}

LeafNode BTree::read_leaf(PageId page) {
    return decode_leaf(pool_.get(page));
}

void BTree::write_internal(PageId page, const InternalNode& node) {
    PageBuffer bytes(meta_.node_pages * dev_.page_size());
    encode_internal(node, meta_.fanout, bytes);
    pool_.put(page, std::move(bytes));
}

void BTree::write_leaf(PageId page, const LeafNode& node) {
    PageBuffer bytes(meta_.node_pages * dev_.page_size());
    encode_leaf(node, bytes);
    pool_.put(page, std::move(bytes));
}

PageId BTree::alloc_node() {
    return dev_.alloc_extent(meta_.node_pages);
}

void BTree::free_node(PageId page) {
    pool_.discard(page);
    dev_.free_extent(page, meta_.node_pages);
}

static std::size_t route(const InternalNode& node, std::uint64_t key) {
    auto it = std::upper_bound(node.keys.begin(), node.keys.end(), key);
    return static_cast<std::size_t>(it - node.keys.begin());
}

PageId BTree::find_leaf(std::uint64_t key) {
    PageId page = meta_.root_page;
    for (std::uint32_t level = 0; level + 1 < meta_.height; ++level) {
        InternalNode node = read_internal(page);
        page = node.children[route(node, key)];
    }
    return page;
}

std::optional<std::uint64_t> BTree::search(std::uint64_t key) {
    if (meta_.height == 0) return std::nullopt;
    LeafNode leaf = read_leaf(find_leaf(key));
    auto it = std::lower_bound(leaf.records.begin(), leaf.records.end(), key,
                               [](const Record& r, std::uint64_t k) { return r.key < k; });
    if (it != leaf.records.end() && it->key == key) return it->data_ptr;
    return std::nullopt;
}

std::optional<BTree::Split> BTree::insert_rec(PageId page, std::uint32_t level, const Record& rec) {
    if (level + 1 == meta_.height) {
        LeafNode leaf = read_leaf(page);
        auto it = std::lower_bound(leaf.records.begin(), leaf.records.end(), rec.key,
                                   [](const Record& r, std::uint64_t k) { return r.key < k; });
        if (it != leaf.records.end() && it->key == rec.key) {
            throw DuplicateKeyError("duplicate key " + std::to_string(rec.key));
        }
        leaf.records.insert(it, rec);
        if (leaf.records.size() <= meta_.leaf_capacity) {
            write_leaf(page, leaf);
            return std::nullopt;
        }
        // Split: right half moves to a new page stitched into the chain.
        std::size_t mid = leaf.records.size() / 2;
        LeafNode right;
        right.records.assign(leaf.records.begin() + mid, leaf.records.end());
        leaf.records.resize(mid);
        PageId right_page = alloc_node();
        right.next_leaf = leaf.next_leaf;
        leaf.next_leaf = right_page;
        write_leaf(page, leaf);
        write_leaf(right_page, right);
        return Split{right.records.front().key, right_page};
    }
    InternalNode node = read_internal(page);
    std::size_t ci = route(node, rec.key);
    auto split = insert_rec(node.children[ci], level + 1, rec);
    if (!split) return std::nullopt;
    node.keys.insert(node.keys.begin() + ci, split->sep);
    node.children.insert(node.children.begin() + ci + 1, split->right);
    if (node.children.size() <= meta_.fanout) {
        write_internal(page, node);
        return std::nullopt;
    }
    std::size_t mid = node.keys.size() / 2;  // middle key moves up
    std::uint64_t up_key = node.keys[mid];
    InternalNode right;
    right.keys.assign(node.keys.begin() + mid + 1, node.keys.end());
    right.children.assign(node.children.begin() + mid + 1, node.children.end());
    node.keys.resize(mid);
    node.children.resize(mid + 1);
    PageId right_page = alloc_node();
    write_internal(page, node);
    write_internal(right_page, right);
    return Split{up_key, right_page};
}

void BTree::insert(const Record& rec) {
    if (meta_.height == 0) {
        PageId page = alloc_node();
        LeafNode leaf;
        leaf.records.push_back(rec);
        write_leaf(page, leaf);
        meta_.root_page = page;
        meta_.height = 1;
        meta_.entry_count = 1;
        return;
    }
    auto split = insert_rec(meta_.root_page, 0, rec);
    if (split) {
        InternalNode root;
        root.keys.push_back(split->sep);
        root.children = {meta_.root_page, split->right};
        PageId root_page = alloc_node();
        write_internal(root_page, root);
        meta_.root_page = root_page;
        meta_.height += 1;
    }
    meta_.entry_count += 1;
}

void BTree::rebalance_child(InternalNode& parent, std::size_t child_idx, std::uint32_t child_level) {
    bool child_is_leaf = (child_level + 1 == meta_.height);
    // Pair the child with its left sibling so a merge always removes the
    // right node of the pair; the left one carries the sibling chain.
    std::size_t li = child_idx > 0 ? child_idx - 1 : child_idx;
    std::size_t ri = li + 1;
    PageId left_page = parent.children[li];
    PageId right_page = parent.children[ri];
    if (child_is_leaf) {
        LeafNode left = read_leaf(left_page);
        LeafNode right = read_leaf(right_page);
        if (left.records.size() + right.records.size() <= meta_.leaf_capacity) {
            left.records.insert(left.records.end(), right.records.begin(), right.records.end());
            left.next_leaf = right.next_leaf;
            write_leaf(left_page, left);
            free_node(right_page);
            parent.keys.erase(parent.keys.begin() + li);
            parent.children.erase(parent.children.begin() + ri);
        } else {
            std::vector<Record> all(std::move(left.records));
            all.insert(all.end(), right.records.begin(), right.records.end());
            std::size_t half = all.size() / 2;
            left.records.assign(all.begin(), all.begin() + half);
            right.records.assign(all.begin() + half, all.end());
            parent.keys[li] = right.records.front().key;
            write_leaf(left_page, left);
            write_leaf(right_page, right);
        }
        return;
    }
    InternalNode left = read_internal(left_page);
    InternalNode right = read_internal(right_page);
    std::uint64_t sep = parent.keys[li];
    if (left.children.size() + right.children.size() <= meta_.fanout) {
        left.keys.push_back(sep);
        left.keys.insert(left.keys.end(), right.keys.begin(), right.keys.end());
        left.children.insert(left.children.end(), right.children.begin(), right.children.end());
        write_internal(left_page, left);
        free_node(right_page);
        parent.keys.erase(parent.keys.begin() + li);
        parent.children.erase(parent.children.begin() + ri);
    } else {
        // Rotate through the parent separator to even the pair out.
        std::vector<std::uint64_t> keys(std::move(left.keys));
        keys.push_back(sep);
        keys.insert(keys.end(), right.keys.begin(), right.keys.end());
        std::vector<PageId> children(std::move(left.children));
        children.insert(children.end(), right.children.begin(), right.children.end());
        std::size_t lc = children.size() / 2;
        left.children.assign(children.begin(), children.begin() + lc);
        right.children.assign(children.begin() + lc, children.end());
        left.keys.assign(keys.begin(), keys.begin() + (lc - 1));
        parent.keys[li] = keys[lc - 1];
        right.keys.assign(keys.begin() + lc, keys.end());
        write_internal(left_page, left);
        write_internal(right_page, right);
    }
}

bool BTree::erase_rec(PageId page, std::uint32_t level, std::uint64_t key, bool& removed) {
    if (level + 1 == meta_.height) {
        LeafNode leaf = read_leaf(page);
        auto it = std::lower_bound(leaf.records.begin(), leaf.records.end(), key,
                                   [](const Record& r, std::uint64_t k) { return r.key < k; });
        if (it == leaf.records.end() || it->key != key) {
            removed = false;
            return false;
        }
        leaf.records.erase(it);
        write_leaf(page, leaf);
        removed = true;
        return leaf.records.size() < min_leaf_records();
    }
    InternalNode node = read_internal(page);
    std::size_t ci = route(node, key);
    bool child_under = erase_rec(node.children[ci], level + 1, key, removed);
    if (!child_under) return false;
    rebalance_child(node, ci, level + 1);
    write_internal(page, node);
    return node.children.size() < min_children();
}

bool BTree::erase(std::uint64_t key) {
    if (meta_.height == 0) return false;
    bool removed = false;
    erase_rec(meta_.root_page, 0, key, removed);
    if (!removed) return false;
    meta_.entry_count -= 1;
    // Shrink the root: an internal root with a single child collapses,
    // an empty root leaf empties the tree.
    while (meta_.height > 1) {
        InternalNode root = read_internal(meta_.root_page);
        if (root.children.size() > 1) break;
        PageId old_root = meta_.root_page;
        meta_.root_page = root.children[0];
        meta_.height -= 1;
        free_node(old_root);
    }
    if (meta_.height == 1) {
        LeafNode root = read_leaf(meta_.root_page);
        if (root.records.empty()) {
            free_node(meta_.root_page);
            meta_.root_page = kNoPage;
            meta_.height = 0;
        }
    }
    return true;
}

bool BTree::update(const Record& rec) {
    if (meta_.height == 0) return false;
    PageId page = find_leaf(rec.key);
    LeafNode leaf = read_leaf(page);
    auto it = std::lower_bound(leaf.records.begin(), leaf.records.end(), rec.key,
                               [](const Record& r, std::uint64_t k) { return r.key < k; });
    if (it == leaf.records.end() || it->key != rec.key) return false;
    it->data_ptr = rec.data_ptr;
    write_leaf(page, leaf);
    return true;
}

std::vector<Record> BTree::range_search_legacy(std::uint64_t start, std::uint64_t end) {
    std::vector<Record> out;
    if (meta_.height == 0 || start >= end) return out;
    PageId page = find_leaf(start);
    // Walk the sibling chain one leaf at a time until a key >= end shows up.
    while (page != kNoPage) {
        LeafNode leaf = read_leaf(page);
        bool past_end = false;
        for (const Record& r : leaf.records) {
            if (r.key >= end) {
                past_end = true;
                break;
            }
            if (r.key >= start) out.push_back(r);
        }
        if (past_end) break;
        page = leaf.next_leaf;
    }
    return out;
}

void BTree::bulk_load(std::span<const Record> records, double fill) {
    if (meta_.height != 0) throw UsageError("bulk_load requires an empty tree");
    if (fill <= 0.0 || fill > 1.0) throw UsageError("fill factor must be in (0, 1]");
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].key <= records[i - 1].key) throw UsageError("bulk_load input must be sorted and unique");
    }
    if (records.empty()) return;

    std::size_t per_leaf = std::max<std::size_t>(1, static_cast<std::size_t>(fill * meta_.leaf_capacity));
    per_leaf = std::min<std::size_t>(per_leaf, meta_.leaf_capacity);

    struct Child {
        std::uint64_t min_key;
        PageId page;
    };
    std::vector<Child> level_nodes;
    std::size_t leaf_count = (records.size() + per_leaf - 1) / per_leaf;
    std::vector<PageId> leaf_pages(leaf_count);
    for (std::size_t i = 0; i < leaf_count; ++i) leaf_pages[i] = alloc_node();
    for (std::size_t i = 0; i < leaf_count; ++i) {
        LeafNode leaf;
        std::size_t lo = i * per_leaf;
        std::size_t hi = std::min(records.size(), lo + per_leaf);
        leaf.records.assign(records.begin() + lo, records.begin() + hi);
        leaf.next_leaf = (i + 1 < leaf_count) ? leaf_pages[i + 1] : kNoPage;
        write_leaf(leaf_pages[i], leaf);
        level_nodes.push_back({leaf.records.front().key, leaf_pages[i]});
    }
    meta_.height = 1;

    std::size_t per_node_keys = std::clamp<std::size_t>(
        static_cast<std::size_t>(fill * (meta_.fanout - 1)), 1, meta_.fanout - 1);
    while (level_nodes.size() > 1) {
        std::size_t group = level_nodes.size() <= meta_.fanout ? level_nodes.size() : per_node_keys + 1;
        std::vector<Child> next_level;
        std::size_t i = 0;
        while (i < level_nodes.size()) {
            std::size_t take = std::min(group, level_nodes.size() - i);
            if (level_nodes.size() - i - take == 1) take -= 1;  // never leave a 1-child node
            InternalNode node;
            node.children.reserve(take);
            for (std::size_t j = 0; j < take; ++j) {
                if (j > 0) node.keys.push_back(level_nodes[i + j].min_key);
                node.children.push_back(level_nodes[i + j].page);
            }
            PageId page = alloc_node();
            write_internal(page, node);
            next_level.push_back({level_nodes[i].min_key, page});
            i += take;
        }
        level_nodes = std::move(next_level);
        meta_.height += 1;
    }
    meta_.root_page = level_nodes.front().page;
    meta_.entry_count = records.size();
    flush_all();
}

void BTree::flush_all() {
    pool_.flush_all();
    persist_meta();
}

void BTree::audit_rec(PageId page, std::uint32_t level, std::uint64_t lo, bool has_lo,
                      std::uint64_t hi, bool has_hi, std::vector<PageId>& leaves,
                      std::uint64_t& entries) {
    bool is_root = (level == 0);
    if (level + 1 == meta_.height) {
        LeafNode leaf = read_leaf(page);
        if (!is_root && leaf.records.size() < min_leaf_records()) throw UsageError("leaf underflow");
        if (leaf.records.size() > meta_.leaf_capacity) throw UsageError("leaf overflow");
        for (std::size_t i = 0; i < leaf.records.size(); ++i) {
            std::uint64_t k = leaf.records[i].key;
            if (i > 0 && leaf.records[i - 1].key >= k) throw UsageError("leaf keys out of order");
            if (has_lo && k < lo) throw UsageError("leaf key below separator");
            if (has_hi && k >= hi) throw UsageError("leaf key above separator");
        }
        leaves.push_back(page);
        entries += leaf.records.size();
        return;
    }
    InternalNode node = read_internal(page);
    if (!is_root && node.children.size() < min_children()) throw UsageError("internal underflow");
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
        audit_rec(node.children[i], level + 1, clo, chas_lo, chi, chas_hi, leaves, entries);
    }
}

void BTree::check_structure() {
    if (meta_.height == 0) {
        if (meta_.entry_count != 0) throw UsageError("empty tree with nonzero entry count");
        return;
    }
    std::vector<PageId> leaves;
    std::uint64_t entries = 0;
    audit_rec(meta_.root_page, 0, 0, false, 0, false, leaves, entries);
    if (entries != meta_.entry_count) throw UsageError("entry count mismatch");
    // The in-order leaf walk must equal the sibling chain.
    for (std::size_t i = 0; i + 1 < leaves.size(); ++i) {
        LeafNode leaf = read_leaf(leaves[i]);
        if (leaf.next_leaf != leaves[i + 1]) throw UsageError("broken sibling chain");
    }
    if (!leaves.empty()) {
        LeafNode last = read_leaf(leaves.back());
        if (last.next_leaf != kNoPage) throw UsageError("sibling chain does not terminate");
    }
}

std::uint64_t BTree::leaf_node_count() {
    if (meta_.height == 0) return 0;
    std::vector<PageId> leaves;
    std::uint64_t entries = 0;
    audit_rec(meta_.root_page, 0, 0, false, 0, false, leaves, entries);
    return leaves.size();
}

std::uint64_t BTree::node_count() {
    return reachable_pages().size() == 0 ? 0 : (reachable_pages().size() - 1) / meta_.node_pages;
}

std::vector<PageId> BTree::reachable_pages() {
    std::vector<PageId> out{0};
    if (meta_.height == 0) return out;
    std::vector<std::pair<PageId, std::uint32_t>> stack{{meta_.root_page, 0}};
    while (!stack.empty()) {
        auto [page, level] = stack.back();
        stack.pop_back();
        for (std::uint32_t i = 0; i < meta_.node_pages; ++i) out.push_back(page + i);
        if (level + 1 == meta_.height) continue;
        InternalNode node = read_internal(page);
        for (PageId child : node.children) stack.push_back({child, level + 1});
    }
    return out;
}

}  // namespace piodb
