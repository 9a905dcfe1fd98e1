#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "piodb/pages.hpp"

namespace piodb {

// In-memory operation queue: a sorted region [0, sorted_offset) followed by
// an unsorted append tail. Appends are O(1); every `speriod` appends the tail
// is sorted and merged into the sorted region. Equal keys keep append order
// throughout (stable sort + stable merge), which makes cancellation and the
// update = delete+insert reading well defined.
class OpQueue {
public:
    OpQueue(std::size_t capacity_entries, std::uint32_t speriod);

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    bool full() const { return entries_.size() >= capacity_; }
    std::size_t sorted_offset() const { return sorted_offset_; }
    std::uint32_t appended_since_sort() const { return appended_since_sort_; }

    // Caller must drain the queue first when full (the flush trigger lives in
    // the tree, not here).
    void append(const OpqEntry& entry);

    void sort_merge();

    // All entries matching `key`, in original append order.
    std::vector<OpqEntry> find(std::uint64_t key) const;

    // All entries with lo <= key <= hi, in append order per key.
    std::vector<OpqEntry> find_in_range(std::uint64_t lo, std::uint64_t hi) const;

    // Sorts, then removes and returns the min(n, size) lowest-key entries.
    std::vector<OpqEntry> peek_lowest(std::size_t n);
    void drop_lowest(std::size_t n);

    std::span<const OpqEntry> entries() const { return entries_; }
    void clear();

private:
    std::vector<OpqEntry> entries_;
    std::size_t capacity_;
    std::size_t sorted_offset_ = 0;
    std::uint32_t speriod_;
    std::uint32_t appended_since_sort_ = 0;
};

}  // namespace piodb
