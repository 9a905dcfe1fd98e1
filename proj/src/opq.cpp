#include "piodb/opq.hpp"

#include <algorithm>

namespace piodb {

static bool key_less(const OpqEntry& a, const OpqEntry& b) {
    return a.rec.key < b.rec.key;
}

OpQueue::OpQueue(std::size_t capacity_entries, std::uint32_t speriod)
    : capacity_(capacity_entries), speriod_(speriod) {
    if (capacity_ < 1) throw UsageError("OPQ capacity must be >= 1");
    if (speriod_ < 1) throw UsageError("speriod must be >= 1");
    entries_.reserve(capacity_);
}

void OpQueue::append(const OpqEntry& entry) {
    if (full()) throw UsageError("OPQ append on a full queue");
    entries_.push_back(entry);
    if (++appended_since_sort_ >= speriod_) sort_merge();
}

void OpQueue::sort_merge() {
    auto tail = entries_.begin() + static_cast<std::ptrdiff_t>(sorted_offset_);
    std::stable_sort(tail, entries_.end(), key_less);
    std::inplace_merge(entries_.begin(), tail, entries_.end(), key_less);
    sorted_offset_ = entries_.size();
    appended_since_sort_ = 0;
}

std::vector<OpqEntry> OpQueue::find(std::uint64_t key) const {
    std::vector<OpqEntry> out;
    OpqEntry probe{{key, 0}, OpFlag::kInsert};
    auto sorted_end = entries_.begin() + static_cast<std::ptrdiff_t>(sorted_offset_);
    auto [lo, hi] = std::equal_range(entries_.begin(), sorted_end, probe, key_less);
    out.insert(out.end(), lo, hi);
    // Tail entries are strictly newer than everything in the sorted region.
    for (auto it = sorted_end; it != entries_.end(); ++it) {
        if (it->rec.key == key) out.push_back(*it);
    }
    return out;
}

std::vector<OpqEntry> OpQueue::find_in_range(std::uint64_t lo_key, std::uint64_t hi_key) const {
    std::vector<OpqEntry> out;
    for (const auto& e : entries_) {
        if (e.rec.key >= lo_key && e.rec.key <= hi_key) out.push_back(e);
    }
    return out;
}

std::vector<OpqEntry> OpQueue::peek_lowest(std::size_t n) {
    sort_merge();
    n = std::min(n, entries_.size());
    return std::vector<OpqEntry>(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(n));
}

void OpQueue::drop_lowest(std::size_t n) {
    sort_merge();  // no-op when already sorted, as after peek_lowest
    n = std::min(n, entries_.size());
    entries_.erase(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(n));
    sorted_offset_ -= n;
}

void OpQueue::clear() {
    entries_.clear();
    sorted_offset_ = 0;
    appended_since_sort_ = 0;
}

}  // namespace piodb
