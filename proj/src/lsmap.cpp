#include "piodb/lsmap.hpp"

#include <cstring>

namespace piodb {

static std::uint32_t ceil_log2(std::uint32_t x) {
    std::uint32_t bits = 0;
    while ((1u << bits) < x) ++bits;
    return bits;
}

LsMap::LsMap(std::uint32_t leaf_segments) : segments_(leaf_segments) {
    if (segments_ < 1) throw UsageError("leaf_segments must be >= 1");
    std::uint32_t encodable = (segments_ + 1) / 2;  // ids floor(L/2)..L-1
    bits_ = std::max<std::uint32_t>(1, ceil_log2(encodable));
}

std::uint32_t LsMap::clamp(std::uint32_t last_ls_id) const {
    return std::max(last_ls_id, offset());
}

std::uint32_t LsMap::raw_get(std::size_t slot) const {
    std::uint32_t v = 0;
    std::size_t bit = slot * bits_;
    for (std::uint32_t b = 0; b < bits_; ++b, ++bit) {
        v |= static_cast<std::uint32_t>((bitwords_[bit / 64] >> (bit % 64)) & 1u) << b;
    }
    return v;
}

void LsMap::raw_set(std::size_t slot, std::uint32_t value) {
    std::size_t bit = slot * bits_;
    for (std::uint32_t b = 0; b < bits_; ++b, ++bit) {
        std::uint64_t mask = 1ull << (bit % 64);
        if ((value >> b) & 1u) {
            bitwords_[bit / 64] |= mask;
        } else {
            bitwords_[bit / 64] &= ~mask;
        }
    }
}

void LsMap::set(PageId leaf, std::uint32_t last_ls_id) {
    if (last_ls_id < offset() || last_ls_id >= segments_) {
        throw UsageError("last LS id " + std::to_string(last_ls_id) + " out of encodable range");
    }
    auto it = slots_.find(leaf);
    std::size_t slot;
    if (it != slots_.end()) {
        slot = it->second;
    } else if (!free_slots_.empty()) {
        slot = free_slots_.back();
        free_slots_.pop_back();
        slots_.emplace(leaf, slot);
    } else {
        slot = slot_count_++;
        std::size_t words = (slot_count_ * bits_ + 63) / 64;
        if (words > bitwords_.size()) bitwords_.resize(words, 0);
        slots_.emplace(leaf, slot);
    }
    raw_set(slot, last_ls_id - offset());
}

std::uint32_t LsMap::get(PageId leaf) const {
    auto it = slots_.find(leaf);
    if (it == slots_.end()) throw AddressError("leaf not present in LSMap");
    return raw_get(it->second) + offset();
}

bool LsMap::contains(PageId leaf) const {
    return slots_.count(leaf) > 0;
}

void LsMap::remove(PageId leaf) {
    auto it = slots_.find(leaf);
    if (it == slots_.end()) return;
    free_slots_.push_back(it->second);
    slots_.erase(it);
}

void LsMap::clear() {
    slots_.clear();
    free_slots_.clear();
    bitwords_.clear();
    slot_count_ = 0;
}

std::size_t LsMap::memory_bytes() const {
    return bitwords_.size() * sizeof(std::uint64_t);
}

std::vector<std::uint8_t> LsMap::serialize() const {
    std::vector<std::uint8_t> out;
    auto put64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put64(segments_);
    put64(slots_.size());
    for (const auto& [leaf, slot] : slots_) {
        put64(leaf);
        put64(raw_get(slot));
    }
    return out;
}

LsMap LsMap::deserialize(std::span<const std::uint8_t> bytes) {
    std::size_t off = 0;
    auto get64 = [&]() {
        std::uint64_t v = 0;
        std::memcpy(&v, bytes.data() + off, 8);
        off += 8;
        return v;
    };
    LsMap map(static_cast<std::uint32_t>(get64()));
    std::uint64_t n = get64();
    for (std::uint64_t i = 0; i < n; ++i) {
        PageId leaf = get64();
        std::uint32_t stored = static_cast<std::uint32_t>(get64());
        map.set(leaf, stored + map.offset());
    }
    return map;
}

}  // namespace piodb
