#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "piodb/device.hpp"

namespace piodb {

// Compact per-leaf cache of the last leaf-segment id. Stored values are
// offset by floor(L/2) and packed into ceil(log2(ceil(L/2))) bits per leaf
// (minimum one bit), since steady-state cursors live in [floor(L/2), L-1].
class LsMap {
public:
    explicit LsMap(std::uint32_t leaf_segments);

    std::uint32_t leaf_segments() const { return segments_; }
    std::uint32_t bits_per_entry() const { return bits_; }
    std::uint32_t offset() const { return segments_ / 2; }

    // Clamps young cursors up to the encodable floor; appends beyond the true
    // cursor land in empty space, so reads from the clamped id stay correct.
    std::uint32_t clamp(std::uint32_t last_ls_id) const;

    void set(PageId leaf_first_page, std::uint32_t last_ls_id);
    std::uint32_t get(PageId leaf_first_page) const;
    bool contains(PageId leaf_first_page) const;
    void remove(PageId leaf_first_page);
    void clear();

    std::size_t leaf_count() const { return slots_.size(); }
    std::size_t memory_bytes() const;

    std::vector<std::uint8_t> serialize() const;
    static LsMap deserialize(std::span<const std::uint8_t> bytes);

private:
    std::uint32_t raw_get(std::size_t slot) const;
    void raw_set(std::size_t slot, std::uint32_t value);

    std::uint32_t segments_;
    std::uint32_t bits_;
    std::unordered_map<PageId, std::size_t> slots_;
    std::vector<std::size_t> free_slots_;
    std::vector<std::uint64_t> bitwords_;
    std::size_t slot_count_ = 0;
};

}  // namespace piodb
