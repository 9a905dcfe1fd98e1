#pragma once

#include <cstdint>
#include <list>
#include <unordered_map>
#include <vector>

#include "piodb/device.hpp"

namespace piodb {

// LRU buffer pool over fixed-size nodes of `node_pages` device pages each.
// Read-through on miss, write-back on eviction. Capacity is expressed in
// device pages (the cost model's M); a capacity of 0 disables caching and
// turns reads/writes into direct device I/O.
class BufferPool {
public:
    BufferPool(Device& dev, std::size_t capacity_pages, int node_pages = 1);

    // Returns the node bytes, reading through the device on a miss.
    const PageBuffer& get(PageId first_page);

    // Installs new node bytes; marks the frame dirty (deferred write).
    void put(PageId first_page, PageBuffer bytes);

    // Installs bytes already durable on the device (clean frame).
    void put_clean(PageId first_page, PageBuffer bytes);

    // Drops a node without write-back (freed pages).
    void discard(PageId first_page);

    bool contains(PageId first_page) const { return frames_.count(first_page) > 0; }
    std::size_t resident_nodes() const { return frames_.size(); }
    std::size_t capacity_pages() const { return capacity_pages_; }
    int node_pages() const { return node_pages_; }
    std::size_t dirty_nodes() const;

    // Writes all dirty frames back as one batch; frames stay resident.
    void flush_all();

    // Forgets everything without writing (crash simulation support).
    void drop_all();

    void set_capacity_pages(std::size_t capacity_pages);

private:
    struct Frame {
        PageBuffer bytes;
        bool dirty = false;
        std::list<PageId>::iterator lru_pos;
    };

    void touch(Frame& frame, PageId id);
    void make_room();
    void write_back(PageId id, const PageBuffer& bytes);

    Device& dev_;
    std::size_t capacity_pages_;
    int node_pages_;
    std::size_t max_nodes_;
    std::unordered_map<PageId, Frame> frames_;
    std::list<PageId> lru_;  // front = most recent
    PageBuffer passthrough_;
};

}  // namespace piodb
