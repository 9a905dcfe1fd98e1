#include "piodb/buffer_pool.hpp"

#include <algorithm>

namespace piodb {

BufferPool::BufferPool(Device& dev, std::size_t capacity_pages, int node_pages)
    : dev_(dev), capacity_pages_(capacity_pages), node_pages_(node_pages) {
    if (node_pages_ < 1) throw UsageError("node_pages must be >= 1");
    max_nodes_ = capacity_pages_ / static_cast<std::size_t>(node_pages_);
}

void BufferPool::set_capacity_pages(std::size_t capacity_pages) {
    capacity_pages_ = capacity_pages;
    max_nodes_ = capacity_pages_ / static_cast<std::size_t>(node_pages_);
    while (frames_.size() > max_nodes_) make_room();
}

void BufferPool::touch(Frame& frame, PageId id) {
    lru_.erase(frame.lru_pos);
    lru_.push_front(id);
    frame.lru_pos = lru_.begin();
}

void BufferPool::write_back(PageId id, const PageBuffer& bytes) {
    std::vector<std::pair<PageId, PageBuffer>> batch;
    batch.reserve(node_pages_);
    for (int i = 0; i < node_pages_; ++i) {
        batch.emplace_back(id + i, PageBuffer(bytes.begin() + i * dev_.page_size(),
                                              bytes.begin() + (i + 1) * dev_.page_size()));
    }
    dev_.psync_write(batch, node_pages_);
}

void BufferPool::make_room() {
    if (lru_.empty()) return;
    PageId victim = lru_.back();
    lru_.pop_back();
    auto it = frames_.find(victim);
    if (it->second.dirty) write_back(victim, it->second.bytes);
    frames_.erase(it);
}

const PageBuffer& BufferPool::get(PageId first_page) {
    auto it = frames_.find(first_page);
    if (it != frames_.end()) {
        touch(it->second, first_page);
        return it->second.bytes;
    }
    std::vector<PageId> ids(node_pages_);
    for (int i = 0; i < node_pages_; ++i) ids[i] = first_page + i;
    auto pages = dev_.psync_read(ids, node_pages_);
    PageBuffer bytes;
    bytes.reserve(node_pages_ * dev_.page_size());
    for (auto& p : pages) bytes.insert(bytes.end(), p.begin(), p.end());
    if (max_nodes_ == 0) {
        passthrough_ = std::move(bytes);
        return passthrough_;
    }
    while (frames_.size() >= max_nodes_) make_room();
    lru_.push_front(first_page);
    Frame frame{std::move(bytes), false, lru_.begin()};
    return frames_.emplace(first_page, std::move(frame)).first->second.bytes;
}

void BufferPool::put(PageId first_page, PageBuffer bytes) {
    if (max_nodes_ == 0) {
        write_back(first_page, bytes);
        return;
    }
    auto it = frames_.find(first_page);
    if (it != frames_.end()) {
        it->second.bytes = std::move(bytes);
        it->second.dirty = true;
        touch(it->second, first_page);
        return;
    }
    while (frames_.size() >= max_nodes_) make_room();
    lru_.push_front(first_page);
    frames_.emplace(first_page, Frame{std::move(bytes), true, lru_.begin()});
}

void BufferPool::put_clean(PageId first_page, PageBuffer bytes) {
    if (max_nodes_ == 0) return;
    auto it = frames_.find(first_page);
    if (it != frames_.end()) {
        it->second.bytes = std::move(bytes);
        touch(it->second, first_page);
        return;
    }
    while (frames_.size() >= max_nodes_) make_room();
    lru_.push_front(first_page);
    frames_.emplace(first_page, Frame{std::move(bytes), false, lru_.begin()});
}

void BufferPool::discard(PageId first_page) {
    auto it = frames_.find(first_page);
    if (it == frames_.end()) return;
    lru_.erase(it->second.lru_pos);
    frames_.erase(it);
}

std::size_t BufferPool::dirty_nodes() const {
    std::size_t n = 0;
    for (const auto& [id, frame] : frames_) n += frame.dirty ? 1 : 0;
    return n;
}

void BufferPool::flush_all() {
    std::vector<PageId> dirty;
    for (auto& [id, frame] : frames_) {
        if (frame.dirty) dirty.push_back(id);
    }
    if (dirty.empty()) return;
    std::sort(dirty.begin(), dirty.end());
    std::vector<std::pair<PageId, PageBuffer>> batch;
    batch.reserve(dirty.size() * node_pages_);
    for (PageId id : dirty) {
        auto& frame = frames_.at(id);
        for (int i = 0; i < node_pages_; ++i) {
            batch.emplace_back(id + i, PageBuffer(frame.bytes.begin() + i * dev_.page_size(),
                                                  frame.bytes.begin() + (i + 1) * dev_.page_size()));
        }
        frame.dirty = false;
    }
    dev_.psync_write(batch, node_pages_);
}

void BufferPool::drop_all() {
    frames_.clear();
    lru_.clear();
}

}  // namespace piodb
