#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "piodb/pio_btree.hpp"
#include "piodb/wal.hpp"

namespace piodb {

// Deterministic crash injection. Arm a (label, nth-hit) pair and the matching
// crash_point call throws CrashInjected; disarmed hooks are no-ops. Counting
// mode records hit totals so a sweep can enumerate every injection point.
class CrashPoints {
public:
    static CrashPoints& instance();

    void arm(const std::string& label, int nth);
    void disarm();
    void set_counting(bool on);
    const std::map<std::string, int>& counts() const { return counts_; }
    void reset_counts() { counts_.clear(); }

    void hit(const char* label);

private:
    bool armed_ = false;
    bool counting_ = false;
    std::string label_;
    int remaining_ = 0;
    std::map<std::string, int> counts_;
};

inline void crash_point(const char* label) {
    CrashPoints::instance().hit(label);
}

// Transactional front-end over the PIO B-tree: write-ahead logging for every
// OPQ append, no-steal staging for open transactions, and flush bracketing
// with undo pre-images. Statements issued without a transaction auto-commit.
class TxnIndex : public FlushObserver {
public:
    TxnIndex(PioBtree& tree, Wal& wal);
    ~TxnIndex() override;

    // Auto-commit statements.
    void insert(const Record& rec);
    void erase(std::uint64_t key);
    void update(const Record& rec);

    std::uint64_t begin();
    void insert(std::uint64_t txn, const Record& rec);
    void erase(std::uint64_t txn, std::uint64_t key);
    void update(std::uint64_t txn, const Record& rec);
    void commit(std::uint64_t txn);
    void abort(std::uint64_t txn);

    std::optional<std::uint64_t> search(std::uint64_t key) { return tree_.point_search(key); }
    std::vector<Record> range(std::uint64_t start, std::uint64_t end) {
        return tree_.prange_search(start, end);
    }

    // Flushes every committed entry, logs a checkpoint, and optionally
    // truncates the log down to it.
    void checkpoint(bool truncate = false);

    PioBtree& tree() { return tree_; }

    // FlushObserver
    void flush_begin(const KeyRange& range, std::span<const OpqEntry> selected) override;
    void node_preimages(std::span<const std::pair<PageId, PageBuffer>> pages) override;
    void flush_end(const KeyRange& range, std::span<const OpqEntry> survivors) override;

private:
    void log_statement(std::uint64_t txn, const OpqEntry& entry);
    void apply(const OpqEntry& entry);

    PioBtree& tree_;
    Wal& wal_;
    std::uint64_t next_txn_ = 1;
    std::unordered_map<std::uint64_t, std::vector<OpqEntry>> staged_;
};

struct RecoveryStats {
    bool incomplete_flush = false;
    std::size_t undo_pages = 0;
    std::size_t redo_applied = 0;
    std::size_t redo_suppressed = 0;   // inside a completed flush's key range
    std::size_t redo_uncommitted = 0;  // no durable commit: discarded (no-steal)
};

// Restores a consistent index from the device and durable log: flush-undo
// pass for an incomplete flush, then redo of committed, never-flushed
// operations back into the OPQ. No transaction undo is needed (no-steal).
PioBtree recover(Device& dev, LogStore& store, std::size_t pool_pages,
                 RecoveryStats* stats = nullptr);

}  // namespace piodb
