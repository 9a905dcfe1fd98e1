#include "piodb/recovery.hpp"

#include <algorithm>
#include <set>

namespace piodb {

CrashPoints& CrashPoints::instance() {
    static CrashPoints inst;
    return inst;
}

void CrashPoints::arm(const std::string& label, int nth) {
    armed_ = true;
    counting_ = false;
    label_ = label;
    remaining_ = nth;
}

void CrashPoints::disarm() {
    armed_ = false;
    counting_ = false;
}

void CrashPoints::set_counting(bool on) {
    counting_ = on;
    armed_ = false;
}

void CrashPoints::hit(const char* label) {
    if (counting_) {
        counts_[label] += 1;
        return;
    }
    if (!armed_ || label_ != label) return;
    if (--remaining_ <= 0) {
        armed_ = false;
        throw CrashInjected{};
    }
}

// ---------------------------------------------------------------------------

TxnIndex::TxnIndex(PioBtree& tree, Wal& wal) : tree_(tree), wal_(wal) {
    tree_.set_observer(this);
}

TxnIndex::~TxnIndex() {
    tree_.set_observer(nullptr);
}

void TxnIndex::log_statement(std::uint64_t txn, const OpqEntry& entry) {
    LogRecord rec;
    rec.txn = txn;
    rec.type = LogType::kRedo;
    rec.entry = entry;
    wal_.append(rec);
}

namespace {
LogRecord make_record(LogType type, std::uint64_t txn = 0, std::uint64_t lo = 0,
                      std::uint64_t hi = 0) {
    LogRecord rec;
    rec.txn = txn;
    rec.type = type;
    rec.range_lo = lo;
    rec.range_hi = hi;
    return rec;
}
}  // namespace

void TxnIndex::apply(const OpqEntry& entry) {
    switch (entry.op) {
        case OpFlag::kInsert:
            tree_.pio_insert(entry.rec);
            break;
        case OpFlag::kDelete:
            tree_.pio_delete(entry.rec.key);
            break;
        case OpFlag::kUpdate:
            tree_.pio_update(entry.rec);
            break;
    }
}

void TxnIndex::insert(const Record& rec) {
    OpqEntry e{rec, OpFlag::kInsert};
    log_statement(0, e);
    crash_point("before-commit-force");
    wal_.append(make_record(LogType::kCommit));
    wal_.force();
    crash_point("after-commit");
    apply(e);
}

void TxnIndex::erase(std::uint64_t key) {
    OpqEntry e{Record{key, 0}, OpFlag::kDelete};
    log_statement(0, e);
    crash_point("before-commit-force");
    wal_.append(make_record(LogType::kCommit));
    wal_.force();
    crash_point("after-commit");
    apply(e);
}

void TxnIndex::update(const Record& rec) {
    OpqEntry e{rec, OpFlag::kUpdate};
    log_statement(0, e);
    crash_point("before-commit-force");
    wal_.append(make_record(LogType::kCommit));
    wal_.force();
    crash_point("after-commit");
    apply(e);
}

std::uint64_t TxnIndex::begin() {
    std::uint64_t txn = next_txn_++;
    staged_.emplace(txn, std::vector<OpqEntry>{});
    return txn;
}

void TxnIndex::insert(std::uint64_t txn, const Record& rec) {
    OpqEntry e{rec, OpFlag::kInsert};
    log_statement(txn, e);  // logged before the (deferred) OPQ append
    staged_.at(txn).push_back(e);
}

void TxnIndex::erase(std::uint64_t txn, std::uint64_t key) {
    OpqEntry e{Record{key, 0}, OpFlag::kDelete};
    log_statement(txn, e);
    staged_.at(txn).push_back(e);
}

void TxnIndex::update(std::uint64_t txn, const Record& rec) {
    OpqEntry e{rec, OpFlag::kUpdate};
    log_statement(txn, e);
    staged_.at(txn).push_back(e);
}

void TxnIndex::commit(std::uint64_t txn) {
    auto it = staged_.find(txn);
    if (it == staged_.end()) throw UsageError("unknown transaction");
    crash_point("before-commit-force");
    wal_.append(make_record(LogType::kCommit, txn));
    wal_.force();
    crash_point("after-commit");
    // No-steal: entries reach the OPQ (and thus any flush) only once the
    // commit record is durable.
    for (const OpqEntry& e : it->second) apply(e);
    staged_.erase(it);
}

void TxnIndex::abort(std::uint64_t txn) {
    if (staged_.erase(txn) == 0) throw UsageError("unknown transaction");
}

void TxnIndex::checkpoint(bool truncate) {
    tree_.flush_all();
    // Everything durable is in the tree pages now; the pre-checkpoint log is
    // dead weight. Statements of still-open transactions are re-logged past
    // the checkpoint so truncation cannot orphan them.
    if (truncate) wal_.truncate();
    wal_.append(make_record(LogType::kCheckpoint));
    for (const auto& [txn, entries] : staged_) {
        for (const OpqEntry& e : entries) log_statement(txn, e);
    }
    wal_.force();
    crash_point("after-checkpoint");
}

void TxnIndex::flush_begin(const KeyRange& range, std::span<const OpqEntry> selected) {
    (void)selected;
    // Every OPQ entry's redo record is already durable (forced at commit);
    // force anyway so the precondition does not depend on that invariant.
    wal_.force();
    crash_point("before-flush-start");
    wal_.append(make_record(LogType::kFlushStart, 0, range.lo, range.hi));
    wal_.force();
    crash_point("after-flush-start");
}

void TxnIndex::node_preimages(std::span<const std::pair<PageId, PageBuffer>> pages) {
    for (const auto& [page, image] : pages) {
        LogRecord rec;
        rec.type = LogType::kFlushUndo;
        rec.page = page;
        rec.image = image;
        wal_.append(std::move(rec));
    }
    wal_.force();
    crash_point("after-undo-force");
}

void TxnIndex::flush_end(const KeyRange& range, std::span<const OpqEntry> survivors) {
    crash_point("before-flush-end");
    wal_.append(make_record(LogType::kFlushEnd, 0, range.lo, range.hi));
    // Key-range suppression would silently swallow operations that are still
    // pending with keys inside the flushed range: OPQ entries past the bcnt
    // cut and statements of still-open transactions. Re-log them after the
    // FlushEnd so exactly one live redo record survives, then make the end
    // record and the re-logs durable together.
    for (const OpqEntry& e : survivors) log_statement(0, e);
    for (const auto& [txn, entries] : staged_) {
        for (const OpqEntry& e : entries) {
            if (e.rec.key >= range.lo && e.rec.key <= range.hi) log_statement(txn, e);
        }
    }
    wal_.force();
    crash_point("after-flush-end");
}

// ---------------------------------------------------------------------------

PioBtree recover(Device& dev, LogStore& store, std::size_t pool_pages, RecoveryStats* stats_out) {
    RecoveryStats stats;
    dev.assume_allocated_up_to(dev.config().page_count);
    auto records = Wal::scan(store);

    // Only records at or after the last checkpoint matter; a checkpoint
    // implies an empty OPQ and no flush in progress.
    std::size_t begin = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].type == LogType::kCheckpoint) begin = i + 1;
    }

    // Pass 1: find an incomplete flush (FlushStart without a matching
    // FlushEnd) and the completed-flush ranges for redo suppression.
    struct DoneFlush {
        std::uint64_t lo, hi, end_lsn;
    };
    std::vector<DoneFlush> done;
    std::optional<std::size_t> open_flush;
    for (std::size_t i = begin; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.type == LogType::kFlushStart) {
            if (open_flush) throw UsageError("nested flush records in log");
            open_flush = i;
        } else if (r.type == LogType::kFlushEnd) {
            if (!open_flush) throw UsageError("flush end without start");
            done.push_back({r.range_lo, r.range_hi, r.lsn});
            open_flush.reset();
        }
    }

    // Undo phase: restore pre-images of the torn flush in reverse order.
    if (open_flush) {
        stats.incomplete_flush = true;
        std::vector<const LogRecord*> undos;
        for (std::size_t i = *open_flush; i < records.size(); ++i) {
            if (records[i].type == LogType::kFlushUndo) undos.push_back(&records[i]);
        }
        for (auto it = undos.rbegin(); it != undos.rend(); ++it) {
            dev.psync_write((*it)->page, (*it)->image);
            stats.undo_pages += 1;
        }
    }

    // The tree is structurally consistent now; reopen it (rebuilds the LSMap
    // and the allocation state from reachable pages).
    PioBtree tree = PioBtree::open(dev, pool_pages);

    // Redo phase: committed operations whose key is not covered by a later
    // completed flush go back into the OPQ in log order.
    std::set<std::uint64_t> committed;
    for (std::size_t i = begin; i < records.size(); ++i) {
        if (records[i].type == LogType::kCommit) committed.insert(records[i].txn);
    }
    committed.insert(0);
    for (std::size_t i = begin; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.type != LogType::kRedo) continue;
        if (!committed.count(r.txn)) {
            stats.redo_uncommitted += 1;
            continue;
        }
        bool suppressed = false;
        for (const auto& f : done) {
            if (r.entry.rec.key >= f.lo && r.entry.rec.key <= f.hi && r.lsn < f.end_lsn) {
                suppressed = true;
                break;
            }
        }
        if (suppressed) {
            stats.redo_suppressed += 1;
            continue;
        }
        tree.opq_append_raw(r.entry);
        stats.redo_applied += 1;
    }
    if (stats_out) *stats_out = stats;
    return tree;
}

}  // namespace piodb
