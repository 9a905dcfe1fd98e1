#include "piodb/replay.hpp"

#include <chrono>
#include <map>
#include <ostream>
#include <sstream>

namespace piodb::bench {

namespace {

constexpr std::uint64_t kPtrBase = 1ull << 40;  // replay-assigned data pointers

struct Oracle {
    std::map<std::uint64_t, std::uint64_t> state;

    explicit Oracle(const std::vector<Record>& preloaded) {
        for (const auto& r : preloaded) state[r.key] = r.data_ptr;
    }

    std::vector<Record> range(std::uint64_t lo, std::uint64_t hi) const {
        std::vector<Record> out;
        for (auto it = state.lower_bound(lo); it != state.end() && it->first < hi; ++it) {
            out.push_back({it->first, it->second});
        }
        return out;
    }
};

[[noreturn]] void mismatch(std::size_t op_index, const std::string& what) {
    throw VerifyError("oracle mismatch at op #" + std::to_string(op_index) + ": " + what);
}

void check_point(std::size_t i, std::uint64_t key, const std::optional<std::uint64_t>& got,
                 const Oracle& oracle) {
    auto it = oracle.state.find(key);
    if (it == oracle.state.end()) {
        if (got) mismatch(i, "search(" + std::to_string(key) + ") found a deleted/absent key");
        return;
    }
    if (!got) mismatch(i, "search(" + std::to_string(key) + ") missed a present key");
    if (*got != it->second) mismatch(i, "search(" + std::to_string(key) + ") returned a stale pointer");
}

void check_range(std::size_t i, std::uint64_t lo, std::uint64_t hi, const std::vector<Record>& got,
                 const Oracle& oracle) {
    auto want = oracle.range(lo, hi);
    if (got.size() != want.size()) {
        mismatch(i, "range [" + std::to_string(lo) + "," + std::to_string(hi) + ") returned " +
                        std::to_string(got.size()) + " records, expected " + std::to_string(want.size()));
    }
    for (std::size_t k = 0; k < got.size(); ++k) {
        if (!(got[k] == want[k])) {
            mismatch(i, "range [" + std::to_string(lo) + "," + std::to_string(hi) +
                            ") diverges at key " + std::to_string(want[k].key));
        }
    }
}

template <typename Ops>
RunReport replay_impl(Device& dev, const std::vector<TraceRecord>& trace,
                      const std::vector<Record>& preloaded, bool verify, Ops&& ops) {
    Oracle oracle(preloaded);
    RunReport rep;
    rep.ops = trace.size();
    auto t0 = std::chrono::steady_clock::now();
    double sim0 = dev.stats().simulated_time_us;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const TraceRecord& t = trace[i];
        double before = dev.stats().simulated_time_us;
        switch (t.op) {
            case 's': {
                auto got = ops.search(t.key);
                if (verify) check_point(i, t.key, got, oracle);
                break;
            }
            case 'i': {
                Record rec{t.key, kPtrBase + i};
                ops.insert(rec);
                if (verify) oracle.state[rec.key] = rec.data_ptr;
                break;
            }
            case 'd': {
                ops.erase(t.key);
                if (verify) oracle.state.erase(t.key);
                break;
            }
            case 'u': {
                Record rec{t.key, kPtrBase + i};
                ops.update(rec);
                if (verify) {
                    auto it = oracle.state.find(rec.key);
                    if (it != oracle.state.end()) it->second = rec.data_ptr;
                }
                break;
            }
            case 'r': {
                auto got = ops.range(t.key, t.key2);
                if (verify) check_range(i, t.key, t.key2, got, oracle);
                break;
            }
            default:
                throw UsageError("unknown trace op");
        }
        rep.op_counts[t.op] += 1;
        rep.op_sim_us[t.op] += dev.stats().simulated_time_us - before;
    }
    auto t1 = std::chrono::steady_clock::now();
    rep.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    rep.sim_device_us = dev.stats().simulated_time_us - sim0;
    rep.pages_read = dev.stats().pages_read;
    rep.pages_written = dev.stats().pages_written;
    rep.read_batches = dev.stats().read_batches;
    rep.write_batches = dev.stats().write_batches;
    if (verify) {
        // Whole-tree audit: the final logical content must equal the map.
        auto want = oracle.range(0, ~0ull);
        auto got = ops.scan_all();
        if (got.size() != want.size()) {
            throw VerifyError("final state differs: " + std::to_string(got.size()) + " vs " +
                              std::to_string(want.size()) + " records");
        }
        for (std::size_t k = 0; k < got.size(); ++k) {
            if (!(got[k] == want[k])) {
                throw VerifyError("final state diverges at key " + std::to_string(want[k].key));
            }
        }
    }
    return rep;
}

}  // namespace

RunReport replay(BTree& tree, Device& dev, const std::vector<TraceRecord>& trace,
                 const std::vector<Record>& preloaded, bool verify) {
    struct Ops {
        BTree& t;
        std::optional<std::uint64_t> search(std::uint64_t k) { return t.search(k); }
        void insert(const Record& r) { t.insert(r); }
        void erase(std::uint64_t k) { t.erase(k); }
        void update(const Record& r) { t.update(r); }
        std::vector<Record> range(std::uint64_t lo, std::uint64_t hi) {
            return t.range_search_legacy(lo, hi);
        }
        std::vector<Record> scan_all() { return t.range_search_legacy(0, ~0ull); }
    } ops{tree};
    auto rep = replay_impl(dev, trace, preloaded, verify, ops);
    rep.index_name = "baseline";
    return rep;
}

RunReport replay(PioBtree& tree, Device& dev, const std::vector<TraceRecord>& trace,
                 const std::vector<Record>& preloaded, bool verify) {
    struct Ops {
        PioBtree& t;
        std::optional<std::uint64_t> search(std::uint64_t k) { return t.point_search(k); }
        void insert(const Record& r) { t.pio_insert(r); }
        void erase(std::uint64_t k) { t.pio_delete(k); }
        void update(const Record& r) { t.pio_update(r); }
        std::vector<Record> range(std::uint64_t lo, std::uint64_t hi) {
            return t.prange_search(lo, hi);
        }
        std::vector<Record> scan_all() { return t.prange_search(0, ~0ull); }
    } ops{tree};
    auto rep = replay_impl(dev, trace, preloaded, verify, ops);
    rep.index_name = "pio";
    return rep;
}

std::string index_name(IndexKind k) {
    return k == IndexKind::kBaseline ? "baseline" : "pio";
}

RunReport run_experiment(const ExperimentConfig& cfg, const std::vector<TraceRecord>& trace,
                         IndexKind which, bool verify, const std::string& experiment_name) {
    Device dev = Device::make_mem(cfg.device);
    auto records = make_records(cfg.preload, cfg.domain, cfg.dense_preload, cfg.seed);
    RunReport rep;
    if (which == IndexKind::kBaseline) {
        BTree tree = BTree::create(dev, cfg.baseline, cfg.pool_pages);
        tree.bulk_load(records, cfg.fill);
        dev.reset_stats();
        rep = replay(tree, dev, trace, records, verify);
    } else {
        // The OPQ comes out of the same memory budget as the pool.
        std::size_t pool = cfg.pool_pages > cfg.pio.opq_pages ? cfg.pool_pages - cfg.pio.opq_pages : 0;
        PioBtree tree = PioBtree::create(dev, cfg.pio, pool);
        tree.bulk_load(records, cfg.fill);
        dev.reset_stats();
        rep = replay(tree, dev, trace, records, verify);
    }
    rep.experiment = experiment_name;
    return rep;
}

void write_csv(std::ostream& out, const std::vector<RunReport>& reports,
               const std::string& config_echo) {
    if (!config_echo.empty()) out << "# config: " << config_echo << "\n";
    out << "experiment,index,ops,wall_ms,sim_device_us,sim_us_per_op,pages_read,pages_written,"
           "read_batches,write_batches,n_search,n_insert,n_delete,n_update,n_range,"
           "us_search,us_insert,us_delete,us_update,us_range\n";
    auto count = [](const RunReport& r, char op) {
        auto it = r.op_counts.find(op);
        return it == r.op_counts.end() ? std::size_t{0} : it->second;
    };
    auto micros = [](const RunReport& r, char op) {
        auto it = r.op_sim_us.find(op);
        return it == r.op_sim_us.end() ? 0.0 : it->second;
    };
    for (const auto& r : reports) {
        out << r.experiment << ',' << r.index_name << ',' << r.ops << ',' << r.wall_ms << ','
            << r.sim_device_us << ',' << r.sim_us_per_op() << ',' << r.pages_read << ','
            << r.pages_written << ',' << r.read_batches << ',' << r.write_batches;
        for (char op : {'s', 'i', 'd', 'u', 'r'}) out << ',' << count(r, op);
        for (char op : {'s', 'i', 'd', 'u', 'r'}) out << ',' << micros(r, op);
        out << '\n';
    }
}

}  // namespace piodb::bench
