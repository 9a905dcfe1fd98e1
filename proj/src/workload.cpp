#include "piodb/workload.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

namespace piodb::bench {

void WorkloadSpec::validate() const {
    if (insert_ratio < 0.0 || insert_ratio > 1.0) throw UsageError("insert_ratio must be in [0,1]");
    if (delete_fraction < 0.0 || update_fraction < 0.0 ||
        delete_fraction + update_fraction > 1.0) {
        throw UsageError("delete/update fractions must be non-negative and sum to <= 1");
    }
    if (key_domain < 2) throw UsageError("key_domain must be >= 2");
    if (kind == WorkloadKind::kRangeSweep && range_sizes.empty()) {
        throw UsageError("range sweep needs range sizes");
    }
}

namespace {

// Present-key pool with O(1) uniform sampling and membership updates.
class KeyPool {
public:
    explicit KeyPool(const std::vector<Record>& preloaded) {
        keys_.reserve(preloaded.size());
        for (const auto& r : preloaded) {
            index_[r.key] = keys_.size();
            keys_.push_back(r.key);
        }
    }

    bool contains(std::uint64_t key) const { return index_.count(key) > 0; }
    bool empty() const { return keys_.empty(); }

    void add(std::uint64_t key) {
        index_[key] = keys_.size();
        keys_.push_back(key);
    }

    void remove(std::uint64_t key) {
        auto it = index_.find(key);
        if (it == index_.end()) return;
        std::size_t pos = it->second;
        std::uint64_t last = keys_.back();
        keys_[pos] = last;
        index_[last] = pos;
        keys_.pop_back();
        index_.erase(it);
    }

    template <typename Rng>
    std::uint64_t sample(Rng& rng) const {
        std::uniform_int_distribution<std::size_t> dist(0, keys_.size() - 1);
        return keys_[dist(rng)];
    }

private:
    std::vector<std::uint64_t> keys_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace

std::vector<TraceRecord> generate(const WorkloadSpec& spec, const std::vector<Record>& preloaded) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::uint64_t> any_key(1, spec.key_domain);
    std::vector<TraceRecord> trace;

    if (spec.kind == WorkloadKind::kRangeSweep) {
        trace.reserve(spec.range_sizes.size() * spec.ranges_per_size);
        for (std::uint64_t size : spec.range_sizes) {
            std::uint64_t hi_start = spec.key_domain > size ? spec.key_domain - size : 1;
            std::uniform_int_distribution<std::uint64_t> start_dist(1, hi_start);
            for (std::size_t i = 0; i < spec.ranges_per_size; ++i) {
                std::uint64_t start = start_dist(rng);
                trace.push_back({'r', start, start + size});
            }
        }
        return trace;
    }

    KeyPool pool(preloaded);
    trace.reserve(spec.op_count);
    for (std::size_t i = 0; i < spec.op_count; ++i) {
        char op;
        switch (spec.kind) {
            case WorkloadKind::kSearchOnly:
                op = 's';
                break;
            case WorkloadKind::kInsertOnly:
                op = 'i';
                break;
            default: {
                if (coin(rng) < spec.insert_ratio) {
                    op = 'i';
                } else {
                    double f = coin(rng);
                    op = f < spec.delete_fraction              ? 'd'
                         : f < spec.delete_fraction + spec.update_fraction ? 'u'
                                                                           : 's';
                }
            }
        }
        switch (op) {
            case 'i': {
                // Fresh key: keeps insert semantics identical across both
                // trees and the reference map.
                std::uint64_t key;
                do {
                    key = any_key(rng);
                } while (pool.contains(key));
                pool.add(key);
                trace.push_back({'i', key, 0});
                break;
            }
            case 'd': {
                std::uint64_t key = (!pool.empty() && coin(rng) < 0.8) ? pool.sample(rng) : any_key(rng);
                pool.remove(key);
                trace.push_back({'d', key, 0});
                break;
            }
            case 'u': {
                std::uint64_t key = (!pool.empty() && coin(rng) < 0.8) ? pool.sample(rng) : any_key(rng);
                trace.push_back({'u', key, 0});
                break;
            }
            default:
                trace.push_back({'s', any_key(rng), 0});
        }
    }
    return trace;
}

void write_trace(const std::string& path, const std::vector<TraceRecord>& trace) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot open trace for writing: " + path);
    for (const auto& t : trace) {
        out << t.op << ' ' << t.key;
        if (t.op == 'r') out << ' ' << t.key2;
        out << '\n';
    }
}

std::vector<TraceRecord> read_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open trace: " + path);
    std::vector<TraceRecord> trace;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        TraceRecord t;
        if (!(ss >> t.op >> t.key)) throw UsageError("bad trace line " + std::to_string(lineno));
        if (t.op == 'r') {
            if (!(ss >> t.key2)) throw UsageError("range trace line missing end key");
            if (t.key > t.key2) throw UsageError("range start exceeds end at line " + std::to_string(lineno));
        } else if (t.op != 's' && t.op != 'i' && t.op != 'd' && t.op != 'u') {
            throw UsageError("unknown trace op at line " + std::to_string(lineno));
        }
        trace.push_back(t);
    }
    return trace;
}

std::vector<Record> make_records(std::size_t n, std::uint64_t domain, bool dense,
                                 std::uint64_t seed) {
    if (n > domain) throw UsageError("more keys than the domain holds");
    std::vector<Record> out;
    out.reserve(n);
    if (dense) {
        for (std::size_t i = 0; i < n; ++i) out.push_back({i + 1, (i + 1) * 10});
        return out;
    }
    // Sparse distinct draw: Floyd's sampling over [1, domain].
    std::mt19937_64 rng(seed);
    std::unordered_map<std::uint64_t, std::uint64_t> swap;
    std::vector<std::uint64_t> keys;
    keys.reserve(n);
    for (std::uint64_t j = domain - n; j < domain; ++j) {
        std::uniform_int_distribution<std::uint64_t> dist(0, j);
        std::uint64_t t = dist(rng);
        auto hit = swap.find(t);
        std::uint64_t pick = (hit == swap.end()) ? t : hit->second;
        auto jt = swap.find(j);
        swap[t] = (jt == swap.end()) ? j : jt->second;
        keys.push_back(pick + 1);
    }
    std::sort(keys.begin(), keys.end());
    for (std::uint64_t k : keys) out.push_back({k, k * 10});
    return out;
}

}  // namespace piodb::bench
