#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "piodb/pages.hpp"

namespace piodb::bench {

enum class WorkloadKind { kSearchOnly, kInsertOnly, kMixed, kRangeSweep };

struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::kMixed;
    std::size_t op_count = 100000;
    std::uint64_t key_domain = 1000000;  // keys drawn from [1, key_domain]
    double insert_ratio = 0.5;           // Ri for mixed workloads
    double delete_fraction = 0.0;        // share of non-insert ops that delete
    double update_fraction = 0.0;        // share of non-insert ops that update
    std::vector<std::uint64_t> range_sizes{16, 128, 1024, 8192};  // 2^4..2^13, desk scale
    std::size_t ranges_per_size = 100;
    std::uint64_t seed = 42;

    void validate() const;
};

// Line-oriented trace element: "<op> <key> [<key2>]".
struct TraceRecord {
    char op = 's';  // s|i|d|u|r
    std::uint64_t key = 0;
    std::uint64_t key2 = 0;  // range end, r only

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// Deterministic stream for a seed. Inserts draw keys currently absent
// (tracking the preloaded set and the stream's own effects), so replay
// semantics match a plain map; deletes and updates prefer present keys.
std::vector<TraceRecord> generate(const WorkloadSpec& spec, const std::vector<Record>& preloaded);

void write_trace(const std::string& path, const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> read_trace(const std::string& path);

// Sorted bulk-load input: n distinct keys over [1, domain] (dense: 1..n).
std::vector<Record> make_records(std::size_t n, std::uint64_t domain, bool dense,
                                 std::uint64_t seed);

}  // namespace piodb::bench
