#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "piodb/btree.hpp"
#include "piodb/pio_btree.hpp"
#include "piodb/workload.hpp"

namespace piodb::bench {

struct VerifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class IndexKind { kBaseline, kPio };

struct ExperimentConfig {
    DeviceConfig device;
    std::size_t preload = 100000;
    std::uint64_t domain = 1000000;
    bool dense_preload = false;
    double fill = 0.7;
    std::size_t pool_pages = 1024;  // M; the PIO tree's pool gets M - O
    PioConfig pio;
    TreeConfig baseline;
    std::uint64_t seed = 42;
};

struct RunReport {
    std::string experiment;
    std::string index_name;
    std::size_t ops = 0;
    double wall_ms = 0;
    double sim_device_us = 0;
    std::uint64_t pages_read = 0;
    std::uint64_t pages_written = 0;
    std::uint64_t read_batches = 0;
    std::uint64_t write_batches = 0;
    std::map<char, std::size_t> op_counts;
    std::map<char, double> op_sim_us;

    double sim_us_per_op() const { return ops ? sim_device_us / static_cast<double>(ops) : 0.0; }
};

// Replays a trace against an open tree, attributing simulated device time to
// op types. With verify on, every search/range result is checked against a
// reference map seeded with the preloaded records, and so is the final tree
// content; the first mismatch aborts with a diff.
RunReport replay(BTree& tree, Device& dev, const std::vector<TraceRecord>& trace,
                 const std::vector<Record>& preloaded, bool verify);
RunReport replay(PioBtree& tree, Device& dev, const std::vector<TraceRecord>& trace,
                 const std::vector<Record>& preloaded, bool verify);

// Fresh in-memory device, bulk load, replay.
RunReport run_experiment(const ExperimentConfig& cfg, const std::vector<TraceRecord>& trace,
                         IndexKind which, bool verify, const std::string& experiment_name);

// One row per report; a "# config:" comment line precedes the header.
void write_csv(std::ostream& out, const std::vector<RunReport>& reports,
               const std::string& config_echo);

std::string index_name(IndexKind k);

}  // namespace piodb::bench
