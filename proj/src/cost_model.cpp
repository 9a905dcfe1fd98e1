#include "piodb/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace piodb::cost {

void CostProfile::validate() const {
    if (entries < 1) throw UsageError("N must be >= 1");
    if (avg_entries < 2) throw UsageError("F' must be >= 2");
    if (read_us <= 0 || write_us <= 0) throw UsageError("latencies must be positive");
    if (std::abs(search_ratio + insert_ratio - 1.0) > 1e-9) throw UsageError("Rs + Ri must equal 1");
    if (leaf_pages < 1) throw UsageError("L must be >= 1");
    if (bcnt < 1) throw UsageError("bcnt must be >= 1");
}

double tree_height(double entries, double avg_entries) {
    if (entries < 1) throw UsageError("N must be >= 1");
    if (avg_entries < 2) throw UsageError("F' must be >= 2");
    return std::log2(entries) / std::log2(avg_entries);
}

double utility_cost(std::uint32_t node_pages, double entries_per_page, double node_read_us) {
    double entries = entries_per_page * node_pages;
    if (entries < 2) throw UsageError("node must hold at least 2 entries");
    if (node_read_us <= 0) throw UsageError("read time must be positive");
    return std::log2(entries) / node_read_us;
}

double cost_bplus(const CostProfile& p) {
    p.validate();
    return p.height * p.read_us + p.insert_ratio * p.write_us;
}

static double fractional(double x) {
    return x - std::floor(x);
}

// Shared read-term structure of the buffered models; zero when the buffer
// covers the whole tree (eta <= 0).
static double buffered_read_pages(double eta, double f_prime, EtaForm form) {
    if (eta <= 0) return 0.0;
    double cvrg = std::pow(f_prime, -fractional(eta));
    double c = std::ceil(eta);
    double v = (form == EtaForm::kCanonical) ? c + (1.0 - cvrg) : c - cvrg;
    return std::max(0.0, v);
}

BufferGeometry buffer_geometry(double entries, double avg_entries, double buffer_pages,
                               EtaForm form) {
    if (buffer_pages < 1) throw UsageError("M must be >= 1");
    BufferGeometry g;
    double h = tree_height(entries, avg_entries);
    g.last_level = std::log2(buffer_pages) / std::log2(avg_entries);
    g.h_b = g.last_level + 1.0;
    double d = h - g.h_b;
    g.eta = d;
    if (d <= 0) {
        g.h_nb = 0;
        g.coverage = 1.0;
        return g;
    }
    // Rounding tracks the adopted read-term form so Eq.-(11)-via-geometry
    // agrees with the direct eta route for either form.
    g.h_nb = (form == EtaForm::kCanonical) ? std::ceil(d) : std::ceil(d) - 1.0;
    g.coverage = std::pow(avg_entries, -fractional(d));
    return g;
}

double cost_bplus_buffered(const CostProfile& p, EtaForm form) {
    p.validate();
    if (p.buffer_pages < 1) throw UsageError("M must be >= 1");
    double eta = std::log2(p.entries / p.buffer_pages) / std::log2(p.avg_entries) - 1.0;
    return buffered_read_pages(eta, p.avg_entries, form) * p.read_us + p.insert_ratio * p.write_us;
}

double cost_bplus_buffered_via_geometry(const CostProfile& p, EtaForm form) {
    p.validate();
    BufferGeometry g = buffer_geometry(p.entries, p.avg_entries, p.buffer_pages, form);
    double read = (g.eta <= 0) ? 0.0 : std::max(0.0, g.h_nb + (1.0 - g.coverage));
    return read * p.read_us + p.insert_ratio * p.write_us;
}

double g_of_level(double level, const CostProfile& p) {
    p.validate();
    double opq_entries = p.opq_pages * p.avg_entries / p.utilization;  // O * F' / U
    double nodes_at_level = p.entries / (std::pow(p.avg_entries, p.height - level) * p.leaf_pages);
    double raw = opq_entries / nodes_at_level;
    return std::clamp(raw, 1.0, p.bcnt);
}

double cost_pio(const CostProfile& p) {
    p.validate();
    double search = (p.height - 1.0) * p.read_us + p.leaf_read_us;
    double internal = 0.0;
    for (double level = 0; level <= p.height - 2.0 + 1e-9; level += 1.0) {
        internal += 1.0 / g_of_level(level, p);
    }
    double insert = internal * p.batched_read_us +
                    (p.batched_read_us + p.batched_write_us) / g_of_level(p.height - 1.0, p);
    return p.search_ratio * search + p.insert_ratio * insert;
}

double cost_pio_buffered(const CostProfile& p, EtaForm form) {
    p.validate();
    if (p.buffer_pages <= p.opq_pages) throw UsageError("M must exceed O");
    double m_eff = p.buffer_pages - p.opq_pages;
    double eta = std::log2(p.entries / (p.leaf_pages * m_eff)) / std::log2(p.avg_entries) - 1.0;
    double search = buffered_read_pages(eta, p.avg_entries, form) * p.read_us + p.leaf_read_us;

    double internal = 0.0;
    if (eta > 0) {
        for (double level = std::ceil(eta); level <= p.height - 2.0 + 1e-9; level += 1.0) {
            internal += 1.0 / g_of_level(level, p);
        }
        double last_level = std::log2(m_eff) / std::log2(p.avg_entries) - 1.0;
        internal -= std::pow(p.avg_entries, -fractional(eta)) / g_of_level(last_level, p);
        internal = std::max(0.0, internal);
    }
    double insert = internal * p.batched_read_us +
                    (p.batched_read_us + p.batched_write_us) / g_of_level(p.height - 1.0, p);
    return p.search_ratio * search + p.insert_ratio * insert;
}

// ---------------------------------------------------------------------------

std::string Calibration::to_text() const {
    std::ostringstream out;
    out << "read_us=" << read_us << "\n"
        << "write_us=" << write_us << "\n"
        << "batched_read_us=" << batched_read_us << "\n"
        << "batched_write_us=" << batched_write_us << "\n";
    for (const auto& [l, us] : leaf_read_us) out << "leaf_read_us." << l << "=" << us << "\n";
    for (const auto& [l, us] : leaf_write_us) out << "leaf_write_us." << l << "=" << us << "\n";
    return out.str();
}

Calibration Calibration::from_text(const std::string& text) {
    Calibration cal;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("bad calibration line: " + line);
        std::string key = line.substr(0, eq);
        double value = std::stod(line.substr(eq + 1));
        if (key == "read_us") cal.read_us = value;
        else if (key == "write_us") cal.write_us = value;
        else if (key == "batched_read_us") cal.batched_read_us = value;
        else if (key == "batched_write_us") cal.batched_write_us = value;
        else if (key.rfind("leaf_read_us.", 0) == 0) cal.leaf_read_us[std::stoi(key.substr(13))] = value;
        else if (key.rfind("leaf_write_us.", 0) == 0) cal.leaf_write_us[std::stoi(key.substr(14))] = value;
        else throw UsageError("unknown calibration key: " + key);
    }
    return cal;
}

Calibration calibrate(Device& dev, std::uint32_t pio_max) {
    Calibration cal;
    const std::vector<int> sizes{1, 2, 4, 8, 16};
    PageId scratch = dev.alloc_extent(16);
    PageBuffer zero(dev.page_size(), 0);
    auto elapsed = [&](auto&& fn) {
        double before = dev.stats().simulated_time_us;
        fn();
        return dev.stats().simulated_time_us - before;
    };

    cal.read_us = elapsed([&] { dev.psync_read(std::vector<PageId>{scratch}, 1); });
    cal.write_us = elapsed([&] { dev.psync_write(scratch, zero); });

    // Amortized per-page latency with pio_max outstanding single-page I/Os.
    PageId batch_base = dev.alloc_extent(pio_max);
    std::vector<PageId> batch_ids(pio_max);
    for (std::uint32_t i = 0; i < pio_max; ++i) batch_ids[i] = batch_base + i;
    cal.batched_read_us = elapsed([&] { dev.psync_read(batch_ids, 1); }) / pio_max;
    std::vector<std::pair<PageId, PageBuffer>> batch_writes;
    for (PageId id : batch_ids) batch_writes.emplace_back(id, zero);
    cal.batched_write_us = elapsed([&] { dev.psync_write(batch_writes, 1); }) / pio_max;

    for (int l : sizes) {
        std::vector<PageId> ids(l);
        for (int i = 0; i < l; ++i) ids[i] = scratch + i;
        cal.leaf_read_us[l] = elapsed([&] { dev.psync_read(ids, l); });
        std::vector<std::pair<PageId, PageBuffer>> ws;
        for (PageId id : ids) ws.emplace_back(id, zero);
        cal.leaf_write_us[l] = elapsed([&] { dev.psync_write(ws, l); });
    }

    dev.free_extent(scratch, 16);
    dev.free_extent(batch_base, pio_max);
    dev.reset_stats();
    return cal;
}

TuneResult tune(double search_ratio, double insert_ratio, const Calibration& cal, double entries,
                double buffer_pages, double entries_per_page, double utilization, double bcnt,
                EtaForm form) {
    if (std::abs(search_ratio + insert_ratio - 1.0) > 1e-9) throw UsageError("Rs + Ri must equal 1");
    if (buffer_pages < 2) throw UsageError("buffer too small to tune");
    const std::vector<std::uint32_t> leaf_grid{1, 2, 4, 8, 16};

    TuneResult result;
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::uint32_t l : leaf_grid) {
        for (std::uint32_t o = 1; o <= buffer_pages / 2; o *= 2) {
            CostProfile p;
            p.entries = entries;
            p.utilization = utilization;
            p.avg_entries = entries_per_page * utilization;
            p.leaf_pages = l;
            p.height = tree_height(entries / l, p.avg_entries);
            p.read_us = cal.read_us;
            p.write_us = cal.write_us;
            p.leaf_read_us = cal.leaf_read_us.at(static_cast<int>(l));
            p.batched_read_us = cal.batched_read_us;
            p.batched_write_us = cal.batched_write_us;
            p.search_ratio = search_ratio;
            p.insert_ratio = insert_ratio;
            p.buffer_pages = buffer_pages;
            p.opq_pages = o;
            p.bcnt = bcnt;
            double c = cost_pio_buffered(p, form);
            if (c < best) {
                best = c;
                result.leaf_pages = l;
                result.opq_pages = o;
                result.pio_cost_us = c;
                any = true;
            }
        }
    }
    if (!any) throw UsageError("infeasible tuning grid");

    double best_base = std::numeric_limits<double>::infinity();
    for (std::uint32_t s : leaf_grid) {
        CostProfile p;
        p.entries = entries;
        p.utilization = utilization;
        p.avg_entries = entries_per_page * s * utilization;
        if (p.avg_entries < 2) continue;
        p.leaf_pages = 1;
        p.height = tree_height(entries, p.avg_entries);
        p.read_us = cal.leaf_read_us.at(static_cast<int>(s));
        p.write_us = cal.leaf_write_us.at(static_cast<int>(s));
        p.leaf_read_us = p.read_us;
        p.batched_read_us = cal.batched_read_us;
        p.batched_write_us = cal.batched_write_us;
        p.search_ratio = search_ratio;
        p.insert_ratio = insert_ratio;
        p.buffer_pages = std::max(1.0, buffer_pages / s);  // M counts pages, nodes span s
        p.opq_pages = 0;
        p.bcnt = bcnt;
        double c = cost_bplus_buffered(p, form);
        if (c < best_base) {
            best_base = c;
            result.baseline_node_pages = s;
            result.baseline_cost_us = c;
        }
    }
    return result;
}

}  // namespace piodb::cost
