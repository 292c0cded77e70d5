#include "mosformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <unordered_map>

namespace mosf {

double dsc(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g) {
    if (p.size() != g.size()) throw InputError("dsc: masks live on different grids");
    std::size_t np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool bp = p[i] != 0, bg = g[i] != 0;
        np += bp;
        ng += bg;
        inter += bp && bg;
    }
    if (np + ng == 0) return 1.0;  // convention: two empty sets coincide
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InputError("percentile: empty sample");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace {

// Uniform bucket grid over the target set; query expands rings of cells until
// the best squared distance cannot improve.
class PointGrid {
public:
    explicit PointGrid(const std::vector<Point3>& pts) : pts_(pts) {
        for (int a = 0; a < 3; ++a) {
            lo_[a] = std::numeric_limits<double>::infinity();
            hi_[a] = -std::numeric_limits<double>::infinity();
        }
        for (const auto& p : pts) {
            for (int a = 0; a < 3; ++a) {
                lo_[a] = std::min(lo_[a], p[a]);
                hi_[a] = std::max(hi_[a], p[a]);
            }
        }
        const double target_cells = std::cbrt(static_cast<double>(pts.size()) / 2.0 + 1.0);
        double max_extent = 1e-9;
        for (int a = 0; a < 3; ++a) max_extent = std::max(max_extent, hi_[a] - lo_[a]);
        cell_ = std::max(max_extent / std::max(1.0, target_cells), 1e-9);
        for (int a = 0; a < 3; ++a)
            dims_[a] = std::max<std::ptrdiff_t>(1, static_cast<std::ptrdiff_t>((hi_[a] - lo_[a]) / cell_) + 1);
        buckets_.resize(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]));
        for (std::size_t i = 0; i < pts.size(); ++i) buckets_[bucket_of(pts[i])].push_back(i);
    }

    double nearest_sq(const Point3& q) const {
        std::array<std::ptrdiff_t, 3> c = cell_of(q);
        double best = std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t ring = 0;; ++ring) {
            // Once a point was found, one extra ring guarantees correctness.
            const double ring_min = (static_cast<double>(ring) - 1.0) * cell_;
            if (best < std::numeric_limits<double>::infinity() && ring_min * ring_min > best) break;
            bool any_cell = false;
            for (std::ptrdiff_t dz = -ring; dz <= ring; ++dz)
                for (std::ptrdiff_t dy = -ring; dy <= ring; ++dy)
                    for (std::ptrdiff_t dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const std::ptrdiff_t by = c[0] + dy, bx = c[1] + dx, bz = c[2] + dz;
                        if (by < 0 || bx < 0 || bz < 0 || by >= dims_[0] || bx >= dims_[1] || bz >= dims_[2]) continue;
                        any_cell = true;
                        const auto& bucket = buckets_[static_cast<std::size_t>((bz * dims_[0] + by) * dims_[1] + bx)];
                        for (std::size_t i : bucket) {
                            const auto& p = pts_[i];
                            const double d0 = p[0] - q[0], d1 = p[1] - q[1], d2 = p[2] - q[2];
                            best = std::min(best, d0 * d0 + d1 * d1 + d2 * d2);
                        }
                    }
            if (!any_cell && ring > dims_[0] + dims_[1] + dims_[2]) break;  // swept past the whole grid
        }
        return best;
    }

private:
    std::array<std::ptrdiff_t, 3> cell_of(const Point3& p) const {
        std::array<std::ptrdiff_t, 3> c;
        for (int a = 0; a < 3; ++a) {
            auto v = static_cast<std::ptrdiff_t>((p[a] - lo_[a]) / cell_);
            c[a] = std::clamp<std::ptrdiff_t>(v, 0, dims_[a] - 1);
        }
        return c;
    }
    std::size_t bucket_of(const Point3& p) const {
        const auto c = cell_of(p);
        return static_cast<std::size_t>((c[2] * dims_[0] + c[0]) * dims_[1] + c[1]);
    }

    const std::vector<Point3>& pts_;
    std::array<double, 3> lo_{}, hi_{};
    std::array<std::ptrdiff_t, 3> dims_{};
    double cell_ = 1.0;
    std::vector<std::vector<std::size_t>> buckets_;
};

}  // namespace

std::vector<double> nearest_distances(const std::vector<Point3>& from, const std::vector<Point3>& to) {
    if (to.empty()) throw InputError("nearest_distances: empty target set");
    PointGrid grid(to);
    std::vector<double> out(from.size());
    for (std::size_t i = 0; i < from.size(); ++i) out[i] = std::sqrt(grid.nearest_sq(from[i]));
    return out;
}

double hd95(const std::vector<Point3>& p, const std::vector<Point3>& g) {
    if (p.empty() || g.empty()) throw InputError("hd95: undefined for empty boundary sets");
    const double d_pg = percentile(nearest_distances(p, g), 95.0);
    const double d_gp = percentile(nearest_distances(g, p), 95.0);
    return std::max(d_pg, d_gp);
}

std::vector<Point3> boundary_points(const LabelVolume& labels, std::uint8_t cls) {
    std::vector<Point3> pts;
    const auto h = static_cast<std::ptrdiff_t>(labels.h);
    const auto w = static_cast<std::ptrdiff_t>(labels.w);
    const auto d = static_cast<std::ptrdiff_t>(labels.d);
    auto inside = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::ptrdiff_t z) {
        if (y < 0 || x < 0 || z < 0 || y >= h || x >= w || z >= d) return false;
        return labels.v[static_cast<std::size_t>((z * h + y) * w + x)] == cls;
    };
    for (std::ptrdiff_t z = 0; z < d; ++z)
        for (std::ptrdiff_t y = 0; y < h; ++y)
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                if (!inside(y, x, z)) continue;
                const bool surface = !inside(y - 1, x, z) || !inside(y + 1, x, z) || !inside(y, x - 1, z) ||
                                     !inside(y, x + 1, z) || !inside(y, x, z - 1) || !inside(y, x, z + 1);
                if (surface)
                    pts.push_back({static_cast<double>(y) * labels.spacing[0],
                                   static_cast<double>(x) * labels.spacing[1],
                                   static_cast<double>(z) * labels.spacing[2]});
            }
    return pts;
}

double MetricReport::mean_dsc_percent() const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : rows) {
        s += r.dsc_percent;
        ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

double MetricReport::mean_hd95() const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.hd95_defined) {
            s += r.hd95_value;
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

void MetricReport::write_csv(std::ostream& os) const {
    os << "case_id,class_id,dsc_percent,hd95,undefined_flag\n";
    os.precision(10);
    for (const auto& r : rows) {
        os << r.case_id << ',' << r.class_id << ',' << r.dsc_percent << ',';
        if (r.hd95_defined)
            os << r.hd95_value;
        else
            os << "nan";
        os << ',' << (r.hd95_defined ? 0 : 1) << '\n';
    }
    os << "mean,-1," << mean_dsc_percent() << ',' << mean_hd95() << ",0\n";
}

std::vector<MetricRow> evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& gt,
                                     std::uint32_t num_classes) {
    if (pred.h != gt.h || pred.w != gt.w || pred.d != gt.d) throw InputError("evaluate_case: grid mismatch");
    std::vector<MetricRow> rows;
    const std::size_t n = gt.v.size();
    for (std::uint32_t cls = 1; cls < num_classes; ++cls) {
        std::vector<std::uint8_t> pm(n), gm(n);
        for (std::size_t i = 0; i < n; ++i) {
            pm[i] = pred.v[i] == cls;
            gm[i] = gt.v[i] == cls;
        }
        MetricRow row;
        row.case_id = case_id;
        row.class_id = static_cast<int>(cls);
        row.dsc_percent = 100.0 * dsc(pm, gm);
        const auto bp = boundary_points(pred, static_cast<std::uint8_t>(cls));
        const auto bg = boundary_points(gt, static_cast<std::uint8_t>(cls));
        if (!bp.empty() && !bg.empty()) {
            row.hd95_value = hd95(bp, bg);
            row.hd95_defined = true;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace mosf
