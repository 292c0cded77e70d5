#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mosformer/volume_io.hpp"

namespace mosf {

using Point3 = std::array<double, 3>;  // physical coordinates (y, x, z scaled by spacing)

// 2|P^G| / (|P|+|G|) on boolean masks of a shared grid; 1 when both empty.
double dsc(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g);

// Symmetric 95th-percentile boundary distance in physical units. Percentile
// is linearly interpolated between order statistics. Throws InputError when
// either set is empty (callers use the undefined flag instead).
double hd95(const std::vector<Point3>& p, const std::vector<Point3>& g);

// Directed distances from each point of `from` to the nearest point of `to`,
// accelerated by a uniform spatial grid.
std::vector<double> nearest_distances(const std::vector<Point3>& from, const std::vector<Point3>& to);

// Linear-interpolation percentile, q in [0,100].
double percentile(std::vector<double> values, double q);

// Surface voxels of one class: 6-connectivity in 3D (volume border counts as
// outside), scaled to physical coordinates by spacing.
std::vector<Point3> boundary_points(const LabelVolume& labels, std::uint8_t cls);

struct MetricRow {
    std::string case_id;
    int class_id = 0;
    double dsc_percent = 0.0;
    double hd95_value = 0.0;
    bool hd95_defined = false;
};

struct MetricReport {
    std::vector<MetricRow> rows;

    // Organ classes only (class 0 excluded upstream).
    double mean_dsc_percent() const;
    double mean_hd95() const;  // over defined rows only
    void write_csv(std::ostream& os) const;
};

// Per-class rows for classes 1..C0-1 of one case.
std::vector<MetricRow> evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& gt,
                                     std::uint32_t num_classes);

}  // namespace mosf
