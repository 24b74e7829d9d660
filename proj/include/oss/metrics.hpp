#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "oss/volume.hpp"

namespace oss {

struct MetricReport {
    double iou = 0.0;
    double dice = 0.0;
    double disagreement_fraction = 0.0;
    std::size_t count_a = 0;         // |o|
    std::size_t count_b = 0;         // |o_hat|
    std::size_t count_inter = 0;     // |o intersect o_hat|
    std::size_t count_union = 0;     // |o union o_hat|
};

// Overlap metrics over binary sequences. Both-empty sets score 1 (perfect
// agreement on emptiness).
double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);
double dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// Fraction of positions where the sequences differ.
double disagreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

double iou(const Mask& a, const Mask& b);
double dice(const Mask& a, const Mask& b);
double disagreement(const Mask& a, const Mask& b);

MetricReport metric_report(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);
MetricReport metric_report(const Mask& a, const Mask& b);

}  // namespace oss
