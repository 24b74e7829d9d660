#include "oss/metrics.hpp"

#include "oss/errors.hpp"

namespace oss {

MetricReport metric_report(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw ShapeError("metric inputs differ in length");
    MetricReport r;
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool av = a[i] != 0, bv = b[i] != 0;
        r.count_a += av;
        r.count_b += bv;
        r.count_inter += av && bv;
        r.count_union += av || bv;
        diff += av != bv;
    }
    r.iou = r.count_union == 0 ? 1.0
                               : static_cast<double>(r.count_inter) / static_cast<double>(r.count_union);
    r.dice = (r.count_a + r.count_b) == 0
                 ? 1.0
                 : 2.0 * static_cast<double>(r.count_inter) /
                       static_cast<double>(r.count_a + r.count_b);
    r.disagreement_fraction =
        a.empty() ? 0.0 : static_cast<double>(diff) / static_cast<double>(a.size());
    return r;
}

MetricReport metric_report(const Mask& a, const Mask& b) {
    if (a.d != b.d || a.h != b.h || a.w != b.w) throw ShapeError("mask shapes differ");
    return metric_report(a.data, b.data);
}

double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    return metric_report(a, b).iou;
}
double dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    return metric_report(a, b).dice;
}
double disagreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    return metric_report(a, b).disagreement_fraction;
}
double iou(const Mask& a, const Mask& b) { return metric_report(a, b).iou; }
double dice(const Mask& a, const Mask& b) { return metric_report(a, b).dice; }
double disagreement(const Mask& a, const Mask& b) { return metric_report(a, b).disagreement_fraction; }

}  // namespace oss
