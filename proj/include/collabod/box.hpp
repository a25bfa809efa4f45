#pragma once

#include <algorithm>

namespace collabod {

// Corner-form box in pixels.
struct Box {
    float x1 = 0.0f;
    float y1 = 0.0f;
    float x2 = 0.0f;
    float y2 = 0.0f;

    double width() const { return static_cast<double>(x2) - x1; }
    double height() const { return static_cast<double>(y2) - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
};

// Intersection over union; 0 when the union is empty.
inline double overlap_iou(const Box& a, const Box& b) {
    const double iw = std::min<double>(a.x2, b.x2) - std::max<double>(a.x1, b.x1);
    const double ih = std::min<double>(a.y2, b.y2) - std::max<double>(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace collabod
