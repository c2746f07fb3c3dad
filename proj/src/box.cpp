#include "psol/box.hpp"

#include "psol/error.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

namespace psol {

std::ostream& operator<<(std::ostream& os, const BoxXYWH& b)
{
    return os << "(" << b.x << ", " << b.y << ", " << b.w << ", " << b.h << ")";
}

std::ostream& operator<<(std::ostream& os, const NormalizedBox& b)
{
    return os << "(" << b.x << ", " << b.y << ", " << b.w << ", " << b.h << ")";
}

double iou(const BoxXYWH& a, const BoxXYWH& b)
{
    const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0)
        return 0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

bool box_within(const BoxXYWH& b, double width, double height, double tol)
{
    return b.w > 0 && b.h > 0 && b.x >= -tol && b.y >= -tol && b.right() <= width + tol &&
           b.bottom() <= height + tol;
}

NormalizedBox normalize_box(const BoxXYWH& box, double image_w, double image_h)
{
    if (image_w <= 0 || image_h <= 0)
        throw ValidationError("normalize_box: image size must be positive");
    if (!box_within(box, image_w, image_h, 1e-6)) {
        std::ostringstream msg;
        msg << "normalize_box: box " << box << " outside image " << image_w << "x" << image_h;
        throw ValidationError(msg.str());
    }
    NormalizedBox nb{box.x / image_w, box.y / image_h, box.w / image_w, box.h / image_h};
    nb.x = std::clamp(nb.x, 0.0, 1.0);
    nb.y = std::clamp(nb.y, 0.0, 1.0);
    nb.w = std::clamp(nb.w, 0.0, 1.0);
    nb.h = std::clamp(nb.h, 0.0, 1.0);
    return nb;
}

namespace {

// Clamp one axis: start in [0, extent - 1], length in [1, extent - start].
void clamp_axis(double& start, double& len, double extent)
{
    constexpr double min_len = 1.0;
    const double lo_max = std::max(0.0, extent - min_len);
    start = std::clamp(start, 0.0, lo_max);
    len = std::clamp(len, std::min(min_len, extent), extent - start);
}

} // namespace

BoxXYWH denormalize_box(const NormalizedBox& nb, double image_w, double image_h)
{
    BoxXYWH b{nb.x * image_w, nb.y * image_h, nb.w * image_w, nb.h * image_h};
    clamp_axis(b.x, b.w, image_w);
    clamp_axis(b.y, b.h, image_h);
    return b;
}

BoxXYWH map_box_to_image(const BoxXYWH& box, int net_input_size, int orig_w, int orig_h)
{
    if (net_input_size <= 0 || orig_w <= 0 || orig_h <= 0)
        throw ValidationError("map_box_to_image: sizes must be positive");
    const double net = net_input_size;
    if (!box_within(box, net, net, 1e-6)) {
        std::ostringstream msg;
        msg << "map_box_to_image: box " << box << " outside the " << net_input_size
            << "x" << net_input_size << " network input";
        throw ValidationError(msg.str());
    }
    const double sx = orig_w / net;
    const double sy = orig_h / net;
    BoxXYWH out{box.x * sx, box.y * sy, box.w * sx, box.h * sy};
    out.x = std::clamp(out.x, 0.0, double(orig_w));
    out.y = std::clamp(out.y, 0.0, double(orig_h));
    out.w = std::min(out.w, orig_w - out.x);
    out.h = std::min(out.h, orig_h - out.y);
    return out;
}

} // namespace psol
