#pragma once

#include <iosfwd>

namespace psol {

/// Axis-aligned box: top-left corner (x, y) plus width and height, in pixels.
struct BoxXYWH {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double area() const { return w * h; }

    friend bool operator==(const BoxXYWH&, const BoxXYWH&) = default;
};

/// Box in unit-square coordinates relative to the image size.
struct NormalizedBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

std::ostream& operator<<(std::ostream& os, const BoxXYWH& b);
std::ostream& operator<<(std::ostream& os, const NormalizedBox& b);

/// Continuous-geometry intersection over union, in [0, 1].
double iou(const BoxXYWH& a, const BoxXYWH& b);

/// True when the box has positive extent and lies inside [0,width]x[0,height].
bool box_within(const BoxXYWH& b, double width, double height, double tol = 1e-9);

/// Divides the coordinates by the image size. Throws ValidationError when the
/// box is not inside the image.
NormalizedBox normalize_box(const BoxXYWH& box, double image_w, double image_h);

/// Scales back to pixels and clamps into the image, keeping w and h >= 1 pixel.
BoxXYWH denormalize_box(const NormalizedBox& nb, double image_w, double image_h);

/// Rescales a box from the square network input to the original image size
/// and clamps it into the image.
BoxXYWH map_box_to_image(const BoxXYWH& box, int net_input_size, int orig_w, int orig_h);

/// The whole image as a box.
inline BoxXYWH full_image_box(double w, double h) { return {0, 0, w, h}; }

} // namespace psol
