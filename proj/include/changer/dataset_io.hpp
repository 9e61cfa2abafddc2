#pragma once

#include <string>
#include <vector>

#include "changer/train.hpp"

namespace changer {

/// Reads <dir>/A, <dir>/B and <dir>/label: same-named 8-bit PNGs. Images are
/// scaled to [0, 1]; label pixels > 127 count as change. Files are visited in
/// sorted name order.
std::vector<Sample> load_png_dataset(const std::string& dir);

/// Writes samples in the layout load_png_dataset reads (labels as {0, 255}).
void save_png_dataset(const std::string& dir, const std::vector<Sample>& samples);

} // namespace changer
