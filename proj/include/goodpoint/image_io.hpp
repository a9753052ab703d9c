#pragma once

#include <string>
#include <vector>

#include "goodpoint/common.hpp"

namespace goodpoint {

// Reads a PGM (P2/P5) or PPM (P3/P6) file into a single-channel image with
// intensities in [0, 1]. Color inputs are converted by Rec.601 luminance.
Image read_image(const std::string& path);

// 8-bit binary PGM.
void write_pgm(const std::string& path, const Image& img);

// 8-bit binary PPM from three channel planes (used by match visualizations).
void write_ppm(const std::string& path, const Image& r, const Image& g, const Image& b);

bool has_image_extension(const std::string& path);

// Sorted list of readable image files directly under dir.
std::vector<std::string> list_images(const std::string& dir);

}  // namespace goodpoint
