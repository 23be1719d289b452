#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcmdpo {

// H x W x C array of unit-interval intensities, row-major with channels
// innermost. The visual modality.
struct ImageTensor {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<double> data;

  static ImageTensor filled(int h, int w, int c, double value);

  double at(int y, int x, int ch) const {
    return data[static_cast<size_t>((y * w + x) * c + ch)];
  }
  double& at(int y, int x, int ch) {
    return data[static_cast<size_t>((y * w + x) * c + ch)];
  }

  size_t numel() const { return data.size(); }
  void validate() const;  // positive dims, matching size, values in [0,1]
  uint64_t fingerprint() const;

  bool operator==(const ImageTensor&) const = default;
};

// Mean squared pixel distance between two same-shape images.
double mean_squared_distance(const ImageTensor& a, const ImageTensor& b);

}  // namespace mcmdpo
