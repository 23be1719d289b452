#include "mcmdpo/image.hpp"

#include <stdexcept>

#include "mcmdpo/rng.hpp"

namespace mcmdpo {

ImageTensor ImageTensor::filled(int h, int w, int c, double value) {
  ImageTensor img;
  img.h = h;
  img.w = w;
  img.c = c;
  img.data.assign(static_cast<size_t>(h) * w * c, value);
  img.validate();
  return img;
}

void ImageTensor::validate() const {
  if (h <= 0 || w <= 0 || c <= 0) {
    throw std::invalid_argument("ImageTensor: non-positive dimensions");
  }
  if (data.size() != static_cast<size_t>(h) * w * c) {
    throw std::invalid_argument("ImageTensor: data size " + std::to_string(data.size()) +
                                " does not match " + std::to_string(h) + "x" +
                                std::to_string(w) + "x" + std::to_string(c));
  }
  for (double v : data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("ImageTensor: value outside [0,1]");
    }
  }
}

uint64_t ImageTensor::fingerprint() const {
  uint64_t hash = fnv1a(&h, sizeof h);
  hash = fnv1a(&w, sizeof w, hash);
  hash = fnv1a(&c, sizeof c, hash);
  return fnv1a(data.data(), data.size() * sizeof(double), hash);
}

double mean_squared_distance(const ImageTensor& a, const ImageTensor& b) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) {
    throw std::invalid_argument("mean_squared_distance: shape mismatch");
  }
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

}  // namespace mcmdpo
