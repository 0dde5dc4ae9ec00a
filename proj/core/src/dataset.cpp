#include <algorithm>
#include <cmath>

#include "compactnet/errors.hpp"
#include "compactnet/micronn.hpp"
#include "compactnet/rng.hpp"

namespace compactnet {

namespace {

constexpr double kChannelGain[3] = {1.0, 0.7, 0.4};
constexpr double kNoiseSigma = 1.0;

double gauss(double d, double sigma) { return std::exp(-d * d / (2 * sigma * sigma)); }

// Intensity of class pattern `label` at pixel (y, x), shifted by (dy, dx).
double pattern(int label, double y, double x, double dy, double dx, int size) {
  const double c = (size - 1) / 2.0;
  const double unit = size / 12.0;
  const double yy = y - c - dy;
  const double xx = x - c - dx;
  const double bar = 1.0 * unit;
  switch (label) {
    case 0:  // horizontal bar
      return gauss(yy, bar);
    case 1:  // vertical bar
      return gauss(xx, bar);
    case 2:  // main diagonal
      return gauss((yy - xx) / std::sqrt(2.0), bar);
    case 3:  // anti-diagonal
      return gauss((yy + xx) / std::sqrt(2.0), bar);
    case 4:  // centred blob
      return gauss(std::hypot(yy, xx), 2.0 * unit);
    case 5:  // ring
      return gauss(std::hypot(yy, xx) - 3.5 * unit, 0.8 * unit);
    case 6:  // plus sign
      return std::max(gauss(yy, 0.8 * unit), gauss(xx, 0.8 * unit)) *
             (std::abs(yy) < 4 * unit && std::abs(xx) < 4 * unit ? 1.0 : 0.3);
    default: {  // four corner blobs
      const double o = 3.2 * unit;
      double v = 0.0;
      for (double sy : {-o, o}) {
        for (double sx : {-o, o}) {
          v = std::max(v, gauss(std::hypot(yy - sy, xx - sx), 1.2 * unit));
        }
      }
      return v;
    }
  }
}

void render(int label, double dy, double dx, double amplitude, int size,
            double* out) {
  const int plane = size * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double v = amplitude * pattern(label, y, x, dy, dx, size);
      for (int ch = 0; ch < 3; ++ch) out[ch * plane + y * size + x] = kChannelGain[ch] * v;
    }
  }
}

Dataset generate(Split split, int num_classes, int n, uint64_t seed, int size) {
  Dataset data;
  data.split = split;
  data.num_classes = num_classes;
  data.shape = {3, size, size};
  data.images.resize(static_cast<size_t>(n) * data.image_size());
  data.labels.resize(static_cast<size_t>(n));
  Rng rng(seed);
  const double unit = size / 12.0;
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;
    const double dy = (static_cast<double>(rng.below(3)) - 1.0) * unit;
    const double dx = (static_cast<double>(rng.below(3)) - 1.0) * unit;
    const double amplitude = 0.6 + 0.8 * rng.uniform();
    double* image = data.images.data() + static_cast<size_t>(i) * data.image_size();
    render(label, dy, dx, amplitude, size, image);
    for (size_t p = 0; p < data.image_size(); ++p) {
      image[p] += kNoiseSigma * rng.normal();
    }
    data.labels[static_cast<size_t>(i)] = label;
  }
  return data;
}

}  // namespace

std::vector<double> class_template(int num_classes, int label, int image_size) {
  if (label < 0 || label >= num_classes) throw ConfigError("label out of range");
  std::vector<double> image(static_cast<size_t>(3 * image_size * image_size));
  render(label, 0.0, 0.0, 1.0, image_size, image.data());
  return image;
}

DatasetPair synthetic_dataset(int num_classes, int train_n, int val_n,
                              uint64_t seed, int image_size) {
  if (num_classes < 2 || num_classes > 8) {
    throw ConfigError("num_classes must lie in [2, 8]");
  }
  if (train_n < num_classes || val_n < num_classes) {
    throw ConfigError("each split needs at least one sample per class");
  }
  if (image_size < 4) throw ConfigError("image_size must be >= 4");
  DatasetPair pair;
  pair.train = generate(Split::Train, num_classes, train_n,
                        derive_seed({seed, 0}), image_size);
  pair.validation = generate(Split::Validation, num_classes, val_n,
                             derive_seed({seed, 1}), image_size);
  return pair;
}

}  // namespace compactnet
