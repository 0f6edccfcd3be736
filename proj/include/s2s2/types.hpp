#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2s2 {

/// H×W class labels in [0, num_classes). Class 0 is background.
struct SegmentationMask {
  std::size_t height = 0;
  std::size_t width = 0;
  int num_classes = 0;
  std::vector<std::uint8_t> labels;

  SegmentationMask() = default;
  SegmentationMask(std::size_t h, std::size_t w, int k, std::uint8_t fill = 0)
      : height(h), width(w), num_classes(k), labels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }

  void validate() const {
    if (labels.size() != height * width) throw std::invalid_argument("SegmentationMask: label count != height*width");
    if (num_classes < 1 || num_classes > 256) throw std::invalid_argument("SegmentationMask: num_classes out of range");
    for (const auto l : labels) {
      if (l >= num_classes) {
        throw std::invalid_argument("SegmentationMask: label " + std::to_string(l) + " >= num_classes " +
                                    std::to_string(num_classes));
      }
    }
  }

  bool contains(int c) const {
    for (const auto l : labels)
      if (l == c) return true;
    return false;
  }

  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

/// Single-channel image, row-major, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace s2s2
