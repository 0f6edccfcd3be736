// Renders one semantic stack and writes each member as an 8-bit PGM.
#include <cstdio>
#include <fstream>
#include <string>

#include "s2s2/synthgen.hpp"

int main(int argc, char** argv) {
  using namespace s2s2;
  const std::string dir = argc > 1 ? argv[1] : ".";
  Rng rng(11, Stream::data);
  const SegmentationMask mask = gen_mask(rng, MaskConfig{});
  const ImageStack stack = gen_stack(mask, default_source_domain(4), 6, rng);

  auto write_pgm = [&](const std::string& name, auto&& value) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    for (std::size_t i = 0; i < mask.size(); ++i) out.put(static_cast<char>(value(i)));
  };
  write_pgm("mask.pgm", [&](std::size_t i) { return mask.labels[i] * 255 / (mask.num_classes - 1); });
  for (std::size_t k = 0; k < stack.size(); ++k) {
    write_pgm("member_" + std::to_string(k) + ".pgm",
              [&](std::size_t i) { return static_cast<int>(stack.images[k].pixels[i] * 255.0f + 0.5f); });
  }
  std::printf("wrote mask.pgm and %zu members to %s\n", stack.size(), dir.c_str());
}
