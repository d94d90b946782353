#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cinformer/tensor.hpp"

namespace cinformer {

/// 8-bit grayscale raster, row-major.
struct ByteImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary P5 PGM, maxval 255, header "P5\n<w> <h>\n255\n".
void write_pgm(const std::string& path, const ByteImage& image);
ByteImage read_pgm(const std::string& path);
std::vector<std::uint8_t> encode_pgm(const ByteImage& image);
ByteImage decode_pgm(const std::vector<std::uint8_t>& bytes);

/// Min-max maps `values` (h*w, row-major) onto 0..255; an all-equal map is 128.
ByteImage minmax_image(const std::vector<double>& values, std::size_t height, std::size_t width);

// Mask labels.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kScratch = 1;
inline constexpr std::uint8_t kBlob = 2;
inline constexpr std::uint8_t kCrack = 3;

struct SynthOptions {
  std::size_t count = 64;
  std::size_t size = 64;
  double contrast = 1.0;
  std::uint64_t seed = 0;
  // Share of each category placed in the training split.
  double train_fraction = 0.7;
};

struct SynthSample {
  ByteImage image;
  ByteImage mask;
  std::uint8_t first_category = kScratch;
};

/// One image and its mask; a pure function of (options, index).
SynthSample synthesize_sample(const SynthOptions& options, std::size_t index);

/// Writes images/, masks/ and manifest.json under `dir`; returns the manifest path.
std::string generate_dataset(const std::string& dir, const SynthOptions& options);

std::string sample_id(std::size_t index);

/// Images of one manifest split, in manifest order.
struct Dataset {
  std::size_t size = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> ids;
  std::vector<ByteImage> images;
  std::vector<ByteImage> masks;

  std::size_t count() const { return ids.size(); }
};

/// Loads `split` ("train" or "test") of the dataset in `dir`.
Dataset load_split(const std::string& dir, const std::string& split);

/// Samples `indexes` as a float batch [B,3,S,S] (gray/255 replicated to three
/// channels) and flat labels [B*S*S].
ad::Tensor<float> batch_images(const Dataset& data, const std::vector<std::size_t>& indexes);
std::vector<std::int32_t> batch_labels(const Dataset& data, const std::vector<std::size_t>& indexes);
ad::Tensor<float> image_tensor(const ByteImage& image);

}  // namespace cinformer
