#include "cinformer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include <json.hpp>

#include "cinformer/errors.hpp"
#include "cinformer/rng.hpp"

namespace cinformer {

namespace fs = std::filesystem;

std::vector<std::uint8_t> encode_pgm(const ByteImage& image) {
  if (image.pixels.size() != image.width * image.height) throw DataError("pgm: pixel count mismatch");
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

ByteImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto fail = [&pos](const std::string& what) -> FormatError {
    return FormatError("pgm: " + what + " at byte offset " + std::to_string(pos));
  };
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; };
  auto read_number = [&]() {
    while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') throw fail("expected a decimal number");
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1u << 24)) throw fail("number too large");
      ++pos;
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("missing P5 magic");
  pos = 2;
  ByteImage img;
  img.width = read_number();
  img.height = read_number();
  const std::size_t maxval_at = pos;
  const std::size_t maxval = read_number();
  if (maxval != 255) {
    pos = maxval_at;
    throw fail("maxval " + std::to_string(maxval) + " is not 255");
  }
  if (img.width == 0 || img.height == 0) throw fail("zero extent");
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw fail("expected one whitespace byte after maxval");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos != n) {
    throw fail("expected " + std::to_string(n) + " data bytes, found " + std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_pgm(const std::string& path, const ByteImage& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

ByteImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

namespace {

// Multi-octave value noise in [0,1]: octave o has a (4*2^o + 1)^2 lattice of
// uniform values, bilinearly interpolated, amplitude 2^-o.
std::vector<double> value_noise(std::size_t size, SeededRng& rng) {
  std::vector<double> out(size * size, 0.0);
  double amplitude = 1.0;
  double total = 0.0;
  for (int octave = 0; octave < 3; ++octave) {
    const std::size_t cells = std::size_t{4} << octave;
    const std::size_t side = cells + 1;
    std::vector<double> lattice(side * side);
    for (double& v : lattice) v = rng.uniform();
    const double scale = static_cast<double>(cells) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
      const double fy = (static_cast<double>(y) + 0.5) * scale;
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) * scale;
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
        const double tx = fx - static_cast<double>(x0);
        const double a = lattice[y0 * side + x0];
        const double b = lattice[y0 * side + x0 + 1];
        const double c = lattice[(y0 + 1) * side + x0];
        const double d = lattice[(y0 + 1) * side + x0 + 1];
        const double top = a + (b - a) * tx;
        const double bottom = c + (d - c) * tx;
        out[y * size + x] += amplitude * (top + (bottom - top) * ty);
      }
    }
    total += amplitude;
    amplitude *= 0.5;
  }
  for (double& v : out) v /= total;
  return out;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = ax + t * dx - px;
  const double ey = ay + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

struct Canvas {
  std::size_t size;
  std::vector<double> offset;
  std::vector<std::uint8_t> mask;

  // coverage(x, y) in [0,1]; pixels at least half covered take the label.
  template <class Coverage>
  void paint(double intensity, std::uint8_t label, Coverage coverage) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double c = coverage(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        if (c <= 0.0) continue;
        offset[y * size + x] = offset[y * size + x] * (1.0 - c) + intensity * c;
        if (c >= 0.5) mask[y * size + x] = label;
      }
    }
  }
};

double line_coverage(double dist, double width) { return std::clamp(width / 2.0 + 0.5 - dist, 0.0, 1.0); }

}  // namespace

ByteImage minmax_image(const std::vector<double>& values, std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw DimensionError("minmax_image: value count does not match the grid");
  ByteImage img{width, height, std::vector<std::uint8_t>(values.size(), 128)};
  if (values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi > *lo) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
    }
  }
  return img;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%04zu", index);
  return buf;
}

SynthSample synthesize_sample(const SynthOptions& options, std::size_t index) {
  const std::size_t n = options.size;
  const double s = static_cast<double>(n);
  SeededRng rng = SeededRng::substream(options.seed, index);
  const std::vector<double> noise = value_noise(n, rng);
  Canvas canvas{n, std::vector<double>(n * n, 0.0), std::vector<std::uint8_t>(n * n, kBackground)};
  const double magnitude = options.contrast * 0.5 * 255.0;

  SynthSample sample;
  const std::size_t defects = 1 + rng.below(3);
  // one polarity per image so overlapping defects do not cancel
  const double intensity = (rng.uniform() < 0.5 ? -1.0 : 1.0) * magnitude;
  for (std::size_t d = 0; d < defects; ++d) {
    const auto category = static_cast<std::uint8_t>(1 + rng.below(3));
    if (d == 0) sample.first_category = category;
    if (category == kScratch) {
      const double length = rng.uniform(s / 4.0, s / 2.0);
      const double width = rng.uniform(s / 16.0, s / 8.0);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double cx = rng.uniform(s / 4.0, 3.0 * s / 4.0);
      const double cy = rng.uniform(s / 4.0, 3.0 * s / 4.0);
      const double hx = 0.5 * length * std::cos(angle);
      const double hy = 0.5 * length * std::sin(angle);
      canvas.paint(intensity, kScratch, [&](double x, double y) {
        return line_coverage(segment_distance(x, y, cx - hx, cy - hy, cx + hx, cy + hy), width);
      });
    } else if (category == kBlob) {
      const double rx = rng.uniform(s / 16.0, s / 6.0);
      const double ry = rng.uniform(s / 16.0, s / 6.0);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double cx = rng.uniform(rx, s - rx);
      const double cy = rng.uniform(ry, s - ry);
      const double ca = std::cos(angle);
      const double sa = std::sin(angle);
      canvas.paint(intensity, kBlob, [&](double x, double y) {
        const double u = ((x - cx) * ca + (y - cy) * sa) / rx;
        const double v = (-(x - cx) * sa + (y - cy) * ca) / ry;
        return u * u + v * v <= 1.0 ? 1.0 : 0.0;
      });
    } else {
      const std::size_t steps = 8 + rng.below(13);
      std::vector<double> px{rng.uniform(s / 4.0, 3.0 * s / 4.0)};
      std::vector<double> py{rng.uniform(s / 4.0, 3.0 * s / 4.0)};
      double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t k = 0; k < steps; ++k) {
        heading += 0.5 * rng.normal();
        const double step = rng.uniform(s / 32.0, s / 16.0);
        px.push_back(std::clamp(px.back() + step * std::cos(heading), 0.0, s));
        py.push_back(std::clamp(py.back() + step * std::sin(heading), 0.0, s));
      }
      canvas.paint(intensity, kCrack, [&](double x, double y) {
        double best = 1e30;
        for (std::size_t k = 0; k + 1 < px.size(); ++k) {
          best = std::min(best, segment_distance(x, y, px[k], py[k], px[k + 1], py[k + 1]));
        }
        return line_coverage(best, s / 16.0);
      });
    }
  }

  sample.image = {n, n, std::vector<std::uint8_t>(n * n)};
  for (std::size_t i = 0; i < n * n; ++i) {
    const double v = 64.0 + 128.0 * noise[i] + canvas.offset[i];
    sample.image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  sample.mask = {n, n, std::move(canvas.mask)};
  return sample;
}

std::string generate_dataset(const std::string& dir, const SynthOptions& options) {
  if (options.count < 1) throw UsageError("count must be at least 1");
  if (options.size == 0 || options.size % 32 != 0) {
    throw UsageError("size " + std::to_string(options.size) + " is not a positive multiple of 32");
  }
  if (!(options.contrast > 0.0 && options.contrast <= 1.0)) throw UsageError("contrast must lie in (0, 1]");
  if (!(options.train_fraction >= 0.0 && options.train_fraction <= 1.0)) {
    throw UsageError("train fraction must lie in [0, 1]");
  }
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (!ec) fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

  std::map<int, std::vector<std::size_t>> by_category;
  nlohmann::json ids = nlohmann::json::array();
  for (std::size_t i = 0; i < options.count; ++i) {
    const SynthSample sample = synthesize_sample(options, i);
    const std::string id = sample_id(i);
    write_pgm((fs::path(dir) / "images" / (id + ".pgm")).string(), sample.image);
    write_pgm((fs::path(dir) / "masks" / (id + ".pgm")).string(), sample.mask);
    by_category[sample.first_category].push_back(i);
    ids.push_back(id);
  }
  // Per category, in index order, the first round(fraction * n) samples train.
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (const auto& [_, members] : by_category) {
    const auto n_train = static_cast<std::size_t>(
        std::floor(options.train_fraction * static_cast<double>(members.size()) + 0.5));
    for (std::size_t k = 0; k < members.size(); ++k) (k < n_train ? train : test).push_back(members[k]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  nlohmann::json manifest;
  manifest["size"] = options.size;
  manifest["classes"] = 4;
  manifest["seed"] = options.seed;
  manifest["contrast"] = options.contrast;
  manifest["ids"] = ids;
  manifest["splits"]["train"] = nlohmann::json::array();
  manifest["splits"]["test"] = nlohmann::json::array();
  for (std::size_t i : train) manifest["splits"]["train"].push_back(sample_id(i));
  for (std::size_t i : test) manifest["splits"]["test"].push_back(sample_id(i));

  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path);
  return path;
}

Dataset load_split(const std::string& dir, const std::string& split) {
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  Dataset data;
  try {
    data.size = manifest.at("size").get<std::size_t>();
    data.num_classes = manifest.at("classes").get<std::size_t>();
    const auto& splits = manifest.at("splits");
    if (!splits.contains(split)) throw DataError(path + ": no split named '" + split + "'");
    data.ids = splits.at(split).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  for (const std::string& id : data.ids) {
    ByteImage image = read_pgm((fs::path(dir) / "images" / (id + ".pgm")).string());
    ByteImage mask = read_pgm((fs::path(dir) / "masks" / (id + ".pgm")).string());
    if (image.width != data.size || image.height != data.size || mask.width != image.width ||
        mask.height != image.height) {
      throw DataError(id + ": image/mask extents disagree with manifest size " + std::to_string(data.size));
    }
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
      if (mask.pixels[i] >= data.num_classes) {
        throw DataError(id + ": mask value " + std::to_string(mask.pixels[i]) + " at (" +
                        std::to_string(i / mask.width) + "," + std::to_string(i % mask.width) + ")");
      }
    }
    data.images.push_back(std::move(image));
    data.masks.push_back(std::move(mask));
  }
  return data;
}

ad::Tensor<float> image_tensor(const ByteImage& image) {
  const std::size_t hw = image.width * image.height;
  std::vector<float> v(3 * hw);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) v[c * hw + i] = static_cast<float>(image.pixels[i]) / 255.0f;
  }
  return ad::Tensor<float>::from({1, 3, image.height, image.width}, std::move(v));
}

ad::Tensor<float> batch_images(const Dataset& data, const std::vector<std::size_t>& indexes) {
  const std::size_t hw = data.size * data.size;
  std::vector<float> v(indexes.size() * 3 * hw);
  for (std::size_t b = 0; b < indexes.size(); ++b) {
    const auto& px = data.images.at(indexes[b]).pixels;
    for (std::size_t c = 0; c < 3; ++c) {
      float* dst = v.data() + (b * 3 + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<float>(px[i]) / 255.0f;
    }
  }
  return ad::Tensor<float>::from({indexes.size(), 3, data.size, data.size}, std::move(v));
}

std::vector<std::int32_t> batch_labels(const Dataset& data, const std::vector<std::size_t>& indexes) {
  std::vector<std::int32_t> out;
  out.reserve(indexes.size() * data.size * data.size);
  for (std::size_t i : indexes) {
    for (std::uint8_t m : data.masks.at(i).pixels) out.push_back(m);
  }
  return out;
}

}  // namespace cinformer
