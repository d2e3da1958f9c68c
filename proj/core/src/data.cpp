#include "whiten/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace whiten {

namespace {

constexpr std::uint32_t kImagesMagic3 = 0x00000803;
constexpr std::uint32_t kImagesMagic4 = 0x00000804;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw DataError("idx: truncated header in " + path);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n,
                                       const std::string& path) {
  std::vector<std::uint8_t> bytes(n);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(n))) {
    throw DataError("idx: truncated payload in " + path);
  }
  return bytes;
}

double bilinear(const std::vector<double>& img, Index h, Index w, Index c,
                Index ch, double y, double x) {
  // replicate the border
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const Index y0 = static_cast<Index>(std::floor(y));
  const Index x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, h - 1);
  const Index x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  auto at = [&](Index yy, Index xx) { return img[(yy * w + xx) * c + ch]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

/// Center-crop (offset > 0) or border-replicating pad (offset < 0) by
/// |offset| pixels in total, then bilinear-resize back to the source size.
void zoom(std::vector<double>& img, Index h, Index w, Index c, int offset) {
  if (offset == 0) return;
  const Index size = h;  // square
  const double inner = static_cast<double>(size - offset);
  const double scale = inner / size;
  const double lead = offset / 2.0 + (offset > 0 ? 0.0 : 0.0);
  std::vector<double> out(img.size());
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double sy = (y + 0.5) * scale - 0.5 + lead;
      const double sx = (x + 0.5) * scale - 0.5 + lead;
      for (Index ch = 0; ch < c; ++ch) {
        out[(y * w + x) * c + ch] = bilinear(img, h, w, c, ch, sy, sx);
      }
    }
  }
  img.swap(out);
}

void rotate(std::vector<double>& img, Index h, Index w, Index c,
            double degrees) {
  if (degrees == 0.0) return;
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  std::vector<double> out(img.size());
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double dy = y - cy;
      const double dx = x - cx;
      const double sy = cy + cs * dy + sn * dx;
      const double sx = cx - sn * dy + cs * dx;
      for (Index ch = 0; ch < c; ++ch) {
        out[(y * w + x) * c + ch] = bilinear(img, h, w, c, ch, sy, sx);
      }
    }
  }
  img.swap(out);
}

}  // namespace

Dataset Dataset::subset(Index offset, Index n) const {
  if (offset < 0 || n < 0 || offset + n > count) {
    throw DataError("Dataset::subset: range out of bounds");
  }
  Dataset out;
  out.count = n;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.pixels.assign(pixels.begin() + offset * image_size(),
                    pixels.begin() + (offset + n) * image_size());
  out.labels.assign(labels.begin() + offset, labels.begin() + offset + n);
  return out;
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw DataError("idx: cannot open " + images_path);
  const std::uint32_t img_magic = read_be32(imgf, images_path);
  if (img_magic != kImagesMagic3 && img_magic != kImagesMagic4) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", img_magic);
    throw DataError("idx: bad image magic " + std::string(buf) + " in " +
                    images_path);
  }
  Dataset ds;
  ds.count = read_be32(imgf, images_path);
  ds.height = read_be32(imgf, images_path);
  ds.width = read_be32(imgf, images_path);
  ds.channels = img_magic == kImagesMagic4 ? read_be32(imgf, images_path) : 1;
  const std::size_t n_pixels =
      static_cast<std::size_t>(ds.count) * ds.image_size();
  std::vector<std::uint8_t> raw = read_payload(imgf, n_pixels, images_path);

  std::ifstream labf(labels_path, std::ios::binary);
  if (!labf) throw DataError("idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be32(labf, labels_path);
  if (lab_magic != kLabelsMagic) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", lab_magic);
    throw DataError("idx: bad label magic " + std::string(buf) + " in " +
                    labels_path);
  }
  const std::uint32_t lab_count = read_be32(labf, labels_path);
  if (static_cast<Index>(lab_count) != ds.count) {
    throw DataError("idx: image/label count mismatch (" +
                    std::to_string(ds.count) + " images vs " +
                    std::to_string(lab_count) + " labels)");
  }
  ds.labels = read_payload(labf, lab_count, labels_path);

  ds.pixels.resize(n_pixels);
  for (std::size_t i = 0; i < n_pixels; ++i) {
    ds.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  std::ofstream imgf(images_path, std::ios::binary);
  if (!imgf) throw DataError("idx: cannot write " + images_path);
  write_be32(imgf, ds.channels == 1 ? kImagesMagic3 : kImagesMagic4);
  write_be32(imgf, static_cast<std::uint32_t>(ds.count));
  write_be32(imgf, static_cast<std::uint32_t>(ds.height));
  write_be32(imgf, static_cast<std::uint32_t>(ds.width));
  if (ds.channels != 1) {
    write_be32(imgf, static_cast<std::uint32_t>(ds.channels));
  }
  std::vector<std::uint8_t> raw(ds.pixels.size());
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) {
    const float v = std::min(std::max(ds.pixels[i], 0.0f), 1.0f);
    raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  imgf.write(reinterpret_cast<const char*>(raw.data()),
             static_cast<std::streamsize>(raw.size()));

  std::ofstream labf(labels_path, std::ios::binary);
  if (!labf) throw DataError("idx: cannot write " + labels_path);
  write_be32(labf, kLabelsMagic);
  write_be32(labf, static_cast<std::uint32_t>(ds.count));
  labf.write(reinterpret_cast<const char*>(ds.labels.data()),
             static_cast<std::streamsize>(ds.labels.size()));
}

Matrix synth_gaussian(Index n, Index m, const SymMatrix& sigma_true,
                      std::uint64_t seed) {
  UnitLdl f = pivoted_ldl(sigma_true, 0.0);  // rejects non-PSD input
  Matrix ld = f.l * f.d.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Matrix factor(n, n);
  for (Index i = 0; i < n; ++i) factor.row(f.perm[i]) = ld.row(i);
  Rng rng(seed);
  Matrix z(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) z(i, j) = rng.normal();
  }
  return factor * z;
}

void augment(std::vector<double>& img, Index height, Index width,
             Index channels, DbKind db, Rng& rng) {
  if (height != width) throw DataError("augment: image must be square");
  if (db == DbKind::Mnist) {
    const int offset = -4 + rng.uniform_int(9);  // zoom in and out up to 4 px
    const double angle = rng.uniform(-20.0, 20.0);
    zoom(img, height, width, channels, offset);
    rotate(img, height, width, channels, angle);
  } else {
    const int offset = rng.uniform_int(3);  // zoom-ins of up to 2 px
    zoom(img, height, width, channels, offset);
  }
  for (double& v : img) v = std::min(std::max(v, 0.0), 1.0);
}

std::vector<std::vector<Index>> make_batches(Index count, Index batch_size,
                                             std::uint64_t seed, Index epoch) {
  if (batch_size < 1 || batch_size > count) {
    throw DataError("make_batches: batch size must lie in [1, count]");
  }
  std::vector<Index> order(count);
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(seed, 0xba7c0 + static_cast<std::uint64_t>(epoch)));
  for (Index i = count - 1; i > 0; --i) {
    const Index j = rng.uniform_int(static_cast<int>(i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start + batch_size <= count; start += batch_size) {
    batches.emplace_back(order.begin() + start,
                         order.begin() + start + batch_size);
  }
  return batches;
}

}  // namespace whiten
