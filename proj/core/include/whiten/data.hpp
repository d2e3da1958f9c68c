#pragma once

#include <string>
#include <vector>

#include "whiten/linalg.hpp"
#include "whiten/rng.hpp"

namespace whiten {

enum class DbKind { Mnist, Svhn };

/// Image classification dataset with pixels scaled to [0,1].
struct Dataset {
  Index count = 0;
  Index height = 0;
  Index width = 0;
  Index channels = 1;
  std::vector<float> pixels;  // count * height * width * channels
  std::vector<std::uint8_t> labels;

  Index image_size() const { return height * width * channels; }
  const float* image(Index i) const { return pixels.data() + i * image_size(); }
  float* image(Index i) { return pixels.data() + i * image_size(); }

  /// Contiguous slice [offset, offset+n).
  Dataset subset(Index offset, Index n) const;
};

/// Parses the IDX pair: big-endian magic 0x00000803 (3-dim images) or
/// 0x00000804 (4-dim images with a channel axis), 0x00000801 (labels),
/// unsigned-byte payload scaled by 1/255. Bad magic, truncation and
/// image/label count mismatches raise distinct DataErrors.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

/// Writes the dataset back to an IDX pair (pixels quantized to bytes).
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// X = chol-factor(sigma_true) * standard normal(N x M), seeded. Accepts any
/// PSD sigma_true (rank-deficient included).
Matrix synth_gaussian(Index n, Index m, const SymMatrix& sigma_true,
                      std::uint64_t seed);

/// In-place training augmentation of one height x width x channels image:
/// MNIST draws a zoom offset in [-4,4] pixels (pad-or-crop plus bilinear
/// resize) then a rotation uniform in [-20, 20] degrees; SVHN draws only a
/// zoom-in of up to 2 pixels. Samples replicate the border, so constant
/// images stay constant; output is clamped to [0,1].
void augment(std::vector<double>& img, Index height, Index width,
             Index channels, DbKind db, Rng& rng);

/// Seeded shuffle of 0..count-1 chunked into full batches; the final partial
/// batch is dropped.
std::vector<std::vector<Index>> make_batches(Index count, Index batch_size,
                                             std::uint64_t seed, Index epoch);

}  // namespace whiten
