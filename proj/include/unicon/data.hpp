#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/diffusion.hpp"

namespace unicon {

// Images in this module are [H, W, 1] tensors with values in [0, 1].

enum class ShapeKind { circle, rectangle, line };

struct SceneShape {
  ShapeKind kind = ShapeKind::circle;
  float cx = 16.0f, cy = 16.0f;  // pixel units, origin at the top-left corner
  float size = 8.0f;             // radius, half side, or half length
  float aspect = 1.0f;           // rectangle height / width
  float angle = 0.0f;            // line direction in radians
  float intensity = 1.0f;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<SceneShape> shapes;  // painted in order
  float background = 0.0f;

  /// 2 * (shape count - 1) + (1 if any circle): 8 classes for 1..4 shapes.
  int label() const;
};

inline constexpr int kImageSize = 32;
inline constexpr int kNumClasses = 8;
inline constexpr float kLineHalfWidth = 1.0f;

/// Random scene from a seed: 1-4 shapes, intensities in [0.2, 1],
/// background in [0, 0.15].
SceneSpec sample_scene(std::uint64_t seed);

/// Antialiased rasterization with 4x4 supersampling per pixel.
Tensor render_scene(const SceneSpec& spec, int size = kImageSize);

enum class ConditionKind { edge, sr4x, blur_sr4x };

std::string_view condition_name(ConditionKind kind);
ConditionKind parse_condition(std::string_view name);

/// 4x4 box average then nearest upsample back to full size.
Tensor sr4x(const Tensor& image);
/// 9x9 Gaussian, sigma 2, reflect padding, weights summing to 1.
Tensor gaussian_blur(const Tensor& image);
/// Sobel gradient magnitude with reflect padding.
Tensor sobel_magnitude(const Tensor& image);
/// Sobel magnitude / max, thresholded at 0.2 to {0, 1}; all zero when flat.
Tensor edge_map(const Tensor& image);
Tensor make_condition(const Tensor& image, ConditionKind kind);

/// 10 log10(peak^2 / mse), capped at 99 dB.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);
/// Single-scale SSIM, 7x7 Gaussian window (sigma 1.5), mean over valid windows.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);
/// Scores make_condition(generated) against cond: PSNR for the
/// super-resolution kinds, SSIM for edges.
double condition_consistency(const Tensor& generated, const Tensor& cond, ConditionKind kind);

struct SamplePair {
  std::uint64_t seed = 0;
  Tensor x0;    // rendered scene rescaled to [-1, 1]
  Tensor cond;  // condition of the [0, 1] scene
  int label = 0;
};

SamplePair make_sample(std::uint64_t seed, ConditionKind kind);

inline constexpr std::uint64_t kTrainSeedBegin = 0;
inline constexpr std::uint64_t kTrainSeedEnd = 50000;
inline constexpr std::uint64_t kTestSeedBegin = 50000;
inline constexpr std::uint64_t kTestSeedEnd = 51000;

/// Stacks samples into a training batch; noise keys are the seeds and the
/// condition is rescaled to [-1, 1].
TrainBatch make_batch(std::span<const std::uint64_t> seeds, ConditionKind kind);

/// [-1, 1] model space to [0, 1] image space, clamped.
Tensor to_unit_range(const Tensor& x);

/// Binary 8-bit PGM (P5); values are clamped to [0, 1] and rounded.
void write_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm(const std::filesystem::path& path);

/// Writes image and condition PGMs for each seed into `dir` and a JSON-lines
/// manifest `manifest.jsonl` with {seed, label, condition, image,
/// condition_image}. Returns the manifest path.
std::filesystem::path write_corpus(const std::filesystem::path& dir, std::span<const std::uint64_t> seeds,
                                   ConditionKind kind);

}  // namespace unicon
