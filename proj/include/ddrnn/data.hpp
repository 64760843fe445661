#ifndef DDRNN_DATA_HPP
#define DDRNN_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ddrnn/grid.hpp"
#include "ddrnn/numerics.hpp"

namespace ddrnn {

/// One labelled grid. features holds one row of raw channels per unit in
/// row-major unit order; labels are class indices or kIgnoreLabel.
struct Sample {
  GridDims dims;
  Mat<float> features;
  std::vector<std::uint8_t> labels;

  int channels() const { return static_cast<int>(features.cols()); }
};

using Dataset = std::vector<Sample>;

/// Throws ShapeError when shapes disagree or a label is neither < classes nor ignore.
void validate_sample(const Sample& s, int classes);

// Marker task.
//
// A small marker patch sits in one corner (the corner cycles with the sample
// index) and is of type A or B with equal probability. Every unit whose
// Chebyshev distance to the patch is at least max(H, W) / 2 belongs to the
// far region, which looks the same in both cases; its label says which
// marker type the image contains. Channels are one-hot textures
// (marker A, marker B, far region, background) plus N(0, noise_sigma^2) noise.
enum MarkerLabel : std::uint8_t {
  kMarkerBackground = 0,
  kMarkerPatch = 1,
  kMarkerContextA = 2,
  kMarkerContextB = 3,
};

inline constexpr int kMarkerClasses = 4;
inline constexpr int kMarkerChannels = 4;

struct MarkerSpec {
  GridDims dims{16, 16};
  int classes = kMarkerClasses;
  double noise_sigma = 0.5;
  int marker_extent = 3;
  int n_samples = 100;
  std::uint64_t seed = 0;
};

Dataset gen_marker_task(const MarkerSpec& spec);

/// Voronoi partition from 2K seeded sites, site i labelled i mod K. Features
/// are one-hot class means over K channels plus Gaussian noise.
Dataset gen_blob_task(GridDims dims, int classes, int n_samples, std::uint64_t seed, double noise_sigma = 0.5);

/// 1xN samples whose every label equals the class one-hot encoded in cell 0.
/// Other cells carry class-independent noise only. Channels = classes.
Dataset gen_chain_task(int length, int n_samples, std::uint64_t seed, int classes = 4, double noise_sigma = 0.5);

/// Layout: <root>/sample_%05d.features.ddrt (f32, H x W x C),
/// <root>/sample_%05d.labels.ddrt (u8, H x W), <root>/manifest.txt.
void save_dataset(const Dataset& data, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

Sample load_features(const std::filesystem::path& features_file);

/// Label-colormap palette (bit-interleaved RGB per index); entry 255 is black.
using Palette = std::array<std::array<std::uint8_t, 3>, 256>;
const Palette& default_palette();

/// Binary PGM (P5, maxval 255), one byte per unit.
void export_label_map(std::span<const std::uint8_t> labels, GridDims dims, const std::filesystem::path& path);
/// Binary PPM (P6) through the palette.
void export_color_map(std::span<const std::uint8_t> labels, GridDims dims, const Palette& palette,
                      const std::filesystem::path& path);

struct LabelImage {
  GridDims dims;
  std::vector<std::uint8_t> labels;
};
LabelImage read_label_map(const std::filesystem::path& path);

}  // namespace ddrnn

#endif  // DDRNN_DATA_HPP
