#include "ddrnn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "ddrnn/errors.hpp"
#include "ddrnn/model.hpp"
#include "ddrnn/tensor_io.hpp"

namespace ddrnn {

namespace fs = std::filesystem;

void validate_sample(const Sample& s, int classes) {
  if (s.dims.rows < 1 || s.dims.cols < 1) throw ShapeError("sample has an empty grid");
  if (static_cast<std::size_t>(s.features.rows()) != s.dims.units()) throw ShapeError("feature rows != grid units");
  if (s.labels.size() != s.dims.units()) throw ShapeError("label map size != grid units");
  for (std::uint8_t y : s.labels) {
    if (y != kIgnoreLabel && y >= classes) {
      throw ShapeError("label " + std::to_string(y) + " out of range for " + std::to_string(classes) + " classes");
    }
  }
}

namespace {

int interval_distance(int x, int lo, int hi) {
  if (x < lo) return lo - x;
  if (x >= hi) return x - hi + 1;
  return 0;
}

}  // namespace

Dataset gen_marker_task(const MarkerSpec& spec) {
  const GridDims dims = spec.dims;
  const int e = spec.marker_extent;
  if (spec.classes != kMarkerClasses) throw ShapeError("marker task uses exactly 4 classes");
  if (dims.rows < 1 || dims.cols < 1) throw ShapeError("marker task needs a non-empty grid");
  if (spec.noise_sigma < 0.0) throw ShapeError("noise_sigma must be non-negative");
  if (spec.n_samples < 0) throw ShapeError("n_samples must be non-negative");
  if (e < 1 || 4 * e > std::min(dims.rows, dims.cols)) {
    throw ShapeError("infeasible marker geometry: extent must be in [1, min(H, W) / 4]");
  }
  // Far region: Chebyshev distance >= max(H, W) / 2.
  const int far = (std::max(dims.rows, dims.cols) + 1) / 2;
  if (std::max(dims.rows, dims.cols) - e < far) throw ShapeError("infeasible marker geometry: no far region");

  Rng rng(spec.seed);
  Dataset out;
  out.reserve(static_cast<std::size_t>(spec.n_samples));
  for (int s = 0; s < spec.n_samples; ++s) {
    const int corner = s % 4;
    const bool type_b = rng.below(2) == 1;
    const int r0 = (corner & 2) ? dims.rows - e : 0;
    const int c0 = (corner & 1) ? dims.cols - e : 0;

    Sample sample{dims, Mat<float>::Zero(static_cast<Eigen::Index>(dims.units()), kMarkerChannels),
                  std::vector<std::uint8_t>(dims.units())};
    for (int i = 0; i < dims.rows; ++i) {
      for (int j = 0; j < dims.cols; ++j) {
        const std::size_t v = grid_index({i, j}, dims);
        const int dist = std::max(interval_distance(i, r0, r0 + e), interval_distance(j, c0, c0 + e));
        int channel;
        if (dist == 0) {
          channel = type_b ? 1 : 0;
          sample.labels[v] = kMarkerPatch;
        } else if (dist >= far) {
          channel = 2;
          sample.labels[v] = type_b ? kMarkerContextB : kMarkerContextA;
        } else {
          channel = 3;
          sample.labels[v] = kMarkerBackground;
        }
        sample.features(static_cast<Eigen::Index>(v), channel) = 1.0F;
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (Eigen::Index k = 0; k < sample.features.size(); ++k) {
        sample.features.data()[k] += static_cast<float>(spec.noise_sigma * rng.normal());
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

Dataset gen_blob_task(GridDims dims, int classes, int n_samples, std::uint64_t seed, double noise_sigma) {
  if (classes < 2) throw ShapeError("blob task needs at least 2 classes");
  if (dims.rows < 1 || dims.cols < 1) throw ShapeError("blob task needs a non-empty grid");
  if (noise_sigma < 0.0) throw ShapeError("noise_sigma must be non-negative");
  Rng rng(seed);
  Dataset out;
  out.reserve(static_cast<std::size_t>(std::max(n_samples, 0)));
  const int sites = 2 * classes;
  for (int s = 0; s < n_samples; ++s) {
    std::vector<std::pair<double, double>> site(static_cast<std::size_t>(sites));
    for (auto& p : site) p = {rng.uniform(0.0, dims.rows), rng.uniform(0.0, dims.cols)};
    Sample sample{dims, Mat<float>::Zero(static_cast<Eigen::Index>(dims.units()), classes),
                  std::vector<std::uint8_t>(dims.units())};
    for (int i = 0; i < dims.rows; ++i) {
      for (int j = 0; j < dims.cols; ++j) {
        const double ci = i + 0.5;
        const double cj = j + 0.5;
        int best = 0;
        double best_d = 0.0;
        for (int k = 0; k < sites; ++k) {
          const auto [si, sj] = site[static_cast<std::size_t>(k)];
          const double d = (ci - si) * (ci - si) + (cj - sj) * (cj - sj);
          if (k == 0 || d < best_d) {
            best = k;
            best_d = d;
          }
        }
        const std::size_t v = grid_index({i, j}, dims);
        const int label = best % classes;
        sample.labels[v] = static_cast<std::uint8_t>(label);
        sample.features(static_cast<Eigen::Index>(v), label) = 1.0F;
      }
    }
    if (noise_sigma > 0.0) {
      for (Eigen::Index k = 0; k < sample.features.size(); ++k) {
        sample.features.data()[k] += static_cast<float>(noise_sigma * rng.normal());
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

Dataset gen_chain_task(int length, int n_samples, std::uint64_t seed, int classes, double noise_sigma) {
  if (length < 2) throw ShapeError("chain task needs N >= 2");
  if (classes < 2) throw ShapeError("chain task needs at least 2 classes");
  if (noise_sigma < 0.0) throw ShapeError("noise_sigma must be non-negative");
  Rng rng(seed);
  const GridDims dims{1, length};
  Dataset out;
  for (int s = 0; s < n_samples; ++s) {
    const auto label = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
    Sample sample{dims, Mat<float>::Zero(length, classes), std::vector<std::uint8_t>(dims.units(), label)};
    sample.features(0, label) = 1.0F;
    if (noise_sigma > 0.0) {
      for (Eigen::Index k = 0; k < sample.features.size(); ++k) {
        sample.features.data()[k] += static_cast<float>(noise_sigma * rng.normal());
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

namespace {

std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", i);
  return buf;
}

Tensor features_tensor(const Sample& s) {
  return Tensor::from_f32(std::span<const float>(s.features.data(), static_cast<std::size_t>(s.features.size())),
                          {static_cast<std::uint32_t>(s.dims.rows), static_cast<std::uint32_t>(s.dims.cols),
                           static_cast<std::uint32_t>(s.features.cols())});
}

Sample sample_from_features(const Tensor& t) {
  if (t.dtype != DType::F32 || t.dims.size() != 3) throw ShapeError("features must be a rank-3 float32 tensor");
  Sample s;
  s.dims = {static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1])};
  const std::vector<float> values = t.to_f32();
  s.features = Eigen::Map<const Mat<float>>(values.data(), static_cast<Eigen::Index>(s.dims.units()),
                                            static_cast<Eigen::Index>(t.dims[2]));
  return s;
}

}  // namespace

void save_dataset(const Dataset& data, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::string manifest;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const std::string id = sample_id(i);
    save_tensor(root / (id + ".features.ddrt"), features_tensor(s));
    save_tensor(root / (id + ".labels.ddrt"),
                Tensor::from_u8(s.labels, {static_cast<std::uint32_t>(s.dims.rows), static_cast<std::uint32_t>(s.dims.cols)}));
    manifest += id + "\n";
  }
  write_file_bytes(root / "manifest.txt",
                   std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
}

Dataset load_dataset(const fs::path& root) {
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) throw IoError("cannot open " + (root / "manifest.txt").string());
  Dataset out;
  std::string id;
  while (std::getline(manifest, id)) {
    if (id.empty()) continue;
    Sample s = sample_from_features(load_tensor(root / (id + ".features.ddrt")));
    const Tensor labels = load_tensor(root / (id + ".labels.ddrt"));
    if (labels.dtype != DType::U8 || labels.dims.size() != 2 || static_cast<int>(labels.dims[0]) != s.dims.rows ||
        static_cast<int>(labels.dims[1]) != s.dims.cols) {
      throw ShapeError("labels of " + id + " do not match its features");
    }
    s.labels = labels.to_u8();
    out.push_back(std::move(s));
  }
  return out;
}

Sample load_features(const fs::path& features_file) { return sample_from_features(load_tensor(features_file)); }

const Palette& default_palette() {
  static const Palette palette = [] {
    Palette p{};
    for (int i = 0; i < 256; ++i) {
      int r = 0;
      int g = 0;
      int b = 0;
      int c = i;
      for (int j = 0; j < 8; ++j) {
        r |= ((c >> 0) & 1) << (7 - j);
        g |= ((c >> 1) & 1) << (7 - j);
        b |= ((c >> 2) & 1) << (7 - j);
        c >>= 3;
      }
      p[static_cast<std::size_t>(i)] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                                        static_cast<std::uint8_t>(b)};
    }
    p[kIgnoreLabel] = {0, 0, 0};
    return p;
  }();
  return palette;
}

namespace {

void write_netpbm(const fs::path& path, const char* magic, GridDims dims, std::span<const std::uint8_t> body) {
  const std::string header = std::string(magic) + "\n" + std::to_string(dims.cols) + " " + std::to_string(dims.rows) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), body.begin(), body.end());
  write_file_bytes(path, bytes);
}

}  // namespace

void export_label_map(std::span<const std::uint8_t> labels, GridDims dims, const fs::path& path) {
  if (labels.size() != dims.units()) throw ShapeError("label map size != grid units");
  write_netpbm(path, "P5", dims, labels);
}

void export_color_map(std::span<const std::uint8_t> labels, GridDims dims, const Palette& palette, const fs::path& path) {
  if (labels.size() != dims.units()) throw ShapeError("label map size != grid units");
  std::vector<std::uint8_t> rgb;
  rgb.reserve(3 * labels.size());
  for (std::uint8_t y : labels) rgb.insert(rgb.end(), palette[y].begin(), palette[y].end());
  write_netpbm(path, "P6", dims, rgb);
}

LabelImage read_label_map(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError("not a binary PGM file");
  LabelImage img;
  try {
    img.dims.cols = std::stoi(token());
    img.dims.rows = std::stoi(token());
    if (std::stoi(token()) != 255) throw FormatError("PGM maxval must be 255");
  } catch (const std::logic_error&) {
    throw FormatError("malformed PGM header");
  }
  ++pos;  // single whitespace after maxval
  if (bytes.size() - std::min(pos, bytes.size()) != img.dims.units()) throw FormatError("PGM payload size mismatch");
  img.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

}  // namespace ddrnn
