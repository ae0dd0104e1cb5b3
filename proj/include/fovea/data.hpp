#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fovea/patchify.hpp"

namespace fovea {

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  int classes = 0;
  std::string split;

  std::size_t size() const { return images.size(); }
  /// Equal lengths, labels in [0, classes), pixel values in [0,1].
  void validate() const;
};

/// Raw IDX array: big-endian header, unsigned bytes.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const IdxArray& array, const std::filesystem::path& path);

/// Parses an IDX image file (magic 0x00000803) and its label file (magic
/// 0x00000801). Pixels are scaled by 1/255 and replicated to three channels.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        int classes = 10);

/// Inverse of load_idx for grayscale datasets; reproduces the source bytes.
void save_idx(const LabeledDataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

/// Binary PPM (P6, maxval 255). Header comments are skipped.
Image load_ppm(const std::filesystem::path& path);
Image decode_ppm(std::span<const std::uint8_t> bytes);
void write_ppm(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const Image& image);

/// Plain-text manifest: one `<path> <label>` pair per line, '#' comments,
/// relative paths resolved against the manifest's directory.
LabeledDataset load_manifest(const std::filesystem::path& path, int classes);

struct LabeledImage {
  Image image;
  int label = 0;
};

struct ClutterOptions {
  int canvas = 128;
  int distractors = 4;
  int distractor_size = 8;
  /// Top-left corner of the digit; uniform random when unset.
  std::optional<std::pair<int, int>> position;
};

/// Places one digit from `source` on a black square canvas and scatters
/// `distractors` crops of other digits around it without overlapping it.
LabeledImage synth_cluttered(std::mt19937_64& rng, const LabeledDataset& source, const ClutterOptions& options);
LabeledImage synth_cluttered(std::mt19937_64& rng, const LabeledDataset& source, std::size_t digit_index,
                             const ClutterOptions& options);

struct MixupBatch {
  std::vector<Image> images;
  std::vector<std::vector<double>> targets;  // soft labels, rows sum to 1
  double lambda = 1.0;
  std::vector<std::size_t> partner;  // image i is mixed with partner[i]
};

std::vector<std::vector<double>> one_hot(std::span<const int> labels, int classes);

/// lambda ~ Beta(alpha, alpha); pairs from a random permutation; images and
/// targets mixed with the same lambda. Partners of a different size are
/// resized to the first image's size.
MixupBatch mixup(std::span<const Image> images, std::span<const std::vector<double>> targets, double alpha,
                 std::mt19937_64& rng);
MixupBatch mixup_with(std::span<const Image> images, std::span<const std::vector<double>> targets, double lambda,
                      std::span<const std::size_t> partner);

/// Random-access labelled images for training and evaluation. `get` is a pure
/// function of (index, epoch).
class ImageSource {
public:
  virtual ~ImageSource() = default;
  virtual std::size_t size() const = 0;
  virtual int classes() const = 0;
  virtual LabeledImage get(std::size_t index, std::uint64_t epoch) const = 0;
};

/// A subset of an in-memory dataset, optionally resized to a fixed square side.
class DatasetSource final : public ImageSource {
public:
  DatasetSource(std::shared_ptr<const LabeledDataset> dataset, std::vector<std::size_t> indices, int resize_to = 0);
  std::size_t size() const override { return indices_.size(); }
  int classes() const override { return dataset_->classes; }
  LabeledImage get(std::size_t index, std::uint64_t epoch) const override;

private:
  std::shared_ptr<const LabeledDataset> dataset_;
  std::vector<std::size_t> indices_;
  int resize_to_;
};

/// Cluttered canvases generated on the fly from a digit subset. With
/// `vary_by_epoch` the placement is re-drawn every epoch (augmentation);
/// otherwise each index maps to one fixed canvas.
class ClutteredSource final : public ImageSource {
public:
  ClutteredSource(std::shared_ptr<const LabeledDataset> digits, std::vector<std::size_t> indices,
                  ClutterOptions options, std::uint64_t seed, bool vary_by_epoch);
  std::size_t size() const override { return indices_.size(); }
  int classes() const override { return digits_->classes; }
  LabeledImage get(std::size_t index, std::uint64_t epoch) const override;

private:
  std::shared_ptr<const LabeledDataset> digits_;
  std::vector<std::size_t> indices_;
  ClutterOptions options_;
  std::uint64_t seed_;
  bool vary_by_epoch_;
};

/// Seeded split of 0..n-1 into (train, validation) with `val_count` validation items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, std::size_t val_count,
                                                                            std::uint64_t seed);

}  // namespace fovea
