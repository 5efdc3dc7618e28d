#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "core/bytes.hpp"
#include "core/tensor.hpp"
#include "data/image.hpp"
#include "models/model.hpp"

namespace cxr {

// Normal = 0, Pneumonia = 1, Tuberculosis = 2.
struct ClassLabel {
  int id = 0;
  std::string name() const { return kClassNames.at(static_cast<std::size_t>(id)); }
  bool operator==(const ClassLabel&) const = default;
};

// Case-insensitive match on the class directory name.
ClassLabel assign_label(const std::string& class_dir_name);

struct LabeledImage {
  Tensor pixels;  // [C, 90, 90], values in [0, 1]
  ClassLabel label;
  std::string source_id;
};

using ClassCounts = std::array<std::size_t, kNumClasses>;

// Per-class counts of the assembled clinical reference corpus.
inline constexpr ClassCounts kReferenceCorpusCounts = {1989, 4273, 394};

// Accuracy of always answering the most frequent class.
double majority_baseline(const ClassCounts& counts);

// Packed, labeled collection of preprocessed samples.
//
// File layout (little-endian):
//   "CXRA1" | u32 count | u8 channels | u16 width | u16 height
//   | count label bytes | count*C*90*90 pixel bytes (per sample [C,H,W])
//   | u32 manifest length | manifest JSON
// The manifest holds per-class counts, source ids and the SHA-256 of the
// label and pixel sections.
struct DatasetArchive {
  std::size_t channels = 1;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;
  std::vector<std::string> source_ids;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_bytes() const { return channels * kImageSize * kImageSize; }
  ClassCounts class_counts() const;
  std::string content_hash() const;

  void append(const SampleImage& sample, ClassLabel label, std::string source_id);
  LabeledImage sample(std::size_t index) const;
  // [n, C, 90, 90] tensor of the selected samples, scaled to [0, 1].
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

Bytes serialize_archive(const DatasetArchive& archive);
DatasetArchive parse_archive(std::span<const std::uint8_t> bytes);
void write_archive(const DatasetArchive& archive, const std::filesystem::path& path);
DatasetArchive read_archive(const std::filesystem::path& path);

struct IngestFailure {
  std::string source_id;
  std::string reason;
};

struct IngestResult {
  DatasetArchive archive;
  std::vector<IngestFailure> failures;
  std::vector<std::string> warnings;
  // counts, failures, warnings and content hash as JSON text
  std::string report() const;
};

// Walks <root>/{Normal,Pneumonia,Tuberculosis}/ (class names matched
// case-insensitively, files found recursively) in lexicographic path order.
// Undecodable files are recorded and skipped.
IngestResult ingest(const std::filesystem::path& root, std::size_t channels);

struct SplitPlan {
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  bool stratified = false;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Seeded uniform shuffle; the last floor(val_fraction * N) shuffled indices
// are validation. Stratified mode allocates the same total per class by
// largest remainder.
SplitPlan make_split(std::span<const std::uint8_t> labels, double val_fraction,
                     std::uint64_t seed, bool stratified = false);

// Deterministic lung-field phantoms:
//   Normal       two bright ellipses
//   Pneumonia    ellipses + blotchy high-frequency opacities in the lower fields
//   Tuberculosis ellipses + clustered bright nodules in the upper fields
// plus additive Gaussian noise (sigma 0.05 on the [0,1] scale).
// Samples are interleaved by class: label(i) = i % 3.
DatasetArchive synthesize_dataset(std::size_t n_per_class, std::uint64_t seed,
                                  std::size_t channels);

// One synthetic image of a given class as an 8-bit gray raster (90x90).
RawImage synthesize_image(int class_id, std::uint64_t seed);

}  // namespace cxr
