#include <json.hpp>

#include <cstring>

#include "core/error.hpp"
#include "core/hash.hpp"
#include "data/dataset.hpp"

namespace cxr {

using nlohmann::json;

namespace {
constexpr char kMagic[] = "CXRA1";
constexpr std::size_t kMagicLen = 5;
}  // namespace

ClassCounts DatasetArchive::class_counts() const {
  ClassCounts c{};
  for (std::uint8_t l : labels) ++c.at(l);
  return c;
}

std::string DatasetArchive::content_hash() const {
  Sha256 h;
  h.update(labels);
  h.update(pixels);
  return h.digest();
}

void DatasetArchive::append(const SampleImage& sample, ClassLabel label,
                            std::string source_id) {
  if (sample.channels != channels || sample.pixels.size() != sample_bytes()) {
    throw DataFormatError("sample does not match archive layout (" +
                          std::to_string(channels) + " channel(s))");
  }
  labels.push_back(static_cast<std::uint8_t>(label.id));
  pixels.insert(pixels.end(), sample.pixels.begin(), sample.pixels.end());
  source_ids.push_back(std::move(source_id));
}

LabeledImage DatasetArchive::sample(std::size_t index) const {
  const std::size_t idx[1] = {index};
  Tensor t = batch(idx);
  t.reshape_in_place(Shape{channels, kImageSize, kImageSize});
  return {std::move(t), ClassLabel{labels.at(index)}, source_ids.at(index)};
}

Tensor DatasetArchive::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DimensionError("empty batch");
  const std::size_t sb = sample_bytes();
  Tensor t(Shape{indices.size(), channels, kImageSize, kImageSize});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DimensionError("sample index out of range");
    const std::uint8_t* src = pixels.data() + indices[i] * sb;
    float* dst = t.ptr() + i * sb;
    for (std::size_t k = 0; k < sb; ++k) dst[k] = static_cast<float>(src[k]) / 255.0f;
  }
  return t;
}

std::vector<int> DatasetArchive::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Bytes serialize_archive(const DatasetArchive& a) {
  if (a.pixels.size() != a.size() * a.sample_bytes() || a.source_ids.size() != a.size()) {
    throw DataFormatError("archive sections are inconsistent");
  }
  ByteWriter w;
  w.put_text(std::string(kMagic, kMagicLen));
  w.put_u32(static_cast<std::uint32_t>(a.size()));
  w.put_u8(static_cast<std::uint8_t>(a.channels));
  w.put_u16(static_cast<std::uint16_t>(kImageSize));
  w.put_u16(static_cast<std::uint16_t>(kImageSize));
  w.put_bytes(a.labels);
  w.put_bytes(a.pixels);
  const json manifest = {{"class_counts", a.class_counts()},
                         {"source_ids", a.source_ids},
                         {"content_sha256", a.content_hash()}};
  const std::string text = manifest.dump();
  w.put_u32(static_cast<std::uint32_t>(text.size()));
  w.put_text(text);
  return std::move(w.bytes());
}

DatasetArchive parse_archive(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.has(kMagicLen) || std::memcmp(r.take(kMagicLen).data(), kMagic, kMagicLen) != 0) {
    throw DataFormatError("bad magic: not a CXRA1 archive");
  }
  if (!r.has(9)) throw DataFormatError("truncated archive header");
  DatasetArchive a;
  const std::size_t count = r.u32();
  a.channels = r.u8();
  const std::size_t width = r.u16();
  const std::size_t height = r.u16();
  if (a.channels != 1 && a.channels != 3) {
    throw DataFormatError("archive channels must be 1 or 3, got " + std::to_string(a.channels));
  }
  if (width != kImageSize || height != kImageSize) {
    throw DataFormatError("archive images must be 90x90, got " + std::to_string(width) +
                          "x" + std::to_string(height));
  }
  const std::size_t payload = count * a.sample_bytes();
  if (!r.has(count + payload + 4)) {
    throw DataFormatError("archive length mismatch: header declares " +
                          std::to_string(count) + " samples (" +
                          std::to_string(count + payload) + " bytes), " +
                          std::to_string(r.remaining()) + " bytes follow");
  }
  auto labels = r.take(count);
  auto pixels = r.take(payload);
  a.labels.assign(labels.begin(), labels.end());
  a.pixels.assign(pixels.begin(), pixels.end());
  for (std::uint8_t l : a.labels) {
    if (l >= kNumClasses) throw DataFormatError("archive label " + std::to_string(l) + " out of range");
  }
  const std::size_t mlen = r.u32();
  if (r.remaining() != mlen) {
    throw DataFormatError("archive length mismatch: manifest declares " +
                          std::to_string(mlen) + " bytes, " +
                          std::to_string(r.remaining()) + " follow");
  }
  auto mbytes = r.take(mlen);
  try {
    const json m = json::parse(mbytes.begin(), mbytes.end());
    a.source_ids = m.at("source_ids").get<std::vector<std::string>>();
    const auto counts = m.at("class_counts").get<std::vector<std::size_t>>();
    const std::string hash = m.at("content_sha256").get<std::string>();
    if (a.source_ids.size() != count) {
      throw DataFormatError("manifest lists " + std::to_string(a.source_ids.size()) +
                            " source ids for " + std::to_string(count) + " samples");
    }
    const ClassCounts actual = a.class_counts();
    if (counts.size() != kNumClasses || !std::equal(counts.begin(), counts.end(), actual.begin())) {
      throw DataFormatError("manifest class counts disagree with the label section");
    }
    if (hash != a.content_hash()) {
      throw DataFormatError("content hash mismatch: manifest " + hash + ", payload " +
                            a.content_hash());
    }
  } catch (const json::exception& e) {
    throw DataFormatError(std::string("malformed archive manifest: ") + e.what());
  }
  return a;
}

void write_archive(const DatasetArchive& archive, const std::filesystem::path& path) {
  write_file(path, serialize_archive(archive));
}

DatasetArchive read_archive(const std::filesystem::path& path) {
  return parse_archive(read_file(path));
}

}  // namespace cxr
