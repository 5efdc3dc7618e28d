#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "data/dataset.hpp"

namespace cxr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string valid_names() {
  std::string out;
  for (const char* n : kClassNames) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

bool is_image_file(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm";
}

struct Candidate {
  fs::path path;
  std::string source_id;
  ClassLabel label;
};

}  // namespace

ClassLabel assign_label(const std::string& class_dir_name) {
  const std::string key = lower(class_dir_name);
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (key == lower(kClassNames[i])) return ClassLabel{static_cast<int>(i)};
  }
  throw DataFormatError("unknown class directory '" + class_dir_name +
                        "' (valid names: " + valid_names() + ")");
}

double majority_baseline(const ClassCounts& counts) {
  std::size_t total = 0, best = 0;
  for (std::size_t c : counts) {
    total += c;
    best = std::max(best, c);
  }
  if (total == 0) throw UsageError("majority baseline of an empty class table");
  return static_cast<double>(best) / static_cast<double>(total);
}

std::string IngestResult::report() const {
  json failed = json::array();
  for (const auto& f : failures) failed.push_back({{"source_id", f.source_id}, {"reason", f.reason}});
  const ClassCounts counts = archive.class_counts();
  json per_class = json::object();
  for (std::size_t i = 0; i < kNumClasses; ++i) per_class[kClassNames[i]] = counts[i];
  const json r = {{"channels", archive.channels},
                  {"total", archive.size()},
                  {"class_counts", per_class},
                  {"failures", failed},
                  {"warnings", warnings},
                  {"content_sha256", archive.content_hash()}};
  return r.dump(2);
}

IngestResult ingest(const fs::path& root, std::size_t channels) {
  if (channels != 1 && channels != 3) throw UsageError("channels must be 1 or 3");
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw UsageError("ingest root is not a directory: " + root.string());
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (!name.empty() && name[0] == '.') continue;
    class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) {
    throw DataFormatError("ingest root has no class directories: " + root.string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  IngestResult result;
  std::vector<Candidate> files;
  ClassCounts seen{};
  for (const auto& dir : class_dirs) {
    const ClassLabel label = assign_label(dir.filename().string());
    std::vector<fs::path> found;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end());
    for (auto& p : found) {
      files.push_back({p, fs::relative(p, root).generic_string(), label});
    }
    seen[static_cast<std::size_t>(label.id)] += found.size();
  }
  std::sort(files.begin(), files.end(),
            [](const Candidate& a, const Candidate& b) { return a.source_id < b.source_id; });
  if (files.empty()) throw DataFormatError("ingest root contains no image files: " + root.string());

  std::vector<std::optional<SampleImage>> decoded(files.size());
  std::vector<std::string> errors(files.size());
  const auto n = static_cast<std::ptrdiff_t>(files.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const Bytes bytes = read_file(files[i].path);
      decoded[i] = preprocess(decode_image(bytes), channels);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }

  result.archive.channels = channels;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (decoded[i]) {
      result.archive.append(*decoded[i], files[i].label, files[i].source_id);
    } else {
      result.failures.push_back({files[i].source_id, errors[i]});
    }
  }
  const ClassCounts counts = result.archive.class_counts();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) {
      result.warnings.push_back(std::string("class ") + kClassNames[c] + " has no decodable images" +
                                (seen[c] ? "" : " (directory missing or empty)"));
    }
  }
  return result;
}

SplitPlan make_split(std::span<const std::uint8_t> labels, double val_fraction,
                     std::uint64_t seed, bool stratified) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw UsageError("validation fraction must be in (0, 1), got " + std::to_string(val_fraction));
  }
  const std::size_t n = labels.size();
  // Guard against products like 0.29 * 100 landing just under an integer.
  const auto n_val = static_cast<std::size_t>(
      std::floor(val_fraction * static_cast<double>(n) * (1.0 + 1e-12)));
  if (n_val == 0 || n_val >= n) {
    throw UsageError("cannot split " + std::to_string(n) + " samples with validation fraction " +
                     std::to_string(val_fraction) + " (need a non-empty train and validation set)");
  }
  SplitPlan plan{seed, val_fraction, stratified, {}, {}};
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  if (!stratified) {
    plan.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    plan.val.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    return plan;
  }

  // Largest-remainder allocation of n_val across classes; ties go to the
  // lower class id.
  ClassCounts counts{};
  for (std::uint8_t l : labels) ++counts.at(l);
  std::array<std::size_t, kNumClasses> quota{};
  std::array<std::pair<std::size_t, std::size_t>, kNumClasses> rem{};  // (remainder numerator, class)
  std::size_t given = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    quota[c] = n_val * counts[c] / n;
    rem[c] = {n_val * counts[c] % n, c};
    given += quota[c];
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < n_val; ++k, ++given) ++quota[rem[k].second];

  // Within each class, the last quota[c] members of the shuffled order are
  // validation.
  std::vector<bool> is_val(n, false);
  std::array<std::size_t, kNumClasses> taken{};
  for (std::size_t k = n; k-- > 0;) {
    const std::size_t c = labels[order[k]];
    if (taken[c] < quota[c]) {
      is_val[order[k]] = true;
      ++taken[c];
    }
  }
  for (std::size_t idx : order) (is_val[idx] ? plan.val : plan.train).push_back(idx);
  return plan;
}

}  // namespace cxr
