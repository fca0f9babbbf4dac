#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "cropsim/error.hpp"
#include "cropsim/geometry.hpp"
#include "cropsim/synth/scene.hpp"

namespace cropsim::data {

// Ground-truth crop row as stored in the manifest.
struct RowTruth {
  double angle_deg = 0;
  double offset_px = 0;  // x_at_mid - W/2
};

struct ManifestEntry {
  std::string stem;
  std::uint64_t seed = 0;
  synth::Domain domain = synth::Domain::sim;
  std::optional<RowTruth> row;
};

// On-disk layout: root/images/<stem>.png, root/labels/<stem>.txt,
// root/manifest.json.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::string content_hash;  // sha256 over stems and label bytes, hex

  std::filesystem::path image_path(const ManifestEntry& e) const;
  std::filesystem::path label_path(const ManifestEntry& e) const;
};

inline constexpr int kManifestVersion = 1;

// `0 cx cy w h` with shortest round-trip decimal formatting.
std::string format_label_line(const BBox& b);
void write_label_file(const std::filesystem::path& path, const std::vector<BBox>& boxes);

// Parses a label file; throws ValidationError naming file:line for the first
// malformed line.
std::vector<BBox> parse_label_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string compute_content_hash(const DatasetManifest& m);

void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& root);

// Opens a YOLO dataset directory. Uses root/manifest.json when present,
// otherwise indexes images/*.png (domain `fallback_domain`, seed 0).
DatasetManifest load_yolo_dataset(const std::filesystem::path& root,
                                  synth::Domain fallback_domain = synth::Domain::sim);

// Opens a dataset for image-only use (unlabeled training pools). Trusts the
// manifest's recorded hash and never opens a label file.
DatasetManifest open_unlabeled(const std::filesystem::path& root);

struct Finding {
  std::string file;
  int line = 0;  // 0 when the finding is not tied to a line
  std::string kind;  // missing_pair | range | parse | class | manifest
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool ok() const { return findings.empty(); }
};

// Read-only structural check of a dataset directory.
ValidationReport validate_dataset(const std::filesystem::path& root);

// Records every label file read, tagged with the reading stage. Training
// stages refuse to read real-domain labels.
class LabelAudit {
 public:
  struct Record {
    std::string stage;
    std::string path;
    synth::Domain domain;
  };

  void record(std::string stage, std::string path, synth::Domain domain);
  const std::vector<Record>& records() const { return records_; }
  bool any_real_label_read_in(std::string_view stage_prefix) const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<Record> records_;
};

class ZeroShotViolation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

enum class LabelUse { training, evaluation };

// Loads the labels of every entry. For LabelUse::training, any real-domain
// entry raises ZeroShotViolation before a file is opened.
std::vector<std::vector<BBox>> read_labels(const DatasetManifest& m, LabelUse use,
                                           const std::string& stage, LabelAudit* audit);

cv::Mat read_image(const DatasetManifest& m, const ManifestEntry& e);

}  // namespace cropsim::data
