#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lpr/geometry.hpp"
#include "lpr/range_image.hpp"

namespace lpr {

// All binary formats are little-endian. Loaders throw std::runtime_error with
// the offending path on any structural problem.

/// Scan file: magic "LPRC", u32 point count, count x 3 float32 (x, y, z).
void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_point_cloud(const std::filesystem::path& path);

/// Pose text file: one pose per line, 12 floats row-major 3x4 [R|t].
/// Values round-trip doubles exactly.
void save_poses(const std::filesystem::path& path, const std::vector<Pose>& poses);
std::vector<Pose> load_poses(const std::filesystem::path& path);

/// Range image file: magic "LPRI", u32 h, u32 w, h x w float32 row-major,
/// invalid pixels kept as the sentinel.
void save_range_image(const std::filesystem::path& path, const RangeImage& img);
RangeImage load_range_image(const std::filesystem::path& path);

/// One named parameter tensor of a checkpoint.
struct TensorBlob {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

/// Checkpoint file: magic "LPRW", u32 tensor count, then per tensor
/// u32 name length, name bytes, u32 rank, u32 dims, float32 data.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<TensorBlob>& tensors);
std::vector<TensorBlob> load_checkpoint(const std::filesystem::path& path);

/// Order-preserving key=value lines; '#' starts a comment line.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
void save_key_values(const std::filesystem::path& path, const KeyValues& kv);
KeyValues load_key_values(const std::filesystem::path& path);
const std::string* find_key(const KeyValues& kv, const std::string& key);

/// Per-descriptor bookkeeping stored with the database.
struct DescriptorRecord {
  std::uint32_t id = 0;
  double timestamp = 0.0;
  Pose pose;
};

/// Descriptor database file: magic "LPRD", u32 count, u32 dim, count x dim
/// float32, then one CSV metadata line per entry (id,timestamp,12 pose floats).
struct DescriptorFile {
  std::uint32_t dim = 0;
  std::vector<float> data;  // count * dim, row-major
  std::vector<DescriptorRecord> records;

  std::size_t count() const { return records.size(); }
};

void save_descriptor_file(const std::filesystem::path& path, const DescriptorFile& db);
DescriptorFile load_descriptor_file(const std::filesystem::path& path);

/// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double value);

}  // namespace lpr
