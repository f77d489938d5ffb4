#include "lpr/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace lpr {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(path, "cannot open for reading");
  return in;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(path, "truncated file");
  return v;
}

void write_f32(std::ostream& out, const float* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_f32(std::istream& in, float* data, std::size_t n,
              const std::filesystem::path& path) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)))) {
    fail(path, "truncated file");
  }
}

void write_magic(std::ostream& out, const char* magic) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char* magic,
                  const std::filesystem::path& path) {
  char buf[4] = {};
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    fail(path, std::string("missing ") + magic + " magic");
  }
}

void check_write(std::ostream& out, const std::filesystem::path& path) {
  if (!out) fail(path, "write failed");
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out = open_out(path, true);
  write_magic(out, "LPRC");
  write_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (const Point3& p : cloud.points) {
    const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z())};
    write_f32(out, xyz, 3);
  }
  check_write(out, path);
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  expect_magic(in, "LPRC", path);
  const std::uint32_t count = read_u32(in, path);
  PointCloud cloud;
  cloud.points.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    float xyz[3];
    read_f32(in, xyz, 3, path);
    cloud.points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  return cloud;
}

void save_poses(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ofstream out = open_out(path, false);
  for (const Pose& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        out << format_double(pose.rotation(r, c)) << ' ';
      }
      out << format_double(pose.translation(r));
      out << (r == 2 ? '\n' : ' ');
    }
  }
  check_write(out, path);
}

std::vector<Pose> load_poses(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, false);
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Pose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (!(ss >> pose.rotation(r, c))) fail(path, "bad pose line: " + line);
      }
      if (!(ss >> pose.translation(r))) fail(path, "bad pose line: " + line);
    }
    poses.push_back(pose);
  }
  return poses;
}

void save_range_image(const std::filesystem::path& path, const RangeImage& img) {
  std::ofstream out = open_out(path, true);
  write_magic(out, "LPRI");
  write_u32(out, static_cast<std::uint32_t>(img.h));
  write_u32(out, static_cast<std::uint32_t>(img.w));
  write_f32(out, img.data.data(), img.data.size());
  check_write(out, path);
}

RangeImage load_range_image(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  expect_magic(in, "LPRI", path);
  RangeImage img;
  img.h = static_cast<int>(read_u32(in, path));
  img.w = static_cast<int>(read_u32(in, path));
  if (img.h <= 0 || img.w <= 0 || static_cast<long long>(img.h) * img.w > (1 << 28)) {
    fail(path, "implausible image dimensions");
  }
  img.data.resize(static_cast<std::size_t>(img.h) * img.w);
  read_f32(in, img.data.data(), img.data.size(), path);
  return img;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<TensorBlob>& tensors) {
  std::ofstream out = open_out(path, true);
  write_magic(out, "LPRW");
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const TensorBlob& t : tensors) {
    std::size_t n = 1;
    for (std::uint32_t d : t.dims) n *= d;
    if (n != t.data.size()) fail(path, "tensor " + t.name + " dims mismatch data");
    write_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) write_u32(out, d);
    write_f32(out, t.data.data(), t.data.size());
  }
  check_write(out, path);
}

std::vector<TensorBlob> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  expect_magic(in, "LPRW", path);
  const std::uint32_t count = read_u32(in, path);
  if (count > 1u << 16) fail(path, "implausible tensor count");
  std::vector<TensorBlob> tensors(count);
  for (TensorBlob& t : tensors) {
    const std::uint32_t name_len = read_u32(in, path);
    if (name_len > 4096) fail(path, "implausible tensor name length");
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) fail(path, "truncated file");
    const std::uint32_t rank = read_u32(in, path);
    if (rank > 8) fail(path, "implausible tensor rank");
    t.dims.resize(rank);
    std::size_t n = 1;
    for (std::uint32_t& d : t.dims) {
      d = read_u32(in, path);
      n *= d;
    }
    if (n > 1u << 28) fail(path, "implausible tensor size");
    t.data.resize(n);
    read_f32(in, t.data.data(), n, path);
  }
  return tensors;
}

void save_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out = open_out(path, false);
  for (const auto& [key, value] : kv) out << key << '=' << value << '\n';
  check_write(out, path);
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, false);
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(path, "expected key=value, got: " + line);
    kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

const std::string* find_key(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return &v;
  }
  return nullptr;
}

void save_descriptor_file(const std::filesystem::path& path, const DescriptorFile& db) {
  if (db.data.size() != db.count() * db.dim) {
    fail(path, "descriptor data does not match count * dim");
  }
  std::ofstream out = open_out(path, true);
  write_magic(out, "LPRD");
  write_u32(out, static_cast<std::uint32_t>(db.count()));
  write_u32(out, db.dim);
  write_f32(out, db.data.data(), db.data.size());
  for (const DescriptorRecord& rec : db.records) {
    out << rec.id << ',' << format_double(rec.timestamp);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << ',' << format_double(rec.pose.rotation(r, c));
      out << ',' << format_double(rec.pose.translation(r));
    }
    out << '\n';
  }
  check_write(out, path);
}

DescriptorFile load_descriptor_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  expect_magic(in, "LPRD", path);
  const std::uint32_t count = read_u32(in, path);
  DescriptorFile db;
  db.dim = read_u32(in, path);
  if (static_cast<std::uint64_t>(count) * db.dim > 1u << 28) {
    fail(path, "implausible database size");
  }
  db.data.resize(static_cast<std::size_t>(count) * db.dim);
  read_f32(in, db.data.data(), db.data.size(), path);
  db.records.resize(count);
  std::string line;
  for (DescriptorRecord& rec : db.records) {
    if (!std::getline(in, line)) fail(path, "missing metadata line");
    std::istringstream ss(line);
    char comma = 0;
    if (!(ss >> rec.id >> comma >> rec.timestamp)) fail(path, "bad metadata: " + line);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (!(ss >> comma >> rec.pose.rotation(r, c))) fail(path, "bad metadata: " + line);
      }
      if (!(ss >> comma >> rec.pose.translation(r))) fail(path, "bad metadata: " + line);
    }
  }
  return db;
}

}  // namespace lpr
