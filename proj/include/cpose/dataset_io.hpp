#pragma once

// Dataset directories:
//   manifest.txt   "CPSD 1 <n_frames>" then one line per frame:
//                  <frame_file> <tx> <ty> <tz> <qw> <qx> <qy> <qz> [camera_tag]
//   frame_%06d.ppm binary P6, maxval 255
//   metadata.txt   optional "key value" lines (source, seed, lineage)

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "cpose/dataset.hpp"

namespace cpose {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw DatasetError("malformed number '" + s + "'");
  }
  return v;
}

inline std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06zu.ppm", index);
  return buf;
}

/// (3,H,W) image in [0,1] to P6 bytes, rounding to the nearest level.
inline void write_ppm(const std::filesystem::path& path, const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm: expected (3,H,W) image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + i], 0.0, 1.0);
      bytes[3 * i + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline Tensor<double> read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open image " + path.string());
  const auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P6") throw DatasetError("image decode error in " + path.string() + ": not a P6 file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DatasetError("image decode error in " + path.string() + ": bad header");
  }
  if (w == 0 || h == 0 || maxval != 255) {
    throw DatasetError("image decode error in " + path.string() + ": unsupported dimensions or maxval");
  }
  std::vector<unsigned char> bytes(3 * w * h);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DatasetError("image decode error in " + path.string() + ": truncated pixel data");
  }
  Tensor<double> img(Shape{3, h, w});
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = bytes[3 * i + c] / 255.0;
  return img;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "CPSD 1 " << ds.size() << '\n';
  for (const auto& s : ds.samples) {
    const std::string file = frame_file_name(s.frame_index);
    write_ppm(dir / file, s.image);
    manifest << file;
    for (double v : s.pose.translation) manifest << ' ' << format_double(v);
    for (double v : s.pose.rotation) manifest << ' ' << format_double(v);
    if (s.camera_tag) manifest << ' ' << *s.camera_tag;
    manifest << '\n';
  }
  std::ofstream meta(dir / "metadata.txt", std::ios::trunc);
  meta << "source " << ds.info.source << '\n' << "seed " << ds.info.seed << '\n';
  for (const auto& l : ds.info.lineage) meta << "lineage " << l << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw DatasetError("missing manifest.txt in " + dir.string());
  std::string magic;
  int version = 0;
  std::size_t n = 0;
  if (!(manifest >> magic >> version >> n) || magic != "CPSD") {
    throw DatasetError("malformed manifest header in " + dir.string());
  }
  if (version != 1) throw DatasetError("unsupported manifest version " + std::to_string(version));
  std::string line;
  std::getline(manifest, line);
  Dataset ds;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (fields.size() != 8 && fields.size() != 9) {
      throw DatasetError("malformed manifest line: " + line);
    }
    PoseSample s;
    const std::string& file = fields[0];
    if (std::sscanf(file.c_str(), "frame_%zu.ppm", &s.frame_index) != 1) {
      throw DatasetError("unrecognized frame file name " + file);
    }
    for (std::size_t i = 0; i < 3; ++i) s.pose.translation[i] = parse_double(fields[1 + i]);
    for (std::size_t i = 0; i < 4; ++i) s.pose.rotation[i] = parse_double(fields[4 + i]);
    if (fields.size() == 9) s.camera_tag = fields[8];
    s.image = read_ppm(dir / file);
    ds.samples.push_back(std::move(s));
  }
  if (ds.size() != n) {
    throw DatasetError("manifest declares " + std::to_string(n) + " frames but lists " +
                       std::to_string(ds.size()));
  }
  std::size_t on_disk = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".ppm") ++on_disk;
  }
  if (on_disk != n) {
    throw DatasetError("manifest declares " + std::to_string(n) + " frames but " +
                       std::to_string(on_disk) + " frame files are on disk");
  }
  if (std::ifstream meta(dir / "metadata.txt"); meta) {
    for (std::string key, value; meta >> key && std::getline(meta >> std::ws, value);) {
      if (key == "source") ds.info.source = value;
      else if (key == "seed") ds.info.seed = std::stoull(value);
      else if (key == "lineage") ds.info.lineage.push_back(value);
    }
  }
  return ds;
}

}  // namespace cpose
