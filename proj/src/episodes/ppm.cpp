#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

namespace fs = std::filesystem;

namespace msd::episodes {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  /// Offset where the most recent number began.
  std::size_t last_start() const { return last_start_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
          ++pos_;
        }
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    last_start_ = start;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) {
        throw ParseError(std::string("ppm: ") + field + " too large", start);
      }
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError(std::string("ppm: expected ") + field, start);
    }
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t last_start_ = 0;
};

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw ParseError("ppm: missing P6 magic", 0);
  }
  HeaderReader r(bytes.subspan(2));
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  const std::size_t maxval = r.number("maxval");
  const std::size_t maxval_at = r.last_start() + 2;
  if (w == 0 || h == 0) {
    throw ParseError("ppm: zero image extent", 2);
  }
  if (maxval != 255) {
    throw ParseError("ppm: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  }
  std::size_t pos = r.pos() + 2;
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw ParseError("ppm: expected single whitespace before pixel data", pos);
  }
  ++pos;
  const std::size_t hw = h * w;
  if (bytes.size() - pos < 3 * hw) {
    throw ParseError("ppm: truncated pixel data, need " + std::to_string(3 * hw) + " bytes", bytes.size());
  }
  std::vector<double> v(3 * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      v[c * hw + p] = static_cast<double>(bytes[pos + 3 * p + c]) / 255.0;
    }
  }
  return Tensor({3, h, w}, std::move(v));
}

Tensor read_ppm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_ppm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_ppm(const fs::path& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(img.shape()));
  }
  const std::size_t h = img.dim(1), w = img.dim(2), hw = h * w;
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto v = img.values();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double x = std::clamp(v[c * hw + p], 0.0, 1.0);
      out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(x * 255.0))));
    }
  }
}

Dataset load_image_folder(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw IoError("image folder not found: " + root.string());
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) {
      class_dirs.push_back(entry.path());
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    throw CapacityError("image folder " + root.string() + " has no class directories");
  }

  Dataset out;
  out.modality = Modality::image;
  out.num_classes = class_dirs.size();
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw CapacityError("class directory " + class_dirs[c].string() + " holds no .ppm images");
    }
    out.class_names.push_back(class_dirs[c].filename().string());
    for (const auto& file : files) {
      const Tensor img = read_ppm(file);
      if (out.sample_shape.empty()) {
        out.sample_shape = img.shape();
      } else if (img.shape() != out.sample_shape) {
        throw ShapeError("image " + file.string() + " has extents " + shape_str(img.shape()) +
                         ", expected " + shape_str(out.sample_shape));
      }
      out.values.insert(out.values.end(), img.values().begin(), img.values().end());
      out.labels.push_back(static_cast<int>(c));
      out.sources.push_back(fs::relative(file, root).generic_string());
    }
  }
  return out;
}

}  // namespace msd::episodes
