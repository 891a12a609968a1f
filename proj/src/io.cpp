#include "gseg/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace gseg::io {

namespace {

struct File {
  std::FILE *f;
  ~File() {
    if (f)
      std::fclose(f);
  }
};

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png(const std::filesystem::path &path, std::size_t h, std::size_t w,
               int color_type, const std::vector<std::uint8_t> &pixels) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  File file{std::fopen(path.c_str(), "wb")};
  if (!file.f)
    throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path.string());
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = pixels.size() / h;
  for (std::size_t y = 0; y < h; ++y)
    png_write_row(png, pixels.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  std::size_t h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

Decoded read_png(const std::filesystem::path &path) {
  File file{std::fopen(path.c_str(), "rb")};
  if (!file.f)
    throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading " + path.string());
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  Decoded d;
  d.w = png_get_image_width(png, info);
  d.h = png_get_image_height(png, info);
  d.channels = png_get_channels(png, info);
  d.pixels.resize(d.h * d.w * d.channels);
  for (std::size_t y = 0; y < d.h; ++y)
    png_read_row(png, d.pixels.data() + y * d.w * d.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

std::string format_budget(double b) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", b);
  return buf;
}

std::vector<std::string> split_line(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, sep))
    out.push_back(item);
  if (!line.empty() && line.back() == sep)
    out.emplace_back();
  return out;
}

std::string tile_name(std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06llu.png", static_cast<unsigned long long>(id));
  return buf;
}

} // namespace

void write_png_rgb(const std::filesystem::path &path, const Tensor &image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("write_png_rgb: expected [3, H, W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> px(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        px[(y * w + x) * 3 + c] = to_byte(image.data[(c * h + y) * w + x]);
  write_png(path, h, w, PNG_COLOR_TYPE_RGB, px);
}

Tensor read_png_rgb(const std::filesystem::path &path) {
  const Decoded d = read_png(path);
  Tensor out({3, d.h, d.w}, TensorKind::image);
  for (std::size_t y = 0; y < d.h; ++y)
    for (std::size_t x = 0; x < d.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = d.channels >= 3 ? c : 0;
        out.data[(c * d.h + y) * d.w + x] = d.pixels[(y * d.w + x) * d.channels + src] / 255.0;
      }
  return out;
}

void write_png_mask(const std::filesystem::path &path, const Tensor &mask) {
  if (mask.rank() != 2)
    throw std::invalid_argument("write_png_mask: expected [H, W]");
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    px[i] = mask.data[i] != 0.0 ? 255 : 0;
  write_png(path, mask.dim(0), mask.dim(1), PNG_COLOR_TYPE_GRAY, px);
}

Tensor read_png_mask(const std::filesystem::path &path) {
  const Decoded d = read_png(path);
  Tensor out({d.h, d.w}, TensorKind::mask);
  for (std::size_t i = 0; i < d.h * d.w; ++i)
    out.data[i] = d.pixels[i * d.channels] >= 128 ? 1.0 : 0.0;
  return out;
}

std::vector<ManifestRow> manifest_rows(std::span<const TileRecord> tiles,
                                       const synth::Splits &splits) {
  auto contains = [](const std::vector<std::uint64_t> &sorted, std::uint64_t id) {
    return std::binary_search(sorted.begin(), sorted.end(), id);
  };
  std::vector<ManifestRow> rows;
  for (const auto &t : tiles) {
    ManifestRow r;
    r.id = t.id;
    r.path = "tiles/" + tile_name(t.id);
    r.mask_path = "masks/" + tile_name(t.id);
    r.category = t.category;
    r.split = contains(splits.train, t.id) ? "train"
              : contains(splits.val, t.id) ? "val"
                                           : "test";
    for (const auto &b : splits.budgets)
      if (contains(b.labeled, t.id))
        r.labeled_in.push_back(b.fraction);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_manifest(const std::filesystem::path &path, std::span<const ManifestRow> rows) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << "id,path,mask_path,category,split,budgets_containing_as_labeled\n";
  for (const auto &r : rows) {
    os << r.id << ',' << r.path << ',' << r.mask_path << ',' << to_string(r.category) << ','
       << r.split << ',';
    for (std::size_t i = 0; i < r.labeled_in.size(); ++i)
      os << (i ? ";" : "") << format_budget(r.labeled_in[i]);
    os << '\n';
  }
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open manifest " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    const auto f = split_line(line, ',');
    if (f.size() != 6)
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": expected 6 fields");
    ManifestRow r;
    r.id = std::stoull(f[0]);
    r.path = f[1];
    r.mask_path = f[2];
    const auto cat = parse_category(f[3]);
    if (!cat)
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": unknown category " + f[3]);
    r.category = *cat;
    r.split = f[4];
    if (!f[5].empty())
      for (const auto &b : split_line(f[5], ';'))
        r.labeled_in.push_back(std::stod(b));
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_corpus(const std::filesystem::path &dir, std::span<const TileRecord> tiles,
                  const synth::Splits &splits) {
  const auto rows = manifest_rows(tiles, splits);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    write_png_rgb(dir / rows[i].path, tiles[i].image);
    write_png_mask(dir / rows[i].mask_path, tiles[i].mask);
  }
  write_manifest(dir / "manifest.csv", rows);
}

LoadedCorpus load_corpus(const std::filesystem::path &dir) {
  LoadedCorpus c;
  c.rows = read_manifest(dir / "manifest.csv");
  for (const auto &r : c.rows) {
    TileRecord t;
    t.id = r.id;
    t.image = read_png_rgb(dir / r.path);
    t.mask = read_png_mask(dir / r.mask_path);
    t.category = categorize_tile(t.mask);
    c.tiles.push_back(std::move(t));
  }
  return c;
}

} // namespace gseg::io
