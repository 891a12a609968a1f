#pragma once

// Corpus on disk: 8-bit RGB tile PNGs, {0, 255} mask PNGs and a manifest CSV.

#include "gseg/synth.hpp"
#include "gseg/tile.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gseg::io {

// [3, H, W] with values k / 255.
void write_png_rgb(const std::filesystem::path &path, const Tensor &image);
Tensor read_png_rgb(const std::filesystem::path &path);

// [H, W] binary mask stored as 0 / 255.
void write_png_mask(const std::filesystem::path &path, const Tensor &mask);
Tensor read_png_mask(const std::filesystem::path &path);

struct ManifestRow {
  std::uint64_t id = 0;
  std::string path;      // relative to the manifest directory
  std::string mask_path; // relative to the manifest directory
  TileCategory category = TileCategory::non_slum;
  std::string split;     // train / val / test
  std::vector<double> labeled_in; // budgets with this tile labeled

  bool operator==(const ManifestRow &) const = default;
};

std::vector<ManifestRow> manifest_rows(std::span<const TileRecord> tiles,
                                       const synth::Splits &splits);
void write_manifest(const std::filesystem::path &path, std::span<const ManifestRow> rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path &path);

// Writes tiles/<id>.png, masks/<id>.png and manifest.csv under `dir`.
void write_corpus(const std::filesystem::path &dir, std::span<const TileRecord> tiles,
                  const synth::Splits &splits);

struct LoadedCorpus {
  std::vector<TileRecord> tiles; // manifest order
  std::vector<ManifestRow> rows;
};

// Throws std::runtime_error when the manifest or a referenced file is missing.
LoadedCorpus load_corpus(const std::filesystem::path &dir);

} // namespace gseg::io
