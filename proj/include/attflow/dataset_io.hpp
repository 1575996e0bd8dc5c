#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "attflow/image.hpp"
#include "attflow/scene.hpp"

namespace attflow::io {

namespace fs = std::filesystem;

inline constexpr int kDatasetVersion = 1;
inline constexpr int kAnnotationVersion = 1;
inline constexpr std::uint32_t kTargetsVersion = 1;

// Directory layout:
//   manifest.txt                 "attflow-dataset <version>", then "split <name> <count>"
//   <split>/<NNNNNN>.ppm         scene image
//   <split>/<NNNNNN>.txt         annotation sidecar
void write_dataset(const fs::path& dir, const scene::Dataset& dataset);
scene::Dataset read_dataset(const fs::path& dir);

void write_annotation(const fs::path& path, const scene::Scene& scene);
// Reads the sidecar and the image next to it.
scene::Scene read_scene(const fs::path& image_path, const fs::path& annotation_path);

// Flat little-endian file: "ATFLTGTS" | u32 version | u32 count | u32 channels |
// u32 height | u32 width | f64 values, image after image.
void write_targets(const fs::path& path, const std::vector<Image>& targets);
std::vector<Image> read_targets(const fs::path& path);

}  // namespace attflow::io
