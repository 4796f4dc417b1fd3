#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdev/tensor_file.hpp"

namespace patchdev {

inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr std::uint32_t kMaskSide = 256;
inline constexpr double kUnitNormTolerance = 1e-5;

enum class Split { train, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct PatchGrid {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::size_t patches() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const PatchGrid&) const = default;
};

struct ImageRecord {
  std::string id;
  Split split = Split::test;
  int label = 0;  // 0 normal, 1 anomalous
  PatchGrid grid;
  TensorF32 embeddings;            // (P, d), unit-norm rows
  std::optional<TensorU8> mask;    // (256, 256), values {0, 255}

  std::size_t patch_count() const { return embeddings.dims.empty() ? 0 : embeddings.dims[0]; }
  std::size_t dim() const { return embeddings.dims.size() < 2 ? 0 : embeddings.dims[1]; }
  std::span<const float> row(std::size_t p) const {
    return std::span<const float>(embeddings.values).subspan(p * dim(), dim());
  }
};

struct DatasetManifest {
  std::uint32_t format_version = kManifestVersion;
  std::uint32_t embed_dim = 0;
  std::string class_name;
  PatchGrid grid;
  std::vector<ImageRecord> records;
  TensorF32 prompt_normal;    // (d,)
  TensorF32 prompt_abnormal;  // (d,)
  nlohmann::json metadata = nlohmann::json::object();  // backbone, resize, generator config...

  std::vector<const ImageRecord*> split(Split s) const;
};

struct Violation {
  std::string record_id;  // empty for dataset-level violations
  std::string field;
  std::string message;

  std::string describe() const;
};

struct ValidateOptions {
  bool require_masks = false;  // pixel evaluation requested
};

std::vector<Violation> validate(const DatasetManifest& manifest, const ValidateOptions& options = {});

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

// Writes manifest.json, prompts/{normal,abnormal}.devt, images/<id>.devt and
// masks/<id>.devt. Throws ValidationError before touching disk if invalid.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& directory);

// Reads and fully re-validates. Throws FormatError on corrupt tensors,
// std::runtime_error on missing files and ValidationError on invariant breaks.
DatasetManifest read_dataset(const std::filesystem::path& directory, const ValidateOptions& options = {});

// Loads without validating; used by `validate` to report every violation.
DatasetManifest load_dataset_unchecked(const std::filesystem::path& directory);

}  // namespace patchdev
