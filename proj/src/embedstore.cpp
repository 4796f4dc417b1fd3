#include "patchdev/embedstore.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace patchdev {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

bool is_safe_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

void check_prompt(const TensorF32& t, const char* field, std::uint32_t d, std::vector<Violation>& out) {
  if (t.dims.size() != 1 || t.dims[0] != d || t.values.size() != d) {
    std::string shape = "(";
    for (std::size_t i = 0; i < t.dims.size(); ++i) shape += (i ? "," : "") + std::to_string(t.dims[i]);
    out.push_back({"", field, "prompt tensor must have shape (" + std::to_string(d) + ",), got " + shape + ")"});
    return;
  }
  double n2 = 0.0;
  for (float v : t.values) {
    if (!std::isfinite(v)) {
      out.push_back({"", field, "non-finite prompt value"});
      return;
    }
    n2 += static_cast<double>(v) * v;
  }
  if (n2 == 0.0) out.push_back({"", field, "prompt embedding has zero norm"});
}

}  // namespace

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw std::runtime_error("unknown split '" + s + "'");
}

std::vector<const ImageRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::string Violation::describe() const {
  std::string s;
  if (!record_id.empty()) s += "[" + record_id + "] ";
  s += field + ": " + message;
  return s;
}

ValidationError::ValidationError(std::vector<Violation> violations)
    : std::runtime_error([&] {
        std::string msg = "dataset validation failed:";
        for (const auto& v : violations) msg += "\n  " + v.describe();
        return msg;
      }()),
      violations_(std::move(violations)) {}

std::vector<Violation> validate(const DatasetManifest& m, const ValidateOptions& options) {
  std::vector<Violation> out;
  if (m.format_version != kManifestVersion) {
    out.push_back({"", "format_version", "unsupported manifest version " + std::to_string(m.format_version)});
  }
  if (m.records.empty()) out.push_back({"", "images", "dataset has no images"});
  if (m.embed_dim == 0) out.push_back({"", "embed_dim", "embedding dimension must be positive"});
  if (m.grid.h == 0 || m.grid.w == 0) {
    out.push_back({"", "grid", "patch grid must be positive, got " + std::to_string(m.grid.h) + "x" +
                                   std::to_string(m.grid.w)});
  }
  check_prompt(m.prompt_normal, "prompt_normal", m.embed_dim, out);
  check_prompt(m.prompt_abnormal, "prompt_abnormal", m.embed_dim, out);

  std::set<std::string> seen;
  for (const auto& r : m.records) {
    if (!is_safe_id(r.id)) out.push_back({r.id, "id", "record id must be non-empty [A-Za-z0-9_.-]"});
    if (!seen.insert(r.id).second) out.push_back({r.id, "id", "duplicate record id"});
    if (r.label != 0 && r.label != 1) {
      out.push_back({r.id, "label", "label must be 0 or 1, got " + std::to_string(r.label)});
    }
    if (r.split == Split::train && r.label != 0) {
      out.push_back({r.id, "label", "train split contains anomalous label"});
    }
    if (r.grid != m.grid) {
      out.push_back({r.id, "grid", "patch grid " + std::to_string(r.grid.h) + "x" + std::to_string(r.grid.w) +
                                       " differs from dataset grid " + std::to_string(m.grid.h) + "x" +
                                       std::to_string(m.grid.w)});
    }
    const auto& e = r.embeddings;
    if (e.dims.size() != 2 || e.values.size() != e.element_count()) {
      out.push_back({r.id, "embeddings", "embedding tensor must be rank 2 (P, d)"});
      continue;
    }
    if (e.dims[1] != m.embed_dim) {
      out.push_back({r.id, "embeddings", "dimension mismatch: d=" + std::to_string(e.dims[1]) + ", dataset d=" +
                                             std::to_string(m.embed_dim)});
    }
    if (e.dims[0] != r.grid.patches()) {
      out.push_back({r.id, "embeddings", std::to_string(e.dims[0]) + " rows but grid has " +
                                             std::to_string(r.grid.patches()) + " patches"});
    }
    const std::size_t d = e.dims[1];
    for (std::size_t p = 0; d > 0 && p < e.dims[0]; ++p) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) n2 += static_cast<double>(e.values[p * d + j]) * e.values[p * d + j];
      const double norm = std::sqrt(n2);
      if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitNormTolerance) {
        out.push_back({r.id, "embeddings[" + std::to_string(p) + "]", "row norm " + fmt_double(norm) + " is not 1"});
      }
    }
    if (r.mask) {
      const auto& mk = *r.mask;
      if (mk.dims != std::vector<std::uint32_t>{kMaskSide, kMaskSide} || mk.values.size() != kMaskSide * kMaskSide) {
        out.push_back({r.id, "mask", "mask must have shape (256, 256)"});
      } else {
        for (auto v : mk.values) {
          if (v != 0 && v != 255) {
            out.push_back({r.id, "mask", "mask value " + std::to_string(v) + " is not 0 or 255"});
            break;
          }
        }
      }
    } else if (options.require_masks && r.split == Split::test) {
      out.push_back({r.id, "mask", "test record has no mask but pixel evaluation was requested"});
    }
  }
  return out;
}

namespace {

json record_to_json(const ImageRecord& r) {
  json j;
  j["id"] = r.id;
  j["split"] = to_string(r.split);
  j["label"] = r.label;
  j["grid"] = {r.grid.h, r.grid.w};
  j["embeddings"] = "images/" + r.id + ".devt";
  j["mask"] = r.mask ? json("masks/" + r.id + ".devt") : json(nullptr);
  return j;
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw std::runtime_error(where + ": manifest missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::runtime_error(where + ": bad value for '" + key + "': " + e.what());
  }
}

PatchGrid grid_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error(where + ": grid must be [h, w]");
  return PatchGrid{j[0].get<std::uint32_t>(), j[1].get<std::uint32_t>()};
}

}  // namespace

void write_dataset(const DatasetManifest& m, const fs::path& dir) {
  if (auto v = validate(m); !v.empty()) throw ValidationError(std::move(v));

  json j;
  j["format_version"] = m.format_version;
  j["embed_dim"] = m.embed_dim;
  j["class_name"] = m.class_name;
  j["grid"] = {m.grid.h, m.grid.w};
  j["prompts"] = {{"normal", "prompts/normal.devt"}, {"abnormal", "prompts/abnormal.devt"}};
  j["metadata"] = m.metadata;
  j["images"] = json::array();
  for (const auto& r : m.records) j["images"].push_back(record_to_json(r));

  fs::create_directories(dir);
  write_tensor(dir / "prompts" / "normal.devt", m.prompt_normal);
  write_tensor(dir / "prompts" / "abnormal.devt", m.prompt_abnormal);
  for (const auto& r : m.records) {
    write_tensor(dir / "images" / (r.id + ".devt"), r.embeddings);
    if (r.mask) write_tensor(dir / "masks" / (r.id + ".devt"), *r.mask);
  }
  const auto text = j.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

DatasetManifest load_dataset_unchecked(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto bytes = read_file_bytes(manifest_path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  const std::string where = manifest_path.string();

  DatasetManifest m;
  m.format_version = get_field<std::uint32_t>(j, "format_version", where);
  m.embed_dim = get_field<std::uint32_t>(j, "embed_dim", where);
  m.class_name = get_field<std::string>(j, "class_name", where);
  m.grid = grid_from_json(get_field<json>(j, "grid", where), where);
  if (j.contains("metadata")) m.metadata = j["metadata"];

  const auto prompts = get_field<json>(j, "prompts", where);
  m.prompt_normal = read_tensor_f32(dir / get_field<std::string>(prompts, "normal", where));
  m.prompt_abnormal = read_tensor_f32(dir / get_field<std::string>(prompts, "abnormal", where));

  for (const auto& ji : get_field<json>(j, "images", where)) {
    ImageRecord r;
    r.id = get_field<std::string>(ji, "id", where);
    const std::string rwhere = where + " [" + r.id + "]";
    r.split = split_from_string(get_field<std::string>(ji, "split", rwhere));
    r.label = get_field<int>(ji, "label", rwhere);
    r.grid = grid_from_json(get_field<json>(ji, "grid", rwhere), rwhere);
    r.embeddings = read_tensor_f32(dir / get_field<std::string>(ji, "embeddings", rwhere));
    if (ji.contains("mask") && !ji["mask"].is_null()) {
      r.mask = read_tensor_u8(dir / ji["mask"].get<std::string>());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest read_dataset(const fs::path& dir, const ValidateOptions& options) {
  auto m = load_dataset_unchecked(dir);
  if (auto v = validate(m, options); !v.empty()) throw ValidationError(std::move(v));
  return m;
}

}  // namespace patchdev
