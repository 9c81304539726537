#pragma once

// Manifest: one JSON object per line.
//
//   {"id": "s001", "image": "images/s001.ppm",
//    "boxes": [[x, y, w, h], ...],             insulator boxes (image frame)
//    "shell_boxes": [[[x, y, w, h], ...], ...], shells per insulator (crop frame)
//    "label": "broken", "mask": "masks/s001.pgm", "split": "test"}
//
// Only "image" is required. Without "boxes" the whole image is one insulator;
// without "shell_boxes" every insulator crop is one shell. Relative paths are
// resolved against the manifest's directory.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xai_triage/error.hpp"
#include "xai_triage/image.hpp"

namespace xai_triage {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

struct SampleRecord {
  std::size_t line = 0;  // 1-based
  std::string id;
  std::string image;                        // as written in the manifest
  std::filesystem::path image_path;         // resolved
  std::vector<Box> boxes;                   // empty: whole image
  std::vector<std::vector<Box>> shell_boxes;  // per insulator; empty: whole crop
  std::optional<std::string> label;
  std::optional<std::string> mask;
  std::optional<std::filesystem::path> mask_path;
  std::optional<Split> split;
};

struct ManifestError {
  std::size_t line = 0;
  std::string message;
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::vector<ManifestError> errors;
};

namespace detail {

inline Box parse_box(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorKind::validation, "box must be [x, y, w, h]");
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw Error(ErrorKind::validation, "box entries must be integers");
  }
  return {j[0].get<long>(), j[1].get<long>(), j[2].get<long>(), j[3].get<long>()};
}

inline bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return id != "." && id != "..";
}

inline SampleRecord parse_record(const std::string& text, std::size_t line,
                                 const std::filesystem::path& base_dir,
                                 const std::vector<std::string>& class_names) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, detail::concat("malformed JSON at byte ", e.byte));
  }
  if (!j.is_object()) throw Error(ErrorKind::validation, "line is not a JSON object");
  static const std::set<std::string> known{"id", "image", "boxes", "shell_boxes",
                                           "label", "mask", "split"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::validation, "unknown field '" + key + "'");
  }

  SampleRecord r;
  r.line = line;
  if (!j.contains("image") || !j["image"].is_string()) {
    throw Error(ErrorKind::validation, "missing string field 'image'");
  }
  r.image = j["image"].get<std::string>();
  r.image_path = base_dir / r.image;
  r.id = "line" + std::to_string(line);
  if (j.contains("id")) {
    if (!j["id"].is_string()) throw Error(ErrorKind::validation, "'id' must be a string");
    r.id = j["id"].get<std::string>();
  }
  if (!valid_id(r.id)) {
    throw Error(ErrorKind::validation, "id '" + r.id + "' must match [A-Za-z0-9_.-]+");
  }
  if (j.contains("boxes")) {
    if (!j["boxes"].is_array()) throw Error(ErrorKind::validation, "'boxes' must be an array");
    for (const auto& b : j["boxes"]) r.boxes.push_back(parse_box(b));
  }
  if (j.contains("shell_boxes")) {
    if (!j["shell_boxes"].is_array()) {
      throw Error(ErrorKind::validation, "'shell_boxes' must be an array");
    }
    for (const auto& group : j["shell_boxes"]) {
      if (!group.is_array()) {
        throw Error(ErrorKind::validation, "'shell_boxes' holds one box list per insulator");
      }
      std::vector<Box> shells;
      for (const auto& b : group) shells.push_back(parse_box(b));
      r.shell_boxes.push_back(std::move(shells));
    }
    const std::size_t insulators = r.boxes.empty() ? 1 : r.boxes.size();
    if (r.shell_boxes.size() != insulators) {
      throw Error(ErrorKind::validation,
                  detail::concat("'shell_boxes' has ", r.shell_boxes.size(),
                                 " lists for ", insulators, " insulators"));
    }
  }
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_string()) throw Error(ErrorKind::validation, "'label' must be a string");
    r.label = j["label"].get<std::string>();
    if (std::find(class_names.begin(), class_names.end(), *r.label) == class_names.end()) {
      throw Error(ErrorKind::validation, "unknown label '" + *r.label + "'");
    }
  }
  if (j.contains("mask") && !j["mask"].is_null()) {
    if (!j["mask"].is_string()) throw Error(ErrorKind::validation, "'mask' must be a string");
    r.mask = j["mask"].get<std::string>();
    r.mask_path = base_dir / *r.mask;
  }
  if (j.contains("split") && !j["split"].is_null()) {
    const std::string s = j["split"].is_string() ? j["split"].get<std::string>() : "";
    if (s == "train") r.split = Split::train;
    else if (s == "val") r.split = Split::val;
    else if (s == "test") r.split = Split::test;
    else throw Error(ErrorKind::validation, "split must be train, val or test");
  }

  // Boxes are checked against the image when its header is readable; an
  // unreadable image is reported when the record is processed.
  std::optional<PnmRaster> raster;
  try {
    raster = parse_pnm(read_file_bytes(r.image_path.string()));
  } catch (const Error&) {
  }
  for (std::size_t i = 0; i < r.boxes.size(); ++i) {
    const Box& b = r.boxes[i];
    if (b.width < 1 || b.height < 1) {
      throw Error(ErrorKind::out_of_bounds, "insulator box " + to_string(b) + " is empty");
    }
    if (raster && !box_within(b, raster->width, raster->height)) {
      throw Error(ErrorKind::out_of_bounds,
                  detail::concat("insulator box ", to_string(b), " outside image ",
                                 raster->width, "x", raster->height));
    }
  }
  for (std::size_t i = 0; i < r.shell_boxes.size(); ++i) {
    long w = 0, h = 0;
    if (!r.boxes.empty()) {
      w = r.boxes[i].width;
      h = r.boxes[i].height;
    } else if (raster) {
      w = static_cast<long>(raster->width);
      h = static_cast<long>(raster->height);
    }
    for (const Box& b : r.shell_boxes[i]) {
      if (b.width < 1 || b.height < 1) {
        throw Error(ErrorKind::out_of_bounds, "shell box " + to_string(b) + " is empty");
      }
      if (w > 0 && !box_within(b, static_cast<std::size_t>(w), static_cast<std::size_t>(h))) {
        throw Error(ErrorKind::out_of_bounds,
                    detail::concat("shell box ", to_string(b), " outside insulator crop ", w,
                                   "x", h));
      }
    }
  }
  return r;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                               const std::vector<std::string>& class_names) {
  Manifest out;
  std::set<std::string> ids;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      SampleRecord r = detail::parse_record(text, line, base_dir, class_names);
      if (!ids.insert(r.id).second) {
        throw Error(ErrorKind::validation, "duplicate id '" + r.id + "'");
      }
      out.records.push_back(std::move(r));
    } catch (const Error& e) {
      out.errors.push_back({line, e.what()});
    }
  }
  return out;
}

inline Manifest ingest_manifest(const std::filesystem::path& path,
                                const std::vector<std::string>& class_names = {
                                    "broken", "flash", "healthy"}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), class_names);
}

}  // namespace xai_triage
