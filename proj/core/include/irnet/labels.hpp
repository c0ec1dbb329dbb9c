#pragma once

#include <string>
#include <vector>

#include "irnet/image.hpp"

namespace irnet {

/// Pascal-VOC-style XML annotation (annotation/size/object/bndbox subset).
/// Returns metadata only (no pixel data): image size when <size> is present,
/// source from <filename>, and boxes converted from VOC's 1-based inclusive
/// pixel convention to 0-based half-open (x1 = xmin-1, x2 = xmax).
/// class_names maps <name> to class id; with no map every object is class 0.
/// Malformed XML, missing fields, non-numeric or inverted coordinates raise
/// ParseError with line/field diagnostics.
AnnotatedImage parse_voc_xml(const std::string& bytes,
                             const std::vector<std::string>* class_names = nullptr);

/// Serializes boxes back to VOC XML (1-based inclusive, rounded to ints).
std::string format_voc_xml(const AnnotatedImage& img,
                           const std::vector<std::string>* class_names = nullptr);

/// YOLO text labels: one "class cx cy w h" line per box, all normalized to
/// [0,1]. Converted to pixel corners for the given image size. Wrong field
/// count, non-numeric or out-of-range values raise ParseError with the line
/// number.
std::vector<Box> parse_yolo_txt(const std::string& bytes, std::int64_t image_w,
                                std::int64_t image_h);
std::string format_yolo_txt(const std::vector<Box>& boxes, std::int64_t image_w,
                            std::int64_t image_h);

/// Dataset manifest: one sample per line, "image-path<TAB>label-path".
struct ManifestEntry {
    std::string image_path;
    std::string label_path;
};
std::vector<ManifestEntry> parse_manifest(const std::string& text);
std::string format_manifest(const std::vector<ManifestEntry>& entries);

std::string read_text_file(const std::string& path); // IoError on failure
void write_text_file(const std::string& path, const std::string& content);

} // namespace irnet
