#include "irnet/labels.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "irnet/errors.hpp"

namespace irnet {

namespace {

namespace pt = boost::property_tree;

std::int64_t voc_int(const pt::ptree& node, const char* field, std::size_t object_index) {
    const auto child = node.get_child_optional(field);
    if (!child)
        throw ParseError("voc: object " + std::to_string(object_index) + ": missing <" + field +
                         ">");
    const std::string text = child->get_value<std::string>();
    try {
        std::size_t used = 0;
        // VOC files in the wild sometimes carry float coordinates; round them.
        const double v = std::stod(text, &used);
        while (used < text.size() && std::isspace(static_cast<unsigned char>(text[used])))
            ++used;
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<std::int64_t>(std::llround(v));
    } catch (const std::exception&) {
        throw ParseError("voc: object " + std::to_string(object_index) + ": <" + field +
                         "> is not a number: '" + text + "'");
    }
}

int voc_class(const std::string& name, const std::vector<std::string>* class_names,
              std::size_t object_index) {
    if (!class_names) return 0;
    const auto it = std::find(class_names->begin(), class_names->end(), name);
    if (it == class_names->end())
        throw ParseError("voc: object " + std::to_string(object_index) + ": unknown class '" +
                         name + "'");
    return static_cast<int>(it - class_names->begin());
}

} // namespace

AnnotatedImage parse_voc_xml(const std::string& bytes,
                             const std::vector<std::string>* class_names) {
    pt::ptree tree;
    try {
        std::istringstream in(bytes);
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError(std::string("voc: malformed xml: ") + e.message(),
                         static_cast<int>(e.line()));
    }
    const auto root = tree.get_child_optional("annotation");
    if (!root) throw ParseError("voc: missing <annotation> root element");

    AnnotatedImage img;
    img.source = root->get<std::string>("filename", "");
    if (const auto size = root->get_child_optional("size")) {
        img.width = size->get<std::int64_t>("width", 0);
        img.height = size->get<std::int64_t>("height", 0);
        if (img.width < 0 || img.height < 0)
            throw ParseError("voc: negative <size> dimensions");
    }

    std::size_t index = 0;
    for (const auto& [key, node] : *root) {
        if (key != "object") continue;
        const auto bnd = node.get_child_optional("bndbox");
        if (!bnd) throw ParseError("voc: object " + std::to_string(index) + ": missing <bndbox>");
        const std::int64_t xmin = voc_int(*bnd, "xmin", index);
        const std::int64_t ymin = voc_int(*bnd, "ymin", index);
        const std::int64_t xmax = voc_int(*bnd, "xmax", index);
        const std::int64_t ymax = voc_int(*bnd, "ymax", index);
        // 1-based inclusive -> 0-based half-open.
        Box b;
        b.cls = voc_class(node.get<std::string>("name", ""), class_names, index);
        b.x1 = static_cast<double>(xmin - 1);
        b.y1 = static_cast<double>(ymin - 1);
        b.x2 = static_cast<double>(xmax);
        b.y2 = static_cast<double>(ymax);
        if (xmin < 1 || ymin < 1)
            throw ParseError("voc: object " + std::to_string(index) +
                             ": coordinates must be 1-based positive");
        if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
            throw ParseError("voc: object " + std::to_string(index) + ": inverted box (" +
                             std::to_string(xmin) + "," + std::to_string(ymin) + "," +
                             std::to_string(xmax) + "," + std::to_string(ymax) + ")");
        if (img.width > 0 && img.height > 0 &&
            (b.x2 > static_cast<double>(img.width) || b.y2 > static_cast<double>(img.height)))
            throw ParseError("voc: object " + std::to_string(index) + ": box outside <size>");
        img.boxes.push_back(b);
        ++index;
    }
    return img;
}

std::string format_voc_xml(const AnnotatedImage& img,
                           const std::vector<std::string>* class_names) {
    std::ostringstream os;
    os << "<annotation>\n";
    os << "  <filename>" << img.source << "</filename>\n";
    os << "  <size>\n    <width>" << img.width << "</width>\n    <height>" << img.height
       << "</height>\n    <depth>1</depth>\n  </size>\n";
    for (const Box& b : img.boxes) {
        std::string name = "target";
        if (class_names && b.cls >= 0 &&
            static_cast<std::size_t>(b.cls) < class_names->size())
            name = (*class_names)[static_cast<std::size_t>(b.cls)];
        os << "  <object>\n    <name>" << name << "</name>\n    <bndbox>\n";
        os << "      <xmin>" << std::llround(b.x1) + 1 << "</xmin>\n";
        os << "      <ymin>" << std::llround(b.y1) + 1 << "</ymin>\n";
        os << "      <xmax>" << std::llround(b.x2) << "</xmax>\n";
        os << "      <ymax>" << std::llround(b.y2) << "</ymax>\n";
        os << "    </bndbox>\n  </object>\n";
    }
    os << "</annotation>\n";
    return os.str();
}

namespace {

double yolo_field(const std::string& token, const char* what, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
        if (!std::isfinite(v)) throw std::invalid_argument(token);
        return v;
    } catch (const std::exception&) {
        throw ParseError(std::string("yolo: ") + what + " is not a number: '" + token + "'",
                         line);
    }
}

} // namespace

std::vector<Box> parse_yolo_txt(const std::string& bytes, std::int64_t image_w,
                                std::int64_t image_h) {
    if (image_w <= 0 || image_h <= 0)
        throw ShapeError("parse_yolo_txt: non-positive image size");
    std::vector<Box> boxes;
    std::istringstream in(bytes);
    std::string line_text;
    int line = 0;
    while (std::getline(in, line_text)) {
        ++line;
        std::istringstream ls(line_text);
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        if (tokens.empty()) continue; // blank line
        if (tokens.size() != 5)
            throw ParseError("yolo: expected 5 fields 'class cx cy w h', got " +
                                 std::to_string(tokens.size()),
                             line);
        const double cls = yolo_field(tokens[0], "class", line);
        if (cls < 0 || cls != std::floor(cls))
            throw ParseError("yolo: class must be a non-negative integer: '" + tokens[0] + "'",
                             line);
        const double cx = yolo_field(tokens[1], "cx", line);
        const double cy = yolo_field(tokens[2], "cy", line);
        const double w = yolo_field(tokens[3], "w", line);
        const double h = yolo_field(tokens[4], "h", line);
        for (double v : {cx, cy, w, h})
            if (v < 0.0 || v > 1.0)
                throw ParseError("yolo: normalized value outside [0,1]", line);
        Box b;
        b.cls = static_cast<int>(cls);
        b.x1 = (cx - w / 2) * static_cast<double>(image_w);
        b.y1 = (cy - h / 2) * static_cast<double>(image_h);
        b.x2 = (cx + w / 2) * static_cast<double>(image_w);
        b.y2 = (cy + h / 2) * static_cast<double>(image_h);
        // Normalized inputs can put corners epsilon outside; clamp to bounds.
        b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image_w));
        b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image_h));
        b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(image_w));
        b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(image_h));
        if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
            throw ParseError("yolo: degenerate box (zero width or height)", line);
        boxes.push_back(b);
    }
    return boxes;
}

std::string format_yolo_txt(const std::vector<Box>& boxes, std::int64_t image_w,
                            std::int64_t image_h) {
    if (image_w <= 0 || image_h <= 0)
        throw ShapeError("format_yolo_txt: non-positive image size");
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const Box& b : boxes) {
        const double cx = (b.x1 + b.x2) / 2 / static_cast<double>(image_w);
        const double cy = (b.y1 + b.y2) / 2 / static_cast<double>(image_h);
        const double w = (b.x2 - b.x1) / static_cast<double>(image_w);
        const double h = (b.y2 - b.y1) / static_cast<double>(image_h);
        os << b.cls << " " << cx << " " << cy << " " << w << " " << h << "\n";
    }
    return os.str();
}

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> entries;
    std::istringstream in(text);
    std::string line_text;
    int line = 0;
    while (std::getline(in, line_text)) {
        ++line;
        if (!line_text.empty() && line_text.back() == '\r') line_text.pop_back();
        if (line_text.empty()) continue;
        const std::size_t tab = line_text.find('\t');
        if (tab == std::string::npos)
            throw ParseError("manifest: expected 'image-path<TAB>label-path'", line);
        ManifestEntry e;
        e.image_path = line_text.substr(0, tab);
        e.label_path = line_text.substr(tab + 1);
        if (e.image_path.empty() || e.label_path.empty())
            throw ParseError("manifest: empty path", line);
        entries.push_back(e);
    }
    return entries;
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
    std::ostringstream os;
    for (const ManifestEntry& e : entries) os << e.image_path << "\t" << e.label_path << "\n";
    return os.str();
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << content;
    if (!f) throw IoError("short write: " + path);
}

} // namespace irnet
