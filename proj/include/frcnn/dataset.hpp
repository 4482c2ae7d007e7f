#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "frcnn/geometry.hpp"
#include "frcnn/image_io.hpp"
#include "frcnn/tensor.hpp"

namespace frcnn {

struct InstanceAnnotation {
    std::size_t class_id = 0;
    std::vector<Vec2> polygon;  // annotated ring, image coords
    PixelMask mask;             // polygon rasterized onto the frame
    QuadCorners corners;        // extreme-point corner targets from the mask
};

// Image + per-pixel labels + per-instance masks and corner annotations.
struct LabeledSample {
    std::string id;
    std::size_t width = 0, height = 0;
    Tensor image;                       // [3,H,W], values in [0,1]
    std::vector<std::size_t> semantic;  // row-major class ids, kIgnoreIndex for occluders
    std::vector<InstanceAnnotation> instances;

    std::vector<const InstanceAnnotation*> instances_of_class(std::size_t cls) const {
        std::vector<const InstanceAnnotation*> out;
        for (const auto& inst : instances)
            if (inst.class_id == cls) out.push_back(&inst);
        return out;
    }
};

struct Dataset {
    std::vector<std::string> class_names;  // index == class id
    std::vector<LabeledSample> samples;

    std::size_t class_id(const std::string& name) const {
        for (std::size_t i = 0; i < class_names.size(); ++i)
            if (class_names[i] == name) return i;
        fail("unknown class name: " + name);
    }
};

inline Palette default_palette(const std::vector<std::string>& class_names) {
    Palette p;
    static const std::array<std::array<std::uint8_t, 3>, 8> base{{{30, 30, 40},
                                                                  {170, 150, 130},
                                                                  {60, 110, 180},
                                                                  {180, 90, 40},
                                                                  {120, 180, 90},
                                                                  {200, 180, 60},
                                                                  {150, 60, 150},
                                                                  {80, 190, 190}}};
    for (std::size_t i = 0; i < class_names.size() && i < base.size(); ++i) p.colors[i] = base[i];
    p.colors[kIgnoreIndex] = {255, 255, 255};
    return p;
}

namespace detail {

inline std::vector<std::uint8_t> image_to_rgb8(const Tensor& image) {
    const std::size_t H = image.extent(1), W = image.extent(2);
    std::vector<std::uint8_t> rgb(H * W * 3);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < H * W; ++i) {
            const Scalar v = std::clamp(image.data()[c * H * W + i], Scalar(0), Scalar(1));
            rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return rgb;
}

inline Tensor rgb8_to_image(const RgbImage& img) {
    const std::size_t H = img.height, W = img.width;
    std::vector<Scalar> data(3 * H * W);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < H * W; ++i)
            data[c * H * W + i] = static_cast<Scalar>(img.pixels[i * 3 + c]) / Scalar(255);
    return Tensor::from_data({3, H, W}, std::move(data));
}

inline PixelMask rasterize_annotation_polygon(const std::vector<Vec2>& ring, std::size_t width,
                                              std::size_t height) {
    Polygon poly;
    poly.vertices = ring;
    poly.degenerate = ring.size() < 3;
    return rasterize_convex_polygon(poly, width, height);
}

}  // namespace detail

// Layout: images/<id>.png, semantic/<id>.png (indexed), instances/<id>.json,
// splits/{train,test}.txt, classes.txt.
inline void save_sample(const std::string& root, const LabeledSample& sample, const Palette& palette,
                        const std::vector<std::string>& class_names) {
    namespace fs = std::filesystem;
    for (const char* d : {"images", "semantic", "instances"})
        fs::create_directories(fs::path(root) / d);

    write_png_rgb8((fs::path(root) / "images" / (sample.id + ".png")).string(), sample.width,
                   sample.height, detail::image_to_rgb8(sample.image));

    std::vector<std::uint8_t> sem(sample.semantic.size());
    for (std::size_t i = 0; i < sem.size(); ++i) sem[i] = static_cast<std::uint8_t>(sample.semantic[i]);
    write_png_indexed8((fs::path(root) / "semantic" / (sample.id + ".png")).string(), sample.width,
                       sample.height, sem, palette);

    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& inst : sample.instances) {
        nlohmann::json points = nlohmann::json::array();
        for (const Vec2& p : inst.polygon) points.push_back({p.x, p.y});
        require(inst.class_id < class_names.size(), "instance class id outside the palette");
        shapes.push_back({{"label", class_names[inst.class_id]}, {"points", points}});
    }
    std::ofstream os((fs::path(root) / "instances" / (sample.id + ".json")).string());
    require(os.good(), "cannot write instance annotations for " + sample.id);
    os << nlohmann::json{{"shapes", shapes}}.dump(1) << "\n";
}

inline void write_class_names(const std::string& root, const std::vector<std::string>& names) {
    std::ofstream os((std::filesystem::path(root) / "classes.txt").string());
    require(os.good(), "cannot write classes.txt under " + root);
    for (const auto& n : names) os << n << "\n";
}

inline std::vector<std::string> read_class_names(const std::string& root) {
    std::ifstream is((std::filesystem::path(root) / "classes.txt").string());
    require(is.good(), "missing classes.txt under " + root);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) names.push_back(line);
    return names;
}

// Resolves a Labelme-style label that may be a class name or a numeric id.
inline std::size_t resolve_label(const nlohmann::json& label, const std::vector<std::string>& names) {
    if (label.is_number_unsigned() || label.is_number_integer())
        return label.get<std::size_t>();
    const std::string s = label.get<std::string>();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == s) return i;
    fail("instance label '" + s + "' not found in classes.txt");
}

inline LabeledSample load_sample(const std::string& root, const std::string& id,
                                 const std::vector<std::string>& class_names) {
    namespace fs = std::filesystem;
    const fs::path image_path = fs::path(root) / "images" / (id + ".png");
    const fs::path semantic_path = fs::path(root) / "semantic" / (id + ".png");
    const fs::path instances_path = fs::path(root) / "instances" / (id + ".json");
    for (const fs::path& p : {image_path, semantic_path, instances_path})
        require(fs::exists(p), "sample '" + id + "': missing counterpart file " + p.string());

    LabeledSample sample;
    sample.id = id;
    const RgbImage rgb = read_png_rgb(image_path.string());
    sample.width = rgb.width;
    sample.height = rgb.height;
    sample.image = detail::rgb8_to_image(rgb);

    const IndexedImage sem = read_png_indexed(semantic_path.string());
    require(sem.width == sample.width && sem.height == sample.height,
            "sample '" + id + "': semantic mask extent mismatch");
    sample.semantic.assign(sem.indices.begin(), sem.indices.end());

    std::ifstream is(instances_path.string());
    nlohmann::json doc;
    is >> doc;
    for (const auto& shape : doc.at("shapes")) {
        const auto& points = shape.at("points");
        if (points.size() < 3) {
            std::cerr << "warning: sample '" << id << "': skipping polygon with " << points.size()
                      << " points\n";
            continue;
        }
        InstanceAnnotation inst;
        inst.class_id = resolve_label(shape.at("label"), class_names);
        for (const auto& p : points)
            inst.polygon.push_back({p.at(0).get<Scalar>(), p.at(1).get<Scalar>()});
        inst.mask = detail::rasterize_annotation_polygon(inst.polygon, sample.width, sample.height);
        if (inst.mask.empty()) {
            std::cerr << "warning: sample '" << id << "': polygon rasterizes to nothing, skipped\n";
            continue;
        }
        inst.corners = gbbox_corners_from_mask(inst.mask);
        sample.instances.push_back(std::move(inst));
    }
    return sample;
}

inline std::vector<std::string> read_split(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), "cannot open split file: " + path);
    std::vector<std::string> stems;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) stems.push_back(line);
    }
    return stems;
}

inline Dataset load_dataset(const std::string& root, const std::string& split_file) {
    Dataset ds;
    ds.class_names = read_class_names(root);
    for (const std::string& stem : read_split(split_file))
        ds.samples.push_back(load_sample(root, stem, ds.class_names));
    return ds;
}

}  // namespace frcnn
