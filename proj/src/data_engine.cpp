#include "ink/data_engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ink/common.hpp"
#include "ink/image.hpp"
#include "ink/rng.hpp"

namespace ink {

namespace {

struct NamedColor {
    const char* name;
    double rgb[3];
};

// Every color keeps at least one channel at or below 0.6 so objects always
// contrast with the pastel background (channels >= 0.78).
const std::array<NamedColor, 8> kColors = {{{"red", {0.85, 0.20, 0.20}},
                                            {"green", {0.20, 0.70, 0.25}},
                                            {"blue", {0.20, 0.35, 0.85}},
                                            {"yellow", {0.90, 0.85, 0.20}},
                                            {"purple", {0.55, 0.25, 0.70}},
                                            {"orange", {0.95, 0.55, 0.15}},
                                            {"teal", {0.15, 0.60, 0.60}},
                                            {"brown", {0.55, 0.35, 0.20}}}};

bool inside_shape(Shape s, int x, int y, int cx, int cy, int half) {
    switch (s) {
        case Shape::circle:
            return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= half * half;
        case Shape::square:
            return std::abs(x - cx) <= half && std::abs(y - cy) <= half;
        case Shape::triangle: {
            if (y < cy - half || y > cy + half) return false;
            double t = static_cast<double>(y - (cy - half)) / (2.0 * half);
            return std::abs(x - cx) <= t * half;
        }
    }
    return false;
}

bool boxes_overlap(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1) {
    return ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1;
}

std::string tag_of(const SceneObject& o) { return o.color_name + " " + shape_word(o.shape); }

std::string slug(std::string s) {
    for (char& c : s)
        if (c == ' ') c = '_';
    return s;
}

}  // namespace

std::string shape_word(Shape s) {
    switch (s) {
        case Shape::circle: return "circle";
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
    }
    return "circle";
}

std::string texture_word(TexKind t) { return t == TexKind::plain ? "plain" : "striped"; }

const std::vector<std::string>& color_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const NamedColor& c : kColors) v.push_back(c.name);
        return v;
    }();
    return names;
}

std::string regional_caption(const SceneObject& obj) {
    return "a " + texture_word(obj.texture) + " " + obj.color_name + " " + shape_word(obj.shape);
}

std::string global_caption(const SyntheticScene& scene) {
    return "a scene with " + std::to_string(scene.objects.size()) + " shapes";
}

Tensor render_background(const SyntheticScene& scene) {
    const int n = scene.size;
    Tensor img({3, n, n});
    for (int y = 0; y < n; ++y) {
        double t = n > 1 ? static_cast<double>(y) / (n - 1) : 0.0;
        for (int c = 0; c < 3; ++c) {
            double v = scene.bg_top[c] + t * (scene.bg_bottom[c] - scene.bg_top[c]);
            for (int x = 0; x < n; ++x) img.at(c, y, x) = v;
        }
    }
    return img;
}

std::pair<Tensor, SyntheticScene> generate_scene(uint64_t seed, int size) {
    if (size < 32) throw DataError("generate_scene: size must be at least 32");
    Rng rng(seed);
    SyntheticScene scene;
    scene.size = size;
    for (int c = 0; c < 3; ++c) scene.bg_top[c] = 0.78 + 0.19 * rng.uniform();
    for (int c = 0; c < 3; ++c) scene.bg_bottom[c] = 0.78 + 0.19 * rng.uniform();

    const int want = 1 + static_cast<int>(rng.uniform_index(3));
    std::set<int> used_combo;
    for (int k = 0; k < want; ++k) {
        int combo;
        do {
            combo = static_cast<int>(rng.uniform_index(kColors.size() * 3));
        } while (used_combo.count(combo));
        used_combo.insert(combo);
        SceneObject obj;
        const NamedColor& col = kColors[static_cast<size_t>(combo) / 3];
        obj.color_name = col.name;
        for (int c = 0; c < 3; ++c) obj.color[c] = col.rgb[c];
        obj.shape = static_cast<Shape>(combo % 3);
        obj.texture = rng.uniform() < 0.5 ? TexKind::plain : TexKind::striped;

        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            int half = 4 + static_cast<int>(rng.uniform_index(11));
            int cx = half + 2 + static_cast<int>(rng.uniform_index(size - 2 * half - 3));
            int cy = half + 2 + static_cast<int>(rng.uniform_index(size - 2 * half - 3));
            int bx0 = cx - half - 1, by0 = cy - half - 1;
            int bx1 = cx + half + 2, by1 = cy + half + 2;
            bool clash = false;
            for (const SceneObject& other : scene.objects)
                if (boxes_overlap(bx0, by0, bx1, by1, other.x0 - 1, other.y0 - 1, other.x1 + 1,
                                  other.y1 + 1))
                    clash = true;
            if (clash) continue;

            obj.mask = Tensor::zeros({size, size});
            int mx0 = size, my0 = size, mx1 = -1, my1 = -1;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    if (inside_shape(obj.shape, x, y, cx, cy, half)) {
                        obj.mask.at(y, x) = 1.0;
                        mx0 = std::min(mx0, x);
                        my0 = std::min(my0, y);
                        mx1 = std::max(mx1, x);
                        my1 = std::max(my1, y);
                    }
            obj.x0 = mx0;
            obj.y0 = my0;
            obj.x1 = mx1 + 1;
            obj.y1 = my1 + 1;
            placed = true;
        }
        if (placed) scene.objects.push_back(std::move(obj));
    }
    if (scene.objects.empty())
        throw DataError("generate_scene: placement failed for every object");

    Tensor img = render_background(scene);
    for (const SceneObject& obj : scene.objects)
        for (int y = obj.y0; y < obj.y1; ++y) {
            bool dark = (y / 2) % 2 == 1;
            for (int x = obj.x0; x < obj.x1; ++x)
                if (obj.mask.at(y, x) != 0.0)
                    for (int c = 0; c < 3; ++c) {
                        double v = obj.color[c];
                        if (obj.texture == TexKind::striped && dark) v *= 0.55;
                        img.at(c, y, x) = v;
                    }
        }
    return {std::move(img), std::move(scene)};
}

namespace {

class OracleSuite : public AnnotatorSuite {
public:
    std::vector<std::string> tag(const SceneRecord& rec) override {
        const SyntheticScene& s = need(rec, "tag");
        std::vector<std::string> tags;
        for (const SceneObject& o : s.objects) tags.push_back(tag_of(o));
        tags.push_back("sky");
        return tags;
    }

    BBox localize(const SceneRecord& rec, const std::string& tag) override {
        const SceneObject& o = find(rec, tag, "localize");
        return BBox{o.x0, o.y0, o.x1, o.y1};
    }

    Tensor segment(const SceneRecord& rec, const std::string& tag, const BBox&) override {
        return find(rec, tag, "segment").mask;
    }

    std::string caption(const SceneRecord& rec, const std::string& tag, const BBox&,
                        const Tensor&) override {
        return regional_caption(find(rec, tag, "caption"));
    }

    std::string caption_global(const SceneRecord& rec) override {
        return global_caption(need(rec, "caption"));
    }

private:
    static const SyntheticScene& need(const SceneRecord& rec, const char* stage) {
        if (!rec.truth) throw AnnotatorError(stage, "oracle annotator needs scene truth");
        return *rec.truth;
    }
    static const SceneObject& find(const SceneRecord& rec, const std::string& tag,
                                   const char* stage) {
        for (const SceneObject& o : need(rec, stage).objects)
            if (tag_of(o) == tag) return o;
        throw AnnotatorError(stage, "unknown tag '" + tag + "'");
    }
};

class ReplaySuite : public AnnotatorSuite {
public:
    explicit ReplaySuite(std::string dir) : dir_(std::move(dir)) {}

    std::vector<std::string> tag(const SceneRecord& rec) override {
        return record(rec, "tag").at("tags").get<std::vector<std::string>>();
    }

    BBox localize(const SceneRecord& rec, const std::string& tag) override {
        auto box = entry(rec, tag, "localize").at("bbox").get<std::vector<int>>();
        if (box.size() != 4) throw AnnotatorError("localize", "bad bbox for '" + tag + "'");
        return BBox{box[0], box[1], box[2], box[3]};
    }

    Tensor segment(const SceneRecord& rec, const std::string& tag, const BBox&) override {
        auto rows = entry(rec, tag, "segment").at("mask").get<std::vector<std::string>>();
        int h = static_cast<int>(rows.size());
        if (h == 0) throw AnnotatorError("segment", "empty mask for '" + tag + "'");
        int w = static_cast<int>(rows[0].size());
        Tensor mask({h, w});
        for (int y = 0; y < h; ++y) {
            if (static_cast<int>(rows[static_cast<size_t>(y)].size()) != w)
                throw AnnotatorError("segment", "ragged mask for '" + tag + "'");
            for (int x = 0; x < w; ++x)
                mask.at(y, x) = rows[static_cast<size_t>(y)][static_cast<size_t>(x)] == '1' ? 1.0 : 0.0;
        }
        return mask;
    }

    std::string caption(const SceneRecord& rec, const std::string& tag, const BBox&,
                        const Tensor&) override {
        return entry(rec, tag, "caption").at("caption").get<std::string>();
    }

    std::string caption_global(const SceneRecord& rec) override {
        return record(rec, "caption").at("caption_global").get<std::string>();
    }

private:
    const nlohmann::json& record(const SceneRecord& rec, const char* stage) {
        auto it = cache_.find(rec.id);
        if (it != cache_.end()) return it->second;
        std::string path = dir_ + "/" + rec.id + ".json";
        std::ifstream f(path);
        if (!f) throw AnnotatorError(stage, "missing replay file " + path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw AnnotatorError(stage, "bad replay file " + path + ": " + e.what());
        }
        return cache_.emplace(rec.id, std::move(j)).first->second;
    }
    const nlohmann::json& entry(const SceneRecord& rec, const std::string& tag,
                                const char* stage) {
        const nlohmann::json& j = record(rec, stage);
        if (!j.contains("objects") || !j.at("objects").contains(tag))
            throw AnnotatorError(stage, "no replay entry for tag '" + tag + "'");
        return j.at("objects").at(tag);
    }

    std::string dir_;
    std::map<std::string, nlohmann::json> cache_;
};

}  // namespace

std::unique_ptr<AnnotatorSuite> make_oracle_suite() { return std::make_unique<OracleSuite>(); }

std::unique_ptr<AnnotatorSuite> make_replay_suite(const std::string& dir) {
    return std::make_unique<ReplaySuite>(dir);
}

void write_replay_file(const std::string& dir, const SceneRecord& rec, AnnotatorSuite& suite) {
    std::filesystem::create_directories(dir);
    nlohmann::json objects = nlohmann::json::object();
    std::vector<std::string> tags = suite.tag(rec);
    for (const std::string& tag : tags) {
        if (is_stoplisted(tag, default_stoplist())) continue;
        BBox box = suite.localize(rec, tag);
        Tensor mask = suite.segment(rec, tag, box);
        std::vector<std::string> rows;
        for (int y = 0; y < mask.shape[0]; ++y) {
            std::string row(static_cast<size_t>(mask.shape[1]), '0');
            for (int x = 0; x < mask.shape[1]; ++x)
                if (mask.at(y, x) != 0.0) row[static_cast<size_t>(x)] = '1';
            rows.push_back(std::move(row));
        }
        Tensor crop = crop_image(rec.image, box.y0, box.x0, box.y1 - box.y0, box.x1 - box.x0);
        objects[tag] = {{"bbox", {box.x0, box.y0, box.x1, box.y1}},
                        {"mask", rows},
                        {"caption", suite.caption(rec, tag, box, crop)}};
    }
    nlohmann::json j = {{"tags", tags},
                        {"objects", objects},
                        {"caption_global", suite.caption_global(rec)}};
    std::ofstream f(dir + "/" + rec.id + ".json");
    f << j.dump(2) << "\n";
    if (!f) throw DataError("write_replay_file: write failed for " + rec.id);
}

const std::vector<std::string>& default_stoplist() {
    static const std::vector<std::string> list = {"sky", "nature", "skin"};
    return list;
}

bool is_stoplisted(const std::string& tag, const std::vector<std::string>& stoplist) {
    return std::find(stoplist.begin(), stoplist.end(), tag) != stoplist.end();
}

std::vector<std::string> filter_tags(const std::vector<std::string>& tags,
                                     const std::vector<std::string>& stoplist) {
    std::vector<std::string> out;
    for (const std::string& t : tags)
        if (!is_stoplisted(t, stoplist)) out.push_back(t);
    return out;
}

bool filter_size(const BBox& box, int width, int height, double tau_min, double tau_max) {
    if (box.x1 <= box.x0 || box.y1 <= box.y0) return false;
    double ratio = static_cast<double>(box.area()) / (static_cast<double>(width) * height);
    return ratio >= tau_min && ratio <= tau_max;
}

namespace {

std::string scene_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

}  // namespace

namespace {

struct PendingSample {
    std::string id;
    Tensor mask;
    Tensor subject;
    nlohmann::json meta;
};

}  // namespace

BuildStats build_dataset(const BuildConfig& cfg, AnnotatorSuite& suite, const std::string& root) {
    if (cfg.count <= 0) throw UsageError("build_dataset: empty dataset requested");
    std::filesystem::create_directories(root + "/samples");

    BuildStats stats;
    stats.requested = cfg.count;
    std::vector<std::string> sample_ids;
    std::vector<std::string> log;

    for (int i = 0; i < cfg.count; ++i) {
        const uint64_t scene_seed = mix_seed(cfg.seed, static_cast<uint64_t>(i));
        auto [image, scene] = generate_scene(scene_seed, cfg.scene_size);
        SceneRecord rec{scene_id(i), image, std::move(scene)};

        std::vector<std::string> tags;
        try {
            tags = suite.tag(rec);
        } catch (const AnnotatorError& e) {
            stats.candidates += 1;
            stats.skipped += 1;
            log.push_back(rec.id + " [" + e.stage() + "]: " + e.what());
            continue;
        }
        stats.candidates += static_cast<int>(tags.size());
        std::vector<std::string> surviving = filter_tags(tags, cfg.stoplist);
        stats.excluded_by_tag += static_cast<int>(tags.size() - surviving.size());

        // Buffer the whole scene so a stage failure can skip it atomically.
        std::vector<PendingSample> pending;
        int scene_excluded_by_size = 0;
        try {
            for (const std::string& tag : surviving) {
                BBox box = suite.localize(rec, tag);
                Tensor mask = suite.segment(rec, tag, box);
                if (!filter_size(box, cfg.scene_size, cfg.scene_size, cfg.tau_min, cfg.tau_max)) {
                    scene_excluded_by_size += 1;
                    continue;
                }
                Tensor crop =
                    crop_image(rec.image, box.y0, box.x0, box.y1 - box.y0, box.x1 - box.x0);
                std::string cap = suite.caption(rec, tag, box, crop);
                PendingSample ps;
                ps.id = rec.id + "_" + slug(tag);
                ps.mask = std::move(mask);
                ps.subject = resize_bilinear(crop, cfg.subject_res, cfg.subject_res);
                ps.meta = {{"tag", tag},
                           {"bbox", {box.x0, box.y0, box.x1, box.y1}},
                           {"caption_regional", cap},
                           {"caption_global", suite.caption_global(rec)},
                           {"scene_seed", scene_seed}};
                pending.push_back(std::move(ps));
            }
        } catch (const AnnotatorError& e) {
            stats.skipped += static_cast<int>(surviving.size());
            log.push_back(rec.id + " [" + e.stage() + "]: " + e.what());
            continue;
        }
        stats.excluded_by_size += scene_excluded_by_size;
        for (PendingSample& ps : pending) {
            const std::string dir = root + "/samples/" + ps.id;
            std::filesystem::create_directories(dir);
            write_image_png(dir + "/source.png", rec.image);
            write_mask_png(dir + "/mask.png", ps.mask);
            write_image_png(dir + "/subject.png", ps.subject);
            std::ofstream mf(dir + "/meta.json");
            mf << ps.meta.dump(2) << "\n";
            if (!mf) throw DataError("build_dataset: write failed for " + ps.id);
            sample_ids.push_back(ps.id);
            stats.kept += 1;
        }
    }

    if (2 * stats.skipped > stats.candidates)
        throw DataError("build_dataset: skip rate exceeded 50% (" +
                        std::to_string(stats.skipped) + " of " +
                        std::to_string(stats.candidates) + " candidates); first failure: " +
                        (log.empty() ? std::string("unlogged") : log.front()));

    nlohmann::json manifest = {{"schema", 1},
                               {"seed", cfg.seed},
                               {"requested", stats.requested},
                               {"scene_size", cfg.scene_size},
                               {"subject_res", cfg.subject_res},
                               {"tau_min", cfg.tau_min},
                               {"tau_max", cfg.tau_max},
                               {"count", stats.kept},
                               {"stats",
                                {{"candidates", stats.candidates},
                                 {"kept", stats.kept},
                                 {"excluded_by_tag", stats.excluded_by_tag},
                                 {"excluded_by_size", stats.excluded_by_size},
                                 {"skipped", stats.skipped}}},
                               {"log", log},
                               {"samples", sample_ids}};
    std::ofstream mf(root + "/manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw DataError("build_dataset: write failed for manifest");
    return stats;
}

nlohmann::json read_dataset_manifest(const std::string& root) {
    std::ifstream f(root + "/manifest.json");
    if (!f) throw DataError("dataset: cannot open " + root + "/manifest.json");
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset: bad manifest in " + root + ": " + e.what());
    }
}

std::vector<Quadruplet> load_dataset(const std::string& root) {
    nlohmann::json manifest = read_dataset_manifest(root);
    const int scene_size = manifest.at("scene_size");
    const int subject_res = manifest.at("subject_res");
    const double tau_min = manifest.at("tau_min");
    const double tau_max = manifest.at("tau_max");
    std::vector<Quadruplet> out;
    for (const auto& sid : manifest.at("samples")) {
        const std::string dir = root + "/samples/" + sid.get<std::string>();
        Quadruplet q;
        q.id = sid.get<std::string>();
        q.source = read_image_png(dir + "/source.png");
        q.mask = read_mask_png(dir + "/mask.png");
        q.subject = read_image_png(dir + "/subject.png");
        std::ifstream mf(dir + "/meta.json");
        if (!mf) throw DataError("dataset: missing meta.json for " + q.id);
        nlohmann::json meta = nlohmann::json::parse(mf);
        q.tag = meta.at("tag");
        auto box = meta.at("bbox").get<std::vector<int>>();
        if (box.size() != 4) throw DataError("dataset: bad bbox for " + q.id);
        q.bbox = BBox{box[0], box[1], box[2], box[3]};
        q.caption_regional = meta.at("caption_regional");
        q.caption_global = meta.at("caption_global");
        q.scene_seed = meta.at("scene_seed");

        if (q.source.shape != std::vector<int>{3, scene_size, scene_size})
            throw DataError("dataset: bad source shape for " + q.id);
        if (q.mask.shape != std::vector<int>{scene_size, scene_size})
            throw DataError("dataset: bad mask shape for " + q.id);
        if (q.subject.shape != std::vector<int>{3, subject_res, subject_res})
            throw DataError("dataset: bad subject shape for " + q.id);
        for (double v : q.mask.data)
            if (v != 0.0 && v != 1.0) throw DataError("dataset: non-binary mask for " + q.id);
        if (q.bbox.x0 < 0 || q.bbox.y0 < 0 || q.bbox.x1 > scene_size || q.bbox.y1 > scene_size ||
            !filter_size(q.bbox, scene_size, scene_size, tau_min, tau_max))
            throw DataError("dataset: bbox out of bounds for " + q.id);
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace ink
