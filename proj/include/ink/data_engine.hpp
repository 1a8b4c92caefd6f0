#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ink/common.hpp"
#include "ink/tensor.hpp"

namespace ink {

enum class Shape { circle, square, triangle };
enum class TexKind { plain, striped };

struct SceneObject {
    Shape shape = Shape::circle;
    std::string color_name;
    double color[3] = {0, 0, 0};
    TexKind texture = TexKind::plain;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // tight half-open pixel bbox
    Tensor mask;                          // full-scene binary mask
};

struct SyntheticScene {
    int size = 64;
    double bg_top[3] = {0, 0, 0};
    double bg_bottom[3] = {0, 0, 0};
    std::vector<SceneObject> objects;
};

// Deterministic scene render: pastel vertical-gradient background with 1 to 3
// non-overlapping textured shapes, each with an exact pixel mask.
std::pair<Tensor, SyntheticScene> generate_scene(uint64_t seed, int size = 64);

// The same scene without its objects.
Tensor render_background(const SyntheticScene& scene);

std::string shape_word(Shape s);
std::string texture_word(TexKind t);
const std::vector<std::string>& color_names();

// "a {texture} {color} {shape}" from ground truth.
std::string regional_caption(const SceneObject& obj);
// "a scene with {n} shapes".
std::string global_caption(const SyntheticScene& scene);

// Annotation pipeline stage products.
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int area() const { return (x1 - x0) * (y1 - y0); }
};

// One image moving through the pipeline; oracle annotators require the ground
// truth, remote/replay ones ignore it.
struct SceneRecord {
    std::string id;
    Tensor image;
    std::optional<SyntheticScene> truth;
};

class AnnotatorError : public DataError {
public:
    AnnotatorError(const std::string& stage, const std::string& msg)
        : DataError(stage + ": " + msg), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// The four-stage contract: tag -> localize -> segment -> caption. Each stage
// sees the image plus the outputs of earlier stages only.
class AnnotatorSuite {
public:
    virtual ~AnnotatorSuite() = default;
    virtual std::vector<std::string> tag(const SceneRecord& rec) = 0;
    virtual BBox localize(const SceneRecord& rec, const std::string& tag) = 0;
    virtual Tensor segment(const SceneRecord& rec, const std::string& tag, const BBox& box) = 0;
    virtual std::string caption(const SceneRecord& rec, const std::string& tag, const BBox& box,
                                const Tensor& crop) = 0;
    virtual std::string caption_global(const SceneRecord& rec) = 0;
};

// Exact annotators over the synthetic generator's ground truth.
std::unique_ptr<AnnotatorSuite> make_oracle_suite();

// Offline stand-in for remote annotator models: stage products are read from
// one JSON file per scene id, in the same schema a remote annotator service
// would return (see write_replay_file). A missing file or stage entry raises
// an AnnotatorError naming the stage.
std::unique_ptr<AnnotatorSuite> make_replay_suite(const std::string& dir);

// Serializes one scene's oracle products into the replay schema, so a replay
// directory can be produced without any remote service.
void write_replay_file(const std::string& dir, const SceneRecord& rec, AnnotatorSuite& suite);

const std::vector<std::string>& default_stoplist();
bool is_stoplisted(const std::string& tag, const std::vector<std::string>& stoplist);
std::vector<std::string> filter_tags(const std::vector<std::string>& tags,
                                     const std::vector<std::string>& stoplist = default_stoplist());

// Keep iff bbox area / image area lies in [tau_min, tau_max]; degenerate
// boxes are excluded.
bool filter_size(const BBox& box, int width, int height, double tau_min = 0.02,
                 double tau_max = 0.50);

struct BuildStats {
    int requested = 0;
    int candidates = 0;
    int kept = 0;
    int excluded_by_tag = 0;
    int excluded_by_size = 0;
    int skipped = 0;
};

struct BuildConfig {
    int count = 0;           // scenes to generate
    uint64_t seed = 0;
    int scene_size = 64;
    int subject_res = 32;    // persisted subject crops are resized to this
    double tau_min = 0.02;
    double tau_max = 0.50;
    std::vector<std::string> stoplist = default_stoplist();
};

// Runs the staged pipeline over `cfg.count` generated scenes and persists one
// quadruplet per kept tag under root/samples/<id>/, plus root/manifest.json.
// A stage failure skips that scene; more than 50% skips aborts the build.
BuildStats build_dataset(const BuildConfig& cfg, AnnotatorSuite& suite, const std::string& root);

// A persisted quadruplet, reloaded.
struct Quadruplet {
    std::string id;
    Tensor source;   // [3,S,S]
    Tensor mask;     // [S,S]
    Tensor subject;  // [3,subject_res,subject_res]
    std::string tag;
    BBox bbox;
    std::string caption_regional;
    std::string caption_global;
    uint64_t scene_seed = 0;
};

nlohmann::json read_dataset_manifest(const std::string& root);
std::vector<Quadruplet> load_dataset(const std::string& root);

}  // namespace ink
