#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ink/model.hpp"
#include "ink/sampler.hpp"
#include "ink/tensor.hpp"

namespace ink {

// On-disk benchmark layout:
//   <scenes>/<id>.png + <id>_mask.png      scene image with its inpaint mask
//   <subjects>/<id>.png                    subject image
//   <subjects>/<id>_bgfree.png             subject with background set to mid-gray
//   <subjects>/<id>.txt                    category label, one line
//   <prompts file>                         one template per line, each holding S*
struct BenchScene {
    std::string id;
    Tensor image;  // [3,H,W]
    Tensor mask;   // [H,W] binary, nonzero somewhere
};

struct BenchSubject {
    std::string id;
    Tensor image;    // [3,h,w]
    Tensor bg_free;  // [3,h,w]
    std::string label;
};

struct BenchSample {
    int scene = 0;
    int subject = 0;
    int prompt = 0;
    std::string id;           // "<scene>_<subject>_<prompt index>"
    std::string prompt_text;  // template with S* replaced by the subject label
};

struct Benchmark {
    std::vector<BenchScene> scenes;
    std::vector<BenchSubject> subjects;
    std::vector<std::string> prompts;
    std::vector<BenchSample> samples;  // scene-major, then subject, then prompt
};

// Substitutes the subject label for the template's single S* placeholder.
std::string instantiate_prompt(const std::string& tmpl, const std::string& label);

Benchmark build_benchmark(const std::string& scene_dir, const std::string& subject_dir,
                          const std::string& prompt_file);

// Pluggable scorer: both embedders return unit-norm rank-1 tensors.
struct EmbedderPair {
    std::function<Tensor(const Tensor&)> image;
    std::function<Tensor(const std::string&)> text;
};

// Seeded stand-in scorer: images re-scaled to res and pushed through a fixed
// random projection, text summed over per-word random vectors.
EmbedderPair toy_embedders(uint64_t seed = 2024, int dim = 64, int res = 16);

double cosine(const Tensor& a, const Tensor& b);

// Tight crop of the image under the mask's bounding box.
Tensor mask_bbox_crop(const Tensor& image, const Tensor& mask);

double clip_i(const Tensor& region, const Tensor& subject_bg_free, const EmbedderPair& emb);
double clip_t(const Tensor& region, const std::string& prompt, const EmbedderPair& emb);

struct MetricRow {
    std::string sample_id;
    double beta = 0;
    double clip_i = 0;
    double clip_t = 0;
    std::string variant;
    uint64_t seed = 0;
};

struct SummaryRow {
    double beta = 0;
    double mean_clip_i = 0;
    double mean_clip_t = 0;
    int n = 0;
};

struct AblationRow {
    std::string variant;
    double mean_clip_i = 0;
    double mean_clip_t = 0;
    int n = 0;
};

// One metric row per benchmark sample in deterministic order. The noise seed
// of each sample is a hash of its id, so repeat runs with different β or
// guidance flags stay paired.
std::vector<MetricRow> evaluate(const Benchmark& bench, const Model& model,
                                const GuidanceConfig& cfg, const EmbedderPair& emb,
                                const std::string& variant);

SummaryRow summarize(const std::vector<MetricRow>& rows, double beta);

std::vector<SummaryRow> sweep_beta(const Benchmark& bench, const Model& model,
                                   const GuidanceConfig& base, const std::vector<double>& betas,
                                   const EmbedderPair& emb,
                                   std::vector<MetricRow>* all_rows = nullptr);

struct AblationVariant {
    std::string name;
    std::string checkpoint_dir;
    bool assign = true;
    bool refine = true;
};

// The cumulative four-row protocol; each variant loads its own checkpoint and
// toggles the matching guidance flags.
std::vector<AblationRow> ablation_table(const Benchmark& bench,
                                        const std::vector<AblationVariant>& variants,
                                        const GuidanceConfig& base, const EmbedderPair& emb,
                                        std::vector<MetricRow>* all_rows = nullptr);

void write_results_csv(const std::string& path, const std::vector<MetricRow>& rows);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

// Deterministic toy benchmark assets rendered from the synthetic scene
// generator, written in the layout build_benchmark expects.
struct BenchAssetsConfig {
    std::string root;
    int scenes = 4;
    int subjects = 3;
    int prompts = 5;
    uint64_t seed = 7;
    int scene_size = 64;
    int subject_res = 32;
};

void make_bench_assets(const BenchAssetsConfig& cfg);

}  // namespace ink
