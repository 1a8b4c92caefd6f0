#include "ink/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "ink/checkpoint.hpp"
#include "ink/common.hpp"
#include "ink/data_engine.hpp"
#include "ink/image.hpp"
#include "ink/pipeline.hpp"
#include "ink/rng.hpp"

namespace fs = std::filesystem;

namespace ink {

namespace {

constexpr const char* kPlaceholder = "S*";

std::string csv_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> sorted_stems(const std::string& dir, const std::string& skip_suffix) {
    if (!fs::is_directory(dir)) throw DataError("benchmark directory missing: " + dir);
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (!ends_with(name, ".png")) continue;
        std::string stem = name.substr(0, name.size() - 4);
        if (!skip_suffix.empty() && ends_with(stem, skip_suffix)) continue;
        stems.push_back(stem);
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

}  // namespace

std::string instantiate_prompt(const std::string& tmpl, const std::string& label) {
    size_t first = tmpl.find(kPlaceholder);
    if (first == std::string::npos)
        throw DataError("prompt template lacks the S* placeholder: \"" + tmpl + "\"");
    if (tmpl.find(kPlaceholder, first + 2) != std::string::npos)
        throw DataError("prompt template holds more than one S*: \"" + tmpl + "\"");
    std::string out = tmpl;
    out.replace(first, 2, label);
    return out;
}

Benchmark build_benchmark(const std::string& scene_dir, const std::string& subject_dir,
                          const std::string& prompt_file) {
    Benchmark bench;

    for (const std::string& stem : sorted_stems(scene_dir, "_mask")) {
        BenchScene scene;
        scene.id = stem;
        scene.image = read_image_png(scene_dir + "/" + stem + ".png");
        scene.mask = read_mask_png(scene_dir + "/" + stem + "_mask.png");
        if (scene.mask.shape[0] != scene.image.shape[1] || scene.mask.shape[1] != scene.image.shape[2])
            throw DataError("scene mask size mismatch: " + stem);
        bool any = false;
        for (double v : scene.mask.data) any = any || v != 0.0;
        if (!any) throw DataError("scene mask is empty: " + stem);
        bench.scenes.push_back(std::move(scene));
    }
    if (bench.scenes.empty()) throw DataError("no scenes found in " + scene_dir);

    for (const std::string& stem : sorted_stems(subject_dir, "_bgfree")) {
        BenchSubject subj;
        subj.id = stem;
        subj.image = read_image_png(subject_dir + "/" + stem + ".png");
        subj.bg_free = read_image_png(subject_dir + "/" + stem + "_bgfree.png");
        std::ifstream in(subject_dir + "/" + stem + ".txt");
        if (!in) throw DataError("subject label missing: " + stem + ".txt");
        std::string label;
        std::getline(in, label);
        subj.label = strip(label);
        if (subj.label.empty()) throw DataError("subject label empty: " + stem + ".txt");
        bench.subjects.push_back(std::move(subj));
    }
    if (bench.subjects.empty()) throw DataError("no subjects found in " + subject_dir);

    std::ifstream in(prompt_file);
    if (!in) throw DataError("prompt file missing: " + prompt_file);
    std::string line;
    while (std::getline(in, line)) {
        line = strip(line);
        if (line.empty()) continue;
        instantiate_prompt(line, "x");
        bench.prompts.push_back(line);
    }
    if (bench.prompts.empty()) throw DataError("no prompt templates in " + prompt_file);

    for (int s = 0; s < static_cast<int>(bench.scenes.size()); ++s)
        for (int u = 0; u < static_cast<int>(bench.subjects.size()); ++u)
            for (int p = 0; p < static_cast<int>(bench.prompts.size()); ++p) {
                BenchSample sample;
                sample.scene = s;
                sample.subject = u;
                sample.prompt = p;
                sample.id = bench.scenes[s].id + "_" + bench.subjects[u].id + "_" + std::to_string(p);
                sample.prompt_text = instantiate_prompt(bench.prompts[p], bench.subjects[u].label);
                bench.samples.push_back(std::move(sample));
            }
    return bench;
}

EmbedderPair toy_embedders(uint64_t seed, int dim, int res) {
    if (dim <= 0 || res <= 0) throw UsageError("toy_embedders: dim and res must be positive");

    Rng proj_rng(mix_seed(seed, 1));
    auto proj = std::make_shared<Tensor>(
        Tensor::randn({dim, 3 * res * res}, proj_rng, 1.0 / std::sqrt(3.0 * res * res)));
    uint64_t text_salt = mix_seed(seed, 2);

    auto normalize = [](Tensor v) {
        double ss = 0;
        for (double x : v.data) ss += x * x;
        if (ss < 1e-24) {
            v.data.assign(v.data.size(), 0.0);
            v.data[0] = 1.0;
            return v;
        }
        double inv = 1.0 / std::sqrt(ss);
        for (double& x : v.data) x *= inv;
        return v;
    };

    EmbedderPair pair;
    pair.image = [proj, dim, res, normalize](const Tensor& img) {
        if (img.rank() != 3 || img.shape[0] != 3)
            throw DataError("image embedder wants [3,h,w]");
        Tensor scaled = (img.shape[1] == res && img.shape[2] == res)
                            ? img
                            : resize_bilinear(img, res, res);
        Tensor out = Tensor::zeros({dim});
        for (int d = 0; d < dim; ++d) {
            double acc = 0;
            for (int i = 0; i < 3 * res * res; ++i) acc += proj->at(d, i) * scaled.data[i];
            out.data[d] = acc;
        }
        return normalize(std::move(out));
    };
    pair.text = [text_salt, dim, normalize](const std::string& text) {
        Tensor out = Tensor::zeros({dim});
        std::istringstream words(text);
        std::string word;
        while (words >> word) {
            Rng rng(mix_seed(text_salt, fnv1a(word)));
            for (int d = 0; d < dim; ++d) out.data[d] += rng.normal();
        }
        return normalize(std::move(out));
    };
    return pair;
}

double cosine(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.shape[0] != b.shape[0])
        throw UsageError("cosine: embeddings must be rank-1 and equal length");
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < a.shape[0]; ++i) {
        dot += a.data[i] * b.data[i];
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    if (na <= 0 || nb <= 0) throw NumericError("cosine: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Tensor mask_bbox_crop(const Tensor& image, const Tensor& mask) {
    if (image.rank() != 3 || mask.rank() != 2 || mask.shape[0] != image.shape[1] ||
        mask.shape[1] != image.shape[2])
        throw DataError("mask_bbox_crop: image and mask sizes differ");
    int y0 = mask.shape[0], y1 = -1, x0 = mask.shape[1], x1 = -1;
    for (int y = 0; y < mask.shape[0]; ++y)
        for (int x = 0; x < mask.shape[1]; ++x)
            if (mask.at(y, x) != 0.0) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw DataError("mask_bbox_crop: empty mask");
    return crop_image(image, y0, x0, y1 - y0 + 1, x1 - x0 + 1);
}

double clip_i(const Tensor& region, const Tensor& subject_bg_free, const EmbedderPair& emb) {
    if (region.rank() != 3 || region.numel() == 0)
        throw DataError("clip_i: empty region");
    return cosine(emb.image(region), emb.image(subject_bg_free));
}

double clip_t(const Tensor& region, const std::string& prompt, const EmbedderPair& emb) {
    if (region.rank() != 3 || region.numel() == 0)
        throw DataError("clip_t: empty region");
    return cosine(emb.image(region), emb.text(prompt));
}

std::vector<MetricRow> evaluate(const Benchmark& bench, const Model& model,
                                const GuidanceConfig& cfg, const EmbedderPair& emb,
                                const std::string& variant) {
    if (bench.samples.empty()) throw UsageError("evaluate: empty benchmark");
    std::vector<MetricRow> rows;
    rows.reserve(bench.samples.size());
    for (const BenchSample& sample : bench.samples) {
        const BenchScene& scene = bench.scenes[sample.scene];
        const BenchSubject& subj = bench.subjects[sample.subject];

        GuidanceConfig g = cfg;
        g.seed = fnv1a(sample.id);
        InpaintResult res =
            inpaint_image(model, scene.image, scene.mask, subj.image, sample.prompt_text, g);

        Tensor region = mask_bbox_crop(res.image, scene.mask);
        MetricRow row;
        row.sample_id = sample.id;
        row.beta = g.beta;
        row.clip_i = clip_i(region, subj.bg_free, emb);
        row.clip_t = clip_t(region, sample.prompt_text, emb);
        row.variant = variant;
        row.seed = g.seed;
        if (!std::isfinite(row.clip_i) || !std::isfinite(row.clip_t))
            throw NumericError("evaluate: non-finite metric for sample " + sample.id);
        rows.push_back(std::move(row));
    }
    return rows;
}

SummaryRow summarize(const std::vector<MetricRow>& rows, double beta) {
    if (rows.empty()) throw UsageError("summarize: no rows");
    SummaryRow out;
    out.beta = beta;
    out.n = static_cast<int>(rows.size());
    for (const MetricRow& r : rows) {
        out.mean_clip_i += r.clip_i;
        out.mean_clip_t += r.clip_t;
    }
    out.mean_clip_i /= out.n;
    out.mean_clip_t /= out.n;
    return out;
}

std::vector<SummaryRow> sweep_beta(const Benchmark& bench, const Model& model,
                                   const GuidanceConfig& base, const std::vector<double>& betas,
                                   const EmbedderPair& emb, std::vector<MetricRow>* all_rows) {
    if (betas.empty()) throw UsageError("sweep_beta: no beta values");
    std::vector<SummaryRow> table;
    for (double beta : betas) {
        if (beta < 0) throw UsageError("sweep_beta: beta must be nonnegative");
        GuidanceConfig g = base;
        g.beta = beta;
        std::vector<MetricRow> rows = evaluate(bench, model, g, emb, "sweep");
        table.push_back(summarize(rows, beta));
        if (all_rows) all_rows->insert(all_rows->end(), rows.begin(), rows.end());
    }
    return table;
}

std::vector<AblationRow> ablation_table(const Benchmark& bench,
                                        const std::vector<AblationVariant>& variants,
                                        const GuidanceConfig& base, const EmbedderPair& emb,
                                        std::vector<MetricRow>* all_rows) {
    if (variants.empty()) throw UsageError("ablation_table: no variants");
    std::string missing;
    for (const AblationVariant& v : variants)
        if (!fs::is_regular_file(v.checkpoint_dir + "/manifest.json")) {
            if (!missing.empty()) missing += ", ";
            missing += v.name + " (" + v.checkpoint_dir + ")";
        }
    if (!missing.empty()) throw DataError("missing variant checkpoints: " + missing);

    std::vector<AblationRow> table;
    for (const AblationVariant& v : variants) {
        std::unique_ptr<Model> model = load_checkpoint(v.checkpoint_dir);
        GuidanceConfig g = base;
        g.assign = v.assign;
        g.refine = v.refine;
        std::vector<MetricRow> rows = evaluate(bench, *model, g, emb, v.name);
        SummaryRow s = summarize(rows, g.beta);
        table.push_back({v.name, s.mean_clip_i, s.mean_clip_t, s.n});
        if (all_rows) all_rows->insert(all_rows->end(), rows.begin(), rows.end());
    }
    return table;
}

namespace {

void write_lines(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << body;
    if (!out) throw DataError("short write to " + path);
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::string body = "sample_id,beta,clip_i,clip_t,variant,seed\n";
    for (const MetricRow& r : rows)
        body += r.sample_id + "," + csv_number(r.beta) + "," + csv_number(r.clip_i) + "," +
                csv_number(r.clip_t) + "," + r.variant + "," + std::to_string(r.seed) + "\n";
    write_lines(path, body);
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::string body = "beta,mean_clip_i,mean_clip_t,n\n";
    for (const SummaryRow& r : rows)
        body += csv_number(r.beta) + "," + csv_number(r.mean_clip_i) + "," +
                csv_number(r.mean_clip_t) + "," + std::to_string(r.n) + "\n";
    write_lines(path, body);
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::string body = "variant,mean_clip_i,mean_clip_t,n\n";
    for (const AblationRow& r : rows)
        body += r.variant + "," + csv_number(r.mean_clip_i) + "," + csv_number(r.mean_clip_t) +
                "," + std::to_string(r.n) + "\n";
    write_lines(path, body);
}

namespace {

const std::vector<std::string>& prompt_templates() {
    static const std::vector<std::string> kTemplates = {
        "a photo of a S*",
        "a S* in a scene",
        "one S* on a plain background",
        "an image of a S*",
        "a small S*",
        "a bright S*",
        "a S* near the edge",
        "a centered S*",
        "a simple S*",
        "a S* over a gradient",
    };
    return kTemplates;
}

}  // namespace

void make_bench_assets(const BenchAssetsConfig& cfg) {
    if (cfg.root.empty()) throw UsageError("make_bench_assets: no output root");
    if (cfg.scenes <= 0 || cfg.subjects <= 0 || cfg.prompts <= 0)
        throw UsageError("make_bench_assets: counts must be positive");
    if (cfg.prompts > static_cast<int>(prompt_templates().size()))
        throw UsageError("make_bench_assets: at most " +
                         std::to_string(prompt_templates().size()) + " prompt templates");

    fs::create_directories(cfg.root + "/scenes");
    fs::create_directories(cfg.root + "/subjects");

    char buf[32];
    for (int i = 0; i < cfg.scenes; ++i) {
        auto [image, scene] = generate_scene(mix_seed(cfg.seed, 101 + i), cfg.scene_size);
        std::snprintf(buf, sizeof(buf), "scene%02d", i);
        write_image_png(cfg.root + "/scenes/" + buf + ".png", image);
        write_mask_png(cfg.root + "/scenes/" + buf + "_mask.png", scene.objects.front().mask);
    }

    for (int j = 0; j < cfg.subjects; ++j) {
        auto [image, scene] = generate_scene(mix_seed(cfg.seed, 501 + j), cfg.scene_size);
        const SceneObject& obj = scene.objects.front();
        std::snprintf(buf, sizeof(buf), "subj%02d", j);
        Tensor crop = crop_image(image, obj.y0, obj.x0, obj.y1 - obj.y0, obj.x1 - obj.x0);
        Tensor crop_m = crop_mask(obj.mask, obj.y0, obj.x0, obj.y1 - obj.y0, obj.x1 - obj.x0);
        Tensor subj = resize_bilinear(crop, cfg.subject_res, cfg.subject_res);
        Tensor m = resize_mask_cover(crop_m, cfg.subject_res, cfg.subject_res);
        Tensor bg_free = subj;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < cfg.subject_res; ++y)
                for (int x = 0; x < cfg.subject_res; ++x)
                    if (m.at(y, x) == 0.0) bg_free.at(c, y, x) = 0.5;
        write_image_png(cfg.root + "/subjects/" + std::string(buf) + ".png", subj);
        write_image_png(cfg.root + "/subjects/" + std::string(buf) + "_bgfree.png", bg_free);
        std::string label =
            texture_word(obj.texture) + " " + obj.color_name + " " + shape_word(obj.shape);
        write_lines(cfg.root + "/subjects/" + std::string(buf) + ".txt", label + "\n");
    }

    std::string prompts;
    for (int p = 0; p < cfg.prompts; ++p) prompts += prompt_templates()[p] + "\n";
    write_lines(cfg.root + "/prompts.txt", prompts);
}

}  // namespace ink
