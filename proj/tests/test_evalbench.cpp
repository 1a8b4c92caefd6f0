#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ink/checkpoint.hpp"
#include "ink/common.hpp"
#include "ink/evalbench.hpp"
#include "ink/image.hpp"
#include "ink/model.hpp"
#include "ink/rng.hpp"

using namespace ink;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = tag + "_" + std::to_string(counter++);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string path;
};

ModelConfig small_config() {
    ModelConfig mc;
    mc.c0 = 12;
    mc.c1 = 16;
    mc.cond_dim = 16;
    mc.temb_dim = 16;
    return mc;
}

GuidanceConfig fast_config(int steps) {
    GuidanceConfig cfg;
    cfg.steps = steps;
    return cfg;
}

Benchmark tiny_benchmark(const std::string& root, int scenes = 2, int subjects = 1,
                         int prompts = 2) {
    BenchAssetsConfig cfg;
    cfg.root = root;
    cfg.scenes = scenes;
    cfg.subjects = subjects;
    cfg.prompts = prompts;
    make_bench_assets(cfg);
    return build_benchmark(root + "/scenes", root + "/subjects", root + "/prompts.txt");
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

EmbedderPair constant_embedders(std::vector<double> image_vec, std::vector<double> text_vec) {
    EmbedderPair emb;
    emb.image = [image_vec](const Tensor&) {
        return Tensor::from({static_cast<int>(image_vec.size())}, image_vec);
    };
    emb.text = [text_vec](const std::string&) {
        return Tensor::from({static_cast<int>(text_vec.size())}, text_vec);
    };
    return emb;
}

}  // namespace

TEST_CASE("instantiate_prompt: replaces the single placeholder") {
    CHECK(instantiate_prompt("a photo of a S*", "striped red circle") ==
          "a photo of a striped red circle");
    CHECK(instantiate_prompt("S* here", "box") == "box here");
    CHECK_THROWS_AS(instantiate_prompt("no placeholder", "box"), DataError);
    CHECK_THROWS_AS(instantiate_prompt("S* and S*", "box"), DataError);
}

TEST_CASE("build_benchmark: cross product sizes") {
    TempDir dir("bench_sizes");

    Benchmark tiny = tiny_benchmark(dir.path + "/one", 1, 1, 1);
    CHECK(tiny.samples.size() == 1);

    Benchmark toy = tiny_benchmark(dir.path + "/toy", 4, 3, 5);
    CHECK(toy.scenes.size() == 4);
    CHECK(toy.subjects.size() == 3);
    CHECK(toy.prompts.size() == 5);
    CHECK(toy.samples.size() == 60);
}

TEST_CASE("build_benchmark: scene-major deterministic order with instantiated prompts") {
    TempDir dir("bench_order");
    Benchmark bench = tiny_benchmark(dir.path, 2, 2, 2);

    REQUIRE(bench.samples.size() == 8);
    int k = 0;
    for (int s = 0; s < 2; ++s)
        for (int u = 0; u < 2; ++u)
            for (int p = 0; p < 2; ++p, ++k) {
                const BenchSample& sample = bench.samples[k];
                CHECK(sample.scene == s);
                CHECK(sample.subject == u);
                CHECK(sample.prompt == p);
                CHECK(sample.id == bench.scenes[s].id + "_" + bench.subjects[u].id + "_" +
                                       std::to_string(p));
                CHECK(sample.prompt_text.find("S*") == std::string::npos);
                CHECK(sample.prompt_text.find(bench.subjects[u].label) != std::string::npos);
            }
}

TEST_CASE("build_benchmark: rejects broken assets") {
    TempDir dir("bench_broken");
    tiny_benchmark(dir.path, 1, 1, 1);

    SUBCASE("template without placeholder") {
        std::ofstream(dir.path + "/prompts.txt") << "a plain prompt\n";
        CHECK_THROWS_AS(
            build_benchmark(dir.path + "/scenes", dir.path + "/subjects", dir.path + "/prompts.txt"),
            DataError);
    }
    SUBCASE("missing subject label") {
        fs::remove(dir.path + "/subjects/subj00.txt");
        CHECK_THROWS_AS(
            build_benchmark(dir.path + "/scenes", dir.path + "/subjects", dir.path + "/prompts.txt"),
            DataError);
    }
    SUBCASE("missing scene mask") {
        fs::remove(dir.path + "/scenes/scene00_mask.png");
        CHECK_THROWS_AS(
            build_benchmark(dir.path + "/scenes", dir.path + "/subjects", dir.path + "/prompts.txt"),
            DataError);
    }
    SUBCASE("empty directories") {
        TempDir empty("bench_empty");
        fs::create_directories(empty.path + "/scenes");
        CHECK_THROWS_AS(build_benchmark(empty.path + "/scenes", dir.path + "/subjects",
                                        dir.path + "/prompts.txt"),
                        DataError);
    }
}

TEST_CASE("make_bench_assets: background-free subjects are mid-gray outside the mask") {
    TempDir dir("bench_bgfree");
    tiny_benchmark(dir.path, 1, 1, 1);

    Tensor bg_free = read_image_png(dir.path + "/subjects/subj00_bgfree.png");
    Tensor subject = read_image_png(dir.path + "/subjects/subj00.png");
    REQUIRE(bg_free.shape == subject.shape);

    int gray = 0, kept = 0;
    double mid = std::round(0.5 * 255.0) / 255.0;
    for (int y = 0; y < bg_free.shape[1]; ++y)
        for (int x = 0; x < bg_free.shape[2]; ++x) {
            bool is_gray = true;
            for (int c = 0; c < 3; ++c) is_gray = is_gray && bg_free.at(c, y, x) == mid;
            if (is_gray)
                ++gray;
            else
                ++kept;
        }
    CHECK(gray > 0);
    CHECK(kept > 0);
}

TEST_CASE("toy_embedders: unit norm, deterministic, seed-sensitive") {
    EmbedderPair emb = toy_embedders();
    Rng rng(5);
    Tensor img = Tensor::randn({3, 20, 20}, rng);

    Tensor e1 = emb.image(img);
    Tensor e2 = emb.image(img);
    CHECK(e1.data == e2.data);
    REQUIRE(e1.shape == std::vector<int>{64});

    double norm = 0;
    for (double v : e1.data) norm += v * v;
    CHECK(std::abs(norm - 1.0) < 1e-12);

    Tensor t1 = emb.text("a striped red circle");
    CHECK(t1.data == emb.text("a striped red circle").data);
    norm = 0;
    for (double v : t1.data) norm += v * v;
    CHECK(std::abs(norm - 1.0) < 1e-12);

    EmbedderPair other = toy_embedders(99);
    CHECK(other.image(img).data != e1.data);
    CHECK(other.text("a striped red circle").data != t1.data);
}

TEST_CASE("cosine: matches an independent accumulation on toy embeddings") {
    EmbedderPair emb = toy_embedders();
    Rng rng(7);
    Tensor a = emb.image(Tensor::randn({3, 16, 16}, rng));
    Tensor b = emb.image(Tensor::randn({3, 16, 16}, rng));

    long double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < 64; ++i) {
        dot += static_cast<long double>(a.data[i]) * b.data[i];
        na += static_cast<long double>(a.data[i]) * a.data[i];
        nb += static_cast<long double>(b.data[i]) * b.data[i];
    }
    double expected = static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
    CHECK(std::abs(cosine(a, b) - expected) < 1e-6);
    CHECK(cosine(a, b) == cosine(b, a));
    CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clip_i and clip_t: degenerate embedder cases") {
    Tensor region({3, 4, 4});
    region.data.assign(region.data.size(), 0.25);
    Tensor subject({3, 4, 4});
    subject.data.assign(subject.data.size(), 0.75);

    SUBCASE("identical images score 1") {
        EmbedderPair emb = toy_embedders();
        CHECK(clip_i(region, region, emb) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("opposite mock embeddings score -1") {
        EmbedderPair emb;
        emb.image = [](const Tensor& t) {
            double sign = t.data[0] < 0.5 ? 1.0 : -1.0;
            return Tensor::from({2}, {sign * 0.6, sign * 0.8});
        };
        CHECK(clip_i(region, subject, emb) == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("matching mock embeddings score 1") {
        EmbedderPair emb = constant_embedders({1, 0, 0}, {1, 0, 0});
        CHECK(clip_t(region, "anything", emb) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("orthogonal mock embeddings score 0") {
        EmbedderPair emb = constant_embedders({1, 0, 0}, {0, 1, 0});
        CHECK(clip_t(region, "anything", emb) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("empty region is rejected") {
        EmbedderPair emb = toy_embedders();
        Tensor none({3, 0, 0});
        CHECK_THROWS_AS(clip_i(none, subject, emb), DataError);
        CHECK_THROWS_AS(clip_t(none, "anything", emb), DataError);
    }
}

TEST_CASE("mask_bbox_crop: tight crop, empty mask rejected") {
    Tensor img({3, 8, 8});
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i);
    Tensor mask({8, 8});
    mask.at(2, 3) = 1.0;
    mask.at(5, 6) = 1.0;

    Tensor crop = mask_bbox_crop(img, mask);
    CHECK(crop.shape == std::vector<int>{3, 4, 4});
    CHECK(crop.at(0, 0, 0) == img.at(0, 2, 3));

    CHECK_THROWS_AS(mask_bbox_crop(img, Tensor({8, 8})), DataError);
    CHECK_THROWS_AS(mask_bbox_crop(img, Tensor({4, 4})), DataError);
}

TEST_CASE("evaluate: one finite row per sample, paired hashed seeds") {
    TempDir dir("bench_eval");
    Benchmark bench = tiny_benchmark(dir.path, 2, 1, 2);
    Model model(small_config(), 3, true);
    EmbedderPair emb = toy_embedders();

    std::vector<MetricRow> rows = evaluate(bench, model, fast_config(2), emb, "full");
    REQUIRE(rows.size() == bench.samples.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].sample_id == bench.samples[i].id);
        CHECK(rows[i].seed == fnv1a(bench.samples[i].id));
        CHECK(rows[i].variant == "full");
        CHECK(rows[i].beta == fast_config(2).beta);
        CHECK(rows[i].clip_i >= -1.0);
        CHECK(rows[i].clip_i <= 1.0);
        CHECK(rows[i].clip_t >= -1.0);
        CHECK(rows[i].clip_t <= 1.0);
    }

    std::vector<MetricRow> again = evaluate(bench, model, fast_config(2), emb, "full");
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].clip_i == again[i].clip_i);
        CHECK(rows[i].clip_t == again[i].clip_t);
    }
}

TEST_CASE("sweep_beta: one summary row per beta, seeds shared across betas") {
    TempDir dir("bench_sweep");
    Benchmark bench = tiny_benchmark(dir.path, 1, 1, 2);
    Model model(small_config(), 3, true);
    EmbedderPair emb = toy_embedders();

    std::vector<double> betas = {0.1, 0.5, 1.0};
    std::vector<MetricRow> rows;
    std::vector<SummaryRow> table = sweep_beta(bench, model, fast_config(2), betas, emb, &rows);

    REQUIRE(table.size() == 3);
    REQUIRE(rows.size() == 3 * bench.samples.size());
    for (size_t b = 0; b < betas.size(); ++b) {
        CHECK(table[b].beta == betas[b]);
        CHECK(table[b].n == static_cast<int>(bench.samples.size()));
        for (size_t i = 0; i < bench.samples.size(); ++i) {
            const MetricRow& row = rows[b * bench.samples.size() + i];
            CHECK(row.beta == betas[b]);
            CHECK(row.seed == rows[i].seed);
        }
    }

    std::vector<SummaryRow> rerun = sweep_beta(bench, model, fast_config(2), betas, emb);
    for (size_t b = 0; b < betas.size(); ++b) {
        CHECK(table[b].mean_clip_i == rerun[b].mean_clip_i);
        CHECK(table[b].mean_clip_t == rerun[b].mean_clip_t);
    }

    CHECK_THROWS_AS(sweep_beta(bench, model, fast_config(2), {}, emb), UsageError);
}

TEST_CASE("ablation_table: four rows, identical checkpoints give identical metrics") {
    TempDir dir("bench_ablate");
    Benchmark bench = tiny_benchmark(dir.path, 1, 1, 1);
    EmbedderPair emb = toy_embedders();

    Model model(small_config(), 3, true);
    save_checkpoint(dir.path + "/ckpt", model, CheckpointMeta{});

    std::vector<AblationVariant> variants = {
        {"baseline", dir.path + "/ckpt", false, false},
        {"+locate", dir.path + "/ckpt", false, false},
        {"+assign", dir.path + "/ckpt", true, false},
        {"+refine", dir.path + "/ckpt", true, true},
    };
    std::vector<MetricRow> rows;
    std::vector<AblationRow> table = ablation_table(bench, variants, fast_config(2), emb, &rows);

    REQUIRE(table.size() == 4);
    REQUIRE(rows.size() == 4 * bench.samples.size());
    CHECK(table[0].variant == "baseline");
    CHECK(table[0].mean_clip_i == table[1].mean_clip_i);
    CHECK(table[0].mean_clip_t == table[1].mean_clip_t);
    CHECK(table[2].variant == "+assign");
    CHECK(table[3].n == 1);
    for (const MetricRow& row : rows) CHECK(row.seed == rows[0].seed);
}

TEST_CASE("ablation_table: missing checkpoints are listed by variant name") {
    TempDir dir("bench_missing");
    Benchmark bench = tiny_benchmark(dir.path, 1, 1, 1);
    EmbedderPair emb = toy_embedders();

    Model model(small_config(), 3, true);
    save_checkpoint(dir.path + "/ok", model, CheckpointMeta{});

    std::vector<AblationVariant> variants = {
        {"baseline", dir.path + "/ok", false, false},
        {"+locate", dir.path + "/absent", false, false},
    };
    try {
        ablation_table(bench, variants, fast_config(2), emb);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("+locate") != std::string::npos);
        CHECK(std::string(e.what()).find("absent") != std::string::npos);
    }
}

TEST_CASE("csv writers: stable headers and byte-identical reruns") {
    TempDir dir("bench_csv");

    std::vector<MetricRow> rows = {
        {"scene00_subj00_0", 0.3, 0.25, -0.125, "full", 42},
        {"scene00_subj00_1", 0.3, 1.0 / 3.0, 0.5, "full", 43},
    };
    write_results_csv(dir.path + "/results.csv", rows);
    std::string results = slurp(dir.path + "/results.csv");
    CHECK(results.rfind("sample_id,beta,clip_i,clip_t,variant,seed\n", 0) == 0);
    CHECK(results.find("scene00_subj00_0,0.29999999999999999,0.25,-0.125,full,42\n") !=
          std::string::npos);

    write_results_csv(dir.path + "/results2.csv", rows);
    CHECK(slurp(dir.path + "/results2.csv") == results);

    std::vector<SummaryRow> summary = {{0.1, 0.5, -0.25, 60}, {1.0, 0.75, 0.0, 60}};
    write_summary_csv(dir.path + "/summary.csv", summary);
    std::string s = slurp(dir.path + "/summary.csv");
    CHECK(s.rfind("beta,mean_clip_i,mean_clip_t,n\n", 0) == 0);
    CHECK(s.find("0.10000000000000001,0.5,-0.25,60\n") != std::string::npos);

    std::vector<AblationRow> ab = {{"baseline", 0.5, 0.25, 60}, {"+refine", 0.625, 0.5, 60}};
    write_ablation_csv(dir.path + "/ablation.csv", ab);
    std::string a = slurp(dir.path + "/ablation.csv");
    CHECK(a.rfind("variant,mean_clip_i,mean_clip_t,n\n", 0) == 0);
    CHECK(a.find("+refine,0.625,0.5,60\n") != std::string::npos);
}

TEST_CASE("make_bench_assets: validates its configuration") {
    BenchAssetsConfig cfg;
    cfg.root = "";
    CHECK_THROWS_AS(make_bench_assets(cfg), UsageError);

    TempDir dir("bench_badcfg");
    cfg.root = dir.path;
    cfg.scenes = 0;
    CHECK_THROWS_AS(make_bench_assets(cfg), UsageError);
    cfg.scenes = 1;
    cfg.prompts = 99;
    CHECK_THROWS_AS(make_bench_assets(cfg), UsageError);
}

TEST_CASE("make_bench_assets: reruns are byte-identical") {
    TempDir a("bench_idem_a");
    TempDir b("bench_idem_b");
    BenchAssetsConfig cfg;
    cfg.scenes = 2;
    cfg.subjects = 1;
    cfg.prompts = 2;

    cfg.root = a.path;
    make_bench_assets(cfg);
    cfg.root = b.path;
    make_bench_assets(cfg);

    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), a.path).string();
        CHECK(slurp(entry.path().string()) == slurp(b.path + "/" + rel));
        ++compared;
    }
    CHECK(compared == 2 * 2 + 1 * 3 + 1);
}
