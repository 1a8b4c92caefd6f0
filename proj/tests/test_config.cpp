#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "ink/common.hpp"
#include "ink/config.hpp"

using namespace ink;
using nlohmann::json;
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

std::string write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    out << body;
    return path;
}

}  // namespace

TEST_CASE("load_run_config: empty path gives pure defaults") {
    RunConfig rc = load_run_config("");
    CHECK(rc.model.f == 4);
    CHECK(rc.model.res == 32);
    CHECK(rc.model.T == 1000);
    CHECK(rc.model.cond.image_tokens == 16);
    CHECK(rc.train.stage == 1);
    CHECK(rc.train.batch == 8);
    CHECK(rc.train.lr == 1e-4);
    CHECK(rc.guide.w == 7.5);
    CHECK(rc.guide.beta == 0.3);
    CHECK(rc.guide.steps == 50);
    CHECK(rc.margin == 0.3);
    CHECK(rc.data.tau_min == 0.02);
    CHECK(rc.data.tau_max == 0.50);
    CHECK(rc.bench.scenes == 4);
}

TEST_CASE("apply_config: sets fields across every module") {
    RunConfig rc;
    apply_config(rc, json{{"f", 2},
                          {"res", 16},
                          {"patch", 4},
                          {"c0", 32},
                          {"lr", 0.003},
                          {"steps", 500},
                          {"stage", 2},
                          {"w", 2.5},
                          {"beta", 0.7},
                          {"sample_steps", 8},
                          {"num", 12},
                          {"tau_max", 0.4},
                          {"bench_scenes", 7},
                          {"margin", 0.25},
                          {"emb_seed", 99}});
    CHECK(rc.model.f == 2);
    CHECK(rc.model.res == 16);
    CHECK(rc.model.cond.patch == 4);
    CHECK(rc.model.c0 == 32);
    CHECK(rc.train.lr == 0.003);
    CHECK(rc.train.steps == 500);
    CHECK(rc.train.stage == 2);
    CHECK(rc.train.beta() == 0.3);
    CHECK(rc.guide.w == 2.5);
    CHECK(rc.guide.beta == 0.7);
    CHECK(rc.guide.steps == 8);
    CHECK(rc.data.count == 12);
    CHECK(rc.data.tau_max == 0.4);
    CHECK(rc.bench.scenes == 7);
    CHECK(rc.margin == 0.25);
    CHECK(rc.emb_seed == 99);
}

TEST_CASE("apply_config: shared keys fan out") {
    RunConfig rc;
    apply_config(rc, json{{"seed", 77}, {"assign", false}, {"scene_size", 48}, {"subject_res", 24}});
    CHECK(rc.train.seed == 77);
    CHECK(rc.guide.seed == 77);
    CHECK(rc.data.seed == 77);
    CHECK(rc.bench.seed == 77);
    CHECK_FALSE(rc.train.assign);
    CHECK_FALSE(rc.guide.assign);
    CHECK(rc.data.scene_size == 48);
    CHECK(rc.bench.scene_size == 48);
    CHECK(rc.data.subject_res == 24);
    CHECK(rc.bench.subject_res == 24);
}

TEST_CASE("apply_config: train_beta overrides the stage resolution") {
    RunConfig rc;
    apply_config(rc, json{{"stage", 2}, {"train_beta", 0.9}});
    CHECK(rc.train.beta() == 0.9);
}

TEST_CASE("apply_config: stoplist replaces the default list") {
    RunConfig rc;
    apply_config(rc, json{{"stoplist", json::array({"cloud", "fog"})}});
    REQUIRE(rc.data.stoplist.size() == 2);
    CHECK(rc.data.stoplist[0] == "cloud");
}

TEST_CASE("apply_config: unknown keys and wrong types are rejected") {
    RunConfig rc;
    CHECK_THROWS_WITH_AS(apply_config(rc, json{{"bogus", 1}}),
                         "unknown config key \"bogus\"", UsageError);
    CHECK_THROWS_AS(apply_config(rc, json{{"lr", "fast"}}), UsageError);
    CHECK_THROWS_AS(apply_config(rc, json{{"steps", 1.5}}), UsageError);
    CHECK_THROWS_AS(apply_config(rc, json{{"resume", 1}}), UsageError);
    CHECK_THROWS_AS(apply_config(rc, json{{"loss", 2}}), UsageError);
    CHECK_THROWS_AS(apply_config(rc, json{{"stoplist", "sky"}}), UsageError);
    CHECK_THROWS_AS(apply_config(rc, json{{"seed", -4}}), UsageError);
    CHECK_THROWS_AS(apply_config(rc, json::array({1, 2})), UsageError);
}

TEST_CASE("load_config_object: file handling") {
    TempDir dir("config_test");

    CHECK(load_config_object("").is_object());
    CHECK(load_config_object("").empty());
    CHECK_THROWS_AS(load_config_object(dir.path + "/absent.json"), UsageError);

    std::string bad = write_file(dir.path + "/bad.json", "{not json");
    CHECK_THROWS_AS(load_config_object(bad), UsageError);

    std::string good = write_file(dir.path + "/good.json", R"({"lr": 0.002, "steps": 250})");
    RunConfig rc = load_run_config(good);
    CHECK(rc.train.lr == 0.002);
    CHECK(rc.train.steps == 250);
}

TEST_CASE("resolved_config_json: flat, complete, and reapplicable") {
    RunConfig rc;
    apply_config(rc, json{{"f", 2}, {"res", 16}, {"lr", 0.005}, {"beta", 0.55}, {"seed", 13}});
    json echo = resolved_config_json(rc);

    for (const auto& [key, value] : echo.items()) {
        CAPTURE(key);
        CHECK_FALSE(value.is_object());
    }
    CHECK(echo["f"] == 2);
    CHECK(echo["lr"] == 0.005);
    CHECK(echo["beta"] == 0.55);
    CHECK(echo["seed"] == 13);
    CHECK(echo["image_tokens"] == 16);
    CHECK(echo["train_beta"] == 1.0);
    CHECK(echo["stoplist"].is_array());

    RunConfig back;
    json replay = echo;
    apply_config(back, replay);
    CHECK(back.model.f == rc.model.f);
    CHECK(back.train.lr == rc.train.lr);
    CHECK(back.guide.beta == rc.guide.beta);
    CHECK(resolved_config_json(back) == echo);
}
