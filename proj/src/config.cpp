#include "ink/config.hpp"

#include <fstream>

#include "ink/common.hpp"

namespace ink {

namespace {

int want_int(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_integer()) throw UsageError("config key \"" + key + "\" wants an integer");
    return v.get<int>();
}

uint64_t want_u64(const std::string& key, const nlohmann::json& v) {
    bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0);
    if (!ok) throw UsageError("config key \"" + key + "\" wants a nonnegative integer");
    return v.get<uint64_t>();
}

double want_double(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number()) throw UsageError("config key \"" + key + "\" wants a number");
    return v.get<double>();
}

bool want_bool(const std::string& key, const nlohmann::json& v) {
    if (!v.is_boolean()) throw UsageError("config key \"" + key + "\" wants a boolean");
    return v.get<bool>();
}

std::string want_string(const std::string& key, const nlohmann::json& v) {
    if (!v.is_string()) throw UsageError("config key \"" + key + "\" wants a string");
    return v.get<std::string>();
}

}  // namespace

void apply_config(RunConfig& rc, const nlohmann::json& file) {
    if (!file.is_object()) throw UsageError("config file must hold one flat JSON object");
    for (const auto& [key, v] : file.items()) {
        if (key == "f") rc.model.f = want_int(key, v);
        else if (key == "res") rc.model.res = want_int(key, v);
        else if (key == "c0") rc.model.c0 = want_int(key, v);
        else if (key == "c1") rc.model.c1 = want_int(key, v);
        else if (key == "cond_dim") rc.model.cond_dim = want_int(key, v);
        else if (key == "temb_dim") rc.model.temb_dim = want_int(key, v);
        else if (key == "T") rc.model.T = want_int(key, v);
        else if (key == "beta_start") rc.model.beta_start = want_double(key, v);
        else if (key == "beta_end") rc.model.beta_end = want_double(key, v);
        else if (key == "patch") rc.model.cond.patch = want_int(key, v);
        else if (key == "text_len") rc.model.cond.text_len = want_int(key, v);
        else if (key == "image_tokens") rc.model.cond.image_tokens = want_int(key, v);
        else if (key == "detail_hidden") rc.model.cond.detail_hidden = want_int(key, v);
        else if (key == "vocab") rc.model.cond.vocab = want_int(key, v);
        else if (key == "embed_seed") rc.model.cond.embed_seed = want_u64(key, v);
        else if (key == "stage") rc.train.stage = want_int(key, v);
        else if (key == "batch") rc.train.batch = want_int(key, v);
        else if (key == "steps") rc.train.steps = want_int(key, v);
        else if (key == "lr") rc.train.lr = want_double(key, v);
        else if (key == "train_beta") rc.train.beta_train = want_double(key, v);
        else if (key == "p_text") rc.train.p_text = want_double(key, v);
        else if (key == "p_image") rc.train.p_image = want_double(key, v);
        else if (key == "loss") rc.train.loss = want_string(key, v);
        else if (key == "captions") rc.train.captions = want_string(key, v);
        else if (key == "resume") rc.train.resume = want_bool(key, v);
        else if (key == "data_root") rc.train.data_root = want_string(key, v);
        else if (key == "out_dir") rc.train.out_dir = want_string(key, v);
        else if (key == "init_from") rc.train.init_from = want_string(key, v);
        else if (key == "assign") {
            rc.train.assign = want_bool(key, v);
            rc.guide.assign = rc.train.assign;
        } else if (key == "seed") {
            uint64_t s = want_u64(key, v);
            rc.train.seed = s;
            rc.guide.seed = s;
            rc.data.seed = s;
            rc.bench.seed = s;
        } else if (key == "w") rc.guide.w = want_double(key, v);
        else if (key == "beta") rc.guide.beta = want_double(key, v);
        else if (key == "sample_steps") rc.guide.steps = want_int(key, v);
        else if (key == "blend") rc.guide.blend = want_bool(key, v);
        else if (key == "composite") rc.guide.composite = want_bool(key, v);
        else if (key == "refine") rc.guide.refine = want_bool(key, v);
        else if (key == "num") rc.data.count = want_int(key, v);
        else if (key == "scene_size") {
            rc.data.scene_size = want_int(key, v);
            rc.bench.scene_size = rc.data.scene_size;
        } else if (key == "subject_res") {
            rc.data.subject_res = want_int(key, v);
            rc.bench.subject_res = rc.data.subject_res;
        } else if (key == "tau_min") rc.data.tau_min = want_double(key, v);
        else if (key == "tau_max") rc.data.tau_max = want_double(key, v);
        else if (key == "stoplist") {
            if (!v.is_array()) throw UsageError("config key \"stoplist\" wants an array of strings");
            rc.data.stoplist.clear();
            for (const auto& item : v) rc.data.stoplist.push_back(want_string("stoplist", item));
        } else if (key == "bench_scenes") rc.bench.scenes = want_int(key, v);
        else if (key == "bench_subjects") rc.bench.subjects = want_int(key, v);
        else if (key == "bench_prompts") rc.bench.prompts = want_int(key, v);
        else if (key == "margin") rc.margin = want_double(key, v);
        else if (key == "emb_seed") rc.emb_seed = want_u64(key, v);
        else throw UsageError("unknown config key \"" + key + "\"");
    }
}

nlohmann::json load_config_object(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    nlohmann::json file;
    try {
        in >> file;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
    return file;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    apply_config(rc, load_config_object(path));
    return rc;
}

nlohmann::json resolved_config_json(const RunConfig& rc) {
    ModelConfig m = rc.model.normalized();
    nlohmann::json j;
    j["f"] = m.f;
    j["res"] = m.res;
    j["c0"] = m.c0;
    j["c1"] = m.c1;
    j["cond_dim"] = m.cond_dim;
    j["temb_dim"] = m.temb_dim;
    j["T"] = m.T;
    j["beta_start"] = m.beta_start;
    j["beta_end"] = m.beta_end;
    j["patch"] = m.cond.patch;
    j["text_len"] = m.cond.text_len;
    j["image_tokens"] = m.cond.image_tokens;
    j["detail_hidden"] = m.cond.detail_hidden;
    j["vocab"] = m.cond.vocab;
    j["embed_seed"] = m.cond.embed_seed;
    j["stage"] = rc.train.stage;
    j["batch"] = rc.train.batch;
    j["steps"] = rc.train.steps;
    j["lr"] = rc.train.lr;
    j["train_beta"] = rc.train.beta();
    j["p_text"] = rc.train.p_text;
    j["p_image"] = rc.train.p_image;
    j["loss"] = rc.train.loss;
    j["captions"] = rc.train.captions;
    j["assign"] = rc.train.assign;
    j["resume"] = rc.train.resume;
    j["data_root"] = rc.train.data_root;
    j["out_dir"] = rc.train.out_dir;
    j["init_from"] = rc.train.init_from;
    j["seed"] = rc.train.seed;
    j["w"] = rc.guide.w;
    j["beta"] = rc.guide.beta;
    j["sample_steps"] = rc.guide.steps;
    j["blend"] = rc.guide.blend;
    j["composite"] = rc.guide.composite;
    j["refine"] = rc.guide.refine;
    j["num"] = rc.data.count;
    j["scene_size"] = rc.data.scene_size;
    j["subject_res"] = rc.data.subject_res;
    j["tau_min"] = rc.data.tau_min;
    j["tau_max"] = rc.data.tau_max;
    j["stoplist"] = rc.data.stoplist;
    j["bench_scenes"] = rc.bench.scenes;
    j["bench_subjects"] = rc.bench.subjects;
    j["bench_prompts"] = rc.bench.prompts;
    j["margin"] = rc.margin;
    j["emb_seed"] = rc.emb_seed;
    return j;
}

}  // namespace ink
