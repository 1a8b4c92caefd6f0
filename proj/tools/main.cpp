#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ink/checkpoint.hpp"
#include "ink/common.hpp"
#include "ink/config.hpp"
#include "ink/data_engine.hpp"
#include "ink/evalbench.hpp"
#include "ink/image.hpp"
#include "ink/pipeline.hpp"
#include "ink/sampler.hpp"
#include "ink/trainer.hpp"

namespace fs = std::filesystem;
using namespace ink;

namespace {

void set_seed_everywhere(RunConfig& rc, uint64_t seed) {
    rc.train.seed = seed;
    rc.guide.seed = seed;
    rc.data.seed = seed;
    rc.bench.seed = seed;
}

void log_config(const RunConfig& rc) {
    std::printf("config: %s\n", resolved_config_json(rc).dump().c_str());
}

void write_config_sidecar(const std::string& path, const RunConfig& rc) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << resolved_config_json(rc).dump(2) << "\n";
}

std::vector<double> parse_betas(const std::string& spec) {
    std::vector<double> betas;
    auto parse_one = [](const std::string& s) {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw UsageError("--betas: bad number \"" + s + "\"");
        return v;
    };
    try {
        if (spec.find(':') != std::string::npos) {
            size_t a = spec.find(':');
            size_t b = spec.find(':', a + 1);
            if (b == std::string::npos || spec.find(':', b + 1) != std::string::npos)
                throw UsageError("--betas wants lo:hi:step or a comma list");
            double lo = parse_one(spec.substr(0, a));
            double hi = parse_one(spec.substr(a + 1, b - a - 1));
            double step = parse_one(spec.substr(b + 1));
            if (step <= 0 || hi < lo) throw UsageError("--betas: empty range");
            int n = static_cast<int>((hi - lo) / step + 1e-9) + 1;
            for (int i = 0; i < n; ++i) betas.push_back(lo + i * step);
        } else {
            size_t pos = 0;
            while (pos <= spec.size()) {
                size_t comma = spec.find(',', pos);
                if (comma == std::string::npos) comma = spec.size();
                betas.push_back(parse_one(spec.substr(pos, comma - pos)));
                pos = comma + 1;
            }
        }
    } catch (const std::invalid_argument&) {
        throw UsageError("--betas: not a number in \"" + spec + "\"");
    } catch (const std::out_of_range&) {
        throw UsageError("--betas: number out of range in \"" + spec + "\"");
    }
    if (betas.empty()) throw UsageError("--betas: no values");
    return betas;
}

Benchmark load_benchmark(const std::string& root) {
    return build_benchmark(root + "/scenes", root + "/subjects", root + "/prompts.txt");
}

struct BuildDataOpts {
    std::string config, out, annotators = "oracle";
    int num = 0;
    uint64_t seed = 0;
    int scene_size = 64, subject_res = 32;
    double tau_min = 0.02, tau_max = 0.50;
};

void run_build_data(const BuildDataOpts& o, const CLI::App& cmd) {
    RunConfig rc = load_run_config(o.config);
    if (cmd.count("--num")) rc.data.count = o.num;
    if (cmd.count("--seed")) set_seed_everywhere(rc, o.seed);
    if (cmd.count("--scene-size")) {
        rc.data.scene_size = o.scene_size;
        rc.bench.scene_size = o.scene_size;
    }
    if (cmd.count("--subject-res")) {
        rc.data.subject_res = o.subject_res;
        rc.bench.subject_res = o.subject_res;
    }
    if (cmd.count("--tau-min")) rc.data.tau_min = o.tau_min;
    if (cmd.count("--tau-max")) rc.data.tau_max = o.tau_max;

    std::unique_ptr<AnnotatorSuite> suite;
    if (o.annotators == "oracle")
        suite = make_oracle_suite();
    else if (o.annotators.rfind("replay:", 0) == 0)
        suite = make_replay_suite(o.annotators.substr(7));
    else
        throw UsageError("--annotators wants oracle or replay:<dir>");

    log_config(rc);
    BuildStats stats = build_dataset(rc.data, *suite, o.out);
    std::printf(
        "dataset %s: kept %d of %d candidates over %d scenes "
        "(excluded_by_tag %d, excluded_by_size %d, skipped %d)\n",
        o.out.c_str(), stats.kept, stats.candidates, stats.requested, stats.excluded_by_tag,
        stats.excluded_by_size, stats.skipped);
}

struct BuildBenchOpts {
    std::string config, out;
    int scenes = 4, subjects = 3, prompts = 5;
    uint64_t seed = 7;
    int scene_size = 64, subject_res = 32;
};

void run_build_bench(const BuildBenchOpts& o, const CLI::App& cmd) {
    RunConfig rc = load_run_config(o.config);
    if (cmd.count("--scenes")) rc.bench.scenes = o.scenes;
    if (cmd.count("--subjects")) rc.bench.subjects = o.subjects;
    if (cmd.count("--prompts")) rc.bench.prompts = o.prompts;
    if (cmd.count("--seed")) rc.bench.seed = o.seed;
    if (cmd.count("--scene-size")) rc.bench.scene_size = o.scene_size;
    if (cmd.count("--subject-res")) rc.bench.subject_res = o.subject_res;
    rc.bench.root = o.out;

    log_config(rc);
    make_bench_assets(rc.bench);
    std::printf("benchmark assets %s: %d scenes, %d subjects, %d prompt templates\n",
                o.out.c_str(), rc.bench.scenes, rc.bench.subjects, rc.bench.prompts);
}

struct TrainOpts {
    std::string config, data, out, init_from;
    int stage = 1, batch = 8, steps = 0;
    double lr = 1e-4, train_beta = 0, p_text = 0.1, p_image = 0.1;
    uint64_t seed = 0;
    std::string loss = "l2", captions = "regional";
    bool assign = true, resume = false;
};

void run_train(const TrainOpts& o, const CLI::App& cmd) {
    nlohmann::json file = load_config_object(o.config);
    RunConfig rc;
    apply_config(rc, file);
    if (cmd.count("--stage")) rc.train.stage = o.stage;
    if (cmd.count("--data")) rc.train.data_root = o.data;
    if (cmd.count("--ckpt-out")) rc.train.out_dir = o.out;
    if (cmd.count("--init-from")) rc.train.init_from = o.init_from;
    if (cmd.count("--batch")) rc.train.batch = o.batch;
    if (cmd.count("--steps")) rc.train.steps = o.steps;
    if (cmd.count("--lr")) rc.train.lr = o.lr;
    if (cmd.count("--train-beta")) rc.train.beta_train = o.train_beta;
    if (cmd.count("--p-text")) rc.train.p_text = o.p_text;
    if (cmd.count("--p-image")) rc.train.p_image = o.p_image;
    if (cmd.count("--seed")) set_seed_everywhere(rc, o.seed);
    if (cmd.count("--loss")) rc.train.loss = o.loss;
    if (cmd.count("--captions")) rc.train.captions = o.captions;
    if (cmd.count("--assign")) {
        rc.train.assign = o.assign;
        rc.guide.assign = o.assign;
    }
    if (cmd.count("--resume")) rc.train.resume = o.resume;
    if (!cmd.count("--steps") && !file.contains("steps"))
        rc.train.steps = rc.train.stage == 1 ? 2000 : 1000;

    log_config(rc);
    TrainResult r = train(rc.model, rc.train);
    std::printf("stage %d: steps %lld..%lld, smoothed loss %.6f -> %.6f, checkpoint %s\n",
                rc.train.stage, static_cast<long long>(r.start_step),
                static_cast<long long>(r.end_step), r.initial_smoothed, r.final_smoothed,
                rc.train.out_dir.c_str());
}

struct SampleOpts {
    std::string config, ckpt, scene, mask, subject, prompt, out, dump_latents;
    double beta = 0.3, cfg_scale = 7.5, margin = 0.3;
    int steps = 50;
    uint64_t seed = 0;
    bool no_blend = false, no_refine = false, no_assign = false;
};

void run_sample(const SampleOpts& o, const CLI::App& cmd) {
    RunConfig rc = load_run_config(o.config);
    if (cmd.count("--beta")) rc.guide.beta = o.beta;
    if (cmd.count("--cfg-scale")) rc.guide.w = o.cfg_scale;
    if (cmd.count("--steps")) rc.guide.steps = o.steps;
    if (cmd.count("--seed")) set_seed_everywhere(rc, o.seed);
    if (cmd.count("--margin")) rc.margin = o.margin;
    if (o.no_blend) rc.guide.blend = false;
    if (o.no_refine) rc.guide.refine = false;
    if (o.no_assign) {
        rc.guide.assign = false;
        rc.train.assign = false;
    }

    std::unique_ptr<Model> model = load_checkpoint(o.ckpt);
    Tensor scene = read_image_png(o.scene);
    Tensor mask = read_mask_png(o.mask);
    std::optional<Tensor> subject;
    if (cmd.count("--subject")) subject = read_image_png(o.subject);
    std::optional<std::string> prompt;
    if (cmd.count("--prompt")) prompt = o.prompt;
    if (!subject && !prompt)
        std::fprintf(stderr,
                     "warning: neither --subject nor --prompt given, the fill is unconditional\n");

    StepObserver observer;
    if (!o.dump_latents.empty()) {
        fs::create_directories(o.dump_latents);
        observer = latent_dump_observer(o.dump_latents);
    }

    log_config(rc);
    InpaintResult res =
        inpaint_image(*model, scene, mask, subject, prompt, rc.guide, rc.margin, observer);
    write_image_png(o.out, res.image);
    write_config_sidecar(o.out + ".config.json", rc);
    std::printf("wrote %s (window side %d at %d,%d; %d model calls)\n", o.out.c_str(),
                res.window.side, res.window.x0, res.window.y0, res.stats.model_calls);
}

struct EvalOpts {
    std::string config, ckpt, bench, out, variant = "full";
    double beta = 0.3, cfg_scale = 7.5, margin = 0.3;
    int steps = 50;
    uint64_t emb_seed = 2024;
    bool no_refine = false, no_assign = false, no_blend = false;
};

bool option_given(const CLI::App& cmd, const std::string& name) {
    const CLI::Option* opt = cmd.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

void apply_eval_flags(RunConfig& rc, const EvalOpts& o, const CLI::App& cmd) {
    if (option_given(cmd, "--beta")) rc.guide.beta = o.beta;
    if (cmd.count("--cfg-scale")) rc.guide.w = o.cfg_scale;
    if (cmd.count("--steps")) rc.guide.steps = o.steps;
    if (cmd.count("--emb-seed")) rc.emb_seed = o.emb_seed;
    if (cmd.count("--margin")) rc.margin = o.margin;
    if (o.no_blend) rc.guide.blend = false;
    if (o.no_refine) rc.guide.refine = false;
    if (o.no_assign) {
        rc.guide.assign = false;
        rc.train.assign = false;
    }
}

void run_eval(const EvalOpts& o, const CLI::App& cmd) {
    RunConfig rc = load_run_config(o.config);
    apply_eval_flags(rc, o, cmd);

    std::unique_ptr<Model> model = load_checkpoint(o.ckpt);
    Benchmark bench = load_benchmark(o.bench);
    EmbedderPair emb = toy_embedders(rc.emb_seed);

    log_config(rc);
    std::vector<MetricRow> rows = evaluate(bench, *model, rc.guide, emb, o.variant);
    SummaryRow summary = summarize(rows, rc.guide.beta);

    fs::create_directories(o.out);
    write_results_csv(o.out + "/results.csv", rows);
    write_summary_csv(o.out + "/summary.csv", {summary});
    write_config_sidecar(o.out + "/config.json", rc);
    std::printf("eval %s: n %d, mean clip_i %.6f, mean clip_t %.6f\n", o.variant.c_str(),
                summary.n, summary.mean_clip_i, summary.mean_clip_t);
}

struct SweepOpts {
    EvalOpts eval;
    std::string betas = "0.1:1.0:0.1";
};

void run_sweep(const SweepOpts& o, const CLI::App& cmd) {
    RunConfig rc = load_run_config(o.eval.config);
    apply_eval_flags(rc, o.eval, cmd);
    std::vector<double> betas = parse_betas(o.betas);

    std::unique_ptr<Model> model = load_checkpoint(o.eval.ckpt);
    Benchmark bench = load_benchmark(o.eval.bench);
    EmbedderPair emb = toy_embedders(rc.emb_seed);

    log_config(rc);
    std::vector<MetricRow> rows;
    std::vector<SummaryRow> table = sweep_beta(bench, *model, rc.guide, betas, emb, &rows);

    fs::create_directories(o.eval.out);
    write_results_csv(o.eval.out + "/results.csv", rows);
    write_summary_csv(o.eval.out + "/summary.csv", table);
    write_config_sidecar(o.eval.out + "/config.json", rc);
    for (const SummaryRow& row : table)
        std::printf("beta %.3f: mean clip_i %.6f, mean clip_t %.6f (n %d)\n", row.beta,
                    row.mean_clip_i, row.mean_clip_t, row.n);
}

struct AblateOpts {
    EvalOpts eval;
    std::string ckpt_baseline, ckpt_locate, ckpt_assign, ckpt_refine;
};

void run_ablate(const AblateOpts& o, const CLI::App& cmd) {
    RunConfig rc = load_run_config(o.eval.config);
    apply_eval_flags(rc, o.eval, cmd);

    Benchmark bench = load_benchmark(o.eval.bench);
    EmbedderPair emb = toy_embedders(rc.emb_seed);
    std::vector<AblationVariant> variants = {
        {"baseline", o.ckpt_baseline, false, false},
        {"+locate", o.ckpt_locate, false, false},
        {"+assign", o.ckpt_assign, true, false},
        {"+refine", o.ckpt_refine, true, true},
    };

    log_config(rc);
    std::vector<MetricRow> rows;
    std::vector<AblationRow> table = ablation_table(bench, variants, rc.guide, emb, &rows);

    fs::create_directories(o.eval.out);
    write_results_csv(o.eval.out + "/results.csv", rows);
    write_ablation_csv(o.eval.out + "/ablation.csv", table);
    write_config_sidecar(o.eval.out + "/config.json", rc);
    for (const AblationRow& row : table)
        std::printf("%-9s mean clip_i %.6f, mean clip_t %.6f (n %d)\n", row.variant.c_str(),
                    row.mean_clip_i, row.mean_clip_t, row.n);
}

void add_eval_flags(CLI::App* cmd, EvalOpts& o, bool with_beta, bool with_ckpt = true) {
    if (with_ckpt) cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    cmd->add_option("--bench", o.bench, "benchmark root (scenes/, subjects/, prompts.txt)")
        ->required();
    cmd->add_option("--out", o.out, "output directory for CSV tables")->required();
    if (with_beta)
        cmd->add_option("--beta", o.beta, "image control strength")->capture_default_str();
    cmd->add_option("--cfg-scale", o.cfg_scale, "classifier-free guidance scale")
        ->capture_default_str();
    cmd->add_option("--steps", o.steps, "sampler steps")->capture_default_str();
    cmd->add_option("--emb-seed", o.emb_seed, "toy embedder seed")->capture_default_str();
    cmd->add_option("--margin", o.margin, "zoom window margin ratio")->capture_default_str();
    cmd->add_flag("--no-blend", o.no_blend, "disable latent background blending");
    cmd->add_flag("--no-refine", o.no_refine, "disable refine feature injection");
    cmd->add_flag("--no-assign", o.no_assign, "disable the image cross-attention branch");
    cmd->add_option("--config", o.config, "flat JSON config file");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ink: a desk-scale multimodal inpainting pipeline"};
    app.require_subcommand(1);

    auto bd = std::make_shared<BuildDataOpts>();
    CLI::App* build_data = app.add_subcommand("build-data", "Generate a quadruplet dataset");
    build_data->add_option("--out", bd->out, "dataset directory")->required();
    build_data->add_option("--num", bd->num, "scenes to generate")->capture_default_str();
    build_data->add_option("--seed", bd->seed, "generation seed")->capture_default_str();
    build_data->add_option("--annotators", bd->annotators, "oracle or replay:<dir>")
        ->capture_default_str();
    build_data->add_option("--scene-size", bd->scene_size, "scene side in pixels")
        ->capture_default_str();
    build_data->add_option("--subject-res", bd->subject_res, "persisted subject resolution")
        ->capture_default_str();
    build_data->add_option("--tau-min", bd->tau_min, "minimum bbox/image area ratio")
        ->capture_default_str();
    build_data->add_option("--tau-max", bd->tau_max, "maximum bbox/image area ratio")
        ->capture_default_str();
    build_data->add_option("--config", bd->config, "flat JSON config file");
    build_data->callback([bd, build_data] { run_build_data(*bd, *build_data); });

    auto bb = std::make_shared<BuildBenchOpts>();
    CLI::App* build_bench = app.add_subcommand("build-bench", "Generate benchmark assets");
    build_bench->add_option("--out", bb->out, "benchmark root directory")->required();
    build_bench->add_option("--scenes", bb->scenes, "scene count")->capture_default_str();
    build_bench->add_option("--subjects", bb->subjects, "subject count")->capture_default_str();
    build_bench->add_option("--prompts", bb->prompts, "prompt template count")
        ->capture_default_str();
    build_bench->add_option("--seed", bb->seed, "asset seed")->capture_default_str();
    build_bench->add_option("--scene-size", bb->scene_size, "scene side in pixels")
        ->capture_default_str();
    build_bench->add_option("--subject-res", bb->subject_res, "subject resolution")
        ->capture_default_str();
    build_bench->add_option("--config", bb->config, "flat JSON config file");
    build_bench->callback([bb, build_bench] { run_build_bench(*bb, *build_bench); });

    auto tr = std::make_shared<TrainOpts>();
    CLI::App* train_cmd = app.add_subcommand("train", "Run one training stage");
    train_cmd->add_option("--stage", tr->stage, "1 or 2")->capture_default_str();
    train_cmd->add_option("--data", tr->data, "dataset directory")->required();
    train_cmd->add_option("--ckpt-out,--out", tr->out, "checkpoint output directory")
        ->required();
    train_cmd->add_option("--init-from", tr->init_from,
                          "stage-1 checkpoint directory (stage 2 only)");
    train_cmd->add_option("--batch", tr->batch, "batch size")->capture_default_str();
    train_cmd->add_option("--steps", tr->steps, "training steps (2000 stage 1, 1000 stage 2)");
    train_cmd->add_option("--lr", tr->lr, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--train-beta", tr->train_beta,
                          "training-time image control strength (1.0 stage 1, 0.3 stage 2)");
    train_cmd->add_option("--p-text", tr->p_text, "text dropout probability")
        ->capture_default_str();
    train_cmd->add_option("--p-image", tr->p_image, "image dropout probability")
        ->capture_default_str();
    train_cmd->add_option("--seed", tr->seed, "training seed")->capture_default_str();
    train_cmd->add_option("--loss", tr->loss, "l2 or mse")->capture_default_str();
    train_cmd->add_option("--captions", tr->captions, "regional or global")
        ->capture_default_str();
    train_cmd->add_flag("--assign,!--no-assign", tr->assign,
                        "train the image cross-attention branch");
    train_cmd->add_flag("--resume", tr->resume, "continue from the checkpoint in --ckpt-out");
    train_cmd->add_option("--config", tr->config, "flat JSON config file");
    train_cmd->callback([tr, train_cmd] { run_train(*tr, *train_cmd); });

    auto sa = std::make_shared<SampleOpts>();
    CLI::App* sample_cmd = app.add_subcommand("sample", "Inpaint one scene");
    sample_cmd->add_option("--ckpt", sa->ckpt, "checkpoint directory")->required();
    sample_cmd->add_option("--scene", sa->scene, "scene PNG")->required();
    sample_cmd->add_option("--mask", sa->mask, "mask PNG")->required();
    sample_cmd->add_option("--subject", sa->subject, "subject PNG");
    sample_cmd->add_option("--prompt", sa->prompt, "text prompt");
    sample_cmd->add_option("--out", sa->out, "output PNG")->required();
    sample_cmd->add_option("--beta", sa->beta, "image control strength")->capture_default_str();
    sample_cmd->add_option("--cfg-scale", sa->cfg_scale, "classifier-free guidance scale")
        ->capture_default_str();
    sample_cmd->add_option("--steps", sa->steps, "sampler steps")->capture_default_str();
    sample_cmd->add_option("--seed", sa->seed, "noise seed")->capture_default_str();
    sample_cmd->add_option("--margin", sa->margin, "zoom window margin ratio")
        ->capture_default_str();
    sample_cmd->add_flag("--no-blend", sa->no_blend, "disable latent background blending");
    sample_cmd->add_flag("--no-refine", sa->no_refine, "disable refine feature injection");
    sample_cmd->add_flag("--no-assign", sa->no_assign,
                         "disable the image cross-attention branch");
    sample_cmd->add_option("--dump-latents", sa->dump_latents,
                           "directory for per-step latent NPY dumps");
    sample_cmd->add_option("--config", sa->config, "flat JSON config file");
    sample_cmd->callback([sa, sample_cmd] { run_sample(*sa, *sample_cmd); });

    auto ev = std::make_shared<EvalOpts>();
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a benchmark");
    add_eval_flags(eval_cmd, *ev, true);
    eval_cmd->add_option("--variant", ev->variant, "variant label for the results CSV")
        ->capture_default_str();
    eval_cmd->callback([ev, eval_cmd] { run_eval(*ev, *eval_cmd); });

    auto sw = std::make_shared<SweepOpts>();
    CLI::App* sweep_cmd = app.add_subcommand("sweep-beta", "Evaluate across beta values");
    add_eval_flags(sweep_cmd, sw->eval, false);
    sweep_cmd->add_option("--betas", sw->betas, "lo:hi:step range or comma list")
        ->capture_default_str();
    sweep_cmd->callback([sw, sweep_cmd] { run_sweep(*sw, *sweep_cmd); });

    auto ab = std::make_shared<AblateOpts>();
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Cumulative component ablation");
    add_eval_flags(ablate_cmd, ab->eval, true, false);
    ablate_cmd->add_option("--ckpt-baseline", ab->ckpt_baseline,
                           "stage-1 checkpoint, global captions, assign off")
        ->required();
    ablate_cmd->add_option("--ckpt-locate", ab->ckpt_locate,
                           "stage-1 checkpoint, regional captions, assign off")
        ->required();
    ablate_cmd->add_option("--ckpt-assign", ab->ckpt_assign,
                           "stage-1 checkpoint, regional captions, assign on")
        ->required();
    ablate_cmd->add_option("--ckpt-refine", ab->ckpt_refine, "stage-2 checkpoint")->required();
    ablate_cmd->callback([ab, ablate_cmd] { run_ablate(*ab, *ablate_cmd); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    }
    return 0;
}
