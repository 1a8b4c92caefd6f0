#include "ink/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "ink/checkpoint.hpp"
#include "ink/codec.hpp"
#include "ink/common.hpp"
#include "ink/data_engine.hpp"
#include "ink/image.hpp"
#include "ink/refiner.hpp"
#include "ink/schedule.hpp"

namespace ink {

namespace {

constexpr uint64_t kStepSalt = 0x74726e7374657031ull;
constexpr double kEmaKeep = 0.95;

struct PreparedSample {
    Tensor z0;      // source latent
    Tensor z_s;     // masked-source latent
    Tensor m_star;  // latent mask channel
    Tensor subject;
    Tensor text;         // caption embedding per config
    Tensor image_tokens; // frozen projection of the subject
};

std::vector<PreparedSample> prepare_dataset(const Model& model,
                                            const std::vector<Quadruplet>& ds,
                                            const std::string& captions) {
    if (captions != "regional" && captions != "global")
        throw UsageError("train: captions must be 'regional' or 'global', got '" + captions + "'");
    const int res = model.config().res;
    const int f = model.config().f;
    std::map<std::string, Tensor> text_cache;
    std::vector<PreparedSample> out;
    out.reserve(ds.size());
    for (const Quadruplet& q : ds) {
        PreparedSample s;
        Tensor x_s = resize_bilinear(q.source, res, res);
        Tensor m = resize_mask_cover(q.mask, res, res);
        s.z0 = encode(x_s, f);
        s.z_s = encode_masked_source(x_s, m, f);
        s.m_star = resize_mask(m, f);
        s.subject = q.subject.shape == std::vector<int>{3, res, res}
                        ? q.subject
                        : resize_bilinear(q.subject, res, res);
        const std::string& caption = captions == "regional" ? q.caption_regional : q.caption_global;
        auto it = text_cache.find(caption);
        if (it == text_cache.end())
            it = text_cache.emplace(caption, model.conditioner().embed_text(caption)).first;
        s.text = it->second;
        s.image_tokens = model.conditioner().project_image(s.subject);
        out.push_back(std::move(s));
    }
    return out;
}

struct Adam {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    void step(const std::vector<Param*>& params) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (Param* p : params) {
            Tensor& mm = m.try_emplace(p->name, Tensor(p->value.shape)).first->second;
            Tensor& vv = v.try_emplace(p->name, Tensor(p->value.shape)).first->second;
            for (size_t i = 0; i < p->value.data.size(); ++i) {
                const double g = p->grad.data[i];
                mm.data[i] = beta1 * mm.data[i] + (1.0 - beta1) * g;
                vv.data[i] = beta2 * vv.data[i] + (1.0 - beta2) * g * g;
                p->value.data[i] -= lr * (mm.data[i] / c1) / (std::sqrt(vv.data[i] / c2) + eps);
            }
        }
    }
};

nlohmann::json train_config_json(const TrainConfig& cfg) {
    return {{"stage", cfg.stage},
            {"batch", cfg.batch},
            {"steps", cfg.steps},
            {"lr", cfg.lr},
            {"beta_train", cfg.beta()},
            {"p_text", cfg.p_text},
            {"p_image", cfg.p_image},
            {"seed", cfg.seed},
            {"loss", cfg.loss},
            {"captions", cfg.captions},
            {"assign", cfg.assign},
            {"optimizer", {{"kind", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
            {"reference_scale",
             {{"batch", 128}, {"steps", 20000}, {"lr", 1e-5}, {"note", "toy defaults are a declared scale-down"}}}};
}

std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

TrainResult run_training(Model& model, const TrainConfig& cfg, const std::string& parent_hash) {
    if (cfg.batch < 1) throw UsageError("train: batch size must be positive");
    if (cfg.steps < 1) throw UsageError("train: step count must be positive");
    if (cfg.lr <= 0.0) throw UsageError("train: learning rate must be positive");
    if (cfg.loss != "l2" && cfg.loss != "mse")
        throw UsageError("train: loss must be 'l2' or 'mse', got '" + cfg.loss + "'");
    if (cfg.out_dir.empty()) throw UsageError("train: output directory required");

    std::vector<Quadruplet> ds = load_dataset(cfg.data_root);
    if (ds.empty()) throw DataError("train: dataset at " + cfg.data_root + " is empty");
    std::vector<PreparedSample> prepared = prepare_dataset(model, ds, cfg.captions);

    const auto pred = cfg.stage == 1 ? stage1_trainable : stage2_trainable;
    model.params().set_trainable(pred);
    std::vector<Param*> trainable = model.params().trainable();

    std::filesystem::create_directories(cfg.out_dir);
    const std::string state_path = cfg.out_dir + "/state.bin";
    const std::string csv_path = cfg.out_dir + "/loss.csv";

    Adam adam;
    adam.lr = cfg.lr;
    int64_t start_step = 0;
    double ema = 0.0;
    bool ema_init = false;

    if (cfg.resume) {
        TrainState st = load_train_state(state_path);
        start_step = st.step;
        ema = st.ema_loss;
        ema_init = st.ema_init;
        adam.t = st.step;
        adam.m = std::move(st.adam_m);
        adam.v = std::move(st.adam_v);
        for (Param* p : trainable) {
            auto it = st.values.find(p->name);
            if (it == st.values.end() || it->second.shape != p->value.shape)
                throw DataError("train: state.bin does not match the trainable set at " + p->name);
            p->value = it->second;
        }
        if (start_step >= cfg.steps)
            throw UsageError("train: state at step " + std::to_string(start_step) +
                             " already covers the requested " + std::to_string(cfg.steps));
    }

    std::ofstream csv(csv_path, cfg.resume ? std::ios::app : std::ios::trunc);
    if (!csv) throw DataError("train: cannot write " + csv_path);
    if (!cfg.resume) csv << "step,loss,smoothed_loss\n";

    const ConditionBundle null_cond = model.conditioner().null_bundle();
    const double beta = cfg.beta();
    const int T = model.config().T;
    TrainResult result;
    result.start_step = start_step;

    for (int64_t step = start_step; step < cfg.steps; ++step) {
        Rng rng(mix_seed(mix_seed(cfg.seed, kStepSalt), static_cast<uint64_t>(step)));
        Tape tape;
        std::vector<int> eps_nodes, pred_nodes;
        for (int b = 0; b < cfg.batch; ++b) {
            const PreparedSample& s =
                prepared[rng.uniform_index(static_cast<uint64_t>(prepared.size()))];
            const int t = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(T)));
            const Tensor eps = Tensor::randn(s.z0.shape, rng);

            ConditionBundle cond;
            cond.text = s.text;
            cond.text_null = false;
            cond.image_tokens = cfg.assign ? s.image_tokens : null_cond.image_tokens;
            cond.image_null = !cfg.assign;
            cond = dropout_conditions(cond, null_cond, cfg.p_text, cfg.p_image, rng);

            Tensor subj_noise;
            if (cfg.stage == 2) subj_noise = Tensor::randn(s.z0.shape, rng);

            const Tensor z_t = add_noise(s.z0, t, eps, model.schedule());
            const int input = tape.input(assemble_input(z_t, s.m_star, s.z_s));
            CondNodes cn;
            cn.text = tape.input(cond.text);
            if (cfg.assign) cn.image = tape.input(cond.image_tokens);

            std::vector<int> stash;
            const std::vector<int>* inject = nullptr;
            if (cfg.stage == 2 && !cond.image_null) {
                stash = refine_stash_nodes(tape, model, s.subject, t, subj_noise);
                inject = &stash;
            }
            const Denoiser::Forward fwd = model.unet().forward(tape, input, t, cn, beta, inject);
            if (!tape.val(fwd.out).all_finite())
                throw NumericError("train: non-finite prediction at step " + std::to_string(step));
            eps_nodes.push_back(tape.input(eps));
            pred_nodes.push_back(fwd.out);
        }

        const int loss_node = batch_loss(tape, eps_nodes, pred_nodes, cfg.loss);
        const double loss = tape.val(loss_node).data[0];
        if (!std::isfinite(loss))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        model.params().zero_grads();
        tape.backward(loss_node);
        adam.step(trainable);

        ema = ema_init ? kEmaKeep * ema + (1.0 - kEmaKeep) * loss : loss;
        ema_init = true;
        if (step == start_step) result.initial_smoothed = ema;
        csv << step << "," << csv_number(loss) << "," << csv_number(ema) << "\n";
    }
    csv.close();
    if (!csv) throw DataError("train: write failed for " + csv_path);

    result.end_step = cfg.steps;
    result.final_smoothed = ema;

    TrainState st;
    st.step = cfg.steps;
    st.ema_loss = ema;
    st.ema_init = ema_init;
    for (Param* p : trainable) st.values[p->name] = p->value;
    st.adam_m = adam.m;
    st.adam_v = adam.v;
    save_train_state(state_path, st);

    CheckpointMeta meta;
    meta.stage = cfg.stage;
    meta.parent_hash = parent_hash;
    meta.train_config = train_config_json(cfg);
    save_checkpoint(cfg.out_dir, model, meta);
    return result;
}

}  // namespace

bool stage1_trainable(const std::string& name) { return name.rfind("unet.", 0) == 0; }

bool stage2_trainable(const std::string& name) {
    if (name.rfind("cond.detail_mlp.", 0) == 0) return true;
    return name.rfind("refine.", 0) == 0 && name.find(".cross_attn.") != std::string::npos;
}

int batch_loss(Tape& t, const std::vector<int>& eps_nodes, const std::vector<int>& pred_nodes,
               const std::string& kind) {
    if (eps_nodes.empty() || eps_nodes.size() != pred_nodes.size())
        throw UsageError("batch_loss: need matching nonempty eps/prediction lists");
    if (kind != "l2" && kind != "mse")
        throw UsageError("batch_loss: kind must be 'l2' or 'mse', got '" + kind + "'");
    std::vector<int> per_sample;
    per_sample.reserve(eps_nodes.size());
    for (size_t i = 0; i < eps_nodes.size(); ++i) {
        const int d = t.sub(eps_nodes[i], pred_nodes[i]);
        const int ss = t.sumsq(d);
        if (kind == "l2")
            per_sample.push_back(t.sqrt_scalar(ss));
        else
            per_sample.push_back(t.scale(ss, 1.0 / static_cast<double>(t.val(d).data.size())));
    }
    return t.mean_scalars(per_sample);
}

ConditionBundle dropout_conditions(const ConditionBundle& cond, const ConditionBundle& null_cond,
                                   double p_text, double p_image, Rng& rng) {
    if (p_text < 0.0 || p_text > 1.0 || p_image < 0.0 || p_image > 1.0)
        throw UsageError("dropout_conditions: probabilities must lie in [0,1]");
    ConditionBundle out = cond;
    if (rng.uniform() < p_text) {
        out.text = null_cond.text;
        out.text_null = true;
    }
    if (rng.uniform() < p_image) {
        out.image_tokens = null_cond.image_tokens;
        out.image_null = true;
    }
    return out;
}

TrainResult train_stage1(const ModelConfig& mc, const TrainConfig& cfg) {
    if (cfg.stage != 1) throw UsageError("train_stage1: config requests stage " + std::to_string(cfg.stage));
    Model model(mc, cfg.seed, false);
    return run_training(model, cfg, "");
}

TrainResult train_stage2(const ModelConfig& mc, const TrainConfig& cfg) {
    if (cfg.stage != 2) throw UsageError("train_stage2: config requests stage " + std::to_string(cfg.stage));
    if (cfg.init_from.empty())
        throw UsageError("train_stage2: a stage-1 checkpoint is required (set init_from)");

    nlohmann::json manifest = read_manifest(cfg.init_from);
    if (manifest.at("stage").get<int>() != 1)
        throw DataError("train_stage2: " + cfg.init_from + " holds a stage " +
                        manifest.at("stage").dump() + " checkpoint, need stage 1");
    std::unique_ptr<Model> parent = load_checkpoint(cfg.init_from);
    if (!(parent->config() == mc.normalized()))
        throw DataError("train_stage2: manifest mismatch, checkpoint model config differs from the requested one");

    Model model(mc, parent->init_seed(), true);
    load_weights_into(cfg.init_from, model);
    model.init_refine_from_unet();
    return run_training(model, cfg, checkpoint_hash(cfg.init_from));
}

TrainResult train(const ModelConfig& mc, const TrainConfig& cfg) {
    if (cfg.stage == 1) return train_stage1(mc, cfg);
    if (cfg.stage == 2) return train_stage2(mc, cfg);
    throw UsageError("train: stage must be 1 or 2, got " + std::to_string(cfg.stage));
}

}  // namespace ink
