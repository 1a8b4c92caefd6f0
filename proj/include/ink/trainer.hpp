#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ink/conditioner.hpp"
#include "ink/model.hpp"
#include "ink/rng.hpp"
#include "ink/tape.hpp"

namespace ink {

// Two-stage protocol: stage 1 trains every main-denoiser weight at beta 1;
// stage 2 freezes it, initializes the refine branch from the stage-1
// checkpoint and trains only the refine cross-attention layers plus the
// detail MLP at beta 0.3.
struct TrainConfig {
    int stage = 1;
    int batch = 8;
    int steps = 2000;
    double lr = 1e-4;
    std::optional<double> beta_train;  // defaults by stage, see beta()
    double p_text = 0.1;
    double p_image = 0.1;
    uint64_t seed = 0;
    std::string data_root;
    std::string out_dir;
    std::string init_from;              // stage-1 checkpoint, required for stage 2
    std::string loss = "l2";            // per-sample root-sum-square; "mse" for the mean-square variant
    std::string captions = "regional";  // or "global"
    bool assign = true;                 // feed projected subject tokens to the image branch
    bool resume = false;                // continue from out_dir/state.bin up to `steps`

    double beta() const { return beta_train ? *beta_train : (stage == 1 ? 1.0 : 0.3); }
};

struct TrainResult {
    int64_t start_step = 0;
    int64_t end_step = 0;
    double initial_smoothed = 0.0;  // smoothed loss after this run's first step
    double final_smoothed = 0.0;
};

bool stage1_trainable(const std::string& name);
bool stage2_trainable(const std::string& name);

// Mean over samples of the distance between eps and prediction: per-sample L2
// norm for kind "l2", per-sample mean square for kind "mse". Node lists must
// be parallel and nonempty.
int batch_loss(Tape& t, const std::vector<int>& eps_nodes, const std::vector<int>& pred_nodes,
               const std::string& kind);

// Independently replaces each modality with its null value at the given
// probability. Two uniform draws are consumed, text first.
ConditionBundle dropout_conditions(const ConditionBundle& cond, const ConditionBundle& null_cond,
                                   double p_text, double p_image, Rng& rng);

TrainResult train_stage1(const ModelConfig& mc, const TrainConfig& cfg);
TrainResult train_stage2(const ModelConfig& mc, const TrainConfig& cfg);
TrainResult train(const ModelConfig& mc, const TrainConfig& cfg);

}  // namespace ink
