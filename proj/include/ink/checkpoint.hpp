#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"

#include "ink/model.hpp"

namespace ink {

// Checkpoint directory contract: weights.bin holds every parameter as flat
// little-endian float32 in lexicographic name order; manifest.json records the
// model config, stage, parent checkpoint hash, and the tensor table with
// per-tensor FNV hashes.
struct CheckpointMeta {
    int stage = 1;
    std::string parent_hash;
    nlohmann::json train_config = nlohmann::json::object();
};

void save_checkpoint(const std::string& dir, const Model& model, const CheckpointMeta& meta);

// Hash of the weights.bin bytes, hex-encoded; used as the parent link.
std::string checkpoint_hash(const std::string& dir);

nlohmann::json read_manifest(const std::string& dir);

// Rebuilds the model from manifest.json and fills every parameter from
// weights.bin. The stored per-tensor hashes are re-verified.
std::unique_ptr<Model> load_checkpoint(const std::string& dir);

// Loads only the weights from `dir` into an existing model; every tensor in
// the checkpoint must exist in the model with identical shape. Parameters the
// checkpoint does not mention are left untouched (used to seed the refine
// branch from a stage-1 checkpoint).
void load_weights_into(const std::string& dir, Model& model);

// Exact float64 training snapshot: parameter values, optimizer moments, the
// step counter and the loss EMA. Unlike weights.bin this preserves full
// precision so a split run resumes bit-exactly.
struct TrainState {
    int64_t step = 0;
    double ema_loss = 0.0;
    bool ema_init = false;
    std::map<std::string, Tensor> values;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
};

void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

}  // namespace ink
