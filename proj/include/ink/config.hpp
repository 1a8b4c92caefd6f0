#pragma once

#include <string>

#include "json.hpp"

#include "ink/data_engine.hpp"
#include "ink/evalbench.hpp"
#include "ink/model.hpp"
#include "ink/sampler.hpp"
#include "ink/trainer.hpp"

namespace ink {

// The union of every tunable knob, filled from built-in defaults, then a flat
// JSON config file, then explicit command-line flags, in that order. A single
// "seed" key feeds whichever command runs; "assign" drives both the training
// and the guidance switch.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    GuidanceConfig guide;
    BuildConfig data;
    BenchAssetsConfig bench;
    double margin = 0.3;
    uint64_t emb_seed = 2024;
};

// Applies one flat JSON object; every key must belong to the union schema and
// carry the right type.
void apply_config(RunConfig& rc, const nlohmann::json& file);

// The parsed config file, or an empty object for an empty path.
nlohmann::json load_config_object(const std::string& path);

// Defaults overlaid with the file at `path` (empty path = pure defaults).
RunConfig load_run_config(const std::string& path);

// The full resolved state as one flat JSON object, for echoing into outputs.
nlohmann::json resolved_config_json(const RunConfig& rc);

}  // namespace ink
