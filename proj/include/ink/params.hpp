#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ink/common.hpp"
#include "ink/tensor.hpp"

namespace ink {

// A named model weight. `grad` is allocated on demand and zeroed between steps.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() {
        if (grad.shape != value.shape) grad = Tensor::zeros(value.shape);
        grad.fill(0.0);
    }
};

// Owns every parameter of a model under stable addresses; names follow the
// dotted path scheme recorded in checkpoint manifests ("unet.dec.res0.self_attn.W_qs").
class ParamStore {
public:
    Param& add(const std::string& name, Tensor init);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }

    // Names in lexicographic order — the canonical serialization order.
    std::vector<std::string> names() const;
    std::vector<Param*> all();
    std::vector<const Param*> all() const;

    void zero_grads();
    // Marks trainable exactly the params whose name matches the predicate.
    void set_trainable(const std::function<bool(const std::string&)>& pred);
    std::vector<Param*> trainable();

    // Hash of the in-memory double values (freeze-integrity checks).
    uint64_t value_hash(const std::string& name) const;
    std::map<std::string, uint64_t> value_hashes() const;

private:
    std::deque<Param> params_;
    std::map<std::string, Param*> by_name_;
};

}  // namespace ink
