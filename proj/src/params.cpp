#include "ink/params.hpp"

#include <functional>
#include <stdexcept>

namespace ink {

Param& ParamStore::add(const std::string& name, Tensor init) {
    if (by_name_.count(name)) throw std::logic_error("duplicate param name: " + name);
    params_.push_back(Param{name, std::move(init), Tensor{}, true});
    by_name_[name] = &params_.back();
    return params_.back();
}

Param& ParamStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no such param: " + name);
    return *it->second;
}

const Param& ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no such param: " + name);
    return *it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(by_name_.size());
    for (const auto& [k, _] : by_name_) out.push_back(k);
    return out;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(by_name_.size());
    for (auto& [_, p] : by_name_) out.push_back(p);
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    out.reserve(by_name_.size());
    for (const auto& [_, p] : by_name_) out.push_back(p);
    return out;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.zero_grad();
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& pred) {
    for (auto& p : params_) p.trainable = pred(p.name);
}

std::vector<Param*> ParamStore::trainable() {
    std::vector<Param*> out;
    for (auto& [_, p] : by_name_)
        if (p->trainable) out.push_back(p);
    return out;
}

uint64_t ParamStore::value_hash(const std::string& name) const {
    const Param& p = get(name);
    return fnv1a(p.value.data.data(), p.value.data.size() * sizeof(double));
}

std::map<std::string, uint64_t> ParamStore::value_hashes() const {
    std::map<std::string, uint64_t> out;
    for (const auto& [k, p] : by_name_)
        out[k] = fnv1a(p->value.data.data(), p->value.data.size() * sizeof(double));
    return out;
}

}  // namespace ink
