#include "ink/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ink/common.hpp"

namespace ink {

namespace {

nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"f", c.f},
            {"res", c.res},
            {"c0", c.c0},
            {"c1", c.c1},
            {"cond_dim", c.cond_dim},
            {"temb_dim", c.temb_dim},
            {"T", c.T},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"patch", c.cond.patch},
            {"text_len", c.cond.text_len},
            {"image_tokens", c.cond.image_tokens},
            {"detail_hidden", c.cond.detail_hidden},
            {"vocab", c.cond.vocab},
            {"embed_seed", c.cond.embed_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.f = j.at("f");
    c.res = j.at("res");
    c.c0 = j.at("c0");
    c.c1 = j.at("c1");
    c.cond_dim = j.at("cond_dim");
    c.temb_dim = j.at("temb_dim");
    c.T = j.at("T");
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.cond.patch = j.at("patch");
    c.cond.text_len = j.at("text_len");
    c.cond.image_tokens = j.at("image_tokens");
    c.cond.detail_hidden = j.at("detail_hidden");
    c.cond.vocab = j.at("vocab");
    c.cond.embed_seed = j.at("embed_seed");
    return c;
}

std::vector<char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void fill_params_from_blob(const std::vector<char>& blob, const nlohmann::json& tensors,
                           const nlohmann::json& hashes, ParamStore& params, const char* where) {
    for (auto it = tensors.begin(); it != tensors.end(); ++it) {
        const std::string& name = it.key();
        if (!params.has(name))
            throw DataError(std::string(where) + ": checkpoint tensor " + name +
                            " has no matching model parameter");
        Param& p = params.get(name);
        std::vector<int> shape = it.value().at("shape").get<std::vector<int>>();
        if (shape != p.value.shape)
            throw DataError(std::string(where) + ": shape mismatch for " + name);
        size_t offset = it.value().at("offset").get<size_t>();
        size_t bytes = p.value.data.size() * 4;
        if (offset + bytes > blob.size())
            throw DataError(std::string(where) + ": weights.bin truncated at " + name);
        uint64_t h = 14695981039346656037ull;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            uint32_t raw;
            std::memcpy(&raw, blob.data() + offset + i * 4, 4);
            float v;
            std::memcpy(&v, &raw, 4);
            p.value.data[i] = static_cast<double>(v);
            for (int b = 0; b < 4; ++b) {
                h ^= (raw >> (8 * b)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
        if (hashes.contains(name) && hashes.at(name).get<std::string>() != to_hex(h))
            throw DataError(std::string(where) + ": hash mismatch for " + name);
    }
}

}  // namespace

void save_checkpoint(const std::string& dir, const Model& model, const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    const ParamStore& ps = model.params();

    nlohmann::json tensors = nlohmann::json::object();
    nlohmann::json hashes = nlohmann::json::object();
    std::ofstream wf(dir + "/weights.bin", std::ios::binary);
    if (!wf) throw DataError("checkpoint: cannot write " + dir + "/weights.bin");
    size_t offset = 0;
    for (const std::string& name : ps.names()) {
        const Tensor& t = ps.get(name).value;
        uint64_t h = 14695981039346656037ull;
        for (double d : t.data) {
            float v = static_cast<float>(d);
            uint32_t raw;
            std::memcpy(&raw, &v, 4);
            char buf[4];
            for (int b = 0; b < 4; ++b) {
                buf[b] = static_cast<char>((raw >> (8 * b)) & 0xffu);
                h ^= (raw >> (8 * b)) & 0xffu;
                h *= 1099511628211ull;
            }
            wf.write(buf, 4);
        }
        tensors[name] = {{"offset", offset}, {"shape", t.shape}};
        hashes[name] = to_hex(h);
        offset += t.data.size() * 4;
    }
    wf.close();
    if (!wf) throw DataError("checkpoint: write failed for " + dir + "/weights.bin");

    nlohmann::json manifest = {{"schema", 1},
                               {"stage", meta.stage},
                               {"parent", meta.parent_hash},
                               {"init_seed", model.init_seed()},
                               {"with_refine", model.refine() != nullptr},
                               {"model", model_config_json(model.config())},
                               {"train", meta.train_config},
                               {"tensors", tensors},
                               {"hashes", hashes}};
    std::ofstream mf(dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw DataError("checkpoint: write failed for " + dir + "/manifest.json");
}

std::string checkpoint_hash(const std::string& dir) {
    std::vector<char> blob = read_file(dir + "/weights.bin");
    uint64_t h = 14695981039346656037ull;
    for (char c : blob) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return to_hex(h);
}

nlohmann::json read_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw DataError("checkpoint: cannot open " + dir + "/manifest.json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: bad manifest in " + dir + ": " + e.what());
    }
    return j;
}

std::unique_ptr<Model> load_checkpoint(const std::string& dir) {
    nlohmann::json manifest = read_manifest(dir);
    ModelConfig cfg;
    bool with_refine = false;
    uint64_t init_seed = 0;
    try {
        cfg = model_config_from_json(manifest.at("model"));
        with_refine = manifest.at("with_refine").get<bool>();
        init_seed = manifest.at("init_seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: bad manifest in " + dir + ": " + e.what());
    }
    auto model = std::make_unique<Model>(cfg, init_seed, with_refine);
    load_weights_into(dir, *model);
    return model;
}

void load_weights_into(const std::string& dir, Model& model) {
    nlohmann::json manifest = read_manifest(dir);
    std::vector<char> blob = read_file(dir + "/weights.bin");
    fill_params_from_blob(blob, manifest.at("tensors"), manifest.value("hashes", nlohmann::json::object()),
                          model.params(), "load_weights_into");
}

namespace {

void write_tensor_map(std::ofstream& f, const std::map<std::string, Tensor>& m) {
    uint64_t count = m.size();
    f.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& [name, t] : m) {
        uint64_t len = name.size();
        f.write(reinterpret_cast<const char*>(&len), 8);
        f.write(name.data(), static_cast<std::streamsize>(len));
        uint64_t rank = t.shape.size();
        f.write(reinterpret_cast<const char*>(&rank), 8);
        for (int d : t.shape) {
            int64_t v = d;
            f.write(reinterpret_cast<const char*>(&v), 8);
        }
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * 8));
    }
}

std::map<std::string, Tensor> read_tensor_map(std::ifstream& f, const std::string& path) {
    auto fail = [&]() -> DataError { return DataError("train state: truncated file " + path); };
    uint64_t count = 0;
    if (!f.read(reinterpret_cast<char*>(&count), 8)) throw fail();
    std::map<std::string, Tensor> out;
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t len = 0;
        if (!f.read(reinterpret_cast<char*>(&len), 8)) throw fail();
        std::string name(len, '\0');
        if (!f.read(name.data(), static_cast<std::streamsize>(len))) throw fail();
        uint64_t rank = 0;
        if (!f.read(reinterpret_cast<char*>(&rank), 8)) throw fail();
        std::vector<int> shape;
        for (uint64_t d = 0; d < rank; ++d) {
            int64_t v = 0;
            if (!f.read(reinterpret_cast<char*>(&v), 8)) throw fail();
            shape.push_back(static_cast<int>(v));
        }
        Tensor t(shape);
        if (!f.read(reinterpret_cast<char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * 8)))
            throw fail();
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

constexpr char kStateMagic[8] = {'i', 'n', 'k', 's', 't', 'a', 't', '1'};

}  // namespace

void save_train_state(const std::string& path, const TrainState& state) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("train state: cannot write " + path);
    f.write(kStateMagic, 8);
    f.write(reinterpret_cast<const char*>(&state.step), 8);
    f.write(reinterpret_cast<const char*>(&state.ema_loss), 8);
    char init = state.ema_init ? 1 : 0;
    f.write(&init, 1);
    write_tensor_map(f, state.values);
    write_tensor_map(f, state.adam_m);
    write_tensor_map(f, state.adam_v);
    if (!f) throw DataError("train state: write failed for " + path);
}

TrainState load_train_state(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("train state: cannot open " + path);
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, kStateMagic, 8) != 0)
        throw DataError("train state: bad magic in " + path);
    TrainState st;
    f.read(reinterpret_cast<char*>(&st.step), 8);
    f.read(reinterpret_cast<char*>(&st.ema_loss), 8);
    char init = 0;
    f.read(&init, 1);
    if (!f) throw DataError("train state: truncated file " + path);
    st.ema_init = init != 0;
    st.values = read_tensor_map(f, path);
    st.adam_m = read_tensor_map(f, path);
    st.adam_v = read_tensor_map(f, path);
    return st;
}

}  // namespace ink
