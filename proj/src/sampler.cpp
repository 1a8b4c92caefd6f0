#include "ink/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "ink/codec.hpp"
#include "ink/common.hpp"
#include "ink/refiner.hpp"
#include "ink/schedule.hpp"

namespace ink {

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w) {
    if (!eps_uncond.same_shape(eps_cond))
        throw DataError("cfg_combine: branch shapes differ, " + eps_uncond.shape_str() + " vs " +
                        eps_cond.shape_str());
    if (w == 0.0) return eps_uncond;
    if (w == 1.0) return eps_cond;
    Tensor out = eps_uncond;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] += w * (eps_cond.data[i] - eps_uncond.data[i]);
    return out;
}

Tensor blend_step(const Tensor& z_t, const Tensor& z_s_t, const Tensor& m_star) {
    if (!z_t.same_shape(z_s_t))
        throw DataError("blend_step: latent shapes differ, " + z_t.shape_str() + " vs " +
                        z_s_t.shape_str());
    if (z_t.rank() != 3 || m_star.rank() != 2 || m_star.shape[0] != z_t.shape[1] ||
        m_star.shape[1] != z_t.shape[2])
        throw DataError("blend_step: mask " + m_star.shape_str() + " does not match latent " +
                        z_t.shape_str());
    const int c = z_t.shape[0], h = z_t.shape[1], w = z_t.shape[2];
    Tensor out = z_s_t;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (m_star.at(y, x) != 0.0) out.at(ch, y, x) = z_t.at(ch, y, x);
    return out;
}

std::vector<std::pair<int, int>> sampler_timesteps(int T, int steps) {
    if (steps < 1) throw UsageError("sampler: steps must be >= 1");
    if (steps > T) throw UsageError("sampler: steps must not exceed T");
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<size_t>(steps));
    for (int k = steps - 1; k >= 0; --k) {
        const int t = static_cast<int>((static_cast<long long>(k + 1) * T) / steps) - 1;
        const int prev = k == 0 ? NoiseSchedule::t_identity
                                : static_cast<int>((static_cast<long long>(k) * T) / steps) - 1;
        out.emplace_back(t, prev);
    }
    return out;
}

namespace {

Tensor ddim_update(const Tensor& z, const Tensor& eps, int t, int prev,
                   const NoiseSchedule& sched) {
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_p = sched.alpha_bar_at(prev);
    const double sq_t = std::sqrt(ab_t);
    const double sd_t = std::sqrt(1.0 - ab_t);
    const double sq_p = std::sqrt(ab_p);
    const double sd_p = std::sqrt(1.0 - ab_p);
    Tensor out = z;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double x0 = (z.data[i] - sd_t * eps.data[i]) / sq_t;
        out.data[i] = sq_p * x0 + sd_p * eps.data[i];
    }
    return out;
}

void check_image(const Tensor& img, int res, const char* what) {
    if (img.rank() != 3 || img.shape[0] != 3 || img.shape[1] != res || img.shape[2] != res)
        throw DataError(std::string("sample: ") + what + " must be [3," + std::to_string(res) +
                        "," + std::to_string(res) + "], got " + img.shape_str());
}

}  // namespace

Tensor sample(const Model& model, const InpaintRequest& req, const GuidanceConfig& cfg,
              SampleStats* stats, const StepObserver& observer) {
    if (!(cfg.w >= 0.0)) throw UsageError("sample: guidance scale must be >= 0");
    if (!std::isfinite(cfg.beta)) throw UsageError("sample: beta must be finite");
    const ModelConfig& mc = model.config();
    const int res = mc.res;
    check_image(req.x_s, res, "source image");
    if (req.mask.rank() != 2 || req.mask.shape[0] != res || req.mask.shape[1] != res)
        throw DataError("sample: mask must be [" + std::to_string(res) + "," +
                        std::to_string(res) + "], got " + req.mask.shape_str());
    if (std::all_of(req.mask.data.begin(), req.mask.data.end(),
                    [](double v) { return v == 0.0; }))
        throw DataError("sample: mask is empty");
    if (req.x_obj) check_image(*req.x_obj, res, "subject image");

    const NoiseSchedule& sched = model.schedule();
    const int c = mc.latent_channels(), side = mc.latent_side();
    const Tensor z_src = encode(req.x_s, mc.f);
    const Tensor z_s_masked = encode_masked_source(req.x_s, req.mask, mc.f);
    const Tensor m_star = resize_mask(req.mask, mc.f);

    const ConditionBundle cond = model.conditioner().bundle(req.prompt, req.x_obj);
    const ConditionBundle null_cond = model.conditioner().null_bundle();

    Rng rng(cfg.seed);
    const Tensor eps_init = Tensor::randn({c, side, side}, rng);
    Tensor z = eps_init;

    const bool refine_active = cfg.refine && model.refine() != nullptr && req.x_obj.has_value();
    const auto taus = sampler_timesteps(sched.T, cfg.steps);
    int k = 0;
    for (const auto& [t, prev] : taus) {
        if (cfg.blend) z = blend_step(z, add_noise(z_src, t, eps_init, sched), m_star);
        if (observer) observer(k, t, z);
        const Tensor z_tilde = assemble_input(z, m_star, z_s_masked);
        Tensor subj_noise;
        if (refine_active) {
            subj_noise = Tensor::randn({c, side, side}, rng);
            if (stats) stats->stash_calls += 1;
        }
        const Tensor eps_u = run_with_refine(model, z_tilde, t, null_cond, cfg.beta, std::nullopt,
                                             subj_noise, false, cfg.assign);
        const Tensor eps_c =
            run_with_refine(model, z_tilde, t, cond, cfg.beta,
                            refine_active ? req.x_obj : std::nullopt, subj_noise,
                            refine_active, cfg.assign);
        if (stats) stats->model_calls += 2;
        const Tensor eps = cfg_combine(eps_u, eps_c, cfg.w);
        if (!eps.all_finite())
            throw NumericError("sample: non-finite noise prediction at t=" + std::to_string(t));
        z = ddim_update(z, eps, t, prev, sched);
        ++k;
    }
    if (cfg.blend) z = blend_step(z, z_src, m_star);
    if (observer) observer(k, NoiseSchedule::t_identity, z);

    Tensor img = decode(z, mc.f);
    if (cfg.composite) img = composite(req.x_s, req.mask, img);
    return img;
}

void write_npy(const std::string& path, const Tensor& t) {
    std::ostringstream dict;
    dict << "{'descr': '<f8', 'fortran_order': False, 'shape': (";
    for (size_t i = 0; i < t.shape.size(); ++i) dict << t.shape[i] << (i + 1 < t.shape.size() ? ", " : "");
    if (t.shape.size() == 1) dict << ",";
    dict << "), }";
    std::string header = dict.str();
    const size_t base = 10 + header.size() + 1;
    header.append((64 - base % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_npy: cannot open " + path);
    f << "\x93NUMPY" << '\x01' << '\x00';
    const uint16_t len = static_cast<uint16_t>(header.size());
    f.put(static_cast<char>(len & 0xff));
    f.put(static_cast<char>(len >> 8));
    f << header;
    for (double v : t.data) {
        static_assert(sizeof(double) == 8);
        f.write(reinterpret_cast<const char*>(&v), 8);
    }
    if (!f) throw DataError("write_npy: write failed for " + path);
}

StepObserver latent_dump_observer(const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto index = std::make_shared<nlohmann::json>(nlohmann::json::array());
    return [dir, index](int k, int t, const Tensor& z) {
        char name[32];
        std::snprintf(name, sizeof(name), "step_%04d.npy", k);
        write_npy(dir + "/" + name, z);
        index->push_back({{"k", k}, {"t", t}, {"file", name}});
        std::ofstream f(dir + "/index.json");
        f << index->dump(2) << "\n";
    };
}

}  // namespace ink
