#include "coda/trainer.hpp"
#include "coda/errors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace coda {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void require_finite(double v, const char* term, std::uint64_t step) {
    if (!std::isfinite(v))
        throw NumericError("training diverged: " + std::string(term) +
                           " loss is non-finite at step " + std::to_string(step));
}

Image depth_mask(const Image& accum, const Image& target) {
    Image mask(accum.width, accum.height, 1);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask.data[i] = (accum.data[i] > 0.5 && target.data[i] > 0.0) ? 1.0 : 0.0;
    return mask;
}

void compact_adam(AdamState& st, const std::vector<bool>& keep, std::size_t width) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        if (out != i)
            for (std::size_t k = 0; k < width; ++k) {
                st.m[out * width + k] = st.m[i * width + k];
                st.v[out * width + k] = st.v[i * width + k];
            }
        ++out;
    }
    st.m.resize(out * width);
    st.v.resize(out * width);
}

} // namespace

TrainingConfig parse_training_config(const std::string& text, const std::string& origin) {
    const KeyValueFile kv = parse_kv_text(text, origin);
    TrainingConfig c;
    c.text = text;
    for (const auto& [key, value] : kv.entries) {
        const std::string what = origin + ": " + key;
        if (key == "data")
            c.data = value;
        else if (key == "split")
            c.split = value;
        else if (key == "total_steps")
            c.total_steps = static_cast<std::uint64_t>(parse_long(value, what));
        else if (key == "static_phase_steps")
            c.static_phase_steps = static_cast<std::uint64_t>(parse_long(value, what));
        else if (key == "lr_start")
            c.lr_start = parse_double(value, what);
        else if (key == "lr_end")
            c.lr_end = parse_double(value, what);
        else if (key == "lambda_rgb")
            c.weights.rgb = parse_double(value, what);
        else if (key == "lambda_dssim")
            c.weights.dssim = parse_double(value, what);
        else if (key == "lambda_tv")
            c.weights.tv = parse_double(value, what);
        else if (key == "lambda_depth")
            c.weights.depth = parse_double(value, what);
        else if (key == "lambda_feat")
            c.weights.feat = parse_double(value, what);
        else if (key == "feature_dim")
            c.feature_dim = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "time_embed_dim")
            c.time_embed_dim = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "hexplane_levels")
            c.hexplane_levels = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "hexplane_base_res")
            c.hexplane_base_res = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "hexplane_features")
            c.hexplane_features = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "latent_hidden")
            c.latent_hidden = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "latent_dim")
            c.latent_dim = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "head_hidden")
            c.head_hidden = static_cast<std::size_t>(parse_long(value, what));
        else if (key == "dcn_enabled")
            c.dcn_enabled = parse_bool(value, what);
        else if (key == "use_f_time")
            c.use_f_time = parse_bool(value, what);
        else if (key == "use_f_con")
            c.use_f_con = parse_bool(value, what);
        else if (key == "use_f_def")
            c.use_f_def = parse_bool(value, what);
        else if (key == "prune_interval")
            c.prune_interval = static_cast<std::uint64_t>(parse_long(value, what));
        else if (key == "prune_opacity")
            c.prune_opacity = parse_double(value, what);
        else if (key == "seed")
            c.seed = static_cast<std::uint64_t>(parse_long(value, what));
        else
            throw ConfigError(origin + ": unknown key '" + key + "'");
    }
    if (!(c.lr_end > 0.0 && c.lr_end <= c.lr_start))
        throw ConfigError(origin + ": need 0 < lr_end <= lr_start");
    if (c.static_phase_steps > c.total_steps)
        throw ConfigError(origin + ": static_phase_steps must be <= total_steps");
    if (c.weights.rgb < 0 || c.weights.dssim < 0 || c.weights.tv < 0 || c.weights.depth < 0 ||
        c.weights.feat < 0)
        throw ConfigError(origin + ": loss weights must be nonnegative");
    if (c.time_embed_dim < 2 || c.time_embed_dim % 2 != 0)
        throw ConfigError(origin + ": time_embed_dim must be even and >= 2");
    if (c.feature_dim < 1) throw ConfigError(origin + ": feature_dim must be >= 1");
    if (c.hexplane_levels < 1 || c.hexplane_base_res < 2 || c.hexplane_features < 1)
        throw ConfigError(origin + ": hexplane dimensions out of range");
    return c;
}

TrainingConfig load_training_config(const std::string& path) {
    return parse_training_config(read_text_file(path), path);
}

Model::Model(const TrainingConfig& config, const Dataset& data) : cfg(config) {
    if (cfg.feature_dim != data.spec.feature_dim)
        throw ConfigError("feature_dim " + std::to_string(cfg.feature_dim) +
                          " does not match dataset feature_dim " +
                          std::to_string(data.spec.feature_dim));
    frames = data.frames.size();
    for (int ch = 0; ch < 3; ++ch) background[ch] = data.spec.background_color[ch];
    rng.seed(cfg.seed);

    scene = init_from_points(data.init_points, data.init_colors, cfg.feature_dim, rng());

    DeformationConfig dc;
    dc.grid.levels = cfg.hexplane_levels;
    dc.grid.base_res = cfg.hexplane_base_res;
    dc.grid.features = cfg.hexplane_features;
    dc.grid.lo = Vec3{data.spec.bounds_lo[0], data.spec.bounds_lo[1], data.spec.bounds_lo[2]};
    dc.grid.hi = Vec3{data.spec.bounds_hi[0], data.spec.bounds_hi[1], data.spec.bounds_hi[2]};
    dc.latent_hidden = cfg.latent_hidden;
    dc.latent_dim = cfg.latent_dim;
    dc.head_hidden = cfg.head_hidden;
    field = DeformationField(dc, rng);

    DcnConfig dcnc;
    dcnc.time_dim = cfg.time_embed_dim;
    dcnc.feature_dim = cfg.feature_dim;
    dcn = Dcn(dcnc, rng);
}

std::uint64_t Model::tau_of(double t) const {
    if (frames < 2) return 0;
    const long long hi = static_cast<long long>(frames - 1);
    const long long tau = std::llround(t * static_cast<double>(hi));
    return static_cast<std::uint64_t>(std::clamp(tau, 0ll, hi));
}

Model::Deformed Model::deform_all(double t, bool apply_field, bool with_caches) const {
    const std::size_t n = scene.count;
    const std::size_t F = scene.feature_dim;
    Deformed d;
    d.t = t;
    d.applied = apply_field;
    d.compensated = apply_field && cfg.dcn_enabled;
    d.positions = scene.positions.data;
    d.log_scales = scene.log_scales.data;
    d.rotations = scene.rotations.data;
    d.features_hat.resize(n * F);
    d.fcon_norm.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        double n2 = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
            const double v = scene.context_features.data[i * F + f];
            n2 += v * v;
        }
        const double norm = std::sqrt(n2);
        d.fcon_norm[i] = norm;
        const double inv = norm < 1e-12 ? 0.0 : 1.0 / norm;
        for (std::size_t f = 0; f < F; ++f)
            d.features_hat[i * F + f] = scene.context_features.data[i * F + f] * inv;
    }
    if (!apply_field) return d;

    d.f_time = time_embedding(tau_of(t), cfg.time_embed_dim);
    const std::vector<double> f_time_in =
        cfg.use_f_time ? d.f_time : std::vector<double>(cfg.time_embed_dim, 0.0);
    if (with_caches) {
        d.def_caches.resize(n);
        if (cfg.dcn_enabled) d.dcn_caches.resize(n);
    }
    std::vector<double> fcon_in(F, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 p{scene.positions.data[i * 3], scene.positions.data[i * 3 + 1],
                     scene.positions.data[i * 3 + 2]};
        double delta[10];
        DeformationField::Cache cache = field.deform_one(p, t, delta);
        for (int k = 0; k < 3; ++k) {
            d.positions[i * 3 + k] += delta[k];
            d.log_scales[i * 3 + k] += delta[3 + k];
        }
        for (int k = 0; k < 4; ++k) d.rotations[i * 4 + k] += delta[6 + k];

        if (cfg.dcn_enabled) {
            double f_def_in[10];
            for (int k = 0; k < 10; ++k) f_def_in[k] = cfg.use_f_def ? delta[k] : 0.0;
            if (cfg.use_f_con)
                std::memcpy(fcon_in.data(), d.features_hat.data() + i * F,
                            F * sizeof(double));
            else
                std::fill(fcon_in.begin(), fcon_in.end(), 0.0);
            const std::vector<double> agg = aggregate_awareness(f_time_in, f_def_in, fcon_in);
            double comp[10];
            Dcn::Cache dcache = dcn.compensate_one(agg, comp);
            for (int k = 0; k < 3; ++k) {
                d.positions[i * 3 + k] += comp[k];
                d.log_scales[i * 3 + k] += comp[3 + k];
            }
            for (int k = 0; k < 4; ++k) d.rotations[i * 4 + k] += comp[6 + k];
            if (with_caches) d.dcn_caches[i] = std::move(dcache);
        }
        if (with_caches) d.def_caches[i] = std::move(cache);
    }
    return d;
}

RenderAttributes Model::attrs_of(const Deformed& d) const {
    RenderAttributes a;
    a.count = scene.count;
    a.feature_dim = scene.feature_dim;
    a.positions = d.positions.data();
    a.log_scales = d.log_scales.data();
    a.rotations = d.rotations.data();
    a.opacity_logits = scene.opacity_logits.data.data();
    a.sh_coeffs = scene.sh_coeffs.data.data();
    a.features = d.features_hat.data();
    return a;
}

RenderOutput Model::render_view(const Camera& cam, double t, const RasterConfig& rcfg,
                                const double* feature_background, RenderCache* cache) const {
    const Deformed d = deform_all(t, true, false);
    return render(attrs_of(d), cam, rcfg, background, feature_background, cache);
}

Trainer::Trainer(const TrainingConfig& cfg, const Dataset& dataset)
    : model(cfg, dataset), data(&dataset) {
    if (dataset.train_idx.empty()) throw ConfigError("dataset has no training frames");
    for (ParamBlock* b : model.scene.blocks()) blocks.push_back(b);
    n_scene_blocks = blocks.size();
    for (ParamBlock* b : model.field.blocks()) blocks.push_back(b);
    n_dcn_blocks = model.dcn.blocks().size();
    for (ParamBlock* b : model.dcn.blocks()) blocks.push_back(b);
    adam.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) adam[i].init(blocks[i]->size());
    loss_csv = "step,lr,rgb,dssim,tv,depth,feat,total\n";
}

LossReport Trainer::train_step() {
    const TrainingConfig& cfg = model.cfg;
    const bool phase2 = model.step >= cfg.static_phase_steps;
    const double lr = lr_schedule(model.step, cfg.total_steps, cfg.lr_start, cfg.lr_end);

    std::uniform_int_distribution<std::size_t> pick(0, data->train_idx.size() - 1);
    const DatasetFrame& frame = data->frames[data->train_idx[pick(model.rng)]];
    const std::size_t F = model.scene.feature_dim;
    const double* feat_bg = data->codebook[0].data();

    Model::Deformed d = model.deform_all(frame.t, phase2, phase2);
    const RenderAttributes attrs = model.attrs_of(d);
    RenderCache rc;
    const RasterConfig rcfg;
    const RenderOutput out = render(attrs, frame.cam, rcfg, model.background, feat_bg, &rc);

    const double l_rgb = l1_loss(out.rgb, frame.rgb);
    const double l_dssim = dssim_loss(out.rgb, frame.rgb);
    const double l_tv = model.field.grid.tv_loss();
    const Image dmask = depth_mask(out.accum, frame.depth);
    const double l_depth = depth_loss(out.depth, frame.depth, dmask);
    const double l_feat = feature_cosine_loss(out.feature, frame.feat);
    require_finite(l_rgb, "rgb", model.step);
    require_finite(l_dssim, "dssim", model.step);
    require_finite(l_tv, "tv", model.step);
    require_finite(l_depth, "depth", model.step);
    require_finite(l_feat, "feature", model.step);
    const LossReport report =
        total_loss(l_rgb, l_dssim, l_tv, l_depth, l_feat, cfg.weights);

    loss_csv += std::to_string(model.step) + "," + format_double(lr) + "," +
                format_double(report.rgb) + "," + format_double(report.dssim) + "," +
                format_double(report.tv) + "," + format_double(report.depth) + "," +
                format_double(report.feat) + "," + format_double(report.total) + "\n";

    OutputGrads og;
    og.rgb = Image(out.rgb.width, out.rgb.height, 3);
    l1_loss_backward(out.rgb, frame.rgb, cfg.weights.rgb, og.rgb);
    dssim_loss_backward(out.rgb, frame.rgb, cfg.weights.dssim, og.rgb);
    og.depth = Image(out.depth.width, out.depth.height, 1);
    depth_loss_backward(out.depth, frame.depth, dmask, cfg.weights.depth, og.depth);
    og.feature = Image(out.feature.width, out.feature.height, static_cast<int>(F));
    feature_cosine_loss_backward(out.feature, frame.feat, cfg.weights.feat, og.feature);

    AttributeGrads ag(model.scene.count, F);
    render_backward(attrs, frame.cam, rcfg, rc, og, model.background, feat_bg, ag);

    GaussianScene& scene = model.scene;
    std::vector<double> dfhat_extra(F);
    for (std::size_t i = 0; i < scene.count; ++i) {
        scene.opacity_logits.grad[i] += ag.opacity_logits[i];
        for (std::size_t k = 0; k < kShTotal; ++k)
            scene.sh_coeffs.grad[i * kShTotal + k] += ag.sh_coeffs[i * kShTotal + k];

        const double* dfhat_agg = nullptr;
        if (phase2) {
            double ddelta[10];
            for (int k = 0; k < 3; ++k) {
                ddelta[k] = ag.positions[i * 3 + k];
                ddelta[3 + k] = ag.log_scales[i * 3 + k];
            }
            for (int k = 0; k < 4; ++k) ddelta[6 + k] = ag.rotations[i * 4 + k];

            if (cfg.dcn_enabled) {
                // ddelta doubles as the compensation gradient: both are added
                // to the same deformed geometry.
                std::vector<double> dagg(model.dcn.cfg.in_dim(), 0.0);
                model.dcn.compensate_one_backward(d.dcn_caches[i], ddelta, dagg.data());
                if (cfg.use_f_def)
                    for (int k = 0; k < 10; ++k) ddelta[k] += dagg[cfg.time_embed_dim + k];
                if (cfg.use_f_con) {
                    for (std::size_t f = 0; f < F; ++f)
                        dfhat_extra[f] = dagg[cfg.time_embed_dim + 10 + f];
                    dfhat_agg = dfhat_extra.data();
                }
            }
            Vec3 dp{0, 0, 0};
            double dt = 0.0;
            model.field.deform_one_backward(d.def_caches[i], ddelta, &dp, &dt);
            scene.positions.grad[i * 3 + 0] += ag.positions[i * 3 + 0] + dp.x;
            scene.positions.grad[i * 3 + 1] += ag.positions[i * 3 + 1] + dp.y;
            scene.positions.grad[i * 3 + 2] += ag.positions[i * 3 + 2] + dp.z;
        } else {
            for (int k = 0; k < 3; ++k)
                scene.positions.grad[i * 3 + k] += ag.positions[i * 3 + k];
        }
        for (int k = 0; k < 3; ++k)
            scene.log_scales.grad[i * 3 + k] += ag.log_scales[i * 3 + k];
        for (int k = 0; k < 4; ++k)
            scene.rotations.grad[i * 4 + k] += ag.rotations[i * 4 + k];

        // Rendered-feature and compensation-input gradients meet before the
        // shared normalization.
        const double norm = d.fcon_norm[i];
        if (norm >= 1e-12) {
            double dot = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
                const double g = ag.features[i * F + f] + (dfhat_agg ? dfhat_agg[f] : 0.0);
                dot += g * d.features_hat[i * F + f];
            }
            for (std::size_t f = 0; f < F; ++f) {
                const double g = ag.features[i * F + f] + (dfhat_agg ? dfhat_agg[f] : 0.0);
                scene.context_features.grad[i * F + f] +=
                    (g - d.features_hat[i * F + f] * dot) / norm;
            }
        }
    }
    if (phase2 && cfg.weights.tv > 0.0) model.field.grid.tv_loss_backward(cfg.weights.tv);

    const std::size_t n_step = phase2 ? (cfg.dcn_enabled ? blocks.size()
                                                         : blocks.size() - n_dcn_blocks)
                                      : n_scene_blocks;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (b < n_step)
            adam_step(*blocks[b], adam[b], lr);
        else
            blocks[b]->zero_grad();
    }

    model.step += 1;
    if (cfg.prune_interval > 0 && model.step % cfg.prune_interval == 0) prune();
    return report;
}

void Trainer::prune() {
    GaussianScene& scene = model.scene;
    std::vector<bool> keep(scene.count);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < scene.count; ++i) {
        keep[i] = sigmoid(scene.opacity_logits.data[i]) >= model.cfg.prune_opacity;
        kept += keep[i];
    }
    if (kept == scene.count || kept == 0) return;
    for (std::size_t b = 0; b < n_scene_blocks; ++b)
        compact_adam(adam[b], keep, blocks[b]->size() / scene.count);
    scene.compact(keep);
}

void Trainer::train() {
    while (model.step < model.cfg.total_steps) train_step();
}

std::vector<FrameMetrics> evaluate(const Model& model, const Dataset& data,
                                   const std::string& split) {
    if (split != "reconstruction" && split != "nvs")
        throw ConfigError("evaluate: split must be 'reconstruction' or 'nvs'");
    std::vector<std::size_t> indices;
    if (split == "reconstruction")
        for (std::size_t i = 0; i < data.frames.size(); ++i) indices.push_back(i);
    else
        indices = data.test_idx;

    std::vector<FrameMetrics> rows;
    const double l_tv = model.field.grid.tv_loss();
    const RasterConfig rcfg;
    bool warned_mask = false;
    for (std::size_t idx : indices) {
        const DatasetFrame& frame = data.frames[idx];
        if (frame.mask.size() == 0 && !warned_mask) {
            std::cerr << "warning: no instance masks; starred metrics omitted\n";
            warned_mask = true;
        }
        const RenderOutput out =
            model.render_view(frame.cam, frame.t, rcfg, data.codebook[0].data());
        FrameMetrics m;
        m.frame = idx;
        m.psnr = psnr(out.rgb, frame.rgb);
        m.ssim = ssim(out.rgb, frame.rgb);
        m.has_mask = frame.mask.size() > 0;
        if (m.has_mask) {
            m.psnr_star = psnr_masked(out.rgb, frame.rgb, frame.mask);
            m.ssim_star = ssim_masked(out.rgb, frame.rgb, frame.mask);
        }
        const Image dmask = depth_mask(out.accum, frame.depth);
        m.losses = total_loss(l1_loss(out.rgb, frame.rgb), dssim_loss(out.rgb, frame.rgb),
                              l_tv, depth_loss(out.depth, frame.depth, dmask),
                              feature_cosine_loss(out.feature, frame.feat),
                              model.cfg.weights);
        rows.push_back(m);
    }
    return rows;
}

std::string metrics_csv(const std::vector<FrameMetrics>& rows) {
    std::string csv = "frame,psnr,ssim,psnr_star,ssim_star,rgb,dssim,tv,depth,feat,total\n";
    for (const FrameMetrics& m : rows) {
        csv += std::to_string(m.frame) + "," + format_double(m.psnr) + "," +
               format_double(m.ssim) + ",";
        if (m.has_mask)
            csv += format_double(m.psnr_star) + "," + format_double(m.ssim_star);
        else
            csv += ","; // starred metrics omitted
        csv += "," + format_double(m.losses.rgb) + "," + format_double(m.losses.dssim) + "," +
               format_double(m.losses.tv) + "," + format_double(m.losses.depth) + "," +
               format_double(m.losses.feat) + "," + format_double(m.losses.total) + "\n";
    }
    return csv;
}

void save_checkpoint(const Model& model, const std::string& path) {
    std::ostringstream payload(std::ios::binary);
    write_string(payload, model.cfg.text);
    write_u64(payload, model.step);
    write_u64(payload, model.frames);
    write_f64_array(payload, model.background, 3);
    std::ostringstream rng_text;
    rng_text << model.rng;
    write_string(payload, rng_text.str());
    const HexPlaneConfig& g = model.field.grid.cfg;
    const double bounds[6] = {g.lo.x, g.lo.y, g.lo.z, g.hi.x, g.hi.y, g.hi.z};
    write_f64_array(payload, bounds, 6);
    save_scene(model.scene, payload);

    std::vector<const ParamBlock*> named;
    for (const ParamBlock& b : model.field.grid.planes) named.push_back(&b);
    for (const Mlp* mlp : {&model.field.phi_d, &model.field.head_dx, &model.field.head_ds,
                           &model.field.head_dr, &model.dcn.phi_p})
        for (const ParamBlock& b : mlp->layers) named.push_back(&b);
    named.push_back(&model.dcn.phi_s);

    write_u64(payload, named.size());
    for (const ParamBlock* b : named) {
        write_string(payload, b->name);
        write_u32(payload, static_cast<std::uint32_t>(b->shape.size()));
        for (std::size_t dim : b->shape) write_u64(payload, dim);
        write_f64_array(payload, b->data.data(), b->data.size());
    }

    const std::string body = payload.str();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os.write("C4DC", 4);
    write_u32(os, kCheckpointVersion);
    write_u64(os, body.size());
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    write_u32(os, crc32(body.data(), body.size()));
    if (!os) throw FormatError("short write to " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "C4DC", 4) != 0)
        throw FormatError(path + ": bad magic at offset 0 (expected C4DC)");
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " +
                          std::to_string(version));
    const std::uint64_t len = read_u64(is);
    if (len > (1ull << 34)) throw FormatError(path + ": implausible payload length");
    std::string body(len, '\0');
    is.read(body.data(), static_cast<std::streamsize>(len));
    if (!is) throw FormatError(path + ": truncated payload");
    const std::uint32_t stored_crc = read_u32(is);
    if (crc32(body.data(), body.size()) != stored_crc)
        throw FormatError(path + ": checksum mismatch");

    std::istringstream payload(body, std::ios::binary);
    Model m;
    m.cfg = parse_training_config(read_string(payload), path + ":config");
    m.step = read_u64(payload);
    m.frames = read_u64(payload);
    read_f64_array(payload, m.background, 3);
    const std::string rng_text = read_string(payload);
    std::istringstream rng_in(rng_text);
    rng_in >> m.rng;
    if (!rng_in) throw FormatError(path + ": bad RNG state");
    double bounds[6];
    read_f64_array(payload, bounds, 6);
    m.scene = load_scene(payload);
    if (m.scene.feature_dim != m.cfg.feature_dim)
        throw ConfigError(path + ": scene feature_dim " +
                          std::to_string(m.scene.feature_dim) +
                          " conflicts with config feature_dim " +
                          std::to_string(m.cfg.feature_dim));

    std::mt19937_64 scratch(0);
    DeformationConfig dc;
    dc.grid.levels = m.cfg.hexplane_levels;
    dc.grid.base_res = m.cfg.hexplane_base_res;
    dc.grid.features = m.cfg.hexplane_features;
    dc.grid.lo = Vec3{bounds[0], bounds[1], bounds[2]};
    dc.grid.hi = Vec3{bounds[3], bounds[4], bounds[5]};
    dc.latent_hidden = m.cfg.latent_hidden;
    dc.latent_dim = m.cfg.latent_dim;
    dc.head_hidden = m.cfg.head_hidden;
    m.field = DeformationField(dc, scratch);
    DcnConfig dcnc;
    dcnc.time_dim = m.cfg.time_embed_dim;
    dcnc.feature_dim = m.cfg.feature_dim;
    m.dcn = Dcn(dcnc, scratch);

    std::map<std::string, ParamBlock*> by_name;
    for (ParamBlock* b : m.field.blocks()) by_name[b->name] = b;
    for (ParamBlock* b : m.dcn.blocks()) by_name[b->name] = b;

    const std::uint64_t n_blocks = read_u64(payload);
    if (n_blocks != by_name.size())
        throw FormatError(path + ": expected " + std::to_string(by_name.size()) +
                          " parameter blocks, found " + std::to_string(n_blocks));
    for (std::uint64_t i = 0; i < n_blocks; ++i) {
        const std::string name = read_string(payload);
        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError(path + ": unknown parameter block '" + name + "'");
        ParamBlock& b = *it->second;
        const std::uint32_t rank = read_u32(payload);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r)
            shape[r] = static_cast<std::size_t>(read_u64(payload));
        if (shape != b.shape)
            throw FormatError(path + ": parameter block '" + name + "' shape mismatch");
        read_f64_array(payload, b.data.data(), b.data.size());
    }
    return m;
}

} // namespace coda
