#include "coda/edit.hpp"
#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

namespace coda {

namespace {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::size_t find(std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

} // namespace

std::vector<std::size_t> segment_gaussians(const GaussianScene& scene,
                                           const std::vector<double>& query,
                                           double threshold) {
    const std::size_t F = scene.feature_dim;
    if (query.size() != F)
        throw ShapeError("segment: query has " + std::to_string(query.size()) +
                         " entries, scene features have " + std::to_string(F));
    double qn2 = 0.0;
    for (double v : query) qn2 += v * v;
    if (qn2 < 1e-24) throw ConfigError("segment: query vector is zero");
    const double qinv = 1.0 / std::sqrt(qn2);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < scene.count; ++i) {
        double dot = 0.0, n2 = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
            const double v = scene.context_features.data[i * F + f];
            dot += v * query[f];
            n2 += v * v;
        }
        if (n2 < 1e-24) continue;
        if (dot * qinv / std::sqrt(n2) >= threshold) candidates.push_back(i);
    }
    if (candidates.empty()) return {};

    std::vector<double> mean_scale;
    mean_scale.reserve(candidates.size());
    for (std::size_t i : candidates) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += std::exp(scene.log_scales.data[i * 3 + k]);
        mean_scale.push_back(s / 3.0);
    }
    std::vector<double> sorted = mean_scale;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    const double median =
        sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    const double radius = 2.0 * median;

    UnionFind uf(candidates.size());
    for (std::size_t a = 0; a < candidates.size(); ++a) {
        const double* pa = scene.positions.data.data() + candidates[a] * 3;
        for (std::size_t b = a + 1; b < candidates.size(); ++b) {
            const double* pb = scene.positions.data.data() + candidates[b] * 3;
            const double dx = pa[0] - pb[0], dy = pa[1] - pb[1], dz = pa[2] - pb[2];
            if (std::sqrt(dx * dx + dy * dy + dz * dz) <= radius) uf.unite(a, b);
        }
    }
    std::vector<std::size_t> cluster_size(candidates.size(), 0);
    for (std::size_t a = 0; a < candidates.size(); ++a) ++cluster_size[uf.find(a)];
    std::size_t best = 0;
    for (std::size_t r = 1; r < candidates.size(); ++r)
        if (cluster_size[r] > cluster_size[best]) best = r; // ties keep the lower root

    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < candidates.size(); ++a)
        if (uf.find(a) == best) out.push_back(candidates[a]);
    return out;
}

EditGroup make_group(const Model& source, const std::vector<std::size_t>& rows,
                     std::uint64_t key_base) {
    EditGroup g;
    g.model = source;
    const std::size_t F = source.scene.feature_dim;
    GaussianScene sub(rows.size(), F);
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const std::size_t i = rows[j];
        for (int k = 0; k < 3; ++k) {
            sub.positions.data[j * 3 + k] = source.scene.positions.data[i * 3 + k];
            sub.log_scales.data[j * 3 + k] = source.scene.log_scales.data[i * 3 + k];
        }
        for (int k = 0; k < 4; ++k)
            sub.rotations.data[j * 4 + k] = source.scene.rotations.data[i * 4 + k];
        sub.opacity_logits.data[j] = source.scene.opacity_logits.data[i];
        for (std::size_t k = 0; k < kShTotal; ++k)
            sub.sh_coeffs.data[j * kShTotal + k] =
                source.scene.sh_coeffs.data[i * kShTotal + k];
        for (std::size_t k = 0; k < F; ++k)
            sub.context_features.data[j * F + k] =
                source.scene.context_features.data[i * F + k];
        g.keys.push_back(key_base + i);
    }
    g.model.scene = std::move(sub);
    return g;
}

RenderOutput render_groups(const std::vector<EditGroup>& groups, const Camera& cam, double t,
                           const RasterConfig& cfg, const double background[3],
                           const double* feature_background) {
    std::size_t feature_dim = 0;
    if (!groups.empty()) feature_dim = groups.front().model.scene.feature_dim;

    std::vector<Splat> all;
    for (const EditGroup& g : groups) {
        if (g.model.scene.feature_dim != feature_dim)
            throw SemanticError("render: groups disagree on feature dimension");
        Model::Deformed d = g.model.deform_all(t, true, false);
        if (g.has_transform) {
            const Mat3 R = quat_to_mat(quat_normalize(g.rotation));
            for (std::size_t i = 0; i < g.model.scene.count; ++i) {
                const Vec3 p{d.positions[i * 3], d.positions[i * 3 + 1],
                             d.positions[i * 3 + 2]};
                const Vec3 q = R * p + g.translation;
                d.positions[i * 3] = q.x;
                d.positions[i * 3 + 1] = q.y;
                d.positions[i * 3 + 2] = q.z;
                const Quat rot = g.rotation * Quat{d.rotations[i * 4], d.rotations[i * 4 + 1],
                                                   d.rotations[i * 4 + 2],
                                                   d.rotations[i * 4 + 3]};
                d.rotations[i * 4] = rot.w;
                d.rotations[i * 4 + 1] = rot.x;
                d.rotations[i * 4 + 2] = rot.y;
                d.rotations[i * 4 + 3] = rot.z;
            }
        }
        std::vector<Splat> splats = project_gaussians(g.model.attrs_of(d), cam, cfg);
        for (Splat& sp : splats) sp.key = g.keys[sp.index];
        all.insert(all.end(), std::make_move_iterator(splats.begin()),
                   std::make_move_iterator(splats.end()));
    }
    std::sort(all.begin(), all.end(), [](const Splat& a, const Splat& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.key < b.key;
    });
    CompositeState st(cam.width, cam.height, feature_dim);
    composite_pass(all, cfg, st);
    return finalize_composite(st, background, feature_background);
}

Image pca_visualize(const Image& features) {
    const int F = features.channels;
    if (F < 3) throw SemanticError("pca: needs at least 3 feature channels");
    const std::size_t n = static_cast<std::size_t>(features.width) * features.height;

    std::vector<double> mean(F, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < F; ++c) mean[c] += features.data[p * F + c];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<double> A(static_cast<std::size_t>(F) * F, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (int i = 0; i < F; ++i) {
            const double di = features.data[p * F + i] - mean[i];
            for (int j = i; j < F; ++j)
                A[i * F + j] += di * (features.data[p * F + j] - mean[j]);
        }
    for (int i = 0; i < F; ++i)
        for (int j = i; j < F; ++j) {
            A[i * F + j] /= static_cast<double>(n);
            A[j * F + i] = A[i * F + j];
        }

    // Cyclic Jacobi eigendecomposition of the symmetric covariance.
    std::vector<double> V(static_cast<std::size_t>(F) * F, 0.0);
    for (int i = 0; i < F; ++i) V[i * F + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < F; ++p)
            for (int q = p + 1; q < F; ++q) off += A[p * F + q] * A[p * F + q];
        if (off < 1e-24) break;
        for (int p = 0; p < F; ++p)
            for (int q = p + 1; q < F; ++q) {
                const double apq = A[p * F + q];
                if (std::abs(apq) < 1e-18) continue;
                const double theta = (A[q * F + q] - A[p * F + p]) / (2.0 * apq);
                const double tt = (theta >= 0 ? 1.0 : -1.0) /
                                  (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(tt * tt + 1.0);
                const double s = tt * c;
                A[p * F + p] -= tt * apq;
                A[q * F + q] += tt * apq;
                A[p * F + q] = A[q * F + p] = 0.0;
                for (int k = 0; k < F; ++k) {
                    if (k != p && k != q) {
                        const double akp = A[k * F + p], akq = A[k * F + q];
                        A[k * F + p] = A[p * F + k] = c * akp - s * akq;
                        A[k * F + q] = A[q * F + k] = s * akp + c * akq;
                    }
                    const double vkp = V[k * F + p], vkq = V[k * F + q];
                    V[k * F + p] = c * vkp - s * vkq;
                    V[k * F + q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<int> order(F);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return A[a * F + a] > A[b * F + b]; });

    Image out(features.width, features.height, 3);
    for (int comp = 0; comp < 3; ++comp) {
        std::vector<double> v(F);
        for (int k = 0; k < F; ++k) v[k] = V[k * F + order[comp]];
        int arg = 0;
        for (int k = 1; k < F; ++k)
            if (std::abs(v[k]) > std::abs(v[arg])) arg = k;
        if (v[arg] < 0.0)
            for (double& x : v) x = -x;

        double lo = 0.0, hi = 0.0;
        std::vector<double> proj(n);
        for (std::size_t p = 0; p < n; ++p) {
            double acc = 0.0;
            for (int k = 0; k < F; ++k) acc += (features.data[p * F + k] - mean[k]) * v[k];
            proj[p] = acc;
            if (p == 0 || acc < lo) lo = acc;
            if (p == 0 || acc > hi) hi = acc;
        }
        const double span = hi - lo;
        for (std::size_t p = 0; p < n; ++p)
            out.data[p * 3 + comp] = span < 1e-12 ? 0.5 : (proj[p] - lo) / span;
    }
    return out;
}

std::vector<double> resolve_query(const std::string& query, const std::string& data_dir,
                                  std::size_t feature_dim) {
    if (query.rfind("codebook:", 0) == 0) {
        if (data_dir.empty())
            throw ConfigError("codebook query needs a dataset (--config / data key)");
        const std::size_t id =
            static_cast<std::size_t>(parse_long(query.substr(9), "codebook id"));
        const SceneSpec spec = load_scene_spec(data_dir + "/spec.txt");
        if (spec.feature_dim != feature_dim)
            throw SemanticError("dataset feature_dim " + std::to_string(spec.feature_dim) +
                                " does not match checkpoint feature_dim " +
                                std::to_string(feature_dim));
        const auto codebook =
            make_codebook(spec.objects.size() + 1, spec.feature_dim, codebook_seed(spec));
        if (id >= codebook.size())
            throw ConfigError("codebook id " + std::to_string(id) + " out of range (0.." +
                              std::to_string(codebook.size() - 1) + ")");
        return codebook[id];
    }
    if (query.rfind("file:", 0) == 0) {
        std::string text = read_text_file(query.substr(5));
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r' ||
                                 text.back() == ' '))
            text.pop_back();
        const std::vector<double> v = parse_double_list(text, "query file");
        if (v.size() != feature_dim)
            throw SemanticError("query file has " + std::to_string(v.size()) +
                                " entries, expected " + std::to_string(feature_dim));
        return v;
    }
    throw ConfigError("query must be codebook:<id> or file:<path>, got '" + query + "'");
}

namespace {

EditOp parse_tokens(const std::string& value, const std::string& origin,
                    EditOp::Kind kind) {
    EditOp op;
    op.kind = kind;
    std::istringstream iss(value);
    std::string tok;
    while (iss >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ": token '" + tok + "' is not key=value");
        const std::string k = tok.substr(0, eq);
        const std::string v = tok.substr(eq + 1);
        if (kind == EditOp::Kind::Segment && k == "query")
            op.query = v;
        else if (kind == EditOp::Kind::Segment && k == "threshold")
            op.threshold = parse_double(v, origin + ": threshold");
        else if (kind == EditOp::Kind::Transform && k == "translate") {
            const auto t = parse_double_list(v, origin + ": translate");
            if (t.size() != 3) throw ConfigError(origin + ": translate needs 3 values");
            op.translation = Vec3{t[0], t[1], t[2]};
        } else if (kind == EditOp::Kind::Transform && k == "rotate") {
            const auto r = parse_double_list(v, origin + ": rotate");
            if (r.size() != 4) throw ConfigError(origin + ": rotate needs 4 values (w,x,y,z)");
            op.rotation = Quat{r[0], r[1], r[2], r[3]};
        } else if (kind == EditOp::Kind::Render && k == "t")
            op.t = parse_double(v, origin + ": t");
        else if (kind == EditOp::Kind::Render && k == "name")
            op.name = v;
        else
            throw ConfigError(origin + ": unknown token '" + k + "'");
    }
    return op;
}

} // namespace

EditScript parse_edit_script(const std::string& text, const std::string& origin) {
    const KeyValueFile kv = parse_kv_text(text, origin);
    EditScript script;
    bool seen_segment = false;
    for (const auto& [key, value] : kv.entries) {
        if (key == "checkpoint")
            script.checkpoint = value;
        else if (key == "data")
            script.data = value;
        else if (key == "segment") {
            EditOp op = parse_tokens(value, origin, EditOp::Kind::Segment);
            if (op.query.empty()) throw ConfigError(origin + ": segment needs query=");
            if (!(op.threshold > 0.0 && op.threshold < 1.0))
                throw ConfigError(origin + ": threshold must be in (0,1)");
            seen_segment = true;
            script.ops.push_back(std::move(op));
        } else if (key == "extract") {
            if (!seen_segment)
                throw ConfigError(origin + ": extract requires a preceding segment");
            EditOp op;
            op.kind = EditOp::Kind::Extract;
            op.path = value;
            script.ops.push_back(std::move(op));
        } else if (key == "transform")
            script.ops.push_back(parse_tokens(value, origin, EditOp::Kind::Transform));
        else if (key == "merge") {
            EditOp op;
            op.kind = EditOp::Kind::Merge;
            op.path = value;
            script.ops.push_back(std::move(op));
        } else if (key == "render") {
            EditOp op = parse_tokens(value, origin, EditOp::Kind::Render);
            if (op.name.empty()) throw ConfigError(origin + ": render needs name=");
            script.ops.push_back(std::move(op));
        } else
            throw ConfigError(origin + ": unknown key '" + key + "'");
    }
    if (script.checkpoint.empty()) throw ConfigError(origin + ": missing checkpoint key");
    return script;
}

EditScript load_edit_script(const std::string& path) {
    return parse_edit_script(read_text_file(path), path);
}

void run_edit_script(const EditScript& script, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const Model base = load_checkpoint(script.checkpoint);
    const std::size_t F = base.scene.feature_dim;

    std::vector<EditGroup> groups;
    std::vector<std::size_t> all_rows(base.scene.count);
    std::iota(all_rows.begin(), all_rows.end(), 0);
    groups.push_back(make_group(base, all_rows, 0));
    std::uint64_t next_key = base.scene.count;

    std::vector<std::size_t> selection;
    bool have_selection = false;
    int last_created = -1;

    for (const EditOp& op : script.ops) {
        switch (op.kind) {
        case EditOp::Kind::Segment: {
            if (groups.size() != 1)
                throw SemanticError("segment must run before the scene is split");
            selection = segment_gaussians(groups[0].model.scene,
                                          resolve_query(op.query, script.data, F),
                                          op.threshold);
            have_selection = true;
            if (selection.empty())
                std::cerr << "warning: segment matched no Gaussians\n";
            break;
        }
        case EditOp::Kind::Extract: {
            if (!have_selection) throw SemanticError("extract without a segment result");
            std::vector<bool> in_sel(groups[0].model.scene.count, false);
            for (std::size_t i : selection) in_sel[i] = true;
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < in_sel.size(); ++i)
                if (!in_sel[i]) rest.push_back(i);
            const Model source = groups[0].model;
            groups.clear();
            groups.push_back(make_group(source, selection, 0));
            groups.push_back(make_group(source, rest, 0));
            last_created = 0;
            save_scene_file(groups[0].model.scene, out_dir + "/" + op.path);
            have_selection = false;
            break;
        }
        case EditOp::Kind::Transform: {
            if (last_created < 0)
                throw SemanticError("transform requires a preceding extract or merge");
            EditGroup& g = groups[static_cast<std::size_t>(last_created)];
            g.has_transform = true;
            g.translation = op.translation;
            g.rotation = op.rotation;
            break;
        }
        case EditOp::Kind::Merge: {
            const Model other = load_checkpoint(op.path);
            if (other.scene.feature_dim != F)
                throw SemanticError("merge: feature_dim " +
                                    std::to_string(other.scene.feature_dim) +
                                    " does not match base feature_dim " + std::to_string(F));
            std::vector<std::size_t> rows(other.scene.count);
            std::iota(rows.begin(), rows.end(), 0);
            groups.push_back(make_group(other, rows, next_key));
            next_key += other.scene.count;
            last_created = static_cast<int>(groups.size()) - 1;
            break;
        }
        case EditOp::Kind::Render: {
            if (script.data.empty())
                throw SemanticError("render requires the data key for a camera");
            const SceneSpec spec = load_scene_spec(script.data + "/spec.txt");
            std::vector<double> feat_bg(F, 0.0);
            if (spec.feature_dim == F)
                feat_bg = make_codebook(spec.objects.size() + 1, spec.feature_dim,
                                        codebook_seed(spec))[0];
            const Camera view = spec.camera_at(op.t);
            const RenderOutput out = render_groups(groups, view, op.t, RasterConfig{},
                                                   groups[0].model.background,
                                                   feat_bg.data());
            write_ppm(out_dir + "/" + op.name + ".ppm", out.rgb);
            write_raw_image(out_dir + "/" + op.name + "_depth.raw", out.depth);
            write_raw_image(out_dir + "/" + op.name + "_feat.raw", out.feature);
            write_raw_image(out_dir + "/" + op.name + "_accum.raw", out.accum);
            break;
        }
        }
    }
}

} // namespace coda
