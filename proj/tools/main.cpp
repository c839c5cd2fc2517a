#include "CLI11.hpp"

#include "coda/edit.hpp"
#include "coda/errors.hpp"
#include "coda/synthetic.hpp"
#include "coda/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

using namespace coda;

Model load_checkpoint_or_exit(const std::string& path) {
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::exit(3);
    }
}

std::vector<double> feature_background_for(const Model& model, const SceneSpec& spec) {
    if (spec.feature_dim == model.scene.feature_dim)
        return make_codebook(spec.objects.size() + 1, spec.feature_dim,
                             codebook_seed(spec))[0];
    return std::vector<double>(model.scene.feature_dim, 0.0);
}

std::string dataset_dir_for(const Model& model, const std::string& config_flag) {
    const std::string dir = config_flag.empty() ? model.cfg.data : config_flag;
    if (dir.empty())
        throw ConfigError("no dataset directory: checkpoint config has no data key and "
                          "--config was not given");
    return dir;
}

int cmd_synth(const std::string& config, const std::string& out, long long seed,
              bool seed_set) {
    std::string text = read_text_file(config);
    if (seed_set) {
        std::istringstream iss(text);
        std::string line, patched;
        while (std::getline(iss, line)) {
            const std::size_t eq = line.find('=');
            std::string key = eq == std::string::npos ? "" : line.substr(0, eq);
            while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
            std::size_t start = key.find_first_not_of(" \t");
            if (start != std::string::npos) key = key.substr(start);
            if (key != "seed") patched += line + "\n";
        }
        patched += "seed = " + std::to_string(seed) + "\n";
        text = std::move(patched);
    }
    const SceneSpec spec = parse_scene_spec(text, config);
    generate_dataset(spec, out);
    std::cout << "wrote " << spec.frames << " frames to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config, const std::string& out) {
    const TrainingConfig cfg = load_training_config(config);
    const Dataset data = load_dataset(cfg.data, cfg.split);
    Trainer trainer(cfg, data);
    trainer.train();
    std::filesystem::create_directories(out);
    save_checkpoint(trainer.model, out + "/model.c4dc");
    write_text_file(out + "/loss_log.csv", trainer.loss_csv);
    std::cout << "trained " << trainer.model.step << " steps -> " << out << "/model.c4dc\n";
    return 0;
}

int cmd_render(const std::string& checkpoint, const std::string& config, double t,
               double yaw, double pitch, const std::string& out) {
    const Model model = load_checkpoint_or_exit(checkpoint);
    const SceneSpec spec = load_scene_spec(dataset_dir_for(model, config) + "/spec.txt");
    const Camera cam = orbit_camera(spec, t, yaw, pitch);
    const std::vector<double> feat_bg = feature_background_for(model, spec);
    const RenderOutput ro = model.render_view(cam, t, RasterConfig{}, feat_bg.data());
    std::filesystem::create_directories(out);
    write_ppm(out + "/rgb.ppm", ro.rgb);
    write_raw_image(out + "/depth.raw", ro.depth);
    write_raw_image(out + "/feat.raw", ro.feature);
    write_raw_image(out + "/accum.raw", ro.accum);
    std::cout << "rendered t=" << t << " -> " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config,
             const std::string& out) {
    const Model model = load_checkpoint_or_exit(checkpoint);
    const Dataset data = load_dataset(dataset_dir_for(model, config), model.cfg.split);
    std::filesystem::create_directories(out);

    const auto report = [&](const std::string& split, const std::string& path) {
        const std::vector<FrameMetrics> rows = evaluate(model, data, split);
        write_text_file(path, metrics_csv(rows));
        double mean = 0.0;
        for (const FrameMetrics& r : rows) mean += r.psnr;
        if (!rows.empty()) mean /= static_cast<double>(rows.size());
        std::cout << split << ": " << rows.size() << " frames, mean PSNR "
                  << format_double(mean) << " -> " << path << "\n";
    };
    report("reconstruction", out + "/metrics_recon.csv");
    if (model.cfg.split == "nvs") report("nvs", out + "/metrics_nvs.csv");
    return 0;
}

int cmd_segment(const std::string& checkpoint, const std::string& config,
                const std::string& query, double threshold, const std::string& out) {
    const Model model = load_checkpoint_or_exit(checkpoint);
    std::string data_dir = config.empty() ? model.cfg.data : config;
    const std::vector<double> q = resolve_query(query, data_dir, model.scene.feature_dim);
    const std::vector<std::size_t> ids = segment_gaussians(model.scene, q, threshold);
    if (ids.empty()) std::cerr << "warning: no Gaussians matched the query\n";
    std::string listing;
    for (std::size_t id : ids) listing += std::to_string(id) + "\n";
    std::cout << listing;
    if (!out.empty()) write_text_file(out, listing);
    return 0;
}

int cmd_edit(const std::string& config, const std::string& out) {
    const EditScript script = load_edit_script(config);
    try {
        run_edit_script(script, out);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::exit(3);
    }
    std::cout << "edit script done -> " << out << "\n";
    return 0;
}

int cmd_pca(const std::string& checkpoint, const std::string& config, double t, double yaw,
            double pitch, const std::string& out) {
    const Model model = load_checkpoint_or_exit(checkpoint);
    const SceneSpec spec = load_scene_spec(dataset_dir_for(model, config) + "/spec.txt");
    const Camera cam = orbit_camera(spec, t, yaw, pitch);
    const std::vector<double> feat_bg = feature_background_for(model, spec);
    const RenderOutput ro = model.render_view(cam, t, RasterConfig{}, feat_bg.data());
    const Image vis = pca_visualize(ro.feature);
    std::filesystem::create_directories(out);
    write_ppm(out + "/pca.ppm", vis);
    std::cout << "wrote " << out << "/pca.ppm\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coda4dgs: differentiable 4D Gaussian splatting toolkit"};
    app.require_subcommand(1);

    std::string config, checkpoint, out, query;
    double t = 0.0, yaw = 0.0, pitch = 0.0, threshold = 0.9;
    long long seed = 0;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config, "scene spec file")->required();
    synth->add_option("--out", out, "output dataset directory")->required();
    CLI::Option* seed_opt = synth->add_option("--seed", seed, "override the spec seed");

    CLI::App* train = app.add_subcommand("train", "optimize a model on a dataset");
    train->add_option("--config", config, "training config file")->required();
    train->add_option("--out", out, "output directory")->required();

    CLI::App* render = app.add_subcommand("render", "render a checkpoint at time t");
    render->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    render->add_option("--config", config, "dataset directory override");
    render->add_option("--t", t, "normalized time in [0,1]");
    render->add_option("--yaw", yaw, "camera yaw offset, degrees");
    render->add_option("--pitch", pitch, "camera pitch offset, degrees");
    render->add_option("--out", out, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "compute per-frame metrics");
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--config", config, "dataset directory override");
    eval->add_option("--out", out, "output directory")->required();

    CLI::App* segment = app.add_subcommand("segment", "select Gaussians by feature query");
    segment->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    segment->add_option("--config", config, "dataset directory override");
    segment->add_option("--query", query, "codebook:<id> or file:<path>")->required();
    segment->add_option("--threshold", threshold, "cosine threshold in (0,1)");
    segment->add_option("--out", out, "optional id list output file");

    CLI::App* edit = app.add_subcommand("edit", "run an edit script");
    edit->add_option("--config", config, "edit script file")->required();
    edit->add_option("--out", out, "output directory")->required();

    CLI::App* pca = app.add_subcommand("pca", "visualize rendered features");
    pca->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    pca->add_option("--config", config, "dataset directory override");
    pca->add_option("--t", t, "normalized time in [0,1]");
    pca->add_option("--yaw", yaw, "camera yaw offset, degrees");
    pca->add_option("--pitch", pitch, "camera pitch offset, degrees");
    pca->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(config, out, seed, seed_opt->count() > 0);
        if (train->parsed()) return cmd_train(config, out);
        if (render->parsed()) return cmd_render(checkpoint, config, t, yaw, pitch, out);
        if (eval->parsed()) return cmd_eval(checkpoint, config, out);
        if (segment->parsed()) return cmd_segment(checkpoint, config, query, threshold, out);
        if (edit->parsed()) return cmd_edit(config, out);
        if (pca->parsed()) return cmd_pca(checkpoint, config, t, yaw, pitch, out);
    } catch (const coda::SemanticError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
