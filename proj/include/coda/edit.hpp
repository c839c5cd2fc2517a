#pragma once

#include "coda/trainer.hpp"

namespace coda {

// Rows whose normalized context feature has cos >= threshold against the
// normalized query, reduced to the largest single-linkage spatial cluster
// (link radius = 2x the median mean scale of the matching set).
std::vector<std::size_t> segment_gaussians(const GaussianScene& scene,
                                           const std::vector<double>& query,
                                           double threshold);

// A Gaussian subset that keeps deforming under its own source model. keys
// carry the source row indices so a partition of one scene composites in
// exactly the original order.
struct EditGroup {
    Model model;
    std::vector<std::uint64_t> keys;
    bool has_transform = false;
    Vec3 translation{0, 0, 0};
    Quat rotation{1, 0, 0, 0}; // applied after deformation, left-multiplied
};

EditGroup make_group(const Model& source, const std::vector<std::size_t>& rows,
                     std::uint64_t key_base);

// Union render with global depth sorting across all groups.
RenderOutput render_groups(const std::vector<EditGroup>& groups, const Camera& cam, double t,
                           const RasterConfig& cfg, const double background[3],
                           const double* feature_background);

// Top-3 principal components of an F>=3-channel image, min-max normalized
// per channel; zero-variance channels fall back to 0.5.
Image pca_visualize(const Image& features);

// "codebook:<id>" resolves against the dataset's generated codebook
// (0 = background); "file:<path>" reads comma-separated reals.
std::vector<double> resolve_query(const std::string& query, const std::string& data_dir,
                                  std::size_t feature_dim);

struct EditOp {
    enum class Kind { Segment, Extract, Transform, Merge, Render } kind;
    std::string query;        // segment
    double threshold = 0.9;   // segment
    std::string path;         // extract (scene file), merge (checkpoint)
    Vec3 translation{0, 0, 0};
    Quat rotation{1, 0, 0, 0};
    double t = 0.0;           // render
    std::string name;         // render output stem
};

struct EditScript {
    std::string checkpoint;
    std::string data;
    std::vector<EditOp> ops;
};

EditScript parse_edit_script(const std::string& text, const std::string& origin);
EditScript load_edit_script(const std::string& path);

// Executes the script; writes extracted scenes and rendered images under
// out_dir. Throws SemanticError for incompatible merges or misordered ops.
void run_edit_script(const EditScript& script, const std::string& out_dir);

} // namespace coda
