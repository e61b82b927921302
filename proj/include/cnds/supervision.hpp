#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cnds/data.hpp"
#include "cnds/network.hpp"

namespace cnds {

// The vanishing-gradient probe: a short burst of single-batch SGD iterations
// under the final loss, recording per-conv-block mean gradient magnitudes.
struct ProbeConfig {
    int iterations = 20; // recommended range 10..50
    real threshold = 1e-7;
    int batch_size = 16;
    std::uint64_t seed = 0;
    real learning_rate = 0.01; // probe iterations take plain SGD steps
};

struct ProbeReport {
    std::vector<std::string> blocks;           // main-path conv blocks, in order
    std::vector<std::vector<real>> magnitudes; // [iteration][block]
    std::vector<std::string> flagged;          // below threshold at the final iteration
    std::vector<std::string> recommended_attach_points; // deepest first
    real threshold = 1e-7;

    int iterations() const { return (int)magnitudes.size(); }
};

// The placement rule on its own: the deepest flagged conv block, then one
// more point every 3 conv blocks downward while the candidate is flagged
// and at least 3 flagged blocks remain at or below it.
std::vector<std::string> recommend_attach_points(const std::vector<std::string>& blocks,
                                                 const std::vector<bool>& flagged);

// Runs the probe on a branchless spec (std-0.01 init) and flags blocks whose
// final-iteration magnitude falls below the threshold; recommended points
// come from recommend_attach_points.
ProbeReport probe_vanishing(const NetworkSpec& spec, const Dataset& data,
                            const ProbeConfig& cfg);

// The raw probe protocol on any spec; attached branches participate in the
// backward pass weighted by their alpha0 (epoch-0 schedule value). Returns
// the [iteration][conv block] magnitude matrix.
std::vector<std::vector<real>> probe_magnitudes(const NetworkSpec& spec, const Dataset& data,
                                                const ProbeConfig& cfg);

struct AlphaSchedule {
    real alpha0 = 0.3;
    int total_epochs = 1; // N >= 1

    AlphaSchedule(real alpha0_, int total_epochs_);
};

// alpha0 * (1 - t/N): affine in t, alpha0 at t=0, exactly 0 at t=N.
real alpha_at(const AlphaSchedule& schedule, int t);

// main_loss + sum of alpha_i * loss_i over (alpha, loss) pairs.
real combined_loss(real main_loss, const std::vector<std::pair<real, real>>& branch_losses);

// Auxiliary branch shape: one conv, then fully connected layers (all but the
// last followed by ReLU), then a softmax head of width classes. When fc_dims
// is nonempty its last entry must equal classes.
struct BranchTemplate {
    int conv_out = 1;
    int conv_kernel = 1;
    int conv_stride = 1;
    int conv_pad = 0;
    std::vector<int> fc_dims;
    int classes = 1;
};

// The default template: a 1x1 conv halving the attach point's channel count,
// one hidden layer of 64, then the class layer.
BranchTemplate default_branch_template(const Network& net, const std::string& attach_after);

// Returns a new spec with one more branch; the main path is untouched.
// Branch block names are derived from the attach point.
NetworkSpec attach_branch(const NetworkSpec& spec, const std::string& attach_after,
                          const BranchTemplate& tmpl, real alpha0);

// CSV with header iteration,block,mean_grad_magnitude; one row per
// (iteration, conv block), %.12e values.
std::string probe_report_to_csv(const ProbeReport& report);
void write_probe_csv(const ProbeReport& report, const std::string& path);

} // namespace cnds
