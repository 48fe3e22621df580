#pragma once

// Differentiable classifiers over a flat parameter vector.
//
// Parameter layout (layout_version 1): for each layer in order, the weight
// matrix row-major (out x in), then the bias vector (out). The logistic
// architecture is a single "layer" with one output unit; `quadratic` is a
// parameter-space test model with no layers at all.
//
// All arithmetic is 64-bit. Batch reductions use compensated summation so
// loss_batch / grad_batch are insensitive to sample order.

#include <cstddef>
#include <string>
#include <vector>

#include "diffin/common.hpp"
#include "diffin/dataset.hpp"

namespace diffin {

enum class Architecture {
    logistic,   // binary sigmoid classifier, p = d_in + 1
    mlp,        // hidden layers + linear output of size K
    quadratic,  // loss(z, theta) = 0.5 * ||theta - z.x||^2, p = d_in
};

enum class Activation { relu, tanh };
enum class LossKind { cross_entropy, mse };

struct ModelSpec {
    Architecture architecture = Architecture::logistic;
    std::vector<std::size_t> hidden_sizes;  // mlp only
    Activation activation = Activation::tanh;
    std::size_t d_in = 1;
    int num_classes = 2;
    LossKind loss_kind = LossKind::cross_entropy;

    std::size_t param_count() const;
    void validate() const;
};

/// Seeded parameter initialization: uniform Glorot for weight blocks,
/// zero biases. `quadratic` starts at zero.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

double loss_sample(const ModelSpec& spec, const ParamVector& theta, const Sample& z);
double loss_batch(const ModelSpec& spec, const ParamVector& theta,
                  const LabeledDataset& ds, std::span<const std::size_t> indices);
double loss_set(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& ds);

ParamVector grad_sample(const ModelSpec& spec, const ParamVector& theta, const Sample& z);
ParamVector grad_batch(const ModelSpec& spec, const ParamVector& theta,
                       const LabeledDataset& ds, std::span<const std::size_t> indices);
ParamVector grad_set(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& ds);

int predict_class(const ModelSpec& spec, const ParamVector& theta, const Sample& z);
double accuracy(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& ds);

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool non_finite = false;  // loss evaluated to NaN/inf somewhere
    bool near_kink = false;   // a relu preactivation sits (numerically) on the hinge
};

/// Central-difference consistency check of grad_sample. Checks every
/// coordinate when p <= 200, otherwise 200 seeded random directions.
GradCheckReport check_gradient(const ModelSpec& spec, const ParamVector& theta, const Sample& z,
                               double step, std::uint64_t seed = 17);

/// Smallest |preactivation| over relu units; infinity for smooth models.
double min_abs_preactivation(const ModelSpec& spec, const ParamVector& theta, const Sample& z);

// ParamVector binary format: raw little-endian doubles plus a JSON sidecar
// describing {spec, p, layout_version}.
void save_params(const std::string& path_bin, const ParamVector& theta);
ParamVector load_params(const std::string& path_bin);
std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

}  // namespace diffin
