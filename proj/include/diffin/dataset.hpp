#pragma once

// Labeled datasets: CSV ingestion, synthetic generators, deterministic
// splits, and label corruption with a ground-truth noise mask.

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffin/common.hpp"

namespace diffin {

struct Sample {
    std::span<const double> x;
    int label = 0;
};

/// Immutable once built. Features are stored row-major, one row per sample.
class LabeledDataset {
public:
    LabeledDataset() = default;
    LabeledDataset(std::vector<double> features, std::vector<int> labels,
                   std::size_t d_in, int num_classes, std::string name);

    std::size_t size() const { return labels_.size(); }
    std::size_t dim() const { return d_in_; }
    int num_classes() const { return num_classes_; }
    const std::string& name() const { return name_; }

    Sample sample(std::size_t i) const {
        return {std::span<const double>(features_.data() + i * d_in_, d_in_), labels_[i]};
    }
    int label(std::size_t i) const { return labels_[i]; }

    /// New dataset with the listed sample indices, in the given order.
    LabeledDataset subset(std::span<const std::size_t> indices, std::string name) const;
    /// New dataset with one index removed.
    LabeledDataset without(std::size_t index) const;
    /// New dataset with a set of indices removed (order preserved otherwise).
    LabeledDataset without_all(std::span<const std::size_t> indices) const;

    LabeledDataset with_label(std::size_t index, int new_label) const;

    std::uint64_t fingerprint() const;

    const std::vector<double>& raw_features() const { return features_; }
    const std::vector<int>& raw_labels() const { return labels_; }

private:
    std::vector<double> features_;
    std::vector<int> labels_;
    std::size_t d_in_ = 0;
    int num_classes_ = 2;
    std::string name_;
};

struct NoiseMask {
    double rate = 0.0;
    std::vector<std::size_t> flipped;                    // ascending indices
    std::unordered_map<std::size_t, int> original_labels;

    bool is_flipped(std::size_t i) const { return original_labels.count(i) != 0; }
};

struct SplitSpec {
    double train_fraction = 1.0;
    double val_fraction = 0.0;
    double test_fraction = 0.0;
    std::uint64_t seed = 0;
};

struct CsvSchema {
    std::size_t d_in = 0;
    int num_classes = 2;
};

enum class SyntheticKind { two_gaussians, two_moons };

struct SplitResult {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

LabeledDataset load_csv(const std::string& path, const CsvSchema& schema);

LabeledDataset make_synthetic(SyntheticKind kind, std::size_t n, double noise_sd,
                              std::uint64_t seed);

std::pair<LabeledDataset, NoiseMask> inject_label_noise(const LabeledDataset& ds, double rate,
                                                        std::uint64_t seed);

SplitResult split(const LabeledDataset& ds, const SplitSpec& spec);

// round() convention used for all count-from-fraction computations.
inline std::size_t round_count(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

std::string noise_mask_to_json(const NoiseMask& mask);
NoiseMask noise_mask_from_json(const std::string& text);

}  // namespace diffin
