#include "diffin/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace diffin {

LabeledDataset::LabeledDataset(std::vector<double> features, std::vector<int> labels,
                               std::size_t d_in, int num_classes, std::string name)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      d_in_(d_in),
      num_classes_(num_classes),
      name_(std::move(name)) {
    if (labels_.empty()) throw InputError("empty dataset");
    if (d_in_ < 1) throw InputError("feature dimension must be >= 1");
    if (num_classes_ < 2) throw InputError("need at least 2 classes");
    if (features_.size() != labels_.size() * d_in_)
        throw InputError("feature matrix shape mismatch");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] < 0 || labels_[i] >= num_classes_)
            throw InputError("label out of range at row " + std::to_string(i));
    }
    for (double v : features_) {
        if (!std::isfinite(v)) throw InputError("non-finite feature value");
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices,
                                      std::string name) const {
    std::vector<double> f;
    f.reserve(indices.size() * d_in_);
    std::vector<int> l;
    l.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= size()) throw InputError("subset index out of range");
        const double* row = features_.data() + idx * d_in_;
        f.insert(f.end(), row, row + d_in_);
        l.push_back(labels_[idx]);
    }
    return LabeledDataset(std::move(f), std::move(l), d_in_, num_classes_, std::move(name));
}

LabeledDataset LabeledDataset::without(std::size_t index) const {
    std::size_t one[] = {index};
    return without_all(one);
}

LabeledDataset LabeledDataset::without_all(std::span<const std::size_t> indices) const {
    std::vector<bool> drop(size(), false);
    for (std::size_t idx : indices) {
        if (idx >= size()) throw InputError("removal index out of range");
        drop[idx] = true;
    }
    std::vector<std::size_t> keep;
    keep.reserve(size());
    for (std::size_t i = 0; i < size(); ++i)
        if (!drop[i]) keep.push_back(i);
    if (keep.empty()) throw InputError("removal leaves empty dataset");
    return subset(keep, name_ + "-minus");
}

LabeledDataset LabeledDataset::with_label(std::size_t index, int new_label) const {
    if (index >= size()) throw InputError("index out of range");
    std::vector<int> l = labels_;
    l[index] = new_label;
    return LabeledDataset(features_, std::move(l), d_in_, num_classes_, name_);
}

std::uint64_t LabeledDataset::fingerprint() const {
    std::uint64_t h = fnv1a_doubles(features_);
    h = fnv1a(labels_.data(), labels_.size() * sizeof(int), h);
    std::uint64_t meta[2] = {d_in_, static_cast<std::uint64_t>(num_classes_)};
    return fnv1a(meta, sizeof(meta), h);
}

LabeledDataset load_csv(const std::string& path, const CsvSchema& schema) {
    if (schema.d_in < 1) throw InputError("schema: d_in must be >= 1");
    std::ifstream in(path);
    if (!in) throw InputError("missing file: " + path);

    std::vector<double> features;
    std::vector<int> labels;
    std::string line;
    std::size_t row = 0;
    bool header_skipped = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!header_skipped) {
            header_skipped = true;
            // header row is `f0,...,f{d-1},label`
            if (line.rfind("f0", 0) == 0) continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            errno = 0;
            if (col < schema.d_in) {
                double v = std::strtod(cell.c_str(), &end);
                if (end == cell.c_str() || *end != '\0' || errno != 0)
                    throw InputError("non-numeric feature at row " + std::to_string(row) +
                                     " column " + std::to_string(col));
                features.push_back(v);
            } else if (col == schema.d_in) {
                long v = std::strtol(cell.c_str(), &end, 10);
                if (end == cell.c_str() || *end != '\0')
                    throw InputError("non-integer label at row " + std::to_string(row));
                if (v < 0 || v >= schema.num_classes)
                    throw InputError("label out of range at row " + std::to_string(row));
                labels.push_back(static_cast<int>(v));
            } else {
                throw InputError("too many columns at row " + std::to_string(row));
            }
            ++col;
        }
        if (col != schema.d_in + 1)
            throw InputError("expected " + std::to_string(schema.d_in + 1) + " columns at row " +
                             std::to_string(row));
        ++row;
    }
    if (labels.empty()) throw InputError("empty dataset");
    return LabeledDataset(std::move(features), std::move(labels), schema.d_in,
                          schema.num_classes, path);
}

LabeledDataset make_synthetic(SyntheticKind kind, std::size_t n, double noise_sd,
                              std::uint64_t seed) {
    if (n < 2) throw InputError("synthetic dataset needs n >= 2");
    if (noise_sd < 0.0) throw InputError("noise_sd must be nonnegative");
    Rng rng(mix_seed(seed, 0x5d5));
    std::vector<double> f;
    f.reserve(n * 2);
    std::vector<int> l;
    l.reserve(n);

    if (kind == SyntheticKind::two_gaussians) {
        const double mean[2][2] = {{-1.5, -0.5}, {1.5, 0.5}};
        for (std::size_t i = 0; i < n; ++i) {
            int c = static_cast<int>(i % 2);
            f.push_back(mean[c][0] + noise_sd * rng.normal());
            f.push_back(mean[c][1] + noise_sd * rng.normal());
            l.push_back(c);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            int c = static_cast<int>(i % 2);
            double t = std::numbers::pi * rng.uniform01();
            double x, y;
            if (c == 0) {
                x = std::cos(t);
                y = std::sin(t);
            } else {
                x = 1.0 - std::cos(t);
                y = 0.5 - std::sin(t);
            }
            f.push_back(x + noise_sd * rng.normal());
            f.push_back(y + noise_sd * rng.normal());
            l.push_back(c);
        }
    }
    const char* nm = kind == SyntheticKind::two_gaussians ? "two_gaussians" : "two_moons";
    return LabeledDataset(std::move(f), std::move(l), 2, 2, nm);
}

std::pair<LabeledDataset, NoiseMask> inject_label_noise(const LabeledDataset& ds, double rate,
                                                        std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw InputError("noise rate outside [0,1]");
    const std::size_t n_flip = round_count(rate * static_cast<double>(ds.size()));
    NoiseMask mask;
    mask.rate = rate;
    if (n_flip == 0) return {ds, mask};

    Rng rng(mix_seed(seed, 0x1abe1));
    mask.flipped = rng.sample_without_replacement(0, ds.size(), n_flip);

    std::vector<int> labels = ds.raw_labels();
    const int k = ds.num_classes();
    for (std::size_t idx : mask.flipped) {
        int old = labels[idx];
        // uniform over the other k-1 classes
        int offset = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k - 1)));
        labels[idx] = (old + offset) % k;
        mask.original_labels[idx] = old;
    }
    LabeledDataset noisy(ds.raw_features(), std::move(labels), ds.dim(), k,
                         ds.name() + "-noisy");
    return {std::move(noisy), std::move(mask)};
}

SplitResult split(const LabeledDataset& ds, const SplitSpec& spec) {
    const double total = spec.train_fraction + spec.val_fraction + spec.test_fraction;
    if (spec.train_fraction < 0 || spec.val_fraction < 0 || spec.test_fraction < 0)
        throw InputError("split fractions must be nonnegative");
    if (std::abs(total - 1.0) > 1e-12) throw InputError("split fractions must sum to 1");

    const std::size_t n = ds.size();
    std::size_t n_train = round_count(spec.train_fraction * static_cast<double>(n));
    std::size_t n_val = round_count(spec.val_fraction * static_cast<double>(n));
    if (n_train + n_val > n) n_val = n - n_train;
    std::size_t n_test = n - n_train - n_val;

    auto check = [](double frac, std::size_t count, const char* which) {
        if (frac > 0.0 && count == 0)
            throw InputError(std::string("requested non-empty ") + which + " split is empty");
    };
    check(spec.train_fraction, n_train, "train");
    check(spec.val_fraction, n_val, "val");
    check(spec.test_fraction, n_test, "test");

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(mix_seed(spec.seed, 0x511));
    rng.shuffle(perm);

    auto take = [&](std::size_t lo, std::size_t count, const char* suffix) -> LabeledDataset {
        if (count == 0) return LabeledDataset();  // empty-by-fraction
        std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                     perm.begin() + static_cast<std::ptrdiff_t>(lo + count));
        std::sort(idx.begin(), idx.end());
        return ds.subset(idx, ds.name() + suffix);
    };
    SplitResult out;
    out.train = take(0, n_train, "-train");
    out.val = take(n_train, n_val, "-val");
    out.test = take(n_train + n_val, n_test, "-test");
    return out;
}

std::string noise_mask_to_json(const NoiseMask& mask) {
    nlohmann::json j;
    j["rate"] = mask.rate;
    j["flipped"] = mask.flipped;
    nlohmann::json orig = nlohmann::json::object();
    std::vector<std::size_t> keys = mask.flipped;
    for (std::size_t k : keys) orig[std::to_string(k)] = mask.original_labels.at(k);
    j["original_labels"] = orig;
    return j.dump(2);
}

NoiseMask noise_mask_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    NoiseMask mask;
    mask.rate = j.at("rate").get<double>();
    mask.flipped = j.at("flipped").get<std::vector<std::size_t>>();
    for (auto& [k, v] : j.at("original_labels").items())
        mask.original_labels[std::stoull(k)] = v.get<int>();
    return mask;
}

}  // namespace diffin
