#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>

#include "diffin/dataset.hpp"
#include "diffin/model.hpp"

using namespace diffin;

namespace {

ModelSpec logistic_spec(std::size_t d = 2) {
    return {.architecture = Architecture::logistic, .d_in = d, .num_classes = 2};
}

ModelSpec mlp_spec(std::size_t hidden, Activation act, std::size_t d = 2, int k = 2) {
    return {.architecture = Architecture::mlp,
            .hidden_sizes = {hidden},
            .activation = act,
            .d_in = d,
            .num_classes = k};
}

ModelSpec quad_spec(std::size_t d) {
    return {.architecture = Architecture::quadratic, .d_in = d, .num_classes = 2,
            .loss_kind = LossKind::mse};
}

LabeledDataset tiny_ds() {
    return LabeledDataset({0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 0.0, 3.0}, {0, 1, 1, 0}, 2, 2,
                          "tiny");
}

// independent straight-line forward pass for a 1-hidden-layer tanh mlp
double reference_mlp_loss(const ModelSpec& spec, const ParamVector& th, const Sample& z) {
    const std::size_t h = spec.hidden_sizes[0];
    const std::size_t d = spec.d_in;
    const std::size_t k = static_cast<std::size_t>(spec.num_classes);
    std::vector<double> a1(h);
    for (std::size_t o = 0; o < h; ++o) {
        double s = th[h * d + o];  // bias block after the weight block
        for (std::size_t i = 0; i < d; ++i) s += th[o * d + i] * z.x[i];
        a1[o] = std::tanh(s);
    }
    const std::size_t off = h * d + h;
    std::vector<double> logits(k);
    for (std::size_t o = 0; o < k; ++o) {
        double s = th[off + k * h + o];
        for (std::size_t i = 0; i < h; ++i) s += th[off + o * h + i] * a1[i];
        logits[o] = s;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double s : logits) sum += std::exp(s - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(z.label)];
}

}  // namespace

TEST_CASE("parameter counts follow the flat layout") {
    CHECK(logistic_spec(3).param_count() == 4);
    CHECK(mlp_spec(16, Activation::tanh, 2, 2).param_count() == 16 * 2 + 16 + 2 * 16 + 2);
    CHECK(quad_spec(5).param_count() == 5);
}

TEST_CASE("logistic loss at zero parameters is ln 2") {
    ModelSpec spec = logistic_spec();
    ParamVector theta(spec.param_count(), 0.0);
    LabeledDataset ds = tiny_ds();
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(loss_sample(spec, theta, ds.sample(i)) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("mse with perfect prediction is zero") {
    ModelSpec spec = quad_spec(2);
    LabeledDataset ds = tiny_ds();
    ParamVector theta = {ds.sample(0).x[0], ds.sample(0).x[1]};
    CHECK(loss_sample(spec, theta, ds.sample(0)) == 0.0);
}

TEST_CASE("mlp loss matches an independent forward-pass reimplementation") {
    ModelSpec spec = mlp_spec(16, Activation::tanh);
    ParamVector theta = init_params(spec, 21);
    LabeledDataset ds = tiny_ds();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double mine = loss_sample(spec, theta, ds.sample(i));
        double ref = reference_mlp_loss(spec, theta, ds.sample(i));
        CHECK(std::abs(mine - ref) <= 1e-12);
    }
}

TEST_CASE("logistic gradient at zero parameters") {
    ModelSpec spec = logistic_spec();
    ParamVector theta(spec.param_count(), 0.0);
    LabeledDataset ds = tiny_ds();
    Sample z = ds.sample(1);
    REQUIRE(z.label == 1);
    ParamVector g = grad_sample(spec, theta, z);
    // (sigmoid(0) - 1) * x on the weight block
    CHECK(g[0] == doctest::Approx(-0.5 * z.x[0]));
    CHECK(g[1] == doctest::Approx(-0.5 * z.x[1]));
    CHECK(g[2] == doctest::Approx(-0.5));
}

TEST_CASE("quadratic model gradient is theta minus target") {
    ModelSpec spec = quad_spec(3);
    ParamVector theta = {1.0, 2.0, 3.0};
    LabeledDataset ds({0.5, 0.5, 0.5}, {0}, 3, 2, "c");
    ParamVector g = grad_sample(spec, theta, ds.sample(0));
    CHECK(g[0] == doctest::Approx(0.5));
    CHECK(g[1] == doctest::Approx(1.5));
    CHECK(g[2] == doctest::Approx(2.5));
}

TEST_CASE("check_gradient: quadratic is exact to roundoff") {
    ModelSpec spec = quad_spec(4);
    ParamVector theta = {0.3, -0.7, 1.1, 0.05};
    LabeledDataset ds({1.0, 0.5, -0.25, 2.0}, {0}, 4, 2, "c");
    GradCheckReport rep = check_gradient(spec, theta, ds.sample(0), 1e-5);
    CHECK(rep.max_rel_err <= 1e-10);
    CHECK_FALSE(rep.non_finite);
    CHECK_FALSE(rep.near_kink);
}

TEST_CASE("check_gradient: logistic and mlps pass at 1e-6") {
    LabeledDataset ds = tiny_ds();
    for (int trial = 0; trial < 3; ++trial) {
        ModelSpec specs[] = {logistic_spec(), mlp_spec(8, Activation::tanh),
                             mlp_spec(8, Activation::relu)};
        for (const ModelSpec& spec : specs) {
            ParamVector theta = init_params(spec, 100 + trial);
            GradCheckReport rep = check_gradient(spec, theta, ds.sample(trial % ds.size()), 1e-5);
            if (rep.near_kink) continue;  // relu hinge: gradient is one-sided there
            CHECK(rep.max_rel_err <= 1e-6);
        }
    }
}

TEST_CASE("check_gradient flags a relu kink") {
    ModelSpec spec = mlp_spec(4, Activation::relu);
    // zero parameters put every hidden preactivation exactly on the hinge
    ParamVector theta(spec.param_count(), 0.0);
    LabeledDataset ds = tiny_ds();
    GradCheckReport rep = check_gradient(spec, theta, ds.sample(0), 1e-5);
    CHECK(rep.near_kink);
}

TEST_CASE("batch loss and gradient are means") {
    ModelSpec spec = logistic_spec();
    ParamVector theta = init_params(spec, 3);
    LabeledDataset ds = tiny_ds();
    std::vector<std::size_t> one = {2};
    CHECK(loss_batch(spec, theta, ds, one) ==
          doctest::Approx(loss_sample(spec, theta, ds.sample(2))));
    ParamVector g1 = grad_batch(spec, theta, ds, one);
    ParamVector g2 = grad_sample(spec, theta, ds.sample(2));
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);

    std::vector<std::size_t> twice = {1, 1};
    CHECK(loss_batch(spec, theta, ds, twice) ==
          doctest::Approx(loss_sample(spec, theta, ds.sample(1))));

    std::vector<std::size_t> batch = {0, 1, 2, 3, 1};
    KahanSum manual;
    for (std::size_t idx : batch) manual.add(loss_sample(spec, theta, ds.sample(idx)));
    CHECK(std::abs(loss_batch(spec, theta, ds, batch) - manual.value() / 5.0) <= 1e-15);

    std::vector<std::size_t> empty;
    CHECK_THROWS_AS(loss_batch(spec, theta, ds, empty), InputError);
    CHECK_THROWS_AS(grad_batch(spec, theta, ds, empty), InputError);
}

TEST_CASE("opposite gradients cancel in a batch") {
    ModelSpec spec = quad_spec(2);
    ParamVector theta = {1.0, 1.0};
    LabeledDataset ds({0.0, 0.0, 2.0, 2.0}, {0, 0}, 2, 2, "sym");
    std::vector<std::size_t> batch = {0, 1};
    ParamVector g = grad_batch(spec, theta, ds, batch);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
}

TEST_CASE("batch reductions are permutation invariant") {
    ModelSpec spec = mlp_spec(8, Activation::tanh);
    ParamVector theta = init_params(spec, 5);
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 64, 1.0, 9);
    std::vector<std::size_t> batch(ds.size());
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    std::vector<std::size_t> shuffled = batch;
    Rng rng(13);
    rng.shuffle(shuffled);

    double l1 = loss_batch(spec, theta, ds, batch);
    double l2 = loss_batch(spec, theta, ds, shuffled);
    CHECK(std::abs(l1 - l2) <= 1e-15 * (std::abs(l1) + 1.0));

    ParamVector g1 = grad_batch(spec, theta, ds, batch);
    ParamVector g2 = grad_batch(spec, theta, ds, shuffled);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(std::abs(g1[i] - g2[i]) <= 1e-15 * (std::abs(g1[i]) + 1.0));
}

TEST_CASE("directional derivative consistency on random smooth points") {
    ModelSpec spec = mlp_spec(6, Activation::tanh, 2, 3);
    LabeledDataset ds({0.5, -1.0, 2.0, 0.25, -0.75, 1.5}, {0, 2, 1}, 2, 3, "k3");
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        ParamVector theta = init_params(spec, 50 + trial);
        Sample z = ds.sample(trial % ds.size());
        ParamVector g = grad_sample(spec, theta, z);
        ParamVector v(theta.size());
        for (double& x : v) x = rng.normal();
        double nv = vec::norm(v);
        for (double& x : v) x /= nv;
        const double h = 1e-5;
        ParamVector tp = theta, tm = theta;
        vec::axpy(tp, h, v);
        vec::axpy(tm, -h, v);
        double fd = (loss_sample(spec, tp, z) - loss_sample(spec, tm, z)) / (2.0 * h);
        double an = vec::dot(g, v);
        CHECK(std::abs(an - fd) <= 1e-5 * std::max(1.0, std::abs(an)));
    }
}

TEST_CASE("dimension and finiteness checks") {
    ModelSpec spec = logistic_spec();
    ParamVector theta(spec.param_count(), 0.0);
    LabeledDataset ds({1.0, 2.0, 3.0}, {0}, 3, 2, "d3");
    CHECK_THROWS_AS(loss_sample(spec, theta, ds.sample(0)), InputError);
    ParamVector bad = {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0};
    LabeledDataset ok = tiny_ds();
    CHECK_THROWS_AS(loss_sample(spec, bad, ok.sample(0)), InputError);
    ModelSpec k3 = logistic_spec();
    k3.num_classes = 3;
    CHECK_THROWS_AS(k3.validate(), InputError);
}

TEST_CASE("params round trip through the binary format") {
    ModelSpec spec = mlp_spec(5, Activation::relu);
    ParamVector theta = init_params(spec, 77);
    std::string path = (std::filesystem::temp_directory_path() / "diffin_params.bin").string();
    save_params(path, theta);
    ParamVector back = load_params(path);
    CHECK(back == theta);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_params("/nonexistent/params.bin"), MissingArtifactError);

    ModelSpec parsed = spec_from_json(spec_to_json(spec));
    CHECK(parsed.param_count() == spec.param_count());
    CHECK(parsed.activation == spec.activation);
}
