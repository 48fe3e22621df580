#include <doctest.h>

#include <cmath>
#include <limits>

#include "diffin/optimizer.hpp"

using namespace diffin;

namespace {

// independently written reference for the no-bias-correction adam variant:
// keeps its own moment buffers and recomputes the update from scratch
struct ReferenceAdam {
    double lr, b1, b2, eps;
    std::vector<double> m, v;

    explicit ReferenceAdam(double lr_, double b1_, double b2_, double eps_, std::size_t p)
        : lr(lr_), b1(b1_), b2(b2_), eps(eps_), m(p, 0.0), v(p, 0.0) {}

    void apply(std::vector<double>& theta, const std::vector<double>& g) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            double vhat = v[i] / (1.0 - b2);
            double lr_star = lr / ((1.0 - b1) * (std::sqrt(vhat) + eps));
            theta[i] -= lr_star * m[i];
        }
    }
};

OptimizerConfig sgd_cfg(double lr = 0.1) { return {.kind = OptimizerKind::sgd, .lr = lr}; }

}  // namespace

TEST_CASE("sgd arithmetic") {
    OptimizerConfig cfg = sgd_cfg(0.1);
    OptimizerState st = OptimizerState::fresh(cfg, 2);
    StepResult r = step(cfg, st, {1.0, 1.0}, {1.0, -1.0});
    CHECK(r.theta[0] == doctest::Approx(0.9));
    CHECK(r.theta[1] == doctest::Approx(1.1));
    CHECK(r.state.t == 1);
}

TEST_CASE("momentum with beta zero matches sgd bit for bit over 500 steps") {
    OptimizerConfig cfg_m{.kind = OptimizerKind::sgd_momentum, .lr = 0.05, .beta = 0.0};
    OptimizerConfig cfg_s = sgd_cfg(0.05);
    const std::size_t p = 7;
    ParamVector theta_m(p, 0.3), theta_s(p, 0.3);
    OptimizerState st_m = OptimizerState::fresh(cfg_m, p);
    OptimizerState st_s = OptimizerState::fresh(cfg_s, p);
    Rng rng(3);
    for (int t = 0; t < 500; ++t) {
        ParamVector g(p);
        for (double& x : g) x = rng.normal();
        StepResult rm = step(cfg_m, st_m, theta_m, g);
        StepResult rs = step(cfg_s, st_s, theta_s, g);
        theta_m = rm.theta;
        theta_s = rs.theta;
        st_m = rm.state;
        st_s = rs.state;
        for (std::size_t i = 0; i < p; ++i) REQUIRE(theta_m[i] == theta_s[i]);
    }
}

TEST_CASE("adam trajectory matches the reference implementation to 1e-12") {
    OptimizerConfig cfg{.kind = OptimizerKind::adam, .lr = 0.02, .beta1 = 0.9, .beta2 = 0.99,
                        .eps_adam = 1e-8};
    const std::size_t p = 4;
    ParamVector theta(p, 1.0);
    std::vector<double> ref_theta(p, 1.0);
    OptimizerState st = OptimizerState::fresh(cfg, p);
    ReferenceAdam ref(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam, p);

    // fixed quadratic objective 0.5 * |theta - c|^2
    const ParamVector c = {0.2, -0.4, 0.6, -0.8};
    for (int t = 0; t < 100; ++t) {
        ParamVector g(p);
        for (std::size_t i = 0; i < p; ++i) g[i] = theta[i] - c[i];
        StepResult r = step(cfg, st, theta, g);
        theta = r.theta;
        st = r.state;

        std::vector<double> gr(p);
        for (std::size_t i = 0; i < p; ++i) gr[i] = ref_theta[i] - c[i];
        ref.apply(ref_theta, gr);
        for (std::size_t i = 0; i < p; ++i)
            REQUIRE(std::abs(theta[i] - ref_theta[i]) <= 1e-12);
    }
}

TEST_CASE("adam general learning rate: closed forms") {
    OptimizerConfig cfg{.kind = OptimizerKind::adam, .lr = 0.1, .beta1 = 0.9, .beta2 = 0.0,
                        .eps_adam = 1e-4};
    OptimizerState st = OptimizerState::fresh(cfg, 3);
    ParamVector g = {0.5, -2.0, 0.0};
    ParamVector eta = adam_general_lr(cfg, st, g);
    // beta2 = 0: vhat = g^2, eta* = lr / ((1-beta1)(|g| + eps))
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(eta[i] == doctest::Approx(0.1 / (0.1 * (std::abs(g[i]) + 1e-4))));

    ParamVector zero(3, 0.0);
    ParamVector eta0 = adam_general_lr(cfg, st, zero);
    for (double e : eta0) CHECK(e == doctest::Approx(0.1 / (0.1 * 1e-4)));
}

TEST_CASE("adam reformulated update reproduces step() on random states") {
    OptimizerConfig cfg{.kind = OptimizerKind::adam, .lr = 0.03, .beta1 = 0.85, .beta2 = 0.995,
                        .eps_adam = 1e-8};
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = 5;
        ParamVector theta(p), g(p);
        OptimizerState st = OptimizerState::fresh(cfg, p);
        st.t = static_cast<std::size_t>(rng.uniform_index(50));
        for (std::size_t i = 0; i < p; ++i) {
            theta[i] = rng.normal();
            g[i] = rng.normal();
            st.m[i] = rng.normal();
            st.v[i] = std::abs(rng.normal());
        }
        StepResult direct = step(cfg, st, theta, g);
        ParamVector eta = adam_general_lr(cfg, st, g);
        for (std::size_t i = 0; i < p; ++i) {
            double update = eta[i] * ((1.0 - cfg.beta1) * g[i] + cfg.beta1 * st.m[i]);
            REQUIRE(std::abs((theta[i] - update) - direct.theta[i]) <= 1e-12);
        }
    }
}

TEST_CASE("alpha coefficients") {
    OptimizerConfig sgd = sgd_cfg(0.1);
    CHECK(alpha_coeff(sgd, 3, 9, 100) == doctest::Approx(-1e-6).epsilon(1e-12));

    OptimizerConfig mom{.kind = OptimizerKind::sgd_momentum, .lr = 0.2, .beta = 0.0};
    // beta = 0 and k = t-1: empty product, alpha = eta_k / N
    CHECK(alpha_coeff(mom, 9, 10, 50) == doctest::Approx(0.2 / 50.0));

    OptimizerConfig mom9{.kind = OptimizerKind::sgd_momentum, .lr = 0.1, .beta = 0.9};
    // k = t-3 with constant eta: (eta*beta)^2 * eta_k * (1-beta) / N
    CHECK(alpha_coeff(mom9, 4, 7, 10) == doctest::Approx(0.09 * 0.09 * 0.1 * 0.1 / 10.0));

    CHECK_THROWS_AS(alpha_coeff(sgd, 5, 4, 10), InputError);
}

TEST_CASE("learning-rate schedule is a pure function of the step") {
    OptimizerConfig cfg = sgd_cfg(0.8);
    cfg.decay_every = 10;
    cfg.decay_factor = 0.5;
    CHECK(cfg.eta(0) == doctest::Approx(0.8));
    CHECK(cfg.eta(9) == doctest::Approx(0.8));
    CHECK(cfg.eta(10) == doctest::Approx(0.4));
    CHECK(cfg.eta(25) == doctest::Approx(0.2));
    CHECK(cfg.eta(10) == cfg.eta(10));
}

TEST_CASE("config validation") {
    OptimizerConfig cfg = sgd_cfg(1.5);
    CHECK_THROWS_AS(cfg.validate(), InputError);
    cfg = sgd_cfg(0.1);
    cfg.beta = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InputError);
    cfg.beta = 0.5;
    cfg.eps_adam = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("non-finite gradients are rejected") {
    OptimizerConfig cfg = sgd_cfg();
    OptimizerState st = OptimizerState::fresh(cfg, 1);
    ParamVector theta = {1.0};
    ParamVector bad = {std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(step(cfg, st, theta, bad), NumericalError);
}
