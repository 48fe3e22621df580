#include "diffin/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace diffin {

namespace {

// Layer dimensions [d_in, hidden..., K] and parameter offsets per layer.
struct Layout {
    std::vector<std::size_t> dims;
    std::vector<std::size_t> w_off;
    std::vector<std::size_t> b_off;
    std::size_t total = 0;

    std::size_t layers() const { return dims.size() - 1; }
};

Layout make_layout(const ModelSpec& spec) {
    Layout lo;
    lo.dims.push_back(spec.d_in);
    if (spec.architecture == Architecture::mlp) {
        for (std::size_t h : spec.hidden_sizes) lo.dims.push_back(h);
        lo.dims.push_back(static_cast<std::size_t>(spec.num_classes));
    } else if (spec.architecture == Architecture::logistic) {
        lo.dims.push_back(1);
    } else {
        lo.total = spec.d_in;
        return lo;
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < lo.dims.size(); ++l) {
        lo.w_off.push_back(off);
        off += lo.dims[l] * lo.dims[l + 1];
        lo.b_off.push_back(off);
        off += lo.dims[l + 1];
    }
    lo.total = off;
    return lo;
}

inline double act_forward(Activation a, double s) {
    if (a == Activation::relu) return s > 0.0 ? s : 0.0;
    return std::tanh(s);
}

// derivative as a function of the preactivation; relu'(0) defined as 0
inline double act_deriv(Activation a, double s) {
    if (a == Activation::relu) return s > 0.0 ? 1.0 : 0.0;
    double t = std::tanh(s);
    return 1.0 - t * t;
}

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// log(1 + e^s) without overflow
inline double softplus(double s) {
    if (s > 0.0) return s + std::log1p(std::exp(-s));
    return std::log1p(std::exp(s));
}

struct Forward {
    std::vector<std::vector<double>> pre;   // preactivations per layer
    std::vector<std::vector<double>> post;  // activations per layer (post[0] = input copy)
};

void mlp_forward(const ModelSpec& spec, const Layout& lo, const ParamVector& theta,
                 const Sample& z, Forward& fw) {
    fw.pre.assign(lo.layers(), {});
    fw.post.assign(lo.layers() + 1, {});
    fw.post[0].assign(z.x.begin(), z.x.end());
    for (std::size_t l = 0; l < lo.layers(); ++l) {
        const std::size_t in = lo.dims[l];
        const std::size_t out = lo.dims[l + 1];
        const double* w = theta.data() + lo.w_off[l];
        const double* b = theta.data() + lo.b_off[l];
        const std::vector<double>& a = fw.post[l];
        std::vector<double>& s = fw.pre[l];
        s.assign(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* wr = w + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * a[i];
            s[o] = acc;
        }
        std::vector<double>& ap = fw.post[l + 1];
        ap.assign(out, 0.0);
        const bool last = (l + 1 == lo.layers());
        for (std::size_t o = 0; o < out; ++o) ap[o] = last ? s[o] : act_forward(spec.activation, s[o]);
    }
}

// loss and the output-layer error delta (d loss / d preactivation)
double output_loss_delta(const ModelSpec& spec, const std::vector<double>& logits, int label,
                         std::vector<double>& delta) {
    const std::size_t k = logits.size();
    delta.assign(k, 0.0);
    if (spec.loss_kind == LossKind::cross_entropy) {
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double s : logits) sum += std::exp(s - mx);
        double logz = mx + std::log(sum);
        for (std::size_t o = 0; o < k; ++o) delta[o] = std::exp(logits[o] - logz);
        delta[static_cast<std::size_t>(label)] -= 1.0;
        return logz - logits[static_cast<std::size_t>(label)];
    }
    double loss = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
        double r = logits[o] - (static_cast<int>(o) == label ? 1.0 : 0.0);
        delta[o] = r;
        loss += 0.5 * r * r;
    }
    return loss;
}

void check_input(const ModelSpec& spec, const ParamVector& theta, const Sample& z) {
    if (theta.size() != spec.param_count()) throw InputError("parameter length mismatch");
    if (z.x.size() != spec.d_in) throw InputError("feature dimension mismatch");
    if (spec.architecture != Architecture::quadratic &&
        (z.label < 0 || z.label >= spec.num_classes))
        throw InputError("label out of range");
    if (!vec::all_finite(theta)) throw InputError("non-finite parameters");
}

}  // namespace

std::size_t ModelSpec::param_count() const { return make_layout(*this).total; }

void ModelSpec::validate() const {
    if (d_in < 1) throw InputError("d_in must be >= 1");
    if (architecture == Architecture::logistic && num_classes != 2)
        throw InputError("logistic architecture requires 2 classes");
    if (architecture != Architecture::quadratic && num_classes < 2)
        throw InputError("need at least 2 classes");
    if (architecture == Architecture::mlp) {
        if (hidden_sizes.empty()) throw InputError("mlp needs at least one hidden layer");
        for (std::size_t h : hidden_sizes)
            if (h < 1) throw InputError("hidden sizes must be >= 1");
    }
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Layout lo = make_layout(spec);
    ParamVector theta(lo.total, 0.0);
    if (spec.architecture == Architecture::quadratic) return theta;
    Rng rng(mix_seed(seed, 0x1417));
    for (std::size_t l = 0; l < lo.layers(); ++l) {
        const std::size_t in = lo.dims[l];
        const std::size_t out = lo.dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        double* w = theta.data() + lo.w_off[l];
        for (std::size_t i = 0; i < in * out; ++i) w[i] = bound * (2.0 * rng.uniform01() - 1.0);
        // biases stay zero
    }
    return theta;
}

double loss_sample(const ModelSpec& spec, const ParamVector& theta, const Sample& z) {
    check_input(spec, theta, z);
    switch (spec.architecture) {
        case Architecture::quadratic: {
            double loss = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                double r = theta[i] - z.x[i];
                loss += 0.5 * r * r;
            }
            return loss;
        }
        case Architecture::logistic: {
            double s = theta[theta.size() - 1];
            for (std::size_t i = 0; i < spec.d_in; ++i) s += theta[i] * z.x[i];
            double y = static_cast<double>(z.label);
            if (spec.loss_kind == LossKind::cross_entropy) return softplus(s) - y * s;
            double r = sigmoid(s) - y;
            return 0.5 * r * r;
        }
        case Architecture::mlp: {
            Layout lo = make_layout(spec);
            Forward fw;
            mlp_forward(spec, lo, theta, z, fw);
            std::vector<double> delta;
            return output_loss_delta(spec, fw.pre.back(), z.label, delta);
        }
    }
    throw InputError("unknown architecture");
}

ParamVector grad_sample(const ModelSpec& spec, const ParamVector& theta, const Sample& z) {
    check_input(spec, theta, z);
    ParamVector g(theta.size(), 0.0);
    switch (spec.architecture) {
        case Architecture::quadratic: {
            for (std::size_t i = 0; i < theta.size(); ++i) g[i] = theta[i] - z.x[i];
            return g;
        }
        case Architecture::logistic: {
            double s = theta[theta.size() - 1];
            for (std::size_t i = 0; i < spec.d_in; ++i) s += theta[i] * z.x[i];
            double p = sigmoid(s);
            double y = static_cast<double>(z.label);
            double d = (spec.loss_kind == LossKind::cross_entropy)
                           ? (p - y)
                           : (p - y) * p * (1.0 - p);
            for (std::size_t i = 0; i < spec.d_in; ++i) g[i] = d * z.x[i];
            g[theta.size() - 1] = d;
            return g;
        }
        case Architecture::mlp: {
            Layout lo = make_layout(spec);
            Forward fw;
            mlp_forward(spec, lo, theta, z, fw);
            std::vector<double> delta;
            output_loss_delta(spec, fw.pre.back(), z.label, delta);
            // backprop
            for (std::size_t li = lo.layers(); li-- > 0;) {
                const std::size_t in = lo.dims[li];
                const std::size_t out = lo.dims[li + 1];
                const std::vector<double>& a = fw.post[li];
                double* gw = g.data() + lo.w_off[li];
                double* gb = g.data() + lo.b_off[li];
                for (std::size_t o = 0; o < out; ++o) {
                    double* gwr = gw + o * in;
                    for (std::size_t i = 0; i < in; ++i) gwr[i] = delta[o] * a[i];
                    gb[o] = delta[o];
                }
                if (li == 0) break;
                const double* w = theta.data() + lo.w_off[li];
                std::vector<double> prev(in, 0.0);
                for (std::size_t i = 0; i < in; ++i) {
                    double acc = 0.0;
                    for (std::size_t o = 0; o < out; ++o) acc += w[o * in + i] * delta[o];
                    prev[i] = acc * act_deriv(spec.activation, fw.pre[li - 1][i]);
                }
                delta.swap(prev);
            }
            return g;
        }
    }
    throw InputError("unknown architecture");
}

double loss_batch(const ModelSpec& spec, const ParamVector& theta,
                  const LabeledDataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InputError("empty batch");
    KahanSum s;
    for (std::size_t idx : indices) s.add(loss_sample(spec, theta, ds.sample(idx)));
    return s.value() / static_cast<double>(indices.size());
}

double loss_set(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& ds) {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return loss_batch(spec, theta, ds, all);
}

ParamVector grad_batch(const ModelSpec& spec, const ParamVector& theta,
                       const LabeledDataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InputError("empty batch");
    KahanVector acc(theta.size());
    for (std::size_t idx : indices) acc.add(grad_sample(spec, theta, ds.sample(idx)));
    return acc.take_mean(indices.size());
}

ParamVector grad_set(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& ds) {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return grad_batch(spec, theta, ds, all);
}

int predict_class(const ModelSpec& spec, const ParamVector& theta, const Sample& z) {
    check_input(spec, theta, z);
    if (spec.architecture == Architecture::quadratic)
        throw UnsupportedError("quadratic model has no class prediction");
    if (spec.architecture == Architecture::logistic) {
        double s = theta[theta.size() - 1];
        for (std::size_t i = 0; i < spec.d_in; ++i) s += theta[i] * z.x[i];
        return s > 0.0 ? 1 : 0;
    }
    Layout lo = make_layout(spec);
    Forward fw;
    mlp_forward(spec, lo, theta, z, fw);
    const std::vector<double>& logits = fw.pre.back();
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double accuracy(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& ds) {
    if (ds.size() == 0) throw InputError("empty dataset");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (predict_class(spec, theta, ds.sample(i)) == ds.label(i)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(ds.size());
}

double min_abs_preactivation(const ModelSpec& spec, const ParamVector& theta, const Sample& z) {
    if (spec.architecture != Architecture::mlp || spec.activation != Activation::relu)
        return std::numeric_limits<double>::infinity();
    Layout lo = make_layout(spec);
    Forward fw;
    mlp_forward(spec, lo, theta, z, fw);
    double m = std::numeric_limits<double>::infinity();
    // output layer is linear; only hidden preactivations hit the hinge
    for (std::size_t l = 0; l + 1 < lo.layers(); ++l)
        for (double s : fw.pre[l]) m = std::min(m, std::abs(s));
    return m;
}

GradCheckReport check_gradient(const ModelSpec& spec, const ParamVector& theta, const Sample& z,
                               double step, std::uint64_t seed) {
    if (step <= 0.0) throw InputError("step must be positive");
    GradCheckReport rep;
    rep.near_kink = min_abs_preactivation(spec, theta, z) <= 16.0 * step;

    ParamVector g = grad_sample(spec, theta, z);
    auto eval = [&](const ParamVector& th) {
        double v = loss_sample(spec, th, z);
        if (!std::isfinite(v)) rep.non_finite = true;
        return v;
    };
    auto rel_err = [](double a, double f) {
        return std::abs(a - f) / std::max(std::abs(a) + std::abs(f), 1e-8);
    };

    const std::size_t p = theta.size();
    if (p <= 200) {
        ParamVector th = theta;
        for (std::size_t i = 0; i < p; ++i) {
            th[i] = theta[i] + step;
            double fp = eval(th);
            th[i] = theta[i] - step;
            double fm = eval(th);
            th[i] = theta[i];
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err(g[i], (fp - fm) / (2.0 * step)));
        }
    } else {
        Rng rng(mix_seed(seed, 0xd1c));
        for (int r = 0; r < 200; ++r) {
            ParamVector v(p);
            for (std::size_t i = 0; i < p; ++i) v[i] = rng.normal();
            double nv = vec::norm(v);
            for (double& x : v) x /= nv;
            ParamVector thp = theta, thm = theta;
            vec::axpy(thp, step, v);
            vec::axpy(thm, -step, v);
            double fd = (eval(thp) - eval(thm)) / (2.0 * step);
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err(vec::dot(g, v), fd));
        }
    }
    return rep;
}

void save_params(const std::string& path_bin, const ParamVector& theta) {
    std::ofstream out(path_bin, std::ios::binary);
    if (!out) throw InputError("cannot write " + path_bin);
    out.write(reinterpret_cast<const char*>(theta.data()),
              static_cast<std::streamsize>(theta.size() * sizeof(double)));
}

ParamVector load_params(const std::string& path_bin) {
    std::ifstream in(path_bin, std::ios::binary | std::ios::ate);
    if (!in) throw MissingArtifactError("missing parameter file: " + path_bin);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(double) != 0) throw InputError("corrupt parameter file: " + path_bin);
    ParamVector theta(bytes / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(theta.data()), static_cast<std::streamsize>(bytes));
    return theta;
}

std::string spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    switch (spec.architecture) {
        case Architecture::logistic: j["architecture"] = "logistic"; break;
        case Architecture::mlp: j["architecture"] = "mlp"; break;
        case Architecture::quadratic: j["architecture"] = "quadratic"; break;
    }
    j["hidden"] = spec.hidden_sizes;
    j["activation"] = spec.activation == Activation::relu ? "relu" : "tanh";
    j["d_in"] = spec.d_in;
    j["num_classes"] = spec.num_classes;
    j["loss"] = spec.loss_kind == LossKind::cross_entropy ? "cross_entropy" : "mse";
    return j.dump();
}

ModelSpec spec_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelSpec spec;
    std::string arch = j.at("architecture").get<std::string>();
    if (arch == "logistic")
        spec.architecture = Architecture::logistic;
    else if (arch == "mlp")
        spec.architecture = Architecture::mlp;
    else if (arch == "quadratic")
        spec.architecture = Architecture::quadratic;
    else
        throw InputError("unknown architecture: " + arch);
    spec.hidden_sizes = j.value("hidden", std::vector<std::size_t>{});
    std::string act = j.value("activation", "tanh");
    if (act == "relu")
        spec.activation = Activation::relu;
    else if (act == "tanh")
        spec.activation = Activation::tanh;
    else
        throw InputError("unknown activation: " + act);
    spec.d_in = j.at("d_in").get<std::size_t>();
    spec.num_classes = j.at("num_classes").get<int>();
    std::string loss = j.value("loss", "cross_entropy");
    if (loss == "cross_entropy")
        spec.loss_kind = LossKind::cross_entropy;
    else if (loss == "mse")
        spec.loss_kind = LossKind::mse;
    else
        throw InputError("unknown loss: " + loss);
    spec.validate();
    return spec;
}

}  // namespace diffin
