#include "evm/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evm {

bool MlpConfig::has_skip(int layer) const {
    return std::find(skips.begin(), skips.end(), layer) != skips.end();
}

namespace {

std::vector<std::pair<int, int>> layer_shapes(const MlpConfig& cfg) {
    if (cfg.input_dim <= 0 || cfg.output_dim <= 0) {
        throw std::invalid_argument("mlp needs positive input/output dims");
    }
    for (int s : cfg.skips) {
        if (s <= 0 || s >= static_cast<int>(cfg.hidden.size())) {
            throw std::invalid_argument("skip index must name a hidden layer after the first");
        }
    }
    std::vector<std::pair<int, int>> shapes;
    int prev = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        int in = prev + (cfg.has_skip(static_cast<int>(l)) ? cfg.input_dim : 0);
        shapes.emplace_back(cfg.hidden[l], in);
        prev = cfg.hidden[l];
    }
    shapes.emplace_back(cfg.output_dim, prev);
    return shapes;
}

double activate(Activation act, double v) {
    return act == Activation::Tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0);
}

double activate_grad(Activation act, double pre) {
    if (act == Activation::Tanh) {
        double t = std::tanh(pre);
        return 1.0 - t * t;
    }
    return pre > 0.0 ? 1.0 : 0.0;
}

}  // namespace

Mlp::Mlp(MlpConfig cfg) : cfg_(std::move(cfg)) {
    for (auto [rows, cols] : layer_shapes(cfg_)) {
        weights_.push_back(Eigen::MatrixXd::Zero(rows, cols));
        biases_.push_back(Eigen::VectorXd::Zero(rows));
    }
}

Mlp Mlp::random(MlpConfig cfg, std::mt19937_64& rng, double scale) {
    Mlp mlp(std::move(cfg));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int l = 0; l < mlp.layer_count(); ++l) {
        double fan = std::sqrt(static_cast<double>(mlp.weights_[l].cols()));
        for (Eigen::Index i = 0; i < mlp.weights_[l].size(); ++i) {
            mlp.weights_[l].data()[i] = scale * dist(rng) / fan;
        }
        for (Eigen::Index i = 0; i < mlp.biases_[l].size(); ++i) {
            mlp.biases_[l][i] = scale * dist(rng) / fan;
        }
    }
    return mlp;
}

int Mlp::param_count() const {
    int n = 0;
    for (int l = 0; l < layer_count(); ++l) {
        n += static_cast<int>(weights_[l].size() + biases_[l].size());
    }
    return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    Trace trace;
    return forward(x, trace);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Trace& trace) const {
    if (x.size() != cfg_.input_dim) throw std::invalid_argument("mlp input dim mismatch");
    const int layers = layer_count();
    trace.inputs.resize(layers);
    trace.pre.resize(layers);
    Eigen::VectorXd h = x;
    for (int l = 0; l < layers; ++l) {
        bool hidden = l < layers - 1;
        if (hidden && cfg_.has_skip(l)) {
            Eigen::VectorXd cat(h.size() + x.size());
            cat << h, x;
            trace.inputs[l] = std::move(cat);
        } else {
            trace.inputs[l] = h;
        }
        trace.pre[l] = weights_[l] * trace.inputs[l] + biases_[l];
        if (hidden) {
            h = trace.pre[l].unaryExpr([&](double v) { return activate(cfg_.act, v); });
        } else {
            h = trace.pre[l];
        }
    }
    trace.output = h;
    return h;
}

Mlp::Grad Mlp::zero_grad() const {
    Grad g;
    for (int l = 0; l < layer_count(); ++l) {
        g.d_weights.emplace_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
        g.d_biases.emplace_back(Eigen::VectorXd::Zero(biases_[l].size()));
    }
    g.d_input = Eigen::VectorXd::Zero(cfg_.input_dim);
    return g;
}

void Mlp::Grad::add_scaled(const Grad& other, double s) {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
        d_weights[l] += s * other.d_weights[l];
        d_biases[l] += s * other.d_biases[l];
    }
    d_input += s * other.d_input;
}

void Mlp::backward(const Trace& trace, const Eigen::VectorXd& d_output, Grad& grad) const {
    const int layers = layer_count();
    if (d_output.size() != cfg_.output_dim) {
        throw std::invalid_argument("mlp output grad dim mismatch");
    }
    Eigen::VectorXd delta = d_output;  // dL/d(pre-activation of current layer)
    Eigen::VectorXd d_x = Eigen::VectorXd::Zero(cfg_.input_dim);
    for (int l = layers - 1; l >= 0; --l) {
        bool hidden = l < layers - 1;
        if (hidden) {
            for (Eigen::Index i = 0; i < delta.size(); ++i) {
                delta[i] *= activate_grad(cfg_.act, trace.pre[l][i]);
            }
        }
        grad.d_weights[l].noalias() += delta * trace.inputs[l].transpose();
        grad.d_biases[l] += delta;
        Eigen::VectorXd d_in = weights_[l].transpose() * delta;
        if (hidden && cfg_.has_skip(l)) {
            Eigen::Index core = d_in.size() - cfg_.input_dim;
            d_x += d_in.tail(cfg_.input_dim);
            delta = d_in.head(core);
        } else {
            delta = std::move(d_in);
        }
    }
    d_x += delta;
    grad.d_input += d_x;
}

void Mlp::copy_params_to(std::span<double> out) const {
    std::size_t k = 0;
    for (int l = 0; l < layer_count(); ++l) {
        const auto& w = weights_[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) out[k++] = w(r, c);
        }
        for (Eigen::Index i = 0; i < biases_[l].size(); ++i) out[k++] = biases_[l][i];
    }
    if (k != out.size()) throw std::invalid_argument("param buffer size mismatch");
}

void Mlp::set_params_from(std::span<const double> in) {
    std::size_t k = 0;
    for (int l = 0; l < layer_count(); ++l) {
        auto& w = weights_[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = in[k++];
        }
        for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l][i] = in[k++];
    }
    if (k != in.size()) throw std::invalid_argument("param buffer size mismatch");
}

void Mlp::copy_grad_to(const Grad& grad, std::span<double> out) {
    std::size_t k = 0;
    for (std::size_t l = 0; l < grad.d_weights.size(); ++l) {
        const auto& w = grad.d_weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) out[k++] = w(r, c);
        }
        for (Eigen::Index i = 0; i < grad.d_biases[l].size(); ++i) out[k++] = grad.d_biases[l][i];
    }
    if (k != out.size()) throw std::invalid_argument("grad buffer size mismatch");
}

}  // namespace evm
