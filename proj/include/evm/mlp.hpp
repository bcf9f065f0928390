#pragma once

#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace evm {

enum class Activation { Tanh, Relu };

// Fully-connected network: hidden layers with the configured activation, a
// linear output layer, and optional skip connections that append the network
// input to a hidden layer's input.
struct MlpConfig {
    int input_dim = 0;
    std::vector<int> hidden;
    int output_dim = 0;
    Activation act = Activation::Tanh;
    std::vector<int> skips;  // hidden-layer indices (0-based) receiving [h, x]

    bool has_skip(int layer) const;
};

class Mlp {
public:
    Mlp() = default;
    explicit Mlp(MlpConfig cfg);  // zero weights

    static Mlp random(MlpConfig cfg, std::mt19937_64& rng, double scale);

    const MlpConfig& config() const { return cfg_; }
    int layer_count() const { return static_cast<int>(weights_.size()); }
    int param_count() const;

    const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
    const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
    Eigen::MatrixXd& weight(int l) { return weights_[l]; }
    Eigen::VectorXd& bias(int l) { return biases_[l]; }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

    // Forward pass with cached layer inputs/pre-activations for backward.
    struct Trace {
        std::vector<Eigen::VectorXd> inputs;  // input of each layer (with skip concat)
        std::vector<Eigen::VectorXd> pre;     // pre-activation of each layer
        Eigen::VectorXd output;
    };
    Eigen::VectorXd forward(const Eigen::VectorXd& x, Trace& trace) const;

    struct Grad {
        std::vector<Eigen::MatrixXd> d_weights;
        std::vector<Eigen::VectorXd> d_biases;
        Eigen::VectorXd d_input;

        void add_scaled(const Grad& other, double s);
    };
    Grad zero_grad() const;
    // Reverse-mode gradients for upstream dL/dy; accumulates into grad.
    void backward(const Trace& trace, const Eigen::VectorXd& d_output, Grad& grad) const;

    // Flat parameter vector (row-major weights then bias, per layer).
    void copy_params_to(std::span<double> out) const;
    void set_params_from(std::span<const double> in);
    static void copy_grad_to(const Grad& grad, std::span<double> out);

private:
    MlpConfig cfg_;
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::VectorXd> biases_;
};

}  // namespace evm
