#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

#include "exoendo/rng.hpp"

namespace exoendo {

enum class Activation { relu, tanh };

struct MlpGrads {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;

    double squared_norm() const;
    void scale(double c);
};

// Fully connected net; samples are columns (in x batch -> out x batch), linear output layer.
class Mlp {
public:
    struct Tape {
        std::vector<Eigen::MatrixXd> act;  // act[0] = input, act[k] = output of layer k
    };

    Mlp() = default;
    // Weights and biases drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Mlp(std::vector<int> sizes, Activation hidden, Rng& rng);

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;
    // Gradients of sum over the batch of <d_out, output>.
    MlpGrads backward(const Tape& tape, const Eigen::MatrixXd& d_out) const;

    int in_dim() const { return sizes_.front(); }
    int out_dim() const { return sizes_.back(); }
    const std::vector<int>& sizes() const { return sizes_; }
    Activation activation() const { return act_; }
    size_t num_layers() const { return w.size(); }
    MlpGrads zero_grads() const;

    void write(std::ostream& os) const;
    static Mlp read(std::istream& is);

    std::vector<Eigen::MatrixXd> w;  // out x in
    std::vector<Eigen::VectorXd> b;

private:
    std::vector<int> sizes_;
    Activation act_ = Activation::relu;
};

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Added to weight gradients (not biases) as l2 * W.
    double l2 = 0;
};

class Adam {
public:
    Adam() = default;
    Adam(const Mlp& net, AdamConfig config);
    void step(Mlp& net, const MlpGrads& grads);
    long steps() const { return t_; }
    const AdamConfig& config() const { return config_; }
    AdamConfig& config() { return config_; }

    void write(std::ostream& os) const;
    static Adam read(std::istream& is);

private:
    AdamConfig config_;
    long t_ = 0;
    std::vector<Eigen::MatrixXd> mw_, vw_;
    std::vector<Eigen::VectorXd> mb_, vb_;
};

} // namespace exoendo
