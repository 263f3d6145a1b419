#include "exoendo/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "exoendo/errors.hpp"

namespace exoendo {

namespace {

void apply(Activation a, Eigen::MatrixXd& z) {
    if (a == Activation::relu)
        z = z.cwiseMax(0.0);
    else
        z = z.array().tanh();
}

// Derivative expressed through the activation output.
Eigen::MatrixXd derivative(Activation a, const Eigen::MatrixXd& out) {
    if (a == Activation::relu) return (out.array() > 0).cast<double>();
    return 1.0 - out.array().square();
}

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
    os << m.rows() << ' ' << m.cols();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << ' ' << m(i, j);
    os << '\n';
}

Eigen::MatrixXd read_matrix(std::istream& is) {
    Eigen::Index r, c;
    if (!(is >> r >> c) || r < 0 || c < 0) throw io_error("checkpoint: bad matrix header");
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j)
            if (!(is >> m(i, j))) throw io_error("checkpoint: truncated matrix");
    return m;
}

} // namespace

double MlpGrads::squared_norm() const {
    double s = 0;
    for (const auto& m : dw) s += m.squaredNorm();
    for (const auto& v : db) s += v.squaredNorm();
    return s;
}

void MlpGrads::scale(double c) {
    for (auto& m : dw) m *= c;
    for (auto& v : db) v *= c;
}

Mlp::Mlp(std::vector<int> sizes, Activation hidden, Rng& rng) : sizes_(std::move(sizes)), act_(hidden) {
    if (sizes_.size() < 2) throw dimension_error("mlp: need input and output sizes");
    for (size_t k = 0; k + 1 < sizes_.size(); ++k) {
        if (sizes_[k] < 0 || sizes_[k + 1] < 1) throw dimension_error("mlp: bad layer size");
        const double bound = 1.0 / std::sqrt(double(std::max(1, sizes_[k])));
        Eigen::MatrixXd wk(sizes_[k + 1], sizes_[k]);
        Eigen::VectorXd bk(sizes_[k + 1]);
        for (Eigen::Index i = 0; i < wk.size(); ++i) wk.data()[i] = rng.uniform(-bound, bound);
        for (Eigen::Index i = 0; i < bk.size(); ++i) bk(i) = rng.uniform(-bound, bound);
        w.push_back(std::move(wk));
        b.push_back(std::move(bk));
    }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
    Tape t;
    return forward(x, t);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape& tape) const {
    if (x.rows() != in_dim()) throw dimension_error("mlp: input has wrong dimension");
    tape.act.assign(1, x);
    for (size_t k = 0; k < w.size(); ++k) {
        Eigen::MatrixXd z = w[k] * tape.act.back();
        z.colwise() += b[k];
        if (k + 1 < w.size()) apply(act_, z);
        tape.act.push_back(std::move(z));
    }
    return tape.act.back();
}

MlpGrads Mlp::backward(const Tape& tape, const Eigen::MatrixXd& d_out) const {
    MlpGrads g;
    g.dw.resize(w.size());
    g.db.resize(w.size());
    Eigen::MatrixXd delta = d_out;
    for (size_t k = w.size(); k-- > 0;) {
        g.dw[k] = delta * tape.act[k].transpose();
        g.db[k] = delta.rowwise().sum();
        if (k > 0) delta = (w[k].transpose() * delta).cwiseProduct(derivative(act_, tape.act[k]));
    }
    return g;
}

MlpGrads Mlp::zero_grads() const {
    MlpGrads g;
    for (size_t k = 0; k < w.size(); ++k) {
        g.dw.push_back(Eigen::MatrixXd::Zero(w[k].rows(), w[k].cols()));
        g.db.push_back(Eigen::VectorXd::Zero(b[k].size()));
    }
    return g;
}

void Mlp::write(std::ostream& os) const {
    os.precision(17);
    os << "mlp " << (act_ == Activation::relu ? "relu" : "tanh") << ' ' << sizes_.size();
    for (int s : sizes_) os << ' ' << s;
    os << '\n';
    for (size_t k = 0; k < w.size(); ++k) {
        write_matrix(os, w[k]);
        write_matrix(os, b[k]);
    }
}

Mlp Mlp::read(std::istream& is) {
    std::string tag, act;
    size_t n;
    if (!(is >> tag >> act >> n) || tag != "mlp") throw io_error("checkpoint: expected mlp block");
    Mlp m;
    m.act_ = act == "relu" ? Activation::relu : Activation::tanh;
    m.sizes_.resize(n);
    for (auto& s : m.sizes_)
        if (!(is >> s)) throw io_error("checkpoint: truncated layer sizes");
    for (size_t k = 0; k + 1 < n; ++k) {
        m.w.push_back(read_matrix(is));
        m.b.push_back(read_matrix(is).col(0));
    }
    return m;
}

Adam::Adam(const Mlp& net, AdamConfig config) : config_(config) {
    for (size_t k = 0; k < net.num_layers(); ++k) {
        mw_.push_back(Eigen::MatrixXd::Zero(net.w[k].rows(), net.w[k].cols()));
        vw_.push_back(mw_.back());
        mb_.push_back(Eigen::VectorXd::Zero(net.b[k].size()));
        vb_.push_back(mb_.back());
    }
}

void Adam::step(Mlp& net, const MlpGrads& g) {
    if (g.dw.size() != mw_.size()) throw dimension_error("adam: gradient layout does not match the net");
    ++t_;
    const auto& c = config_;
    const double bc1 = 1 - std::pow(c.beta1, double(t_)), bc2 = 1 - std::pow(c.beta2, double(t_));
    for (size_t k = 0; k < mw_.size(); ++k) {
        const Eigen::MatrixXd gw = g.dw[k] + c.l2 * net.w[k];
        mw_[k] = c.beta1 * mw_[k] + (1 - c.beta1) * gw;
        vw_[k] = c.beta2 * vw_[k] + (1 - c.beta2) * gw.cwiseAbs2();
        mb_[k] = c.beta1 * mb_[k] + (1 - c.beta1) * g.db[k];
        vb_[k] = c.beta2 * vb_[k] + (1 - c.beta2) * g.db[k].cwiseAbs2();
        if (c.learning_rate == 0) continue;
        net.w[k].array() -= c.learning_rate * (mw_[k].array() / bc1) / ((vw_[k].array() / bc2).sqrt() + c.eps);
        net.b[k].array() -= c.learning_rate * (mb_[k].array() / bc1) / ((vb_[k].array() / bc2).sqrt() + c.eps);
    }
}

void Adam::write(std::ostream& os) const {
    os.precision(17);
    os << "adam " << t_ << ' ' << config_.learning_rate << ' ' << config_.beta1 << ' ' << config_.beta2 << ' '
       << config_.eps << ' ' << config_.l2 << ' ' << mw_.size() << '\n';
    for (size_t k = 0; k < mw_.size(); ++k) {
        write_matrix(os, mw_[k]);
        write_matrix(os, vw_[k]);
        write_matrix(os, mb_[k]);
        write_matrix(os, vb_[k]);
    }
}

Adam Adam::read(std::istream& is) {
    std::string tag;
    Adam a;
    size_t n;
    auto& c = a.config_;
    if (!(is >> tag >> a.t_ >> c.learning_rate >> c.beta1 >> c.beta2 >> c.eps >> c.l2 >> n) || tag != "adam")
        throw io_error("checkpoint: expected adam block");
    for (size_t k = 0; k < n; ++k) {
        a.mw_.push_back(read_matrix(is));
        a.vw_.push_back(read_matrix(is));
        a.mb_.push_back(read_matrix(is).col(0));
        a.vb_.push_back(read_matrix(is).col(0));
    }
    return a;
}

} // namespace exoendo
