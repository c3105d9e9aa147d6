#include "tforge/featgen.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tforge {

// ---------------------------------------------------------------------------
// dense network plumbing

int Mlp::input_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols());
}

int Mlp::output_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows());
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
}

void Mlp::validate() const {
    if (layers.empty() || layers.size() > 2)
        throw std::runtime_error("networks are capped at 1..2 affine layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.W.rows() != l.b.size()) throw std::runtime_error("bias/weight row mismatch");
        if (i > 0 && layers[i - 1].W.rows() != l.W.cols())
            throw std::runtime_error("layer dims do not chain");
        if (!l.W.allFinite() || !l.b.allFinite())
            throw std::runtime_error("non-finite network parameter");
    }
}

namespace {

Matrix apply_activation(const Layer& layer, const Matrix& z) {
    switch (layer.act) {
        case Activation::none: return z;
        case Activation::leaky_relu: {
            const double s = layer.slope;
            return z.unaryExpr([s](double v) { return v > 0.0 ? v : s * v; });
        }
        case Activation::softmax: {
            Matrix out(z.rows(), z.cols());
            for (Eigen::Index c = 0; c < z.cols(); ++c) {
                const double m = z.col(c).maxCoeff();
                Vector e = (z.col(c).array() - m).exp();
                out.col(c) = e / e.sum();
            }
            return out;
        }
    }
    throw std::logic_error("unknown activation");
}

// dL/d(pre-activation) from dL/d(post-activation)
Matrix activation_backward(const Layer& layer, const Matrix& pre, const Matrix& post,
                           const Matrix& g) {
    switch (layer.act) {
        case Activation::none: return g;
        case Activation::leaky_relu: {
            const double s = layer.slope;
            // exactly-zero pre-activations take the negative-slope branch
            return (g.array() *
                    pre.unaryExpr([s](double v) { return v > 0.0 ? 1.0 : s; }).array())
                .matrix();
        }
        case Activation::softmax: {
            const Eigen::ArrayXXd y = post.array();
            const Eigen::ArrayXXd ga = g.array();
            const Eigen::RowVectorXd dot = (ga * y).colwise().sum();
            return (y * (ga.rowwise() - dot.array())).matrix();
        }
    }
    throw std::logic_error("unknown activation");
}

}  // namespace

Matrix forward(const Mlp& net, const Matrix& x, ForwardCache* cache) {
    if (x.rows() != net.input_dim()) throw std::runtime_error("forward: input dim mismatch");
    if (cache) {
        cache->input = x;
        cache->pre.clear();
        cache->post.clear();
    }
    Matrix a = x;
    for (const Layer& layer : net.layers) {
        Matrix z = (layer.W * a).colwise() + layer.b;
        Matrix post = apply_activation(layer, z);
        if (cache) {
            cache->pre.push_back(z);
            cache->post.push_back(post);
        }
        a = std::move(post);
    }
    if (!a.allFinite()) throw std::runtime_error("forward produced non-finite output");
    return a;
}

MlpGrads::MlpGrads(const Mlp& net) {
    for (const Layer& l : net.layers) {
        dW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
        db.push_back(Vector::Zero(l.b.size()));
    }
}

void MlpGrads::add(const MlpGrads& other, double s) {
    for (std::size_t i = 0; i < dW.size(); ++i) {
        dW[i] += s * other.dW[i];
        db[i] += s * other.db[i];
    }
}

void MlpGrads::scale(double s) {
    for (std::size_t i = 0; i < dW.size(); ++i) {
        dW[i] *= s;
        db[i] *= s;
    }
}

Matrix backward(const Mlp& net, const ForwardCache& cache, const Matrix& grad_out,
                MlpGrads* grads, bool grad_is_preactivation) {
    if (cache.pre.size() != net.layers.size())
        throw std::runtime_error("backward: cache does not match network");
    Matrix g = grad_out;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const Layer& layer = net.layers[li];
        Matrix dz;
        if (grad_is_preactivation && li == net.layers.size() - 1)
            dz = g;
        else
            dz = activation_backward(layer, cache.pre[li], cache.post[li], g);
        if (grads) {
            const Matrix& below = li == 0 ? cache.input : cache.post[li - 1];
            grads->dW[li] += dz * below.transpose();
            grads->db[li] += dz.rowwise().sum();
        }
        g = layer.W.transpose() * dz;
    }
    return g;
}

void sgd_step(Mlp& net, const MlpGrads& grads, double lr) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        net.layers[i].W -= lr * grads.dW[i];
        net.layers[i].b -= lr * grads.db[i];
    }
}

// ---------------------------------------------------------------------------
// configuration and architecture

void GanConfig::validate() const {
    if (d_z <= 0 || feature_dim <= 0 || cond_dim <= 0 || hidden <= 0)
        throw std::invalid_argument("network dims must be positive");
    if (lr <= 0.0 || pretrain_lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (batch <= 0) throw std::invalid_argument("batch must be positive");
    if (d_train_iter < 1) throw std::invalid_argument("d_train_iter must be >= 1");
    if (max_iter < 0) throw std::invalid_argument("max_iter must be >= 0");
    if (lambda_gp < 0.0 || beta < 0.0 || gamma < 0.0)
        throw std::invalid_argument("loss coefficients must be >= 0");
    if (leaky_slope <= 0.0 || leaky_slope >= 1.0)
        throw std::invalid_argument("leaky slope magnitude must lie in (0, 1)");
    if (pretrain_epochs < 0) throw std::invalid_argument("pretrain_epochs must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (eval_per_class < 1) throw std::invalid_argument("eval_per_class must be >= 1");
}

void init_mlp_params(Mlp& net, Rng& rng) {
    for (Layer& l : net.layers) {
        const double fan_in = static_cast<double>(l.W.cols());
        const double std_dev = l.act == Activation::leaky_relu ? std::sqrt(2.0 / fan_in)
                                                               : std::sqrt(1.0 / fan_in);
        for (Eigen::Index r = 0; r < l.W.rows(); ++r)
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = rng.normal() * std_dev;
        l.b.setZero();
    }
}

namespace {

Mlp make_two_layer(int in, int hidden, int out, double slope, Activation top) {
    Mlp net;
    net.layers.push_back({Matrix::Zero(hidden, in), Vector::Zero(hidden),
                          Activation::leaky_relu, slope});
    net.layers.push_back({Matrix::Zero(out, hidden), Vector::Zero(out), top, slope});
    return net;
}

Mlp make_one_layer(int in, int out, Activation top, double slope) {
    Mlp net;
    net.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out), top, slope});
    return net;
}

struct GanShapes {
    Mlp generator, discriminator, classifier, reconstructor;
};

GanShapes make_shapes(const GanConfig& cfg, int n_classes) {
    GanShapes s;
    s.generator = make_two_layer(cfg.d_z + cfg.cond_dim, cfg.hidden, cfg.feature_dim,
                                 cfg.leaky_slope, Activation::none);
    s.discriminator =
        make_two_layer(cfg.feature_dim + cfg.cond_dim, cfg.hidden, 1, cfg.leaky_slope,
                       Activation::none);
    s.classifier =
        make_one_layer(cfg.feature_dim, n_classes, Activation::softmax, cfg.leaky_slope);
    s.reconstructor = make_two_layer(cfg.feature_dim, cfg.hidden, cfg.cond_dim,
                                     cfg.leaky_slope, Activation::none);
    return s;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

}  // namespace

Matrix synth_cond_table(int n_classes, int cond_dim, std::uint64_t seed) {
    if (n_classes <= 0 || cond_dim <= 0)
        throw std::invalid_argument("condition table needs positive dims");
    Rng rng = Rng::substream(seed, "featgen.cond");
    Matrix table(cond_dim, n_classes);
    for (int c = 0; c < n_classes; ++c) {
        double norm = 0.0;
        do {
            for (int d = 0; d < cond_dim; ++d) table(d, c) = rng.normal();
            norm = table.col(c).norm();
        } while (norm < 1e-9);
        table.col(c) /= norm;
    }
    return table;
}

Matrix cond_table_from_store(const FeatureStore& store, int n_classes) {
    Matrix table(store.dim, n_classes);
    for (ClassId c = 0; c < n_classes; ++c) {
        auto it = store.rows.find(static_cast<std::uint64_t>(c));
        if (it == store.rows.end())
            throw std::runtime_error("condition store misses class " + std::to_string(c));
        for (std::uint32_t d = 0; d < store.dim; ++d)
            table(d, c) = static_cast<double>(it->second.vec[d]);
        if (table.col(c).norm() == 0.0)
            throw std::runtime_error("zero condition vector for class " + std::to_string(c));
    }
    return table;
}

// ---------------------------------------------------------------------------
// losses

double gp_penalty(const Mlp& critic, const Matrix& x_hat, const Matrix& cond,
                  MlpGrads* grads) {
    if (critic.layers.size() != 2 || critic.layers[0].act != Activation::leaky_relu ||
        critic.layers[1].act != Activation::none || critic.output_dim() != 1)
        throw std::runtime_error("penalty path expects an affine-LeakyReLU-affine critic");
    const Eigen::Index f = x_hat.rows();
    const Eigen::Index batch = x_hat.cols();
    if (cond.cols() != batch) throw std::runtime_error("penalty: cond batch mismatch");

    const Layer& l0 = critic.layers[0];
    const Layer& l1 = critic.layers[1];
    const Matrix u = vstack(x_hat, cond);
    const Matrix h = (l0.W * u).colwise() + l0.b;
    const double s = l0.slope;
    const Matrix mask = h.unaryExpr([s](double v) { return v > 0.0 ? 1.0 : s; });
    const Vector w2 = l1.W.transpose();  // hidden x 1
    // r_i = mask_i * w2 elementwise; the critic's input gradient for sample
    // i restricted to the feature block is A_x^T r_i with A_x = W1[:, :f]
    const Matrix r = (mask.array().colwise() * w2.array()).matrix();
    const Matrix a_x = l0.W.leftCols(f);
    const Matrix gx = a_x.transpose() * r;  // f x batch

    double penalty = 0.0;
    Matrix q;
    if (grads) q = Matrix::Zero(f, batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
        const double n = gx.col(i).norm();
        const double gap = n - 1.0;
        penalty += gap * gap;
        if (grads && n > 0.0)
            q.col(i) = (2.0 * gap / (n * static_cast<double>(batch))) * gx.col(i);
    }
    penalty /= static_cast<double>(batch);
    if (!std::isfinite(penalty)) throw std::runtime_error("non-finite gradient penalty");

    if (grads) {
        // masks are held fixed here; their derivative is zero almost
        // everywhere, so biases and the condition block get no gradient
        grads->dW[0].leftCols(f) += r * q.transpose();
        const Matrix axq = a_x * q;  // hidden x batch
        grads->dW[1] += (mask.array() * axq.array()).rowwise().sum().matrix().transpose();
    }
    return penalty;
}

CriticLoss wgan_gp_loss(const Mlp& critic, const Matrix& x_real, const Matrix& x_gen,
                        const Matrix& cond, const Vector& alpha_interp, double lambda) {
    const Eigen::Index batch = x_real.cols();
    if (x_gen.cols() != batch || cond.cols() != batch || alpha_interp.size() != batch)
        throw std::runtime_error("critic loss: batch size mismatch");
    CriticLoss out(critic);

    ForwardCache cache_real, cache_gen;
    const Matrix d_real = forward(critic, vstack(x_real, cond), &cache_real);
    const Matrix d_gen = forward(critic, vstack(x_gen, cond), &cache_gen);
    out.wasserstein = d_real.mean() - d_gen.mean();

    const double inv_b = 1.0 / static_cast<double>(batch);
    backward(critic, cache_real, Matrix::Constant(1, batch, -inv_b), &out.grads);
    backward(critic, cache_gen, Matrix::Constant(1, batch, inv_b), &out.grads);

    Matrix x_hat(x_real.rows(), batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
        const double a = alpha_interp(i);
        x_hat.col(i) = a * x_real.col(i) + (1.0 - a) * x_gen.col(i);
    }
    MlpGrads gp_grads(critic);
    out.penalty = gp_penalty(critic, x_hat, cond, &gp_grads);
    out.grads.add(gp_grads, lambda);

    out.total = -out.wasserstein + lambda * out.penalty;
    if (!std::isfinite(out.total)) throw std::runtime_error("non-finite critic loss");
    return out;
}

double cls_loss(const Mlp& classifier, const Matrix& x, const std::vector<ClassId>& labels,
                MlpGrads* param_grads, Matrix* input_grad) {
    if (classifier.layers.back().act != Activation::softmax)
        throw std::runtime_error("classifier must end in softmax");
    const Eigen::Index batch = x.cols();
    if (static_cast<Eigen::Index>(labels.size()) != batch)
        throw std::runtime_error("cls loss: label count mismatch");
    const int n_classes = classifier.output_dim();

    ForwardCache cache;
    const Matrix probs = forward(classifier, x, &cache);
    const Matrix& logits = cache.pre.back();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const ClassId y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= n_classes) throw std::runtime_error("label out of range");
        const double m = logits.col(i).maxCoeff();
        const double lse = m + std::log((logits.col(i).array() - m).exp().sum());
        loss += lse - logits(y, i);
    }
    loss /= static_cast<double>(batch);

    if (param_grads || input_grad) {
        Matrix dz = probs;
        for (Eigen::Index i = 0; i < batch; ++i)
            dz(labels[static_cast<std::size_t>(i)], i) -= 1.0;
        dz /= static_cast<double>(batch);
        Matrix dx = backward(classifier, cache, dz, param_grads, /*grad_is_preactivation=*/true);
        if (input_grad) *input_grad = std::move(dx);
    }
    return loss;
}

double recon_loss(const Mlp& reconstructor, const Matrix& x, const Matrix& target,
                  MlpGrads* param_grads, Matrix* input_grad) {
    const Eigen::Index batch = x.cols();
    if (target.cols() != batch || target.rows() != reconstructor.output_dim())
        throw std::runtime_error("recon loss: target shape mismatch");

    ForwardCache cache;
    const Matrix out = forward(reconstructor, x, &cache);
    const Matrix diff = out - target;
    double loss = 0.0;
    Matrix dout;
    if (param_grads || input_grad) dout = Matrix::Zero(diff.rows(), batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
        const double n = diff.col(i).norm();
        loss += n;
        if ((param_grads || input_grad) && n > 0.0)
            dout.col(i) = diff.col(i) / (n * static_cast<double>(batch));
    }
    loss /= static_cast<double>(batch);

    if (param_grads || input_grad) {
        Matrix dx = backward(reconstructor, cache, dout, param_grads);
        if (input_grad) *input_grad = std::move(dx);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// training

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    return order;
}

}  // namespace

Mlp pretrain_classifier(const Matrix& features, const std::vector<ClassId>& labels,
                        int n_classes, const GanConfig& cfg) {
    cfg.validate();
    const std::size_t n = static_cast<std::size_t>(features.cols());
    if (n == 0) throw std::invalid_argument("pretrain_classifier on empty data");
    Rng rng = Rng::substream(cfg.seed, "featgen.pretrain.cls");
    Mlp net = make_one_layer(static_cast<int>(features.rows()), n_classes, Activation::softmax,
                             cfg.leaky_slope);
    init_mlp_params(net, rng);
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        const auto order = epoch_order(n, rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch));
            Matrix xb(features.rows(), stop - start);
            std::vector<ClassId> yb(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                xb.col(static_cast<Eigen::Index>(i - start)) =
                    features.col(static_cast<Eigen::Index>(order[i]));
                yb[i - start] = labels[order[i]];
            }
            MlpGrads grads(net);
            cls_loss(net, xb, yb, &grads);
            sgd_step(net, grads, cfg.pretrain_lr);
        }
    }
    return net;
}

Mlp pretrain_reconstructor(const Matrix& features, const std::vector<ClassId>& labels,
                           const Matrix& cond_table, const GanConfig& cfg) {
    cfg.validate();
    const std::size_t n = static_cast<std::size_t>(features.cols());
    if (n == 0) throw std::invalid_argument("pretrain_reconstructor on empty data");
    Rng rng = Rng::substream(cfg.seed, "featgen.pretrain.recon");
    Mlp net = make_two_layer(static_cast<int>(features.rows()), cfg.hidden,
                             static_cast<int>(cond_table.rows()), cfg.leaky_slope,
                             Activation::none);
    init_mlp_params(net, rng);
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        const auto order = epoch_order(n, rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch));
            Matrix xb(features.rows(), stop - start);
            Matrix tb(cond_table.rows(), stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                xb.col(static_cast<Eigen::Index>(i - start)) =
                    features.col(static_cast<Eigen::Index>(order[i]));
                tb.col(static_cast<Eigen::Index>(i - start)) =
                    cond_table.col(labels[order[i]]);
            }
            MlpGrads grads(net);
            recon_loss(net, xb, tb, &grads);
            sgd_step(net, grads, cfg.pretrain_lr);
        }
    }
    return net;
}

GanState train_gan(const Matrix& features, const std::vector<ClassId>& labels,
                   const Matrix& cond_table, const GanConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = features.cols();
    if (n == 0) throw std::invalid_argument("train_gan on empty data");
    if (features.rows() != cfg.feature_dim)
        throw std::invalid_argument("feature dim does not match config");
    if (cond_table.rows() != cfg.cond_dim)
        throw std::invalid_argument("condition dim does not match config");
    const int n_classes = static_cast<int>(cond_table.cols());
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw std::invalid_argument("label count mismatch");
    for (ClassId y : labels)
        if (y < 0 || y >= n_classes) throw std::invalid_argument("label out of range");

    GanState state;
    state.cfg = cfg;
    state.n_classes = n_classes;
    state.cond_table = cond_table;
    state.classifier = pretrain_classifier(features, labels, n_classes, cfg);
    state.reconstructor = pretrain_reconstructor(features, labels, cond_table, cfg);

    GanShapes shapes = make_shapes(cfg, n_classes);
    state.generator = std::move(shapes.generator);
    state.discriminator = std::move(shapes.discriminator);
    {
        Rng rng_g = Rng::substream(cfg.seed, "featgen.init.g");
        Rng rng_d = Rng::substream(cfg.seed, "featgen.init.d");
        init_mlp_params(state.generator, rng_g);
        init_mlp_params(state.discriminator, rng_d);
    }

    Rng rng = Rng::substream(cfg.seed, "featgen.train");
    Rng rng_eval = Rng::substream(cfg.seed, "featgen.eval");

    // fixed evaluation batch so checkpoint scores are comparable across
    // iterations
    const int n_eval = n_classes * cfg.eval_per_class;
    std::vector<ClassId> eval_classes(static_cast<std::size_t>(n_eval));
    Matrix eval_z(cfg.d_z, n_eval);
    Matrix eval_cond(cfg.cond_dim, n_eval);
    for (int i = 0; i < n_eval; ++i) {
        const ClassId c = static_cast<ClassId>(i / cfg.eval_per_class);
        eval_classes[static_cast<std::size_t>(i)] = c;
        eval_cond.col(i) = cond_table.col(c);
        for (int d = 0; d < cfg.d_z; ++d) eval_z(d, i) = rng_eval.normal();
    }

    const int batch = cfg.batch;
    auto draw_batch = [&](Matrix& x, Matrix& s, std::vector<ClassId>& y) {
        x.resize(features.rows(), batch);
        s.resize(cfg.cond_dim, batch);
        y.resize(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            const auto idx =
                static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
            x.col(i) = features.col(idx);
            const ClassId cls = labels[static_cast<std::size_t>(idx)];
            y[static_cast<std::size_t>(i)] = cls;
            s.col(i) = cond_table.col(cls);
        }
    };
    auto draw_noise = [&](Matrix& z) {
        z.resize(cfg.d_z, batch);
        for (int i = 0; i < batch; ++i)
            for (int d = 0; d < cfg.d_z; ++d) z(d, i) = rng.normal();
    };

    Mlp best_g, best_d;
    auto evaluate_checkpoint = [&](std::int64_t iter) {
        const Matrix gen = forward(state.generator, vstack(eval_z, eval_cond));
        const Matrix probs = forward(state.classifier, gen);
        int correct = 0;
        for (int i = 0; i < n_eval; ++i) {
            Eigen::Index argmax = 0;
            probs.col(i).maxCoeff(&argmax);
            if (static_cast<ClassId>(argmax) == eval_classes[static_cast<std::size_t>(i)])
                ++correct;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(n_eval);
        if (acc > state.best_accuracy || state.best_iteration < 0) {
            state.best_accuracy = acc;
            state.best_iteration = iter;
            best_g = state.generator;
            best_d = state.discriminator;
        }
    };

    Matrix x_real, s_cond, z;
    std::vector<ClassId> y;
    for (std::int64_t iter = 1; iter <= cfg.max_iter; ++iter) {
        for (int k = 0; k < cfg.d_train_iter; ++k) {
            draw_batch(x_real, s_cond, y);
            draw_noise(z);
            const Matrix x_gen = forward(state.generator, vstack(z, s_cond));
            Vector alpha(batch);
            for (int i = 0; i < batch; ++i) alpha(i) = rng.uniform();
            CriticLoss cl(state.discriminator);
            try {
                cl = wgan_gp_loss(state.discriminator, x_real, x_gen, s_cond, alpha,
                                  cfg.lambda_gp);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error(std::string(e.what()) + " at iteration " +
                                         std::to_string(iter));
            }
            sgd_step(state.discriminator, cl.grads, cfg.lr);
        }

        draw_batch(x_real, s_cond, y);
        draw_noise(z);
        ForwardCache g_cache;
        const Matrix x_gen = forward(state.generator, vstack(z, s_cond), &g_cache);

        ForwardCache d_cache;
        const Matrix d_gen = forward(state.discriminator, vstack(x_gen, s_cond), &d_cache);
        const double inv_b = 1.0 / static_cast<double>(batch);
        const Matrix d_input_grad =
            backward(state.discriminator, d_cache, Matrix::Constant(1, batch, -inv_b));

        Matrix dx_cls, dx_rec;
        const double l_cls = cls_loss(state.classifier, x_gen, y, nullptr, &dx_cls);
        const double l_rec = recon_loss(state.reconstructor, x_gen, s_cond, nullptr, &dx_rec);
        const double g_total = -d_gen.mean() + cfg.beta * l_cls + cfg.gamma * l_rec;
        if (!std::isfinite(g_total))
            throw std::runtime_error("non-finite generator loss at iteration " +
                                     std::to_string(iter));

        const Matrix dx = d_input_grad.topRows(cfg.feature_dim) + cfg.beta * dx_cls +
                          cfg.gamma * dx_rec;
        MlpGrads g_grads(state.generator);
        backward(state.generator, g_cache, dx, &g_grads);
        sgd_step(state.generator, g_grads, cfg.lr);

        if (iter % cfg.eval_every == 0 || iter == cfg.max_iter) evaluate_checkpoint(iter);
    }

    if (state.best_iteration >= 0) {
        state.generator = std::move(best_g);
        state.discriminator = std::move(best_d);
    }
    return state;
}

Matrix generate_batch(const GanState& state, const std::vector<ClassId>& classes, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(classes.size());
    Matrix z(state.cfg.d_z, n);
    Matrix cond(state.cfg.cond_dim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const ClassId c = classes[static_cast<std::size_t>(i)];
        if (c < 0 || c >= state.n_classes)
            throw std::invalid_argument("unknown class " + std::to_string(c));
        for (int d = 0; d < state.cfg.d_z; ++d) z(d, i) = rng.normal();
        cond.col(i) = state.cond_table.col(c);
    }
    return forward(state.generator, vstack(z, cond));
}

Vector generate(const GanState& state, ClassId cls, Rng& rng) {
    return generate_batch(state, {cls}, rng).col(0);
}

void store_to_matrix(const FeatureStore& store, Matrix& features, std::vector<ClassId>& labels,
                     std::vector<std::uint64_t>* ids) {
    features.resize(store.dim, static_cast<Eigen::Index>(store.rows.size()));
    labels.clear();
    if (ids) ids->clear();
    Eigen::Index col = 0;
    for (const auto& [id, row] : store.rows) {
        for (std::uint32_t d = 0; d < store.dim; ++d)
            features(d, col) = static_cast<double>(row.vec[d]);
        labels.push_back(row.cls);
        if (ids) ids->push_back(id);
        ++col;
    }
}

// ---------------------------------------------------------------------------
// checkpoint I/O

namespace {

constexpr char kGanMagic[4] = {'T', 'F', 'G', 'N'};
constexpr std::uint32_t kGanVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_net(std::ofstream& out, const Mlp& net) {
    for (const Layer& l : net.layers) {
        for (Eigen::Index r = 0; r < l.W.rows(); ++r)
            for (Eigen::Index c = 0; c < l.W.cols(); ++c)
                put<float>(out, static_cast<float>(l.W(r, c)));
        for (Eigen::Index r = 0; r < l.b.size(); ++r)
            put<float>(out, static_cast<float>(l.b(r)));
    }
}

void get_net(std::ifstream& in, const std::string& path, Mlp& net) {
    for (Layer& l : net.layers) {
        for (Eigen::Index r = 0; r < l.W.rows(); ++r)
            for (Eigen::Index c = 0; c < l.W.cols(); ++c)
                l.W(r, c) = static_cast<double>(get<float>(in, path));
        for (Eigen::Index r = 0; r < l.b.size(); ++r)
            l.b(r) = static_cast<double>(get<float>(in, path));
    }
}

void put_config(std::ofstream& out, const GanConfig& cfg) {
    put<std::int32_t>(out, cfg.d_z);
    put<std::int32_t>(out, cfg.feature_dim);
    put<std::int32_t>(out, cfg.cond_dim);
    put<std::int32_t>(out, cfg.hidden);
    put<double>(out, cfg.lr);
    put<std::int32_t>(out, cfg.batch);
    put<std::int32_t>(out, cfg.d_train_iter);
    put<std::int64_t>(out, cfg.max_iter);
    put<double>(out, cfg.lambda_gp);
    put<double>(out, cfg.beta);
    put<double>(out, cfg.gamma);
    put<double>(out, cfg.leaky_slope);
    put<std::uint64_t>(out, cfg.seed);
    put<std::int32_t>(out, cfg.pretrain_epochs);
    put<double>(out, cfg.pretrain_lr);
    put<std::int32_t>(out, cfg.eval_every);
    put<std::int32_t>(out, cfg.eval_per_class);
}

GanConfig get_config(std::ifstream& in, const std::string& path) {
    GanConfig cfg;
    cfg.d_z = get<std::int32_t>(in, path);
    cfg.feature_dim = get<std::int32_t>(in, path);
    cfg.cond_dim = get<std::int32_t>(in, path);
    cfg.hidden = get<std::int32_t>(in, path);
    cfg.lr = get<double>(in, path);
    cfg.batch = get<std::int32_t>(in, path);
    cfg.d_train_iter = get<std::int32_t>(in, path);
    cfg.max_iter = get<std::int64_t>(in, path);
    cfg.lambda_gp = get<double>(in, path);
    cfg.beta = get<double>(in, path);
    cfg.gamma = get<double>(in, path);
    cfg.leaky_slope = get<double>(in, path);
    cfg.seed = get<std::uint64_t>(in, path);
    cfg.pretrain_epochs = get<std::int32_t>(in, path);
    cfg.pretrain_lr = get<double>(in, path);
    cfg.eval_every = get<std::int32_t>(in, path);
    cfg.eval_per_class = get<std::int32_t>(in, path);
    return cfg;
}

}  // namespace

void save_gan(const GanState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kGanMagic, 4);
    put<std::uint32_t>(out, kGanVersion);
    put_config(out, state.cfg);
    put<std::int32_t>(out, state.n_classes);
    put_net(out, state.generator);
    put_net(out, state.discriminator);
    put_net(out, state.classifier);
    put_net(out, state.reconstructor);
    for (Eigen::Index c = 0; c < state.cond_table.cols(); ++c)
        for (Eigen::Index d = 0; d < state.cond_table.rows(); ++d)
            put<float>(out, static_cast<float>(state.cond_table(d, c)));
}

GanState load_gan(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kGanMagic, 4) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    const auto version = get<std::uint32_t>(in, path);
    if (version != kGanVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    GanState state;
    state.cfg = get_config(in, path);
    state.cfg.validate();
    state.n_classes = get<std::int32_t>(in, path);
    if (state.n_classes <= 0) throw std::runtime_error("checkpoint has no classes");

    GanShapes shapes = make_shapes(state.cfg, state.n_classes);
    state.generator = std::move(shapes.generator);
    state.discriminator = std::move(shapes.discriminator);
    state.classifier = std::move(shapes.classifier);
    state.reconstructor = std::move(shapes.reconstructor);
    get_net(in, path, state.generator);
    get_net(in, path, state.discriminator);
    get_net(in, path, state.classifier);
    get_net(in, path, state.reconstructor);
    state.cond_table.resize(state.cfg.cond_dim, state.n_classes);
    for (Eigen::Index c = 0; c < state.n_classes; ++c)
        for (Eigen::Index d = 0; d < state.cfg.cond_dim; ++d)
            state.cond_table(d, c) = static_cast<double>(get<float>(in, path));
    return state;
}

}  // namespace tforge
