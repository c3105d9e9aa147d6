#pragma once
// Conditional feature generator: a WGAN with gradient penalty plus frozen
// classifier and reconstructor regularizers, trained with hand-written
// forward/backward passes on small dense networks. All math runs at f64;
// checkpoints store f32 tensors. Networks are capped at two affine layers,
// which keeps the analytic second-order gradient-penalty path tractable.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "tforge/ingest.hpp"
#include "tforge/rng.hpp"
#include "tforge/types.hpp"

namespace tforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { none, leaky_relu, softmax };

struct Layer {
    Matrix W;  // out x in
    Vector b;  // out
    Activation act = Activation::none;
    double slope = 0.2;  // leaky region slope magnitude, used for x < 0
};

struct Mlp {
    std::vector<Layer> layers;

    int input_dim() const;
    int output_dim() const;
    std::size_t parameter_count() const;
    void validate() const;  // chained dims, finite parameters, <= 2 affine layers
};

// Columns are samples throughout.
struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // per layer, before activation
    std::vector<Matrix> post;  // per layer, after activation
};

Matrix forward(const Mlp& net, const Matrix& x, ForwardCache* cache = nullptr);

struct MlpGrads {
    std::vector<Matrix> dW;
    std::vector<Vector> db;

    explicit MlpGrads(const Mlp& net);
    void add(const MlpGrads& other, double scale = 1.0);
    void scale(double s);
};

// Reverse pass from dL/d(output). With grad_is_preactivation the top
// layer's activation derivative is skipped (the caller already folded it
// in, e.g. fused softmax cross-entropy). Returns dL/d(input); param
// gradients accumulate into *grads when non-null.
Matrix backward(const Mlp& net, const ForwardCache& cache, const Matrix& grad_out,
                MlpGrads* grads = nullptr, bool grad_is_preactivation = false);

void sgd_step(Mlp& net, const MlpGrads& grads, double lr);

// Seeded fan-in-scaled Gaussian weights, zero biases. Draw order is
// row-major per layer, so a given seed always yields the same parameters.
void init_mlp_params(Mlp& net, Rng& rng);

struct GanConfig {
    int d_z = 1024;          // noise dim
    int feature_dim = 1024;
    int cond_dim = 512;
    int hidden = 4096;
    double lr = 1e-4;
    int batch = 128;
    int d_train_iter = 5;    // critic steps per generator step
    std::int64_t max_iter = 55000;  // generator steps
    double lambda_gp = 10.0;
    double beta = 0.1;   // classifier-loss weight
    double gamma = 0.1;  // reconstruction-loss weight
    double leaky_slope = 0.2;
    std::uint64_t seed = 0;
    // plumbing beyond the published table
    int pretrain_epochs = 100;
    double pretrain_lr = 0.1;
    int eval_every = 250;     // checkpoint-selection cadence, generator steps
    int eval_per_class = 16;  // generated samples per class per evaluation

    void validate() const;
};

struct GanState {
    GanConfig cfg;
    int n_classes = 0;
    Mlp generator;
    Mlp discriminator;
    Mlp classifier;
    Mlp reconstructor;
    Matrix cond_table;  // cond_dim x n_classes
    std::int64_t best_iteration = -1;  // generator step of the kept checkpoint
    double best_accuracy = 0.0;
};

// Fixed per-class condition vectors: seeded Gaussian draws normalized to
// unit length. Stands in for external text embeddings.
Matrix synth_cond_table(int n_classes, int cond_dim, std::uint64_t seed);
Matrix cond_table_from_store(const FeatureStore& store, int n_classes);

// Critic objective on one batch. total = -(E[D(real)] - E[D(gen)]) +
// lambda * E[(||grad_xhat D||_2 - 1)^2], the quantity gradient descent
// minimizes. x_hat_i = alpha_i * x_real_i + (1 - alpha_i) * x_gen_i. The
// penalty differentiates the critic's input-gradient norm with the
// LeakyReLU masks held fixed, exact almost everywhere.
struct CriticLoss {
    double wasserstein = 0.0;  // E[D(real)] - E[D(gen)]
    double penalty = 0.0;      // mean squared gradient-norm gap
    double total = 0.0;
    MlpGrads grads;

    explicit CriticLoss(const Mlp& critic) : grads(critic) {}
};
CriticLoss wgan_gp_loss(const Mlp& critic, const Matrix& x_real, const Matrix& x_gen,
                        const Matrix& cond, const Vector& alpha_interp, double lambda);

// Gradient-penalty term alone (exposed for gradient checks).
double gp_penalty(const Mlp& critic, const Matrix& x_hat, const Matrix& cond,
                  MlpGrads* grads);

// Mean negative log-likelihood under a softmax classifier. Fills parameter
// and/or input gradients when requested.
double cls_loss(const Mlp& classifier, const Matrix& x, const std::vector<ClassId>& labels,
                MlpGrads* param_grads = nullptr, Matrix* input_grad = nullptr);

// Mean (non-squared) L2 distance between reconstructions and targets.
double recon_loss(const Mlp& reconstructor, const Matrix& x, const Matrix& target,
                  MlpGrads* param_grads = nullptr, Matrix* input_grad = nullptr);

Mlp pretrain_classifier(const Matrix& features, const std::vector<ClassId>& labels,
                        int n_classes, const GanConfig& cfg);
Mlp pretrain_reconstructor(const Matrix& features, const std::vector<ClassId>& labels,
                           const Matrix& cond_table, const GanConfig& cfg);

// Full alternating schedule: d_train_iter critic updates then one
// generator update per iteration, plain SGD, periodic checkpoint selection
// by frozen-classifier accuracy on freshly generated features (ties keep
// the earlier iteration). Non-finite loss aborts with the iteration number.
GanState train_gan(const Matrix& features, const std::vector<ClassId>& labels,
                   const Matrix& cond_table, const GanConfig& cfg);

Vector generate(const GanState& state, ClassId cls, Rng& rng);
Matrix generate_batch(const GanState& state, const std::vector<ClassId>& classes, Rng& rng);

// Matrix view of a feature store. Returns features (dim x n), class labels
// and row ids in ascending id order.
void store_to_matrix(const FeatureStore& store, Matrix& features, std::vector<ClassId>& labels,
                     std::vector<std::uint64_t>* ids = nullptr);

// Checkpoint: magic "TFGN", u32 version, binary config echo, u32 class
// count, then f32 tensors in declaration order (generator, discriminator,
// classifier, reconstructor, condition table).
void save_gan(const GanState& state, const std::string& path);
GanState load_gan(const std::string& path);

}  // namespace tforge
