// Microbenchmarks for the hot paths: dense net passes, the critic
// objective with its second-order penalty term, recall matching, and
// sampler draws.

#include <benchmark/benchmark.h>

#include <tforge/featgen.hpp>
#include <tforge/metrics.hpp>
#include <tforge/mp_sampler.hpp>
#include <tforge/rng.hpp>

namespace {

using namespace tforge;

Mlp bench_net(int in, int hidden, int out, std::uint64_t seed) {
    Mlp net;
    net.layers.push_back({Matrix::Zero(hidden, in), Vector::Zero(hidden),
                          Activation::leaky_relu, 0.2});
    net.layers.push_back({Matrix::Zero(out, hidden), Vector::Zero(out), Activation::none, 0.2});
    Rng rng(seed);
    init_mlp_params(net, rng);
    return net;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
    return m;
}

void bm_forward_backward(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    Mlp net = bench_net(dim, 4 * dim, dim, 7);
    Rng rng(11);
    const Matrix x = random_matrix(dim, 128, rng);
    const Matrix gout = random_matrix(dim, 128, rng);
    for (auto _ : state) {
        ForwardCache cache;
        forward(net, x, &cache);
        MlpGrads grads(net);
        benchmark::DoNotOptimize(backward(net, cache, gout, &grads));
    }
}
BENCHMARK(bm_forward_backward)->Arg(64)->Arg(256);

void bm_critic_objective(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    const int cond = dim / 2;
    Mlp critic = bench_net(dim + cond, 4 * dim, 1, 13);
    Rng rng(17);
    const Matrix x_real = random_matrix(dim, 64, rng);
    const Matrix x_gen = random_matrix(dim, 64, rng);
    const Matrix c = random_matrix(cond, 64, rng);
    Vector alpha(64);
    for (Eigen::Index i = 0; i < 64; ++i) alpha(i) = rng.uniform();
    for (auto _ : state) {
        benchmark::DoNotOptimize(wgan_gp_loss(critic, x_real, x_gen, c, alpha, 10.0));
    }
}
BENCHMARK(bm_critic_objective)->Arg(16)->Arg(64);

void bm_recall_matching(benchmark::State& state) {
    Rng rng(23);
    Dataset gt;
    gt.label_space.object_classes = {"a", "b", "c"};
    gt.label_space.predicate_classes = {"__background__", "p1", "p2", "p3"};
    std::vector<PredTriplet> preds;
    TripletId tid = 0;
    for (ImageId img = 0; img < 50; ++img) {
        for (int t = 0; t < 8; ++t) {
            const double x = rng.uniform(), y = rng.uniform();
            BBox sb{x, y, x + 0.2, y + 0.2};
            BBox ob{x + 0.1, y, x + 0.3, y + 0.2};
            Entity s{static_cast<ClassId>(rng.below(3)), sb};
            Entity o{static_cast<ClassId>(rng.below(3)), ob};
            const ClassId p = static_cast<ClassId>(1 + rng.below(3));
            TripletRecord rec{tid++, img, s, o, SoftLabel::one_hot(p)};
            gt.images[img].push_back(rec);
            preds.push_back({img, s, o, p, rng.uniform()});
            preds.push_back({img, o, s, p, rng.uniform()});
        }
    }
    for (int p = 1; p <= 3; ++p) gt.label_space.groups[p] = Group::head;
    for (auto _ : state) benchmark::DoNotOptimize(recall_at_k(preds, gt, 10));
}
BENCHMARK(bm_recall_matching);

void bm_sampler_draw(benchmark::State& state) {
    SamplerTable table;
    SamplerEntry e;
    for (int c = 0; c < 64; ++c) {
        e.candidates.push_back(c);
        e.difficulty.push_back(static_cast<double>(c % 7));
    }
    auto [prob, fallback] = probabilities(e.difficulty);
    e.probabilities = prob;
    e.uniform_fallback = fallback;
    table.entries[{0, 1}] = e;
    Rng rng(31);
    for (auto _ : state) benchmark::DoNotOptimize(draw(table, 0, 1, rng));
}
BENCHMARK(bm_sampler_draw);

}  // namespace

BENCHMARK_MAIN();
