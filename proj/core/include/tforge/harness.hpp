#pragma once
// Desk-scale synthetic experiment: generate a long-tailed relational toy
// world with label confusion, train a biased relation head to produce the
// prediction dump, run the transfer/augmentation pipeline variants, and
// compare their evaluation reports across seeds.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tforge/featgen.hpp"
#include "tforge/fsta.hpp"
#include "tforge/ietrans.hpp"
#include "tforge/ingest.hpp"
#include "tforge/metrics.hpp"
#include "tforge/mp_sampler.hpp"
#include "tforge/soft_transfer.hpp"
#include "tforge/types.hpp"

namespace tforge {

struct ConfusionPair {
    ClassId general = 0;      // frequent predicate that absorbs mislabels
    ClassId informative = 0;  // rarer predicate whose instances are mislabeled
    double rate = 0.0;        // probability an informative instance is relabeled
};

struct SynthSpec {
    int n_object_classes = 12;
    int n_predicates = 9;        // non-background; class 0 stays no-relation
    double tail_exponent = 1.4;  // latent predicate frequency ~ 1/rank^exponent
    std::vector<ConfusionPair> confusions;
    int pairs_per_predicate = 4;  // allowed (subject, object) class pairs
    int feature_dim = 16;
    double feature_noise = 0.35;  // sigma of the per-class feature Gaussians
    double box_noise = 0.04;      // jitter on the per-predicate geometry pattern
    int n_train_triplets = 5000;
    int n_test_per_predicate = 60;
    int triplets_per_image = 3;
    int negatives_per_image = 2;
    std::uint64_t seed = 1;  // world seed; run seeds are layered on top

    void validate() const;
};

// The default toy world: three head->tail confusion pairs at rate 0.5.
SynthSpec default_synth_spec();

// Instance feature rows are keyed 2*triplet_id (subject) and
// 2*triplet_id+1 (object). Negative pairs borrow instances from other
// triplets of the same image, so their features already exist.
struct SynthWorld {
    SynthSpec spec;
    Dataset train;  // observed (confused) labels
    Dataset test;   // latent labels, balanced across predicates
    FeatureStore train_features;
    FeatureStore test_features;
    std::map<TripletId, ClassId> latent_train;  // pre-confusion predicate
    // negative_id -> (subject row id, object row id), per split
    std::map<std::int64_t, std::pair<std::uint64_t, std::uint64_t>> train_negative_rows;
    std::map<std::int64_t, std::pair<std::uint64_t, std::uint64_t>> test_negative_rows;
    Matrix pred_embed;  // feature_dim x 8, fixed map from pair geometry
};

// 8 scale-free numbers describing an ordered box pair (offsets, log size
// ratios, aspects, IoU, center distance).
Vector geometry_descriptor(const BBox& s, const BBox& o);

SynthWorld synth_generate(const SynthSpec& spec);

struct HarnessConfig {
    double k_i = 70.0;
    double k_e = 100.0;
    // Sits between the synthetic head's cross-class leak (~0.03) and the
    // mass a genuinely confused pair splits off (~0.1); the library-wide
    // default stays at 0.1 for real dumps.
    double tau_aff = 0.06;
    double k_s = 70.0;  // the larger published setting; softening is clearer at toy scale
    QMode q_mode = QMode::one_minus_minmax;
    FstaConfig fsta;  // fsta.alpha weights the artificial-triplet loss
    GanConfig gan;    // desk-scale defaults from default_harness_config()
    int epochs = 12;
    double lr = 0.25;
    int batch_images = 8;
    int head_hidden = 64;
    std::vector<int> eval_ks = {3, 5};
    bool reweight = false;
    int resample_n = 1;  // extra copies per qualifying image
    bool resample_requires_multiple = false;  // true reads "more than one" literally

    void validate() const;
};

// Desk-scale GAN dims wired to the default SynthSpec.
HarnessConfig default_harness_config();

enum class Variant { raw, ietrans, soft, fsta, full, resample };
Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

// Relation head: concat(f_s, f_p, f_o) -> affine + LeakyReLU -> affine +
// softmax over predicates (background included).
Mlp make_relation_head(int feature_dim, int hidden, int n_predicates, std::uint64_t seed);

// Train the head on raw labels and record its post-softmax outputs on
// every training triplet and negative pair.
PredictionDump produce_biased_dump(const SynthWorld& world, const HarnessConfig& cfg,
                                   std::uint64_t seed);

// Per-seed shared artifacts; the generator is trained on first use.
struct PreparedRun {
    SynthWorld world;
    PredictionDump dump;
    ParentChildMap parent_child;
    std::vector<TransferDecision> decisions;
    std::vector<TripletRecord> externals;
    SamplerTable sampler;
    GanState gan;
    bool gan_ready = false;
    std::uint64_t seed = 0;
};

PreparedRun prepare_run(const SynthSpec& spec, const HarnessConfig& cfg, std::uint64_t seed);

// A variant's training data plus the id indirection needed to find feature
// rows for externally transferred and duplicated triplets.
struct VariantData {
    Dataset data;
    std::map<TripletId, TripletId> origin;  // duplicated id -> source id
    std::map<TripletId, std::pair<std::uint64_t, std::uint64_t>> extra_rows;
};

VariantData variant_dataset(const PreparedRun& prep, Variant v, const HarnessConfig& cfg);

// Duplicate every image holding at least min_tail tail-group triplets
// n_copies extra times, remapping triplet and image ids above the existing
// maxima. Returns the duplicate->source id map through *origin.
Dataset resample_tail_images(const Dataset& data, int n_copies, int min_tail,
                             std::map<TripletId, TripletId>* origin);

struct TrainOutcome {
    Mlp head;
    EvalReport report;
    std::vector<double> epoch_losses;
};

// Soft-label cross-entropy training with optional inverse-frequency
// reweighting of the main loss and the alpha-weighted artificial-triplet
// loss per step. The training RNG substream is independent of the variant
// so that disabled machinery leaves results bit-identical.
TrainOutcome train_unbiased(PreparedRun& prep, Variant v, const HarnessConfig& cfg);

struct MetricStats {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation, n-1
};
MetricStats mean_sd(const std::vector<double>& values);

struct MatrixResult {
    std::vector<Variant> variants;
    std::vector<std::uint64_t> seeds;
    std::map<std::string, std::vector<EvalReport>> reports;  // variant name -> per seed
    std::vector<int> k_values;
};

MatrixResult run_matrix(const SynthSpec& spec, const std::vector<Variant>& variants,
                        const std::vector<std::uint64_t>& seeds, const HarnessConfig& cfg);

void save_matrix_json(const MatrixResult& result, const std::string& path);
void save_matrix_markdown(const MatrixResult& result, const std::string& path);

}  // namespace tforge
