// tforge: one binary for the whole pipeline. Subcommands cover label
// transfer, soft transfer, sampler construction, augmentation planning,
// generator training, feature synthesis, evaluation, and the synthetic
// end-to-end experiment. Every output gets a manifest with the resolved
// config and input hashes; identical config + seed reruns are
// byte-identical.

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <tforge/config.hpp>
#include <tforge/featgen.hpp>
#include <tforge/fsta.hpp>
#include <tforge/harness.hpp>
#include <tforge/ietrans.hpp>
#include <tforge/ingest.hpp>
#include <tforge/metrics.hpp>
#include <tforge/mp_sampler.hpp>
#include <tforge/rng.hpp>
#include <tforge/soft_transfer.hpp>

namespace {

using namespace tforge;

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<int> out;
    for (const std::string& tok : split_csv(s)) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stoi(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::invalid_argument(what + ": bad integer '" + tok + "'");
        }
    }
    if (out.empty()) throw std::invalid_argument(what + ": empty list");
    return out;
}

// --config and TF_SEED are resolved before CLI11 binds flag defaults, so
// explicitly passed flags override both.
struct BaseSettings {
    RunConfig cfg;
    std::string config_path;
};

BaseSettings preload(int argc, char** argv) {
    BaseSettings base;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) base.config_path = argv[i + 1];
        else if (a.rfind("--config=", 0) == 0) base.config_path = a.substr(9);
    }
    if (!base.config_path.empty()) base.cfg = RunConfig::from_file(load_config(base.config_path));
    if (const char* env = std::getenv("TF_SEED")) {
        try {
            std::size_t pos = 0;
            base.cfg.seed = std::stoull(env, &pos);
            if (pos != std::string(env).size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string("TF_SEED: bad value '") + env + "'");
        }
    }
    return base;
}

int guarded(const std::string& name, const std::function<void()>& fn) {
    try {
        fn();
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return 1;
    } catch (const std::logic_error& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return 2;
    }
}

// GT instances double as proposals in file-driven planning; the toy
// pipeline has no detector.
std::vector<PlanImage> plan_images_from(const Dataset& data) {
    std::vector<PlanImage> out;
    for (const auto& [img, recs] : data.images) {
        PlanImage pi;
        pi.image_id = img;
        pi.ground_truth = recs;
        std::set<std::pair<ClassId, BBox>> seen;
        for (const TripletRecord& r : recs) {
            if (seen.insert({r.subject.cls, r.subject.box}).second)
                pi.proposals.push_back({r.subject.cls, r.subject.box});
            if (seen.insert({r.object.cls, r.object.box}).second)
                pi.proposals.push_back({r.object.cls, r.object.box});
        }
        out.push_back(std::move(pi));
    }
    return out;
}

SynthSpec spec_from_file(const ConfigFile& f) {
    SynthSpec s = default_synth_spec();
    s.n_object_classes = static_cast<int>(f.get_int("synth.objects", s.n_object_classes));
    s.n_predicates = static_cast<int>(f.get_int("synth.predicates", s.n_predicates));
    s.tail_exponent = f.get_double("synth.tail_exponent", s.tail_exponent);
    s.pairs_per_predicate =
        static_cast<int>(f.get_int("synth.pairs_per_predicate", s.pairs_per_predicate));
    s.feature_dim = static_cast<int>(f.get_int("synth.feature_dim", s.feature_dim));
    s.feature_noise = f.get_double("synth.feature_noise", s.feature_noise);
    s.box_noise = f.get_double("synth.box_noise", s.box_noise);
    s.n_train_triplets = static_cast<int>(f.get_int("synth.train_triplets", s.n_train_triplets));
    s.n_test_per_predicate =
        static_cast<int>(f.get_int("synth.test_per_predicate", s.n_test_per_predicate));
    s.triplets_per_image =
        static_cast<int>(f.get_int("synth.triplets_per_image", s.triplets_per_image));
    s.negatives_per_image =
        static_cast<int>(f.get_int("synth.negatives_per_image", s.negatives_per_image));
    s.seed = f.get_uint("synth.seed", s.seed);
    auto it = f.lists.find("synth.confusions");
    if (it != f.lists.end()) {
        s.confusions.clear();
        for (const std::string& entry : it->second) {
            // "general:informative:rate"
            const auto parts = [&] {
                std::vector<std::string> p;
                std::istringstream in(entry);
                std::string tok;
                while (std::getline(in, tok, ':')) p.push_back(tok);
                return p;
            }();
            if (parts.size() != 3)
                throw std::invalid_argument("synth.confusions entry must be g:q:rate, got " +
                                            entry);
            s.confusions.push_back(
                {std::stoi(parts[0]), std::stoi(parts[1]), std::stod(parts[2])});
        }
    }
    return s;
}

HarnessConfig harness_from_file(const ConfigFile& f) {
    HarnessConfig h = default_harness_config();
    h.k_i = f.get_double("harness.k_i", h.k_i);
    h.k_e = f.get_double("harness.k_e", h.k_e);
    h.tau_aff = f.get_double("harness.tau_aff", h.tau_aff);
    h.k_s = f.get_double("harness.k_s", h.k_s);
    h.q_mode = parse_q_mode(f.get_string("harness.q_mode", q_mode_name(h.q_mode)));
    h.fsta.n_t = static_cast<int>(f.get_int("harness.fsta.n_t", h.fsta.n_t));
    h.fsta.s_iou = f.get_double("harness.fsta.s_iou", h.fsta.s_iou);
    h.fsta.u_h = f.get_double("harness.fsta.u_h", h.fsta.u_h);
    h.fsta.alpha = f.get_double("harness.fsta.alpha", h.fsta.alpha);
    h.fsta.tail_only_s_po = f.get_bool("harness.fsta.tail_only", h.fsta.tail_only_s_po);
    h.gan.d_z = static_cast<int>(f.get_int("harness.gan.d_z", h.gan.d_z));
    h.gan.cond_dim = static_cast<int>(f.get_int("harness.gan.cond_dim", h.gan.cond_dim));
    h.gan.hidden = static_cast<int>(f.get_int("harness.gan.hidden", h.gan.hidden));
    h.gan.lr = f.get_double("harness.gan.lr", h.gan.lr);
    h.gan.batch = static_cast<int>(f.get_int("harness.gan.batch", h.gan.batch));
    h.gan.d_train_iter =
        static_cast<int>(f.get_int("harness.gan.d_train_iter", h.gan.d_train_iter));
    h.gan.max_iter = f.get_int("harness.gan.max_iter", h.gan.max_iter);
    h.gan.lambda_gp = f.get_double("harness.gan.lambda_gp", h.gan.lambda_gp);
    h.gan.pretrain_epochs =
        static_cast<int>(f.get_int("harness.gan.pretrain_epochs", h.gan.pretrain_epochs));
    h.gan.eval_every = static_cast<int>(f.get_int("harness.gan.eval_every", h.gan.eval_every));
    h.epochs = static_cast<int>(f.get_int("harness.epochs", h.epochs));
    h.lr = f.get_double("harness.lr", h.lr);
    h.batch_images = static_cast<int>(f.get_int("harness.batch_images", h.batch_images));
    h.head_hidden = static_cast<int>(f.get_int("harness.head_hidden", h.head_hidden));
    h.eval_ks = f.get_int_list("harness.k", h.eval_ks);
    h.reweight = f.get_bool("harness.reweight", h.reweight);
    h.resample_n = static_cast<int>(f.get_int("harness.resample_n", h.resample_n));
    h.resample_requires_multiple =
        f.get_bool("harness.resample_strict", h.resample_requires_multiple);
    return h;
}

}  // namespace

int main(int argc, char** argv) {
    BaseSettings base;
    try {
        base = preload(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "tforge: " << e.what() << "\n";
        return 1;
    }
    RunConfig& cfg = base.cfg;

    CLI::App app{"relational-triplet dataset enhancement toolkit"};
    app.require_subcommand(1);
    std::string config_path = base.config_path;
    app.add_option("--config", config_path, "sectioned key=value config file (applied first)");

    // transfer -------------------------------------------------------------
    auto* cmd_transfer = app.add_subcommand(
        "transfer", "internal + external label transfer from a biased prediction dump");
    std::string tr_ann = cfg.annotations, tr_pred = cfg.predictions, tr_out = cfg.output;
    std::string tr_decisions;
    double tr_ki = cfg.k_i, tr_ke = cfg.k_e, tr_tau = cfg.tau_aff;
    cmd_transfer->add_option("--annotations", tr_ann, "annotation JSONL")
        ->required(tr_ann.empty());
    cmd_transfer->add_option("--predictions", tr_pred, "biased-model prediction dump JSONL")
        ->required(tr_pred.empty());
    cmd_transfer->add_option("--out", tr_out, "enhanced annotation JSONL")->required(tr_out.empty());
    cmd_transfer->add_option("--decisions", tr_decisions, "also write transfer decisions JSONL");
    cmd_transfer->add_option("--k-i", tr_ki, "internal transfer percentile")
        ->capture_default_str();
    cmd_transfer->add_option("--k-e", tr_ke, "external transfer percentile")
        ->capture_default_str();
    cmd_transfer->add_option("--tau-aff", tr_tau, "parent-child affinity threshold")
        ->capture_default_str();

    // soft-transfer --------------------------------------------------------
    auto* cmd_soft = app.add_subcommand(
        "soft-transfer", "transfer with the least reliable decisions softened to two-class labels");
    std::string st_ann = cfg.annotations, st_pred = cfg.predictions, st_out = cfg.output;
    std::string st_decisions;
    double st_ki = cfg.k_i, st_ke = cfg.k_e, st_tau = cfg.tau_aff, st_ks = cfg.k_s;
    std::string st_qmode = q_mode_name(cfg.q_mode);
    cmd_soft->add_option("--annotations", st_ann, "annotation JSONL")->required(st_ann.empty());
    cmd_soft->add_option("--predictions", st_pred, "biased-model prediction dump JSONL")
        ->required(st_pred.empty());
    cmd_soft->add_option("--out", st_out, "enhanced annotation JSONL")->required(st_out.empty());
    cmd_soft->add_option("--decisions", st_decisions,
                         "reuse decisions from this JSONL instead of recomputing");
    cmd_soft->add_option("--k-i", st_ki, "internal transfer percentile")->capture_default_str();
    cmd_soft->add_option("--k-e", st_ke, "external transfer percentile")->capture_default_str();
    cmd_soft->add_option("--tau-aff", st_tau, "parent-child affinity threshold")
        ->capture_default_str();
    cmd_soft->add_option("--k-s", st_ks, "softened percentile of the reliability ranking")
        ->capture_default_str();
    cmd_soft->add_option("--q-mode", st_qmode,
                         "one-minus-minmax | minmax | naive")->capture_default_str();

    // build-sampler --------------------------------------------------------
    auto* cmd_sampler = app.add_subcommand(
        "build-sampler", "difficulty-weighted object-class sampler from combo statistics");
    std::string bs_ann = cfg.annotations, bs_pred = cfg.predictions, bs_out = cfg.output;
    cmd_sampler->add_option("--annotations", bs_ann, "annotation JSONL")->required(bs_ann.empty());
    cmd_sampler->add_option("--predictions", bs_pred, "biased-model prediction dump JSONL")
        ->required(bs_pred.empty());
    cmd_sampler->add_option("--out", bs_out, "sampler JSON")->required(bs_out.empty());

    // plan-fsta ------------------------------------------------------------
    auto* cmd_plan = app.add_subcommand(
        "plan-fsta", "plan one augmentation step of artificial triplets");
    std::string pf_ann = cfg.annotations, pf_sampler, pf_out = cfg.output;
    int pf_nt = cfg.fsta.n_t;
    double pf_siou = cfg.fsta.s_iou, pf_uh = cfg.fsta.u_h;
    bool pf_tail_only = cfg.fsta.tail_only_s_po;
    std::int64_t pf_step = 0;
    std::uint64_t pf_seed = cfg.seed;
    cmd_plan->add_option("--annotations", pf_ann, "annotation JSONL")->required(pf_ann.empty());
    cmd_plan->add_option("--sampler", pf_sampler, "sampler JSON from build-sampler")->required();
    cmd_plan->add_option("--out", pf_out, "plan JSONL")->required(pf_out.empty());
    cmd_plan->add_option("--n-t", pf_nt, "proposal pairs kept per image")->capture_default_str();
    cmd_plan->add_option("--s-iou", pf_siou, "min IoU against ground truth")
        ->capture_default_str();
    cmd_plan->add_option("--u-h", pf_uh, "head-group retention probability")
        ->capture_default_str();
    cmd_plan->add_flag("--tail-only,!--no-tail-only", pf_tail_only,
                       "restrict subject swaps to tail predicates");
    cmd_plan->add_option("--step", pf_step, "step index recorded in the plan")
        ->capture_default_str();
    cmd_plan->add_option("--seed", pf_seed, "planning seed")->capture_default_str();

    // train-gen ------------------------------------------------------------
    auto* cmd_train = app.add_subcommand(
        "train-gen", "train the conditional feature generator on a feature store");
    std::string tg_features = cfg.features, tg_out = cfg.output, tg_cond;
    GanConfig tg_gan = cfg.gan;
    std::uint64_t tg_seed = cfg.seed;
    cmd_train->add_option("--features", tg_features, "binary feature store")
        ->required(tg_features.empty());
    cmd_train->add_option("--out", tg_out, "generator checkpoint")->required(tg_out.empty());
    cmd_train->add_option("--cond", tg_cond,
                          "optional feature store of per-class condition vectors");
    cmd_train->add_option("--d-z", tg_gan.d_z, "noise dim")->capture_default_str();
    cmd_train->add_option("--cond-dim", tg_gan.cond_dim, "condition dim")->capture_default_str();
    cmd_train->add_option("--hidden", tg_gan.hidden, "hidden width")->capture_default_str();
    cmd_train->add_option("--lr", tg_gan.lr, "learning rate")->capture_default_str();
    cmd_train->add_option("--batch", tg_gan.batch, "batch size")->capture_default_str();
    cmd_train->add_option("--d-train-iter", tg_gan.d_train_iter,
                          "critic steps per generator step")->capture_default_str();
    cmd_train->add_option("--max-iter", tg_gan.max_iter, "generator steps")
        ->capture_default_str();
    cmd_train->add_option("--lambda-gp", tg_gan.lambda_gp, "gradient penalty weight")
        ->capture_default_str();
    cmd_train->add_option("--beta", tg_gan.beta, "classifier loss weight")
        ->capture_default_str();
    cmd_train->add_option("--gamma", tg_gan.gamma, "reconstruction loss weight")
        ->capture_default_str();
    cmd_train->add_option("--pretrain-epochs", tg_gan.pretrain_epochs,
                          "classifier/reconstructor pretraining epochs")->capture_default_str();
    cmd_train->add_option("--eval-every", tg_gan.eval_every,
                          "checkpoint selection cadence")->capture_default_str();
    cmd_train->add_option("--seed", tg_seed, "training seed")->capture_default_str();

    // gen-features ---------------------------------------------------------
    auto* cmd_gen = app.add_subcommand(
        "gen-features", "sample features from a trained generator checkpoint");
    std::string gf_model, gf_out = cfg.output, gf_classes;
    int gf_per_class = 1;
    std::uint64_t gf_seed = cfg.seed;
    cmd_gen->add_option("--model", gf_model, "generator checkpoint from train-gen")->required();
    cmd_gen->add_option("--out", gf_out, "binary feature store")->required(gf_out.empty());
    cmd_gen->add_option("--classes", gf_classes, "comma-separated class indices")->required();
    cmd_gen->add_option("--per-class", gf_per_class, "samples per listed class")
        ->capture_default_str();
    cmd_gen->add_option("--seed", gf_seed, "sampling seed")->capture_default_str();

    // eval -----------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand(
        "eval", "recall / mean-recall report for predicted triplets");
    std::string ev_gt = cfg.annotations, ev_pred, ev_out = cfg.output, ev_ks;
    double ev_iou = cfg.iou_thr;
    {
        std::string d;
        for (int k : cfg.eval_ks) d += (d.empty() ? "" : ",") + std::to_string(k);
        ev_ks = d;
    }
    cmd_eval->add_option("--gt", ev_gt, "ground-truth annotation JSONL")->required(ev_gt.empty());
    cmd_eval->add_option("--pred", ev_pred, "predicted triplet JSONL")->required();
    cmd_eval->add_option("--out", ev_out, "report JSON")->required(ev_out.empty());
    cmd_eval->add_option("--k", ev_ks, "comma-separated K values")->capture_default_str();
    cmd_eval->add_option("--iou", ev_iou, "box match threshold")->capture_default_str();

    // synth-exp ------------------------------------------------------------
    auto* cmd_synth = app.add_subcommand(
        "synth-exp", "synthetic end-to-end comparison matrix");
    std::string se_spec, se_variants = "raw,ietrans,soft,fsta,full", se_out = cfg.output;
    int se_seeds = 5;
    cmd_synth->add_option("--spec", se_spec, "world + harness config file (optional)");
    cmd_synth->add_option("--variants", se_variants, "comma-separated variant list")
        ->capture_default_str();
    cmd_synth->add_option("--seeds", se_seeds, "number of seeds (runs use 1..N)")
        ->capture_default_str();
    cmd_synth->add_option("--out", se_out, "table path, .md renders markdown, else JSON")
        ->required(se_out.empty());

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 1;
    }

    if (cmd_transfer->parsed()) {
        return guarded("transfer", [&] {
            const Dataset data = load_annotations(tr_ann);
            const PredictionDump dump = load_predictions(tr_pred, data);
            const ParentChildMap pc = build_parent_child(dump, data.predicate_counts(), tr_tau);
            const auto decisions = internal_transfer(data, dump, pc, tr_ki);
            const auto externals = external_transfer(data, dump, tr_ke);
            const Dataset enhanced = add_externals(apply_internal(data, decisions), externals);
            save_annotations(enhanced, tr_out);
            RunConfig echo = cfg;
            echo.annotations = tr_ann;
            echo.predictions = tr_pred;
            echo.output = tr_out;
            echo.k_i = tr_ki;
            echo.k_e = tr_ke;
            echo.tau_aff = tr_tau;
            write_manifest(tr_out, "transfer", echo.echo(), cfg.seed, {tr_ann, tr_pred});
            if (!tr_decisions.empty()) {
                save_decisions(decisions, tr_decisions);
                write_manifest(tr_decisions, "transfer", echo.echo(), cfg.seed,
                               {tr_ann, tr_pred});
            }
        });
    }

    if (cmd_soft->parsed()) {
        return guarded("soft-transfer", [&] {
            const Dataset data = load_annotations(st_ann);
            const PredictionDump dump = load_predictions(st_pred, data);
            std::vector<TransferDecision> decisions;
            if (st_decisions.empty()) {
                const ParentChildMap pc =
                    build_parent_child(dump, data.predicate_counts(), st_tau);
                decisions = internal_transfer(data, dump, pc, st_ki);
            } else {
                decisions = load_decisions(st_decisions);
            }
            const QMode mode = parse_q_mode(st_qmode);
            const auto externals = external_transfer(data, dump, st_ke);
            const Dataset enhanced = add_externals(
                apply_soft_transfer(data, dump, decisions, st_ks, mode), externals);
            save_annotations(enhanced, st_out);
            RunConfig echo = cfg;
            echo.annotations = st_ann;
            echo.predictions = st_pred;
            echo.output = st_out;
            echo.k_i = st_ki;
            echo.k_e = st_ke;
            echo.tau_aff = st_tau;
            echo.k_s = st_ks;
            echo.q_mode = mode;
            std::vector<std::string> inputs = {st_ann, st_pred};
            if (!st_decisions.empty()) inputs.push_back(st_decisions);
            write_manifest(st_out, "soft-transfer", echo.echo(), cfg.seed, inputs);
        });
    }

    if (cmd_sampler->parsed()) {
        return guarded("build-sampler", [&] {
            const Dataset data = load_annotations(bs_ann);
            const PredictionDump dump = load_predictions(bs_pred, data);
            const SamplerTable table = build_sampler(data.label_space, dump);
            save_sampler(table, bs_out);
            RunConfig echo = cfg;
            echo.annotations = bs_ann;
            echo.predictions = bs_pred;
            echo.output = bs_out;
            write_manifest(bs_out, "build-sampler", echo.echo(), cfg.seed, {bs_ann, bs_pred});
        });
    }

    if (cmd_plan->parsed()) {
        return guarded("plan-fsta", [&] {
            const Dataset data = load_annotations(pf_ann);
            const SamplerTable table = load_sampler(pf_sampler);
            FstaConfig fcfg = cfg.fsta;
            fcfg.n_t = pf_nt;
            fcfg.s_iou = pf_siou;
            fcfg.u_h = pf_uh;
            fcfg.tail_only_s_po = pf_tail_only;
            fcfg.validate();
            Rng rng = Rng::substream(pf_seed, "fsta.plan");
            const AugmentationPlan plan =
                plan_step(plan_images_from(data), table, data.label_space, fcfg, rng, pf_step);
            save_plan(plan, pf_out);
            RunConfig echo = cfg;
            echo.annotations = pf_ann;
            echo.output = pf_out;
            echo.fsta = fcfg;
            write_manifest(pf_out, "plan-fsta", echo.echo(), pf_seed, {pf_ann, pf_sampler});
        });
    }

    if (cmd_train->parsed()) {
        return guarded("train-gen", [&] {
            const FeatureStore store = load_features(tg_features);
            Matrix feats;
            std::vector<ClassId> labels;
            store_to_matrix(store, feats, labels);
            tg_gan.feature_dim = static_cast<int>(store.dim);
            tg_gan.seed = tg_seed;
            int n_classes = 0;
            for (ClassId c : labels) n_classes = std::max(n_classes, c + 1);
            Matrix cond;
            if (tg_cond.empty()) {
                cond = synth_cond_table(n_classes, tg_gan.cond_dim,
                                        splitmix64(tg_seed ^ fnv1a64("cli.cond")));
            } else {
                cond = cond_table_from_store(load_features(tg_cond), n_classes);
                tg_gan.cond_dim = static_cast<int>(cond.rows());
            }
            const GanState state = train_gan(feats, labels, cond, tg_gan);
            save_gan(state, tg_out);
            RunConfig echo = cfg;
            echo.features = tg_features;
            echo.output = tg_out;
            echo.gan = tg_gan;
            std::vector<std::string> inputs = {tg_features};
            if (!tg_cond.empty()) inputs.push_back(tg_cond);
            write_manifest(tg_out, "train-gen", echo.echo(), tg_seed, inputs);
        });
    }

    if (cmd_gen->parsed()) {
        return guarded("gen-features", [&] {
            const GanState state = load_gan(gf_model);
            const std::vector<int> classes = parse_int_list(gf_classes, "--classes");
            if (gf_per_class < 1) throw std::invalid_argument("--per-class must be >= 1");
            std::vector<ClassId> wanted;
            for (int c : classes)
                for (int i = 0; i < gf_per_class; ++i) wanted.push_back(c);
            Rng rng = Rng::substream(gf_seed, "cli.gen");
            const Matrix out = generate_batch(state, wanted, rng);
            FeatureStore store;
            store.dim = static_cast<std::uint32_t>(out.rows());
            for (std::size_t i = 0; i < wanted.size(); ++i) {
                FeatureRow row;
                row.cls = wanted[i];
                row.vec.resize(static_cast<std::size_t>(out.rows()));
                for (Eigen::Index r = 0; r < out.rows(); ++r)
                    row.vec[static_cast<std::size_t>(r)] =
                        static_cast<float>(out(r, static_cast<Eigen::Index>(i)));
                store.rows[i] = std::move(row);
            }
            save_features(store, gf_out);
            RunConfig echo = cfg;
            echo.output = gf_out;
            write_manifest(gf_out, "gen-features", echo.echo(), gf_seed, {gf_model});
        });
    }

    if (cmd_eval->parsed()) {
        return guarded("eval", [&] {
            const Dataset gt = load_annotations(ev_gt);
            const auto preds = graph_constrain(load_pred_triplets(ev_pred));
            const std::vector<int> ks = parse_int_list(ev_ks, "--k");
            const EvalReport report = evaluate(preds, gt, ks, ev_iou);
            save_report(report, ev_out);
            RunConfig echo = cfg;
            echo.annotations = ev_gt;
            echo.output = ev_out;
            echo.eval_ks = ks;
            echo.iou_thr = ev_iou;
            write_manifest(ev_out, "eval", echo.echo(), cfg.seed, {ev_gt, ev_pred});
        });
    }

    if (cmd_synth->parsed()) {
        return guarded("synth-exp", [&] {
            SynthSpec spec = default_synth_spec();
            HarnessConfig hcfg = default_harness_config();
            if (!se_spec.empty()) {
                const ConfigFile f = load_config(se_spec);
                spec = spec_from_file(f);
                hcfg = harness_from_file(f);
            }
            std::vector<Variant> variants;
            for (const std::string& name : split_csv(se_variants))
                variants.push_back(parse_variant(name));
            if (se_seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
            std::vector<std::uint64_t> seeds;
            for (int i = 1; i <= se_seeds; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
            const MatrixResult result = run_matrix(spec, variants, seeds, hcfg);
            const bool markdown =
                se_out.size() >= 3 && se_out.compare(se_out.size() - 3, 3, ".md") == 0;
            if (markdown)
                save_matrix_markdown(result, se_out);
            else
                save_matrix_json(result, se_out);
            RunConfig echo = cfg;
            echo.output = se_out;
            std::vector<std::string> inputs;
            if (!se_spec.empty()) inputs.push_back(se_spec);
            write_manifest(se_out, "synth-exp", echo.echo(), spec.seed, inputs);
        });
    }

    std::cerr << app.help() << "\n";
    return 1;
}
