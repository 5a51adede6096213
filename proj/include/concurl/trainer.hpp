#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "concurl/augment.hpp"
#include "concurl/datasets.hpp"
#include "concurl/ensemble.hpp"
#include "concurl/error.hpp"
#include "concurl/kmeans.hpp"
#include "concurl/metrics.hpp"
#include "concurl/model.hpp"
#include "concurl/objectives.hpp"
#include "concurl/optim.hpp"
#include "concurl/transforms.hpp"

namespace concurl {

struct TrainConfig {
    nlohmann::json dataset = nlohmann::json::object();  // dataset manifest
    std::filesystem::path dataset_base_dir;
    Mode mode = Mode::concurl;
    std::size_t batch_size = 128;
    int epochs = 100;
    AdamConfig adam;
    double tau_b = 0.99;
    double tau = 0.1;
    SinkhornConfig sinkhorn;
    EnsembleConfig ensemble;
    bool ensemble_seed_set = false;
    AugmentPolicy augment;
    bool augment_seed_set = false;
    nlohmann::json network = nlohmann::json::object();
    std::uint64_t seed = 0;
    int eval_every = 1;
    std::size_t eval_batch_size = 1024;
    int kmeans_restarts = 10;
    int checkpoint_every = 0;  // 0: final checkpoint only
    std::filesystem::path output_dir = "run";
    int plateau_steps = 50;
    double plateau_tol = 1e-3;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
        if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be >= 1");
        if (kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        if (!(tau_b >= 0 && tau_b <= 1)) throw ConfigError("tau_b must lie in [0, 1]");
        if (!(tau > 0)) throw ConfigError("tau must be positive");
        adam.validate();
        sinkhorn.validate();
        ensemble.validate();
        augment.validate();
    }

    // Resolved seeds for the ensemble and the augmentation stream.
    std::uint64_t ensemble_seed() const { return ensemble_seed_set ? ensemble.seed : seed + 0x9e3779b9ULL; }
    std::uint64_t augment_seed() const { return augment_seed_set ? augment.seed : seed + 0x7f4a7c15ULL; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    auto ens = to_json(c.ensemble);
    ens["seed"] = c.ensemble_seed();
    auto aug = to_json(c.augment);
    aug["seed"] = c.augment_seed();
    return {{"dataset", c.dataset},
            {"mode", to_string(c.mode)},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"learning_rate", c.adam.learning_rate},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"tau_b", c.tau_b},
            {"tau", c.tau},
            {"sinkhorn", to_json(c.sinkhorn)},
            {"ensemble", ens},
            {"augment", aug},
            {"network", c.network},
            {"seed", c.seed},
            {"eval_every", c.eval_every},
            {"eval_batch_size", c.eval_batch_size},
            {"kmeans_restarts", c.kmeans_restarts},
            {"checkpoint_every", c.checkpoint_every},
            {"output_dir", c.output_dir.string()},
            {"plateau_steps", c.plateau_steps},
            {"plateau_tol", c.plateau_tol}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    static const std::set<std::string> known = {
        "dataset", "mode",     "batch_size", "epochs",          "learning_rate",   "adam",
        "tau_b",   "tau",      "sinkhorn",   "ensemble",        "augment",         "network",
        "seed",    "eval_every", "eval_batch_size", "kmeans_restarts", "checkpoint_every", "output_dir",
        "plateau_steps", "plateau_tol"};
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    TrainConfig c;
    try {
        c.dataset_base_dir = base_dir;
        if (j.contains("dataset")) c.dataset = j.at("dataset");
        if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
        if (j.contains("batch_size")) {
            if (j.at("batch_size").get<long long>() < 1) throw ConfigError("batch_size must be >= 1");
            c.batch_size = j.at("batch_size").get<std::size_t>();
        }
        c.epochs = j.value("epochs", c.epochs);
        c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
        if (j.contains("adam")) {
            const auto& a = j.at("adam");
            c.adam.beta1 = a.value("beta1", c.adam.beta1);
            c.adam.beta2 = a.value("beta2", c.adam.beta2);
            c.adam.eps = a.value("eps", c.adam.eps);
            c.adam.learning_rate = a.value("learning_rate", c.adam.learning_rate);
        }
        c.tau_b = j.value("tau_b", c.tau_b);
        c.tau = j.value("tau", c.tau);
        if (j.contains("sinkhorn")) c.sinkhorn = sinkhorn_config_from_json(j.at("sinkhorn"));
        if (j.contains("ensemble")) {
            c.ensemble = ensemble_config_from_json(j.at("ensemble"));
            c.ensemble_seed_set = j.at("ensemble").contains("seed");
        }
        if (j.contains("augment")) {
            c.augment = augment_policy_from_json(j.at("augment"));
            c.augment_seed_set = j.at("augment").contains("seed");
        }
        if (j.contains("network")) c.network = j.at("network");
        c.seed = j.value("seed", c.seed);
        c.eval_every = j.value("eval_every", c.eval_every);
        if (j.contains("eval_batch_size")) c.eval_batch_size = j.at("eval_batch_size").get<std::size_t>();
        c.kmeans_restarts = j.value("kmeans_restarts", c.kmeans_restarts);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        c.plateau_steps = j.value("plateau_steps", c.plateau_steps);
        c.plateau_tol = j.value("plateau_tol", c.plateau_tol);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return train_config_from_json(j, path.parent_path());
}

// Settings that evaluation needs; stored with every checkpoint.
struct EvalSettings {
    Mode mode = Mode::concurl;
    double tau = 0.1;
    SinkhornConfig sinkhorn;
    std::size_t batch_size = 1024;
    int kmeans_restarts = 10;
    std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const EvalSettings& e) {
    return {{"mode", to_string(e.mode)},       {"tau", e.tau},
            {"sinkhorn", to_json(e.sinkhorn)}, {"eval_batch_size", e.batch_size},
            {"kmeans_restarts", e.kmeans_restarts}, {"eval_seed", e.seed}};
}

inline EvalSettings eval_settings_from_json(const nlohmann::json& j) {
    EvalSettings e;
    e.mode = mode_from_string(j.at("mode").get<std::string>());
    e.tau = j.at("tau").get<double>();
    e.sinkhorn = sinkhorn_config_from_json(j.at("sinkhorn"));
    e.batch_size = j.at("eval_batch_size").get<std::size_t>();
    e.kmeans_restarts = j.at("kmeans_restarts").get<int>();
    e.seed = j.at("eval_seed").get<std::uint64_t>();
    return e;
}

inline EvalSettings eval_settings(const TrainConfig& c) {
    return {c.mode, c.tau, c.sinkhorn, c.eval_batch_size, c.kmeans_restarts, c.seed + 0x5bd1e995ULL};
}

struct EvalOutcome {
    std::vector<int> predictions;
    Tensor z;          // cluster embeddings of the whole dataset (eval-mode batch norm)
    Tensor v_target;   // target projections of the whole dataset
    ClusterReport report;
};

// Cluster labels for the whole dataset. BYOL mode clusters the target
// projections with k-means; every other mode takes the argmax of per-batch codes.
inline EvalOutcome evaluate_state(ModelState& s, const Dataset& ds, const EvalSettings& e) {
    if (ds.feature_dim() != s.spec.input_dim()) {
        throw DataError("dataset has " + std::to_string(ds.feature_dim()) + " features, model expects " +
                        std::to_string(s.spec.input_dim()));
    }
    if (ds.num_classes != s.num_clusters) {
        throw DataError("dataset has K=" + std::to_string(ds.num_classes) + " classes, checkpoint has K=" +
                        std::to_string(s.num_clusters));
    }
    const std::size_t n = ds.size();
    const std::size_t bs = std::min(n, e.batch_size);
    EvalOutcome out;
    out.z = Tensor({n, s.spec.cluster_dim()});
    out.v_target = Tensor({n, s.spec.projector.out});
    out.predictions.reserve(n);
    for (std::size_t begin = 0; begin < n; begin += bs) {
        const std::size_t end = std::min(n, begin + bs);
        auto emb = embed(s, slice_rows(ds.features, begin, end), BnMode::eval);
        for (std::size_t i = begin; i < end; ++i) {
            std::copy(emb.z.row(i - begin).begin(), emb.z.row(i - begin).end(), out.z.row(i).begin());
            std::copy(emb.v_target.row(i - begin).begin(), emb.v_target.row(i - begin).end(),
                      out.v_target.row(i).begin());
        }
        if (e.mode != Mode::byol) {
            auto labels = hard_assign(sinkhorn_codes(emb.z, s.prototypes.value, e.sinkhorn));
            out.predictions.insert(out.predictions.end(), labels.begin(), labels.end());
        }
    }
    if (!out.z.all_finite() || !out.v_target.all_finite()) {
        throw NumericError("evaluation produced non-finite embeddings");
    }
    if (e.mode == Mode::byol) {
        out.predictions = kmeans(out.v_target, s.num_clusters, e.kmeans_restarts, e.seed);
    }
    out.report = make_report(out.predictions, ds.labels, s.num_clusters);
    return out;
}

struct EvalRecord {
    int epoch = 0;
    ClusterReport report;
};

struct StepRecord {
    long long step = 0;
    int epoch = 0;
    LossBreakdown loss;
};

struct RunArtifacts {
    std::filesystem::path metrics_csv;
    std::filesystem::path eval_csv;
    std::filesystem::path diversity_csv;
    std::filesystem::path report_json;
    std::filesystem::path ensemble_file;
    std::filesystem::path config_json;
    std::vector<std::filesystem::path> checkpoints;
    std::vector<EvalRecord> evals;
    std::vector<DiversityRecord> diversity;
    std::vector<std::string> warnings;
    long long steps = 0;
    ClusterReport final_report;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) {
        throw DataError("cannot write " + p.string());
    }
    return out;
}

inline void check_finite_loss(const LossBreakdown& l, long long step) {
    auto check = [&](const char* name, const std::optional<double>& v) {
        if (v && !std::isfinite(*v)) {
            throw NumericError(std::string("non-finite ") + name + " at step " + std::to_string(step) +
                               "; training aborted");
        }
    };
    check("l1 (BYOL loss)", l.l1);
    check("l2 (swapped clustering loss)", l.l2);
    check("l3 (consensus loss)", l.l3);
    check("total loss", l.total);
}

}  // namespace detail

inline std::vector<int> eval_schedule(int epochs, int every) {
    std::set<int> s = {0, epochs};
    if (epochs >= 1) s.insert(1);
    for (int e = every; e < epochs; e += every) s.insert(e);
    return {s.begin(), s.end()};
}

// Full training run: writes every artifact under cfg.output_dir. `log` receives
// one progress line per evaluation when non-null.
inline RunArtifacts train(const TrainConfig& cfg, const Dataset& ds, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    ds.validate();
    const std::size_t n = ds.size();
    const int k = ds.num_classes;
    if (cfg.batch_size > n) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                          std::to_string(n));
    }
    if (cfg.batch_size < static_cast<std::size_t>(k)) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " is smaller than K=" + std::to_string(k));
    }
    const NetworkSpec spec = network_spec_from_json(cfg.network, ds.feature_dim());
    ModelState state = init_model(spec, k, cfg.seed, cfg.tau_b);
    EnsembleConfig ens_cfg = cfg.ensemble;
    ens_cfg.seed = cfg.ensemble_seed();
    const TransformEnsemble ensemble = make_ensemble(ens_cfg, spec.cluster_dim());
    AugmentPolicy policy = cfg.augment;
    policy.seed = cfg.augment_seed();
    const std::optional<ImageGeometry> geometry =
        ds.kind == DataKind::image ? std::optional<ImageGeometry>(ds.image) : std::nullopt;

    LossConfig loss_cfg;
    loss_cfg.weights = LossWeights::for_mode(cfg.mode);
    loss_cfg.tau = cfg.tau;
    loss_cfg.sinkhorn = cfg.sinkhorn;
    const EvalSettings eval_cfg = eval_settings(cfg);

    fs::create_directories(cfg.output_dir);
    RunArtifacts art;
    art.metrics_csv = cfg.output_dir / "metrics.csv";
    art.eval_csv = cfg.output_dir / "eval.csv";
    art.diversity_csv = cfg.output_dir / "diversity.csv";
    art.report_json = cfg.output_dir / "report.json";
    art.ensemble_file = cfg.output_dir / "ensemble.ccrl";
    art.config_json = cfg.output_dir / "config.json";
    {
        auto out = detail::open_out(art.config_json);
        out << to_json(cfg).dump(2) << "\n";
    }
    save_ensemble(art.ensemble_file, ensemble);

    auto metrics = detail::open_out(art.metrics_csv);
    auto evals = detail::open_out(art.eval_csv);
    auto divs = detail::open_out(art.diversity_csv);
    metrics << "step,epoch,l1,l2,l3,total\n";
    evals << "epoch,acc,nmi,ari\n";
    divs << "epoch,mean,std,num_pairs\n";

    nlohmann::json ckpt_extra = {{"eval", to_json(eval_cfg)}, {"config", to_json(cfg)}};
    auto checkpoint = [&](const std::string& name) {
        const auto path = cfg.output_dir / name;
        save_checkpoint(path, state, ckpt_extra);
        art.checkpoints.push_back(path);
    };

    auto run_eval = [&](int epoch) {
        auto outcome = evaluate_state(state, ds, eval_cfg);
        art.evals.push_back({epoch, outcome.report});
        evals << epoch << "," << detail::fmt(outcome.report.acc) << "," << detail::fmt(outcome.report.nmi) << ","
              << detail::fmt(outcome.report.ari) << "\n";
        if (ensemble.size() >= 2) {
            auto rec = diversity(ensemble_assignments(outcome.z, state.prototypes.value, ensemble, cfg.tau), epoch);
            art.diversity.push_back(rec);
            divs << epoch << "," << detail::fmt(rec.mean_pairwise_nmi) << "," << detail::fmt(rec.std_pairwise_nmi)
                 << "," << rec.num_pairs << "\n";
        }
        if (log != nullptr) {
            *log << "epoch " << epoch << "  acc " << outcome.report.acc << "  nmi " << outcome.report.nmi << "  ari "
                 << outcome.report.ari << "\n";
        }
        art.final_report = outcome.report;
    };

    const auto schedule = eval_schedule(cfg.epochs, cfg.eval_every);
    std::size_t next_eval = 0;
    if (schedule[next_eval] == 0) {
        run_eval(0);
        ++next_eval;
    }

    BatchSampler sampler(n, cfg.batch_size, cfg.seed + 0x85ebca6bULL);
    const std::vector<Parameter*> theta = state.online_parameters();
    AdamState adam;
    const double ln_k = std::log(static_cast<double>(k));
    int plateau_run = 0;
    bool plateau_warned = false;
    long long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (const auto& idx : sampler.epoch(static_cast<std::uint64_t>(epoch - 1))) {
            const Tensor batch = gather_rows(ds.features, idx);
            const ViewPair views = make_views(batch, policy, geometry, static_cast<std::uint64_t>(step));
            Tape tape;
            const ForwardBundle f = forward(state, tape, views.view1, views.view2, BnMode::train);
            LossBreakdown loss = total_loss(f, &ensemble, loss_cfg);
            detail::check_finite_loss(loss, step);
            state.zero_grad();
            tape.backward(loss.total_var);
            adam_step(theta, adam, cfg.adam);
            ema_update(state);
            metrics << step << "," << epoch << "," << detail::fmt(loss.l1) << "," << detail::fmt(loss.l2) << ","
                    << detail::fmt(loss.l3) << "," << detail::fmt(loss.total) << "\n";
            if (loss.l2 && std::abs(*loss.l2 - ln_k) < cfg.plateau_tol) {
                if (++plateau_run >= cfg.plateau_steps && !plateau_warned) {
                    plateau_warned = true;
                    art.warnings.push_back("l2 has stayed within " + detail::fmt(cfg.plateau_tol) + " of ln K for " +
                                           std::to_string(plateau_run) + " steps (step " + std::to_string(step) +
                                           "): assignments look uniform, the degenerate ln K plateau");
                    if (log != nullptr) {
                        *log << "warning: " << art.warnings.back() << "\n";
                    }
                }
            } else {
                plateau_run = 0;
            }
            ++step;
        }
        if (next_eval < schedule.size() && schedule[next_eval] == epoch) {
            run_eval(epoch);
            ++next_eval;
        }
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
            checkpoint("checkpoint_epoch" + std::to_string(epoch) + ".ccrl");
        }
    }
    art.steps = step;
    checkpoint("checkpoint_final.ccrl");

    nlohmann::json report = to_json(art.final_report);
    report["mode"] = to_string(cfg.mode);
    report["epochs"] = cfg.epochs;
    report["steps"] = art.steps;
    report["seed"] = cfg.seed;
    if (!art.diversity.empty()) {
        report["diversity"] = to_json(art.diversity.back());
    }
    report["warnings"] = art.warnings;
    auto rep = detail::open_out(art.report_json);
    rep << report.dump(2) << "\n";
    return art;
}

inline Dataset load_config_dataset(const TrainConfig& cfg) {
    if (cfg.dataset.empty()) {
        throw ConfigError("config has no dataset manifest");
    }
    return load_dataset(cfg.dataset, cfg.dataset_base_dir);
}

inline RunArtifacts train(const TrainConfig& cfg, std::ostream* log = nullptr) {
    return train(cfg, load_config_dataset(cfg), log);
}

// Reloads a checkpoint and scores it against `ds` with the stored settings.
inline ClusterReport evaluate(const std::filesystem::path& checkpoint, const Dataset& ds) {
    auto loaded = load_checkpoint(checkpoint);
    EvalSettings settings;
    try {
        settings = eval_settings_from_json(loaded.extra.at("eval"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint lacks evaluation settings: ") + e.what());
    }
    return evaluate_state(loaded.state, ds, settings).report;
}

}  // namespace concurl
