#pragma once

// Experiment orchestration: a JSON manifest describing corpus, canaries,
// model, training regime, and audit settings; run_experiment executes the
// full pipeline deterministically under one master seed; emit_table renders
// the comparison table across experiments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/audit.hpp"
#include "fedsim/canary.hpp"
#include "fedsim/corpus.hpp"
#include "fedsim/federated.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/privacy.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

using json = nlohmann::json;

enum class Regime { kCentral, kFederated };

struct SyntheticCorpusSpec {
    std::size_t vocab_size = 50;
    std::size_t n_users = 200;
    std::size_t examples_per_user = 80;
    std::size_t example_len = 5;
    double heterogeneity = 0.0;
};

struct StopSpec {
    // exactly one of steps/rounds/epochs
    std::optional<std::size_t> steps;
    std::optional<std::size_t> rounds;
    std::optional<double> epochs;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string label;

    std::optional<std::string> corpus_file;
    std::optional<SyntheticCorpusSpec> synthetic;
    std::size_t max_vocab = 10000;
    bool iid = false;
    std::size_t words_per_user = 2000;

    std::vector<double> p_u_set = default_p_u_set();
    std::vector<double> p_e_set = default_p_e_set();
    std::size_t canaries_per_config = 10;
    std::size_t canary_length = 5;
    bool resample_if_empty = true;

    std::size_t embed_dim = 16;
    std::size_t hidden_dim = 32;

    Regime regime = Regime::kCentral;
    CentralTrainConfig central;
    FedTrainConfig federated;
    StopSpec stop;

    AuditConfig audit;
    std::size_t audit_cadence = 0;  // 0 = audit at stop only
    double delta = 1e-7;
};

namespace detail {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest field '" + key + "': " + e.what());
    }
}

inline void require_known_keys(const json& j, const std::vector<std::string>& known,
                               const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == key;
        if (!ok) throw std::runtime_error("unknown manifest key '" + key + "' in " + where);
    }
}

}  // namespace detail

inline ExperimentConfig parse_manifest(const json& j) {
    detail::require_known_keys(
        j,
        {"seed", "out_dir", "label", "corpus", "canaries", "model", "regime", "central",
         "federated", "stop", "audit", "delta"},
        "manifest root");
    ExperimentConfig cfg;
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    cfg.out_dir = detail::get_or<std::string>(j, "out_dir", ".");
    cfg.label = detail::get_or<std::string>(j, "label", "");
    cfg.delta = detail::get_or<double>(j, "delta", 1e-7);

    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        detail::require_known_keys(
            c, {"file", "synthetic", "max_vocab", "iid", "words_per_user"}, "corpus");
        if (c.contains("file")) cfg.corpus_file = c.at("file").get<std::string>();
        if (c.contains("synthetic")) {
            const json& s = c.at("synthetic");
            detail::require_known_keys(
                s, {"vocab_size", "n_users", "examples_per_user", "example_len", "heterogeneity"},
                "corpus.synthetic");
            SyntheticCorpusSpec spec;
            spec.vocab_size = detail::get_or<std::size_t>(s, "vocab_size", spec.vocab_size);
            spec.n_users = detail::get_or<std::size_t>(s, "n_users", spec.n_users);
            spec.examples_per_user =
                detail::get_or<std::size_t>(s, "examples_per_user", spec.examples_per_user);
            spec.example_len = detail::get_or<std::size_t>(s, "example_len", spec.example_len);
            spec.heterogeneity = detail::get_or<double>(s, "heterogeneity", spec.heterogeneity);
            cfg.synthetic = spec;
        }
        if (cfg.corpus_file && cfg.synthetic)
            throw std::runtime_error("corpus: give either 'file' or 'synthetic', not both");
        cfg.max_vocab = detail::get_or<std::size_t>(c, "max_vocab", cfg.max_vocab);
        cfg.iid = detail::get_or<bool>(c, "iid", false);
        cfg.words_per_user = detail::get_or<std::size_t>(c, "words_per_user", cfg.words_per_user);
    }
    if (!cfg.corpus_file && !cfg.synthetic)
        throw std::runtime_error("manifest needs corpus.file or corpus.synthetic");

    if (j.contains("canaries")) {
        const json& c = j.at("canaries");
        detail::require_known_keys(
            c, {"p_u", "p_e", "per_config", "length", "resample_if_empty"}, "canaries");
        if (c.contains("p_u")) cfg.p_u_set = c.at("p_u").get<std::vector<double>>();
        if (c.contains("p_e")) cfg.p_e_set = c.at("p_e").get<std::vector<double>>();
        cfg.canaries_per_config = detail::get_or<std::size_t>(c, "per_config", 10);
        cfg.canary_length = detail::get_or<std::size_t>(c, "length", 5);
        cfg.resample_if_empty = detail::get_or<bool>(c, "resample_if_empty", true);
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        detail::require_known_keys(m, {"embed_dim", "hidden_dim"}, "model");
        cfg.embed_dim = detail::get_or<std::size_t>(m, "embed_dim", cfg.embed_dim);
        cfg.hidden_dim = detail::get_or<std::size_t>(m, "hidden_dim", cfg.hidden_dim);
    }

    const std::string regime = detail::get_or<std::string>(j, "regime", "central");
    if (regime == "central")
        cfg.regime = Regime::kCentral;
    else if (regime == "federated")
        cfg.regime = Regime::kFederated;
    else
        throw std::runtime_error("regime must be 'central' or 'federated'");

    if (j.contains("central")) {
        if (cfg.regime != Regime::kCentral)
            throw std::runtime_error("manifest has 'central' block but regime is federated");
        const json& c = j.at("central");
        detail::require_known_keys(c,
                                   {"optimizer", "batch_size", "learning_rate", "momentum_coef",
                                    "adam_lr", "data_order", "scale_lr_with_batch"},
                                   "central");
        const std::string opt = detail::get_or<std::string>(c, "optimizer", "sgd");
        if (opt == "sgd")
            cfg.central.optimizer = Optimizer::kSgd;
        else if (opt == "momentum")
            cfg.central.optimizer = Optimizer::kMomentum;
        else if (opt == "adam")
            cfg.central.optimizer = Optimizer::kAdam;
        else
            throw std::runtime_error("central.optimizer must be sgd|momentum|adam");
        cfg.central.batch_size = detail::get_or<std::size_t>(c, "batch_size", 32);
        cfg.central.learning_rate = detail::get_or<double>(c, "learning_rate", 0.005);
        cfg.central.momentum_coef = detail::get_or<double>(c, "momentum_coef", 0.9);
        cfg.central.adam_lr = detail::get_or<double>(c, "adam_lr", 1e-4);
        cfg.central.scale_lr_with_batch = detail::get_or<bool>(c, "scale_lr_with_batch", false);
        const std::string order = detail::get_or<std::string>(c, "data_order", "iid-shuffled");
        if (order == "iid-shuffled")
            cfg.central.data_order = DataOrder::kIidShuffled;
        else if (order == "user-sequential")
            cfg.central.data_order = DataOrder::kUserSequential;
        else
            throw std::runtime_error("central.data_order must be iid-shuffled|user-sequential");
    }

    if (j.contains("federated")) {
        if (cfg.regime != Regime::kFederated)
            throw std::runtime_error("manifest has 'federated' block but regime is central");
        const json& f = j.at("federated");
        detail::require_known_keys(f,
                                   {"users_per_round", "local_epochs", "local_batch", "local_lr",
                                    "clip_norm", "noise_multiplier", "server_optimizer",
                                    "server_adam_lr", "sampling"},
                                   "federated");
        cfg.federated.users_per_round = detail::get_or<std::size_t>(f, "users_per_round", 10);
        cfg.federated.local_epochs = detail::get_or<std::size_t>(f, "local_epochs", 1);
        cfg.federated.local_batch = detail::get_or<std::size_t>(f, "local_batch", 0);
        cfg.federated.local_lr = detail::get_or<double>(f, "local_lr", 0.1);
        if (f.contains("clip_norm"))
            cfg.federated.clip_norm = f.at("clip_norm").get<double>();
        cfg.federated.noise_multiplier = detail::get_or<double>(f, "noise_multiplier", 0.0);
        const std::string sopt = detail::get_or<std::string>(f, "server_optimizer", "average");
        if (sopt == "average")
            cfg.federated.server_optimizer = ServerOptimizer::kAverage;
        else if (sopt == "adam")
            cfg.federated.server_optimizer = ServerOptimizer::kAdam;
        else
            throw std::runtime_error("federated.server_optimizer must be average|adam");
        cfg.federated.server_adam_lr = detail::get_or<double>(f, "server_adam_lr", 1e-3);
        const std::string samp = detail::get_or<std::string>(f, "sampling", "without-replacement");
        if (samp == "without-replacement")
            cfg.federated.sampling = ClientSampling::kWithoutReplacement;
        else if (samp == "with-replacement")
            cfg.federated.sampling = ClientSampling::kWithReplacement;
        else
            throw std::runtime_error("federated.sampling must be without-replacement|with-replacement");
    }

    if (j.contains("stop")) {
        const json& s = j.at("stop");
        detail::require_known_keys(s, {"steps", "rounds", "epochs"}, "stop");
        int given = 0;
        if (s.contains("steps")) {
            cfg.stop.steps = s.at("steps").get<std::size_t>();
            ++given;
        }
        if (s.contains("rounds")) {
            cfg.stop.rounds = s.at("rounds").get<std::size_t>();
            ++given;
        }
        if (s.contains("epochs")) {
            cfg.stop.epochs = s.at("epochs").get<double>();
            ++given;
        }
        if (given != 1) throw std::runtime_error("stop: give exactly one of steps|rounds|epochs");
    } else {
        throw std::runtime_error("manifest needs a 'stop' block");
    }

    if (j.contains("audit")) {
        const json& a = j.at("audit");
        detail::require_known_keys(
            a, {"reference_size", "prefix_len", "beam_width", "cadence"}, "audit");
        cfg.audit.reference_size = detail::get_or<std::size_t>(a, "reference_size", 10000);
        cfg.audit.prefix_len = detail::get_or<std::size_t>(a, "prefix_len", 1);
        cfg.audit.beam_width = detail::get_or<std::size_t>(a, "beam_width", 5);
        cfg.audit_cadence = detail::get_or<std::size_t>(a, "cadence", 0);
    }
    return cfg;
}

inline ExperimentConfig load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("manifest parse error at byte " + std::to_string(e.byte) +
                                 " in " + path + ": " + e.what());
    }
    return parse_manifest(j);
}

struct CheckpointAudit {
    std::string at;  // "step 100" / "round 50" / "final"
    AuditReport report;
    double epochs = 0.0;
};

struct ExperimentReport {
    std::string label;
    std::vector<CheckpointAudit> checkpoints;
    double epsilon = kInfEps;
    double delta = 0.0;
    bool dp_active = false;  // z > 0

    const AuditReport& final_audit() const { return checkpoints.back().report; }
};

namespace detail {

inline std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    os << std::setprecision(precision) << v;
    return os.str();
}

}  // namespace detail

// Runs the full pipeline: corpus -> canaries -> training -> audits.
// When out_params/out_model are given, the trained parameters and model
// config are copied out (used by the train subcommand to save a checkpoint).
// skip_audit drops all audit checkpoints (training only).
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       ParamVector* out_params = nullptr,
                                       ModelConfig* out_model = nullptr,
                                       bool skip_audit = false) {
    const std::uint64_t seed = cfg.seed;

    FederatedCorpus corpus;
    try {
        if (cfg.synthetic) {
            const auto& s = *cfg.synthetic;
            corpus = generate_synthetic_corpus(s.vocab_size, s.n_users, s.examples_per_user,
                                               s.example_len, derive_seed(seed, "corpus"),
                                               s.heterogeneity);
        } else {
            corpus = load_corpus_text(*cfg.corpus_file, cfg.max_vocab);
        }
        if (cfg.iid) corpus = make_iid(corpus, cfg.words_per_user, derive_seed(seed, "iid"));
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage corpus: ") + e.what());
    }

    std::vector<CanarySpec> specs;
    InsertionResult inserted;
    try {
        specs = canary_grid(corpus.vocabulary, cfg.p_u_set, cfg.p_e_set,
                            cfg.canaries_per_config, derive_seed(seed, "canary"),
                            cfg.canary_length);
        inserted = insert_canaries(corpus, specs, derive_seed(seed, "insert"),
                                   cfg.resample_if_empty);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage canary: ") + e.what());
    }

    ModelConfig model_cfg;
    model_cfg.vocab_size = corpus.vocabulary.size();
    model_cfg.embed_dim = cfg.embed_dim;
    model_cfg.hidden_dim = cfg.hidden_dim;
    ParamVector params = init_params(model_cfg, derive_seed(seed, "init"));

    AuditConfig audit_cfg = cfg.audit;
    audit_cfg.reference_seed = derive_seed(seed, "refs");

    ExperimentReport report;
    report.label = cfg.label;
    report.delta = cfg.delta;

    auto audit_now = [&](const std::string& at, double epochs) {
        if (skip_audit) return;
        CheckpointAudit ck;
        ck.at = at;
        ck.epochs = epochs;
        ck.report = audit_checkpoint(params, model_cfg, inserted.ledger, specs, audit_cfg,
                                     &inserted.corpus);
        report.checkpoints.push_back(std::move(ck));
    };

    try {
        if (cfg.regime == Regime::kCentral) {
            const std::size_t n_examples = inserted.corpus.example_count();
            CentralTrainConfig tc = cfg.central;
            tc.seed = derive_seed(seed, "train");
            if (cfg.stop.steps)
                tc.max_steps = *cfg.stop.steps;
            else if (cfg.stop.epochs)
                tc.max_steps = static_cast<std::size_t>(
                    *cfg.stop.epochs * static_cast<double>(n_examples) /
                    static_cast<double>(tc.batch_size));
            else
                throw std::runtime_error("central regime stops by steps or epochs");

            if (cfg.audit_cadence == 0) {
                central_train(params, model_cfg, tc, inserted.corpus, 0);
            } else {
                std::size_t done = 0;
                while (done < tc.max_steps) {
                    CentralTrainConfig chunk = tc;
                    chunk.seed = derive_seed(seed, "train", done);
                    chunk.max_steps = std::min(cfg.audit_cadence, tc.max_steps - done);
                    central_train(params, model_cfg, chunk, inserted.corpus, 0);
                    done += chunk.max_steps;
                    if (done < tc.max_steps)
                        audit_now("step " + std::to_string(done),
                                  static_cast<double>(done * tc.batch_size) /
                                      static_cast<double>(n_examples));
                }
            }
            audit_now("final", static_cast<double>(tc.max_steps * tc.batch_size) /
                                   static_cast<double>(n_examples));
        } else {
            const std::size_t N = inserted.corpus.users.size();
            FedTrainConfig fc = cfg.federated;
            fc.seed = derive_seed(seed, "train");
            if (cfg.stop.rounds)
                fc.rounds = *cfg.stop.rounds;
            else if (cfg.stop.epochs)
                fc.rounds = static_cast<std::size_t>(*cfg.stop.epochs * static_cast<double>(N) /
                                                     static_cast<double>(fc.users_per_round));
            else
                throw std::runtime_error("federated regime stops by rounds or epochs");

            MomentsAccountant accountant;
            ServerState server;
            fc.validate(N);
            const double q = fc.participation_fraction(N);
            for (std::size_t t = 0; t < fc.rounds; ++t) {
                dp_fedavg_round(params, model_cfg, inserted.corpus, fc, t, server);
                if (fc.noise_multiplier > 0.0) accountant.accum_priv_spending(q, fc.noise_multiplier);
                if (cfg.audit_cadence != 0 && (t + 1) % cfg.audit_cadence == 0 &&
                    t + 1 < fc.rounds)
                    audit_now("round " + std::to_string(t + 1),
                              static_cast<double>((t + 1) * fc.users_per_round) /
                                  static_cast<double>(N));
            }
            report.dp_active = fc.noise_multiplier > 0.0;
            report.epsilon = accountant.get_privacy_spent(cfg.delta).epsilon;
            audit_now("final", static_cast<double>(fc.rounds * fc.users_per_round) /
                                   static_cast<double>(N));
        }
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string("stage train: ") + e.what());
    }
    if (out_params) *out_params = params;
    if (out_model) *out_model = model_cfg;
    return report;
}

// --- JSON serialization for canary specs, ledgers, and reports ---

inline json specs_to_json(const std::vector<CanarySpec>& specs) {
    json arr = json::array();
    for (const auto& s : specs)
        arr.push_back({{"canary_id", s.canary_id},
                       {"token_ids", s.token_ids},
                       {"p_u", s.p_u},
                       {"p_e", s.p_e}});
    return arr;
}

inline std::vector<CanarySpec> specs_from_json(const json& arr) {
    std::vector<CanarySpec> specs;
    for (const auto& j : arr) {
        CanarySpec s;
        s.canary_id = j.at("canary_id").get<std::string>();
        s.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
        s.p_u = j.at("p_u").get<double>();
        s.p_e = j.at("p_e").get<double>();
        specs.push_back(std::move(s));
    }
    return specs;
}

inline json ledger_to_json(const CanaryLedger& ledger) {
    json arr = json::array();
    for (const auto& r : ledger.records) {
        json ins = json::array();
        for (const auto& i : r.insertions)
            ins.push_back({{"user_id", i.user_id}, {"example_index", i.example_index}});
        arr.push_back({{"canary_id", r.spec.canary_id},
                       {"spec", specs_to_json({r.spec})[0]},
                       {"secret_sharers", r.secret_sharers},
                       {"insertions", ins},
                       {"expected_insertions", r.expected_insertions},
                       {"expected_sharers", r.expected_sharers},
                       {"resample_attempts", r.resample_attempts}});
    }
    return arr;
}

inline CanaryLedger ledger_from_json(const json& arr) {
    CanaryLedger ledger;
    for (const auto& j : arr) {
        CanaryRecord r;
        r.spec = specs_from_json(json::array({j.at("spec")}))[0];
        r.secret_sharers = j.at("secret_sharers").get<std::vector<std::string>>();
        for (const auto& i : j.at("insertions"))
            r.insertions.push_back({i.at("user_id").get<std::string>(),
                                    i.at("example_index").get<std::size_t>()});
        r.expected_insertions = j.at("expected_insertions").get<double>();
        r.expected_sharers = j.at("expected_sharers").get<double>();
        r.resample_attempts = j.at("resample_attempts").get<std::size_t>();
        ledger.records.push_back(std::move(r));
    }
    return ledger;
}

inline json report_to_json(const ExperimentReport& report) {
    json j;
    j["label"] = report.label;
    j["epsilon"] = std::isinf(report.epsilon) ? json("inf") : json(report.epsilon);
    j["delta"] = report.delta;
    j["dp_active"] = report.dp_active;
    j["checkpoints"] = json::array();
    for (const auto& ck : report.checkpoints) {
        const AuditReport& a = ck.report;
        json cj;
        cj["at"] = ck.at;
        cj["epochs"] = ck.epochs;
        cj["rs_memorized"] = a.rs_memorized;
        cj["bs_memorized"] = a.bs_memorized;
        cj["specs"] = specs_to_json(a.specs);
        cj["has_rs_lowest"] = a.has_rs_lowest;
        cj["rs_lowest_p_u"] = a.rs_lowest_p_u;
        cj["rs_lowest_p_e"] = a.rs_lowest_p_e;
        cj["has_bs_lowest"] = a.has_bs_lowest;
        cj["bs_lowest_p_u"] = a.bs_lowest_p_u;
        cj["bs_lowest_p_e"] = a.bs_lowest_p_e;
        cj["has_utility"] = a.has_utility;
        cj["recall_at_1"] = a.utility.recall_at_1;
        cj["perplexity"] = a.utility.perplexity;
        json ranks = json::array();
        for (const auto& r : a.ranks)
            ranks.push_back({{"canary_id", r.canary_id},
                             {"rank", r.rank},
                             {"log_perplexity", r.log_perplexity},
                             {"memorized", r.memorized}});
        cj["ranks"] = ranks;
        json beams = json::array();
        for (const auto& b : a.beams)
            beams.push_back({{"canary_id", b.canary_id},
                             {"extracted", b.extracted},
                             {"memorized", b.memorized}});
        cj["beams"] = beams;
        j["checkpoints"].push_back(std::move(cj));
    }
    return j;
}

inline ExperimentReport report_from_json(const json& j) {
    ExperimentReport report;
    report.label = j.at("label").get<std::string>();
    report.epsilon = j.at("epsilon").is_string() ? kInfEps : j.at("epsilon").get<double>();
    report.delta = j.at("delta").get<double>();
    report.dp_active = j.at("dp_active").get<bool>();
    for (const auto& cj : j.at("checkpoints")) {
        CheckpointAudit ck;
        ck.at = cj.at("at").get<std::string>();
        ck.epochs = cj.at("epochs").get<double>();
        AuditReport& a = ck.report;
        a.rs_memorized = cj.at("rs_memorized").get<std::size_t>();
        a.bs_memorized = cj.at("bs_memorized").get<std::size_t>();
        a.specs = specs_from_json(cj.at("specs"));
        a.has_rs_lowest = cj.at("has_rs_lowest").get<bool>();
        a.rs_lowest_p_u = cj.at("rs_lowest_p_u").get<double>();
        a.rs_lowest_p_e = cj.at("rs_lowest_p_e").get<double>();
        a.has_bs_lowest = cj.at("has_bs_lowest").get<bool>();
        a.bs_lowest_p_u = cj.at("bs_lowest_p_u").get<double>();
        a.bs_lowest_p_e = cj.at("bs_lowest_p_e").get<double>();
        a.has_utility = cj.at("has_utility").get<bool>();
        a.utility.recall_at_1 = cj.at("recall_at_1").get<double>();
        a.utility.perplexity = cj.at("perplexity").get<double>();
        for (const auto& rj : cj.at("ranks")) {
            RankResult r;
            r.canary_id = rj.at("canary_id").get<std::string>();
            r.rank = rj.at("rank").get<std::size_t>();
            r.log_perplexity = rj.at("log_perplexity").get<double>();
            r.memorized = rj.at("memorized").get<bool>();
            a.ranks.push_back(std::move(r));
        }
        for (const auto& bj : cj.at("beams")) {
            BeamResult b;
            b.canary_id = bj.at("canary_id").get<std::string>();
            b.extracted = bj.at("extracted").get<std::vector<TokenId>>();
            b.memorized = bj.at("memorized").get<bool>();
            a.beams.push_back(std::move(b));
        }
        report.checkpoints.push_back(std::move(ck));
    }
    return report;
}

// One Table-1-style row per report: setting label, RS count, RS lowest
// config, BS count, BS lowest config, accuracy %, perplexity.
inline std::string emit_table_csv(const std::vector<ExperimentReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("emit_table: no reports");
    std::ostringstream os;
    os << "setting,rs_memorized,rs_lowest_p_u,rs_lowest_p_e,bs_memorized,"
          "bs_lowest_p_u,bs_lowest_p_e,accuracy_pct,perplexity,epsilon,delta\n";
    for (const auto& r : reports) {
        const AuditReport& a = r.final_audit();
        os << r.label << ',' << a.rs_memorized << ',';
        if (a.has_rs_lowest)
            os << detail::fmt(a.rs_lowest_p_u) << ',' << detail::fmt(a.rs_lowest_p_e);
        else
            os << "-,-";
        os << ',' << a.bs_memorized << ',';
        if (a.has_bs_lowest)
            os << detail::fmt(a.bs_lowest_p_u) << ',' << detail::fmt(a.bs_lowest_p_e);
        else
            os << "-,-";
        os << ',';
        if (a.has_utility)
            os << detail::fmt(100.0 * a.utility.recall_at_1, 4) << ','
               << detail::fmt(a.utility.perplexity, 6);
        else
            os << "-,-";
        if (r.dp_active)
            os << ',' << detail::fmt(r.epsilon, 4) << ',' << detail::fmt(r.delta, 4);
        else
            os << ",inf," << detail::fmt(r.delta, 4);
        os << '\n';
    }
    return os.str();
}

inline std::string emit_table_text(const std::vector<ExperimentReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("emit_table: no reports");
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Setting", "RS", "RS lowest (p_u,p_e)", "BS", "BS lowest (p_u,p_e)",
                    "Acc. %", "Perp.", "(eps, delta)"});
    for (const auto& r : reports) {
        const AuditReport& a = r.final_audit();
        const std::size_t total = a.specs.size();
        auto cfg_str = [](bool has, double pu, double pe) {
            return has ? "(" + detail::fmt(pu, 4) + ", " + detail::fmt(pe, 4) + ")"
                       : std::string("-");
        };
        rows.push_back(
            {r.label, std::to_string(a.rs_memorized) + "/" + std::to_string(total),
             cfg_str(a.has_rs_lowest, a.rs_lowest_p_u, a.rs_lowest_p_e),
             std::to_string(a.bs_memorized) + "/" + std::to_string(total),
             cfg_str(a.has_bs_lowest, a.bs_lowest_p_u, a.bs_lowest_p_e),
             a.has_utility ? detail::fmt(100.0 * a.utility.recall_at_1, 4) : "-",
             a.has_utility ? detail::fmt(a.utility.perplexity, 5) : "-",
             "(" + detail::fmt(r.epsilon, 4) + ", " + detail::fmt(r.delta, 4) + ")"});
    }
    std::vector<std::size_t> widths(rows[0].size(), 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], row[c].size());
    std::ostringstream os;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            os << std::left << std::setw(static_cast<int>(widths[c]) + 2) << row[c];
        }
        os << '\n';
    }
    return os.str();
}

// Deterministic textual report for one experiment (no wall-clock content).
inline std::string render_report(const ExperimentReport& report) {
    std::ostringstream os;
    os << "label," << report.label << '\n';
    os << "privacy," << (report.dp_active ? detail::fmt(report.epsilon, 6) : "inf") << ','
       << detail::fmt(report.delta, 4) << '\n';
    for (const auto& ck : report.checkpoints) {
        const AuditReport& a = ck.report;
        os << "checkpoint," << ck.at << ",epochs," << detail::fmt(ck.epochs, 6)
           << ",rs," << a.rs_memorized << ",bs," << a.bs_memorized;
        if (a.has_utility)
            os << ",recall," << detail::fmt(a.utility.recall_at_1, 9) << ",perplexity,"
               << detail::fmt(a.utility.perplexity, 9);
        os << '\n';
        for (std::size_t i = 0; i < a.specs.size(); ++i) {
            os << "canary," << a.specs[i].canary_id << ",p_u," << detail::fmt(a.specs[i].p_u, 6)
               << ",p_e," << detail::fmt(a.specs[i].p_e, 6) << ",rank," << a.ranks[i].rank
               << ",rs_mem," << (a.ranks[i].memorized ? 1 : 0) << ",bs_mem,"
               << (a.beams[i].memorized ? 1 : 0) << '\n';
        }
    }
    return os.str();
}

}  // namespace fedsim
