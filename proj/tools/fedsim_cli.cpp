// fedsim command-line front end.
//
// Subcommands:
//   gen-corpus       synthetic user-partitioned corpus -> text file
//   insert-canaries  sample a canary grid and insert it into a corpus
//   train            central or federated training -> checkpoint + log
//   audit            rank/extraction audit of a checkpoint
//   budget           RDP accounting for (q, z, T, delta)
//   run              full pipeline from a JSON manifest
//   emit-table       comparison table from run reports

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/fedsim.hpp"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

void write_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << content;
}

json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return json::parse(is);
}

int cmd_gen_corpus(const std::string& out, std::size_t vocab_size, std::size_t n_users,
                   std::size_t examples_per_user, std::size_t example_len,
                   double heterogeneity, std::uint64_t seed) {
    FederatedCorpus corpus = generate_synthetic_corpus(vocab_size, n_users, examples_per_user,
                                                       example_len, seed, heterogeneity);
    fs::path p(out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    save_corpus_text(corpus, out);
    std::cout << "wrote " << out << ": " << corpus.user_count() << " users, "
              << corpus.example_count() << " examples, " << corpus.word_count() << " words\n";
    return 0;
}

int cmd_insert_canaries(const std::string& corpus_path, const std::string& out_dir,
                        std::vector<double> p_u_set, std::vector<double> p_e_set,
                        std::size_t per_config, std::size_t length, bool no_resample,
                        std::uint64_t seed, std::size_t max_vocab) {
    FederatedCorpus corpus = load_corpus_text(corpus_path, max_vocab);
    if (p_u_set.empty()) p_u_set = default_p_u_set();
    if (p_e_set.empty()) p_e_set = default_p_e_set();
    std::vector<CanarySpec> specs =
        canary_grid(corpus.vocabulary, p_u_set, p_e_set, per_config, seed, length);
    InsertionResult result = insert_canaries(corpus, specs, seed, !no_resample);

    fs::create_directories(out_dir);
    save_corpus_text(result.corpus, out_dir + "/corpus_with_canaries.txt");
    std::ofstream ledger_csv(out_dir + "/ledger.csv");
    save_ledger_csv(result.ledger, ledger_csv);
    json bundle;
    bundle["specs"] = specs_to_json(specs);
    bundle["ledger"] = ledger_to_json(result.ledger);
    write_file(out_dir + "/canaries.json", bundle.dump(2) + "\n");
    std::cout << "inserted " << result.ledger.n_insertions() << " canary copies across "
              << specs.size() << " canaries; outputs in " << out_dir << "\n";
    return 0;
}

int cmd_budget(double q, double z, std::size_t rounds, double delta,
               const std::string& bound_name, const std::string& curve_out) {
    SubsamplingBound bound = bound_name == "poisson" ? SubsamplingBound::kPoisson
                                                     : SubsamplingBound::kWithoutReplacement;
    MomentsAccountant accountant(default_rdp_orders(), bound);
    accountant.accum_priv_spending(q, z, rounds);
    DpGuarantee g = accountant.get_privacy_spent(delta);
    std::cout << "epsilon = " << g.epsilon << " at delta = " << delta
              << " (optimal order " << g.optimal_order << ", " << rounds << " rounds, q = " << q
              << ", z = " << z << ", bound = " << bound_name << ")\n";
    if (!curve_out.empty()) {
        std::ostringstream csv;
        csv << "order,eps_rdp,eps_dp\n";
        const RdpCurve& curve = accountant.curve();
        for (std::size_t i = 0; i < curve.orders.size(); ++i)
            csv << curve.orders[i] << ',' << curve.eps_rdp[i] << ','
                << curve.eps_rdp[i] + std::log(1.0 / delta) / (curve.orders[i] - 1.0) << '\n';
        write_file(curve_out, csv.str());
    }
    return 0;
}

int cmd_run(const std::string& manifest_path, const std::string& out_dir_override,
            std::uint64_t seed_override, bool has_seed_override) {
    ExperimentConfig cfg = load_manifest(manifest_path);
    if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
    if (has_seed_override) cfg.seed = seed_override;
    ExperimentReport report = run_experiment(cfg);
    fs::create_directories(cfg.out_dir);
    write_file(cfg.out_dir + "/report.txt", render_report(report));
    write_file(cfg.out_dir + "/report.json", report_to_json(report).dump(2) + "\n");
    write_file(cfg.out_dir + "/table.txt", emit_table_text({report}));
    std::cout << emit_table_text({report});
    return 0;
}

int cmd_emit_table(const std::vector<std::string>& report_paths, const std::string& csv_out) {
    std::vector<ExperimentReport> reports;
    for (const auto& p : report_paths) reports.push_back(report_from_json(read_json(p)));
    std::cout << emit_table_text(reports);
    if (!csv_out.empty()) write_file(csv_out, emit_table_csv(reports));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated-learning memorization-audit toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string out_dir = "out";

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    std::size_t vocab_size = 50, n_users = 200, examples_per_user = 80, example_len = 5;
    double heterogeneity = 0.0;
    std::string corpus_out = "corpus.txt";
    gen->add_option("--vocab-size", vocab_size);
    gen->add_option("--n-users", n_users);
    gen->add_option("--examples-per-user", examples_per_user);
    gen->add_option("--example-len", example_len);
    gen->add_option("--heterogeneity", heterogeneity);
    gen->add_option("--seed", seed);
    gen->add_option("--out", corpus_out);

    // insert-canaries
    auto* ins = app.add_subcommand("insert-canaries", "insert a canary grid into a corpus");
    std::string corpus_in;
    std::vector<double> p_u_set, p_e_set;
    std::size_t per_config = 10, canary_length = 5, max_vocab = 10000;
    bool no_resample = false;
    ins->add_option("--corpus", corpus_in)->required();
    ins->add_option("--p-u", p_u_set);
    ins->add_option("--p-e", p_e_set);
    ins->add_option("--per-config", per_config);
    ins->add_option("--length", canary_length);
    ins->add_option("--max-vocab", max_vocab);
    ins->add_flag("--no-resample", no_resample);
    ins->add_option("--seed", seed);
    ins->add_option("--out-dir", out_dir);

    // train
    auto* train = app.add_subcommand("train", "train per a manifest, save a checkpoint");
    std::string manifest_path;
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--out-dir", out_dir);
    bool train_seed_given = false;
    train->add_option("--seed", seed)->each([&](const std::string&) { train_seed_given = true; });

    // audit
    auto* audit = app.add_subcommand("audit", "audit a checkpoint against a canary bundle");
    std::string ckpt_path, canaries_path, audit_corpus;
    std::size_t ref_size = 10000, prefix_len = 1, beam_width = 5;
    audit->add_option("--checkpoint", ckpt_path)->required();
    audit->add_option("--canaries", canaries_path)->required();
    audit->add_option("--corpus", audit_corpus);
    audit->add_option("--max-vocab", max_vocab);
    audit->add_option("--reference-size", ref_size);
    audit->add_option("--prefix-len", prefix_len);
    audit->add_option("--beam-width", beam_width);
    audit->add_option("--seed", seed);
    audit->add_option("--out-dir", out_dir);

    // budget
    auto* budget = app.add_subcommand("budget", "privacy budget for (q, z, T, delta)");
    double q = 0.0, z = 1.0, delta = 1e-7;
    std::size_t rounds = 1;
    std::string bound_name = "without-replacement", curve_out;
    budget->add_option("--q", q)->required();
    budget->add_option("--z", z)->required();
    budget->add_option("--rounds", rounds)->required();
    budget->add_option("--delta", delta);
    budget->add_option("--bound", bound_name)
        ->check(CLI::IsMember({"poisson", "without-replacement"}));
    budget->add_option("--curve-out", curve_out);

    // run
    auto* run = app.add_subcommand("run", "full pipeline from a manifest");
    std::string run_manifest, run_out_dir;
    bool run_seed_given = false;
    run->add_option("--manifest", run_manifest)->required();
    run->add_option("--out-dir", run_out_dir);
    run->add_option("--seed", seed)->each([&](const std::string&) { run_seed_given = true; });

    // emit-table
    auto* table = app.add_subcommand("emit-table", "table from run report.json files");
    std::vector<std::string> report_paths;
    std::string table_csv;
    table->add_option("reports", report_paths)->required();
    table->add_option("--csv-out", table_csv);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_corpus(corpus_out, vocab_size, n_users, examples_per_user,
                                  example_len, heterogeneity, seed);
        if (ins->parsed())
            return cmd_insert_canaries(corpus_in, out_dir, p_u_set, p_e_set, per_config,
                                       canary_length, no_resample, seed, max_vocab);
        if (train->parsed()) {
            ExperimentConfig cfg = load_manifest(manifest_path);
            if (train_seed_given) cfg.seed = seed;
            cfg.out_dir = out_dir;
            ParamVector params;
            ModelConfig model_cfg;
            run_experiment(cfg, &params, &model_cfg, /*skip_audit=*/true);
            fs::create_directories(cfg.out_dir);
            save_checkpoint(params, model_cfg, cfg.out_dir + "/checkpoint.bin");
            std::cout << "wrote " << cfg.out_dir << "/checkpoint.bin ("
                      << model_cfg.param_count() << " parameters)\n";
            return 0;
        }
        if (audit->parsed()) {
            auto [params, model_cfg] = load_checkpoint(ckpt_path);
            json bundle = read_json(canaries_path);
            std::vector<CanarySpec> specs = specs_from_json(bundle.at("specs"));
            CanaryLedger ledger = ledger_from_json(bundle.at("ledger"));
            AuditConfig acfg;
            acfg.reference_size = ref_size;
            acfg.prefix_len = prefix_len;
            acfg.beam_width = beam_width;
            acfg.reference_seed = derive_seed(seed, "refs");
            FederatedCorpus eval;
            const FederatedCorpus* eval_ptr = nullptr;
            if (!audit_corpus.empty()) {
                eval = load_corpus_text(audit_corpus, max_vocab);
                eval_ptr = &eval;
            }
            AuditReport report =
                audit_checkpoint(params, model_cfg, ledger, specs, acfg, eval_ptr);
            fs::create_directories(out_dir);
            std::ofstream os(out_dir + "/audit.csv");
            save_audit_csv(report, ledger, os);
            std::cout << "rs_memorized=" << report.rs_memorized
                      << " bs_memorized=" << report.bs_memorized << " -> " << out_dir
                      << "/audit.csv\n";
            return 0;
        }
        if (budget->parsed())
            return cmd_budget(q, z, rounds, delta, bound_name, curve_out);
        if (run->parsed()) return cmd_run(run_manifest, run_out_dir, seed, run_seed_given);
        if (table->parsed()) return cmd_emit_table(report_paths, table_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
