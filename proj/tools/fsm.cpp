/// Command-line front end for the feature-similarity error-correction
/// pipeline. Each subcommand performs exactly one stage and stages its result
/// on disk, so any artifact can be produced externally and substituted:
/// simulate, extract, build-db, similarity, train, predict, correct,
/// evaluate, project and the all-stages campaign driver.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fsm/campaign.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

std::string resolved_out(const std::string& p) {
    std::filesystem::path path(p);
    const char* root = std::getenv(fsm::kOutRootEnv);
    if (root && *root && path.is_relative()) path = std::filesystem::path(root) / path;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    return path.string();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Every stage records what it read, what it wrote and how long it took.
void stage_manifest(const std::string& out_path, const std::string& command, fsm::TextHeader h, double seconds) {
    h.set("command", command);
    h.set("version", kVersion);
    h.set("schema", std::to_string(fsm::kPipelineSchema));
    h.set_double("seconds", seconds);
    std::ostringstream os;
    h.write(os);
    fsm::write_file_atomic(out_path + ".manifest", os.str());
}

double parse_mesh_token(const std::string& s) {
    const auto slash = s.find('/');
    double h = 0.0;
    if (slash == std::string::npos) {
        h = fsm::parse_double(s, "mesh size");
    } else {
        const double a = fsm::parse_double(s.substr(0, slash), "mesh size");
        const double b = fsm::parse_double(s.substr(slash + 1), "mesh size");
        if (b == 0.0) throw std::runtime_error("mesh size denominator is zero");
        h = a / b;
    }
    if (!(h > 0.0)) throw std::runtime_error("mesh size must be positive");
    return h;
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ';';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature-similarity error correction for coarse-grid cavity simulations"};
    app.set_version_flag("--version", std::string("fsm ") + kVersion);
    app.require_subcommand(1);

    // --- simulate ---
    auto* simulate = app.add_subcommand("simulate", "solve one case onto a snapshot file");
    std::string sim_config, sim_case, sim_mesh, sim_out;
    simulate->add_option("--config", sim_config, "campaign config with the case definitions")
        ->required()
        ->check(CLI::ExistingFile);
    simulate->add_option("--case", sim_case, "case id, e.g. A-07")->required();
    simulate->add_option("--mesh", sim_mesh, "coarse spacing (e.g. 1/25) or 'fine'")->required();
    simulate->add_option("--out", sim_out, "snapshot output path")->required();

    // --- extract ---
    auto* extract = app.add_subcommand("extract", "extract per-cell physical features from a snapshot");
    std::string ext_snapshot, ext_out, ext_variant = "dimensional";
    extract->add_option("--snapshot", ext_snapshot, "snapshot file")->required()->check(CLI::ExistingFile);
    extract->add_option("--variant", ext_variant, "feature variant")
        ->check(CLI::IsMember({"dimensional", "nondimensional"}));
    extract->add_option("--out", ext_out, "feature table output path")->required();

    // --- build-db ---
    auto* build = app.add_subcommand("build-db", "pair coarse and fine snapshots into an error database");
    std::vector<std::string> bdb_lf, bdb_hf;
    std::string bdb_out, bdb_variant = "dimensional";
    build->add_option("--lf", bdb_lf, "coarse snapshot file (repeatable)")->required()->check(CLI::ExistingFile);
    build->add_option("--hf", bdb_hf, "fine snapshot file (repeatable)")->required()->check(CLI::ExistingFile);
    build->add_option("--variant", bdb_variant, "feature variant")
        ->check(CLI::IsMember({"dimensional", "nondimensional"}));
    build->add_option("--out", bdb_out, "database output path")->required();

    // --- similarity ---
    auto* similarity = app.add_subcommand("similarity", "KDE distance of a target database to a training database");
    std::string sim_train, sim_target, sim_report = "similarity.txt", sim_format = "text";
    double sim_quantile = 0.99, sim_fraction = 0.10;
    long sim_max_rows = 50000;
    std::uint64_t sim_seed = fsm::KdeOptions{}.seed;
    similarity->add_option("--train", sim_train, "training database")->required()->check(CLI::ExistingFile);
    similarity->add_option("--target", sim_target, "target database")->required()->check(CLI::ExistingFile);
    similarity->add_option("--out", sim_report, "report output path");
    similarity->add_option("--format", sim_format, "report format")->check(CLI::IsMember({"text", "json"}));
    similarity->add_option("--self-quantile", sim_quantile, "train self-distance percentile");
    similarity->add_option("--extrapolation-fraction", sim_fraction, "exceed fraction that flips the label");
    similarity->add_option("--max-train-rows", sim_max_rows, "KDE training-row budget");
    similarity->add_option("--seed", sim_seed, "subsample seed");

    // --- train ---
    auto* train = app.add_subcommand("train", "train the error surrogate on a database");
    std::string trn_db, trn_out;
    std::vector<int> trn_hidden = {12, 12};
    std::string trn_activation = "tanh";
    int trn_epochs = 150;
    long trn_max_rows = 0;
    double trn_validation = 0.0;
    std::uint64_t trn_seed = 1;
    train->add_option("--db", trn_db, "training database")->required();
    train->add_option("--out", trn_out, "model output path")->required();
    train->add_option("--hidden", trn_hidden, "hidden layer widths");
    train->add_option("--activation", trn_activation, "hidden activation")
        ->check(CLI::IsMember({"tanh", "linear"}));
    train->add_option("--epochs", trn_epochs, "training epoch budget");
    train->add_option("--max-rows", trn_max_rows, "row subsample budget (0 = all)");
    train->add_option("--validation-fraction", trn_validation, "held-out fraction scored in the manifest");
    train->add_option("--seed", trn_seed, "initialization/subsample seed");

    // --- predict ---
    auto* predict = app.add_subcommand("predict", "predict per-cell errors for a snapshot or feature table");
    std::string prd_model, prd_snapshot, prd_features, prd_out;
    predict->add_option("--model", prd_model, "trained model")->required()->check(CLI::ExistingFile);
    predict->add_option("--snapshot", prd_snapshot, "coarse snapshot (features extracted with the model's variant)")
        ->check(CLI::ExistingFile);
    predict->add_option("--features", prd_features, "pre-extracted feature table")->check(CLI::ExistingFile);
    predict->add_option("--out", prd_out, "delta table output path")->required();

    // --- correct ---
    auto* correct = app.add_subcommand("correct", "apply a delta table to a coarse snapshot");
    std::string cor_snapshot, cor_delta, cor_out;
    correct->add_option("--snapshot", cor_snapshot, "coarse snapshot")->required()->check(CLI::ExistingFile);
    correct->add_option("--delta", cor_delta, "predicted per-cell errors")->required()->check(CLI::ExistingFile);
    correct->add_option("--out", cor_out, "corrected snapshot output path")->required();

    // --- evaluate ---
    auto* evaluate = app.add_subcommand("evaluate", "NRMSE of a candidate snapshot against a reference");
    std::string evl_reference, evl_candidate, evl_raw, evl_out = "evaluation.txt", evl_format = "text";
    evaluate->add_option("--reference", evl_reference, "reference snapshot (projected if on a finer grid)")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--candidate", evl_candidate, "candidate snapshot")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--raw", evl_raw, "uncorrected snapshot for side-by-side NRMSE")->check(CLI::ExistingFile);
    evaluate->add_option("--out", evl_out, "report output path");
    evaluate->add_option("--format", evl_format, "report format")->check(CLI::IsMember({"text", "json"}));

    // --- project ---
    auto* project = app.add_subcommand("project", "t-SNE projection of database feature rows");
    std::string prj_db, prj_target, prj_out = "overlay.svg", prj_points;
    double prj_perplexity = 30.0;
    int prj_iterations = 1000, prj_max_rows = 6000;
    std::uint64_t prj_seed = fsm::TsneOptions{}.seed;
    project->add_option("--db", prj_db, "training database")->required()->check(CLI::ExistingFile);
    project->add_option("--target", prj_target, "target database overlaid in red")->check(CLI::ExistingFile);
    project->add_option("--out", prj_out, "overlay SVG output path");
    project->add_option("--points", prj_points, "also write embedding coordinates to this path");
    project->add_option("--perplexity", prj_perplexity, "t-SNE perplexity");
    project->add_option("--iterations", prj_iterations, "gradient-descent iterations");
    project->add_option("--max-rows", prj_max_rows, "row budget (larger inputs are subsampled)");
    project->add_option("--seed", prj_seed, "init/subsample seed");

    // --- campaign ---
    auto* campaign = app.add_subcommand("campaign", "run every stage for every test in a campaign config");
    std::string cmp_config, cmp_out, cmp_cache;
    int cmp_workers = 0;
    std::uint64_t cmp_seed = 0;
    bool cmp_has_seed = false, cmp_validate = false;
    campaign->add_option("--config", cmp_config, "campaign config file")->required()->check(CLI::ExistingFile);
    campaign->add_flag("--validate", cmp_validate, "parse and echo the normalized config, then exit");
    campaign->add_option("--out", cmp_out, "output directory (overrides config/environment)");
    campaign->add_option("--cache", cmp_cache, "solve-cache directory");
    campaign->add_option("--workers", cmp_workers, "parallel worker bound (0 = auto)");
    campaign->add_option("--seed", cmp_seed, "seed override")->each([&](const std::string&) { cmp_has_seed = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (simulate->parsed()) {
            const fsm::CampaignConfig cfg = fsm::load_campaign_config(sim_config);
            const fsm::CaseSpec* spec = nullptr;
            for (const auto& ds : cfg.datasets)
                for (const auto& cs : ds.cases)
                    if (cs.id == sim_case) spec = &cs;
            if (!spec) throw std::runtime_error("config " + sim_config + ": no case with id '" + sim_case + "'");
            const fsm::DatasetSpec* ds = nullptr;
            for (const auto& d : cfg.datasets)
                if (d.label == spec->dataset) ds = &d;
            fsm::SolverConfig sc;
            sc.max_outer_iterations = cfg.max_outer_iterations;
            fsm::SolveStats st;
            fsm::FieldSnapshot snap;
            if (sim_mesh == "fine") {
                sc.tolerance = cfg.high_tolerance;
                sc.fidelity = "high";
                const fsm::StructuredGrid2D g = fsm::StructuredGrid2D::for_case(*spec, ds->fine_nx, ds->fine_ny);
                snap = fsm::solve_steady_cascade(*spec, g, sc, &st);
            } else {
                sc.tolerance = cfg.low_tolerance;
                sc.fidelity = "low";
                const fsm::StructuredGrid2D g = fsm::grid_for_mesh_size(*spec, parse_mesh_token(sim_mesh));
                snap = fsm::solve_steady(*spec, g, sc, nullptr, &st);
            }
            const std::string out = resolved_out(sim_out);
            fsm::save_snapshot(out, snap);
            fsm::TextHeader h;
            h.set("config", sim_config);
            h.set("case", sim_case);
            h.set("mesh", sim_mesh);
            h.set("grid", std::to_string(snap.grid.nx()) + "x" + std::to_string(snap.grid.ny()));
            h.set_long("iterations", st.iterations);
            h.set_double("resid_mass", st.resid_mass);
            h.set("output", out);
            stage_manifest(out, "simulate", h, seconds_since(t0));
            std::cout << out << ": " << snap.grid.nx() << "x" << snap.grid.ny() << " in " << st.iterations
                      << " iterations\n";
        } else if (extract->parsed()) {
            const fsm::FieldSnapshot snap = fsm::load_snapshot(ext_snapshot);
            const fsm::FeatureMatrix m = fsm::extract_features(snap, fsm::variant_from_string(ext_variant));
            const std::string out = resolved_out(ext_out);
            fsm::save_feature_matrix(out, m);
            fsm::TextHeader h;
            h.set("snapshot", ext_snapshot);
            h.set("variant", ext_variant);
            h.set_long("rows", m.rows());
            h.set("output", out);
            stage_manifest(out, "extract", h, seconds_since(t0));
            std::cout << out << ": " << m.rows() << " rows (" << ext_variant << ")\n";
        } else if (build->parsed()) {
            std::vector<fsm::FieldSnapshot> lf, hf;
            for (const auto& p : bdb_lf) lf.push_back(fsm::load_snapshot(p));
            for (const auto& p : bdb_hf) hf.push_back(fsm::load_snapshot(p));
            fsm::ErrorDatabase db =
                fsm::build_error_database(std::move(lf), hf, fsm::variant_from_string(bdb_variant));
            const std::string out = resolved_out(bdb_out);
            fsm::save_error_database(out, db);
            fsm::TextHeader h;
            h.set_long("coarse_snapshots", static_cast<long>(bdb_lf.size()));
            h.set_long("fine_snapshots", static_cast<long>(bdb_hf.size()));
            h.set("variant", bdb_variant);
            h.set_long("rows", db.rows());
            h.set("output", out);
            stage_manifest(out, "build-db", h, seconds_since(t0));
            std::cout << out << ": " << db.rows() << " rows\n";
        } else if (similarity->parsed()) {
            const fsm::ErrorDatabase train_db = fsm::load_error_database(sim_train);
            const fsm::ErrorDatabase target_db = fsm::load_error_database(sim_target);
            fsm::PccThresholds thr;
            thr.self_quantile = sim_quantile;
            thr.extrapolation_fraction = sim_fraction;
            fsm::KdeOptions ko;
            ko.max_train_rows = sim_max_rows;
            ko.seed = sim_seed;
            const fsm::SimilarityReport rep = fsm::pcc_report(train_db, target_db, thr, ko);
            const std::string out = resolved_out(sim_report);
            if (sim_format == "json") {
                nlohmann::json j;
                j["d_kde_mean"] = rep.d_mean;
                j["self_baseline"] = rep.self_baseline;
                j["exceed_fraction"] = rep.exceed_fraction;
                j["pcc_label"] = rep.pcc_label;
                j["train_rows"] = rep.train_rows;
                j["target_rows"] = rep.target_rows;
                j["subsampled_from"] = rep.subsampled_from;
                j["variant"] = fsm::to_string(train_db.variant);
                j["histogram"] = rep.histogram;
                j["distances"] = rep.distances;
                fsm::write_file_atomic(out, j.dump(1) + "\n");
            } else {
                fsm::save_similarity_report(out, rep);
            }
            fsm::TextHeader h;
            h.set("train", sim_train);
            h.set("target", sim_target);
            h.set("variant", fsm::to_string(train_db.variant));
            h.set_double("d_kde_mean", rep.d_mean);
            h.set("pcc_label", rep.pcc_label);
            h.set("output", out);
            stage_manifest(out, "similarity", h, seconds_since(t0));
            std::cout << out << ": D_KDE = " << fsm::format_double(rep.d_mean) << " (" << rep.pcc_label << ")\n";
        } else if (train->parsed()) {
            const fsm::ErrorDatabase db = fsm::load_error_database(trn_db);
            fsm::TrainConfig tc;
            tc.hidden = trn_hidden;
            tc.activation = trn_activation;
            tc.max_epochs = trn_epochs;
            tc.max_rows = trn_max_rows;
            tc.validation_fraction = trn_validation;
            tc.seed = trn_seed;
            const fsm::DfnnModel model = fsm::train_surrogate(db, tc);
            const std::string out = resolved_out(trn_out);
            fsm::save_surrogate(out, model);
            fsm::TextHeader h;
            h.set("db", trn_db);
            h.set("variant", fsm::to_string(model.variant));
            h.set("seed", std::to_string(model.manifest.seed));
            h.set_long("epochs", model.manifest.epochs);
            h.set_long("rows_used", model.manifest.rows_used);
            h.set_double("objective", model.manifest.objective);
            h.set("stop_reason", model.manifest.stop_reason);
            h.set("output", out);
            stage_manifest(out, "train", h, seconds_since(t0));
            std::cout << out << ": " << model.manifest.epochs << " epochs, objective "
                      << fsm::format_double(model.manifest.objective) << " (" << model.manifest.stop_reason << ")\n";
        } else if (predict->parsed()) {
            if (prd_snapshot.empty() == prd_features.empty())
                throw std::runtime_error("predict: give exactly one of --snapshot or --features");
            const fsm::DfnnModel model = fsm::load_surrogate(prd_model);
            fsm::FeatureMatrix feats;
            if (!prd_snapshot.empty())
                feats = fsm::extract_features(fsm::load_snapshot(prd_snapshot), model.variant);
            else
                feats = fsm::load_feature_matrix(prd_features);
            const fsm::DeltaPrediction pred = fsm::predict_errors(model, feats);
            const std::string out = resolved_out(prd_out);
            fsm::save_delta_prediction(out, pred);
            fsm::TextHeader h;
            h.set("model", prd_model);
            h.set("input", prd_snapshot.empty() ? prd_features : prd_snapshot);
            h.set("variant", fsm::to_string(model.variant));
            h.set_long("rows", pred.rows());
            h.set("output", out);
            stage_manifest(out, "predict", h, seconds_since(t0));
            std::cout << out << ": " << pred.rows() << " rows\n";
        } else if (correct->parsed()) {
            const fsm::FieldSnapshot lf = fsm::load_snapshot(cor_snapshot);
            const fsm::DeltaPrediction pred = fsm::load_delta_prediction(cor_delta);
            const fsm::FieldSnapshot corrected = fsm::correct_snapshot(lf, pred);
            const std::string out = resolved_out(cor_out);
            fsm::save_snapshot(out, corrected);
            fsm::TextHeader h;
            h.set("snapshot", cor_snapshot);
            h.set("delta", cor_delta);
            h.set("output", out);
            stage_manifest(out, "correct", h, seconds_since(t0));
            std::cout << out << ": corrected " << corrected.grid.cell_count() << " cells\n";
        } else if (evaluate->parsed()) {
            fsm::FieldSnapshot ref = fsm::load_snapshot(evl_reference);
            const fsm::FieldSnapshot cand = fsm::load_snapshot(evl_candidate);
            if (ref.grid.nx() != cand.grid.nx() || ref.grid.ny() != cand.grid.ny())
                ref = fsm::project_fine_to_coarse(ref, cand.grid);
            const fsm::FieldNrmse nm = fsm::nrmse_fields(ref, cand);
            fsm::FieldNrmse raw{};
            const bool has_raw = !evl_raw.empty();
            if (has_raw) raw = fsm::nrmse_fields(ref, fsm::load_snapshot(evl_raw));
            const std::string out = resolved_out(evl_out);
            fsm::TextHeader h;
            h.set("velocity_denominator", "mean absolute reference");
            h.set("temperature_denominator", "mean reference (kelvin)");
            h.set("reference", evl_reference);
            h.set("candidate", evl_candidate);
            h.set_double("nrmse_u", nm.u);
            h.set_double("nrmse_v", nm.v);
            h.set_double("nrmse_t", nm.t);
            if (has_raw) {
                h.set("raw", evl_raw);
                h.set_double("raw_nrmse_u", raw.u);
                h.set_double("raw_nrmse_v", raw.v);
                h.set_double("raw_nrmse_t", raw.t);
            }
            if (evl_format == "json") {
                nlohmann::json j;
                j["velocity_denominator"] = "mean absolute reference";
                j["temperature_denominator"] = "mean reference (kelvin)";
                j["nrmse"] = {{"u", nm.u}, {"v", nm.v}, {"t", nm.t}};
                if (has_raw) j["raw_nrmse"] = {{"u", raw.u}, {"v", raw.v}, {"t", raw.t}};
                fsm::write_file_atomic(out, j.dump(1) + "\n");
            } else {
                std::ostringstream os;
                h.write(os);
                fsm::write_file_atomic(out, os.str());
            }
            stage_manifest(out, "evaluate", h, seconds_since(t0));
            std::cout << out << ": nrmse u=" << fsm::format_double(nm.u) << " v=" << fsm::format_double(nm.v)
                      << " t=" << fsm::format_double(nm.t) << "\n";
        } else if (project->parsed()) {
            const fsm::ErrorDatabase train_db = fsm::load_error_database(prj_db);
            fsm::FeatureMatrix rows = train_db.feature_matrix();
            long train_rows = train_db.rows();
            if (!prj_target.empty()) {
                const fsm::ErrorDatabase target_db = fsm::load_error_database(prj_target);
                rows = fsm::detail::stacked_features(train_db, target_db);
            }
            fsm::TsneOptions to;
            to.perplexity = prj_perplexity;
            to.iterations = prj_iterations;
            to.max_rows = prj_max_rows;
            to.seed = prj_seed;
            const fsm::TsneEmbedding emb = fsm::tsne_embed(rows, to);
            std::vector<std::uint8_t> is_target(emb.row_indices.size(), 0);
            for (std::size_t r = 0; r < emb.row_indices.size(); ++r)
                is_target[r] = emb.row_indices[r] >= static_cast<std::size_t>(train_rows) ? 1 : 0;
            const std::string out = resolved_out(prj_out);
            fsm::write_tsne_overlay_svg(out, emb, is_target, "feature-space projection");
            if (!prj_points.empty()) {
                std::ostringstream os;
                fsm::TextHeader ph;
                ph.set_long("rows", emb.rows());
                ph.set_long("subsampled_from", emb.subsampled_from);
                ph.write(os);
                os << "row x y is_target\n";
                for (int r = 0; r < emb.rows(); ++r)
                    os << emb.row_indices[r] << ' ' << fsm::format_double(emb.xy[2 * r]) << ' '
                       << fsm::format_double(emb.xy[2 * r + 1]) << ' ' << int(is_target[r]) << '\n';
                fsm::write_file_atomic(resolved_out(prj_points), os.str());
            }
            fsm::TextHeader h;
            h.set("db", prj_db);
            if (!prj_target.empty()) h.set("target", prj_target);
            h.set_long("rows", emb.rows());
            h.set_double("final_kl", emb.kl_history.empty() ? -1.0 : emb.kl_history.back());
            h.set("output", out);
            stage_manifest(out, "project", h, seconds_since(t0));
            std::cout << out << ": " << emb.rows() << " points\n";
        } else if (campaign->parsed()) {
            fsm::CampaignConfig cfg = fsm::load_campaign_config(cmp_config);
            if (cmp_has_seed) cfg.seed = cmp_seed;
            if (cmp_validate) {
                std::cout << fsm::normalized_config_json(cfg).dump(1) << "\n";
                return 0;
            }
            fsm::RunOptions ro;
            ro.out_dir = cmp_out;
            ro.cache_dir = cmp_cache;
            ro.workers = cmp_workers;
            ro.has_seed = cmp_has_seed;
            ro.seed = cmp_seed;
            const fsm::CampaignOutcome oc = fsm::run_campaign(cfg, ro);
            std::cout << "campaign " << cfg.name << ": " << oc.trend.rows.size() << " tests in "
                      << fsm::format_double(oc.total_seconds) << " s\n";
            for (const auto& r : oc.trend.rows)
                std::cout << "  test " << r.test_id << " (" << r.variant << ") d_kde "
                          << fsm::format_double(r.d_kde) << "  nrmse u/v/T " << fsm::format_double(r.corrected.u)
                          << " " << fsm::format_double(r.corrected.v) << " " << fsm::format_double(r.corrected.t)
                          << "\n";
            std::cout << (oc.out_dir / "trend.txt").string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
