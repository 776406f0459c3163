// c2fs: coarse-to-fine few-shot pipeline driver.
//
// Subcommands: data synth / data validate, train, extract, calibrate, eval,
// probe, ablate. Every run that takes --out-dir echoes its resolved
// configuration there for reproducibility.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "c2fs/c2fs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw c2fs::Error("cannot write " + path);
    out << text;
}

void echo_config(const c2fs::RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/config.resolved.ini", cfg.resolved_text());
}

c2fs::ModelBundle<float> load_model(const c2fs::RunConfig& cfg, const std::string& checkpoint) {
    auto model = c2fs::make_model<float>(cfg.encoder_config(), cfg.coarse_count, cfg.ema_coeff,
                                         c2fs::derive_seed(cfg.seed, 0xA5C));
    auto params = model.all_params();
    c2fs::load_checkpoint_into(checkpoint, params);
    return model;
}

json report_to_json(const c2fs::EvalReport& r) {
    return json{{"episodes", r.episode_count},
                {"mean_accuracy", r.mean_accuracy},
                {"ci95_halfwidth", r.ci95_halfwidth}};
}

int run_data_synth(const std::string& config_path, const std::string& out,
                   const std::string& test_out) {
    auto cfg = c2fs::RunConfig::from_file(config_path);
    auto [train, test] = c2fs::generate_split(cfg.synth_config(), cfg.train_per_fine,
                                              cfg.test_per_fine);
    c2fs::save_dataset(out, train);
    std::cout << "wrote " << train.items.size() << " training examples to " << out << "\n";
    if (!test_out.empty()) {
        c2fs::save_dataset(test_out, test);
        std::cout << "wrote " << test.items.size() << " test examples to " << test_out << "\n";
    }
    return 0;
}

int run_data_validate(const std::string& path) {
    auto info = c2fs::validate_dataset_file(path);
    std::cout << "ok: " << info.records << " records, "
              << (info.vector_mode()
                      ? "vector dim " + std::to_string(info.channels)
                      : std::to_string(info.channels) + "x" + std::to_string(info.height) + "x" +
                            std::to_string(info.width))
              << ", " << info.coarse_count << " coarse / " << info.fine_count
              << " fine classes\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& out_dir,
              const std::string& data_path) {
    auto cfg = c2fs::RunConfig::from_file(config_path);
    echo_config(cfg, out_dir);

    c2fs::Dataset train_set;
    if (data_path.empty()) {
        auto [train, test] = c2fs::generate_split(cfg.synth_config(), cfg.train_per_fine,
                                                  cfg.test_per_fine);
        train_set = std::move(train);
    } else {
        train_set = c2fs::load_dataset(data_path);
        if (train_set.hierarchy.coarse_count != cfg.coarse_count)
            throw c2fs::ConfigError("train: dataset has " +
                                    std::to_string(train_set.hierarchy.coarse_count) +
                                    " coarse classes but the config declares " +
                                    std::to_string(cfg.coarse_count));
    }

    auto model = c2fs::make_model<float>(cfg.encoder_config(), cfg.coarse_count, cfg.ema_coeff,
                                         c2fs::derive_seed(cfg.seed, 0xA5C));
    c2fs::Trainer<float> trainer(train_set, model, cfg.train_config(), out_dir);
    trainer.epoch_callback = [](const c2fs::EpochRecord& r) {
        std::cout << "epoch " << r.epoch << " total " << r.losses.total << " (ce " << r.losses.l_ce
                  << ", cont " << r.losses.l_cont << ", rec " << r.losses.l_rec << ", align "
                  << r.losses.l_align << ") lr " << r.lr << "\n";
    };
    trainer.run();
    std::cout << "final checkpoint: " << out_dir << "/ckpt_final.c2fsckpt\n";
    return 0;
}

int run_extract(const std::string& config_path, const std::string& checkpoint,
                const std::string& data_path, const std::string& out) {
    auto cfg = c2fs::RunConfig::from_file(config_path);
    auto dataset = c2fs::load_dataset(data_path);
    auto model = load_model(cfg, checkpoint);
    auto repo = c2fs::build_repository(dataset, model);
    repo.save(out);
    std::cout << "wrote repository with " << repo.size() << " entries (d=" << repo.dim() << ") to "
              << out << "\n";
    return 0;
}

int run_calibrate(const std::string& repo_path, const std::string& support_path, int k, int m,
                  int n, bool true_coarse, const std::string& out) {
    auto repo = c2fs::FeatureRepository::load(repo_path);

    std::ifstream in(support_path);
    if (!in) throw c2fs::Error("cannot open support file: " + support_path);
    json support = json::parse(in);

    c2fs::CalibrationConfig cal;
    cal.k = k;
    cal.m = m;
    cal.n = n;

    json result = json::array();
    for (const auto& cls : support.at("classes")) {
        const int fine = cls.at("fine").get<int>();
        std::vector<std::vector<double>> sup;
        for (const auto& emb : cls.at("embeddings")) {
            auto v = emb.get<std::vector<double>>();
            if (v.size() != repo.dim())
                throw c2fs::ValidationError("support embedding dimension " +
                                            std::to_string(v.size()) + " does not match repo d=" +
                                            std::to_string(repo.dim()));
            double nrm = 0;
            for (double x : v) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm < 1e-12) throw c2fs::ValidationError("zero support embedding");
            for (double& x : v) x /= nrm;
            sup.push_back(std::move(v));
        }
        auto proto = c2fs::init_prototype(fine, sup);
        int coarse;
        if (true_coarse) {
            if (!cls.contains("coarse"))
                throw c2fs::ValidationError("--true-coarse needs a 'coarse' field per class");
            coarse = cls.at("coarse").get<int>();
        } else {
            coarse = c2fs::assign_coarse(proto, repo, cal.k);
        }
        auto res = c2fs::calibrate_class(sup, fine, coarse, repo, cal);
        result.push_back(json{{"fine", fine},
                              {"assigned_coarse", coarse},
                              {"prototype", res.prototype.vec},
                              {"s_add", res.s_add}});
    }

    json doc{{"k", k}, {"m", m}, {"n", n}, {"classes", result}};
    const std::string text = doc.dump(2) + "\n";
    if (out.empty())
        std::cout << text;
    else {
        write_text(out, text);
        std::cout << "wrote calibration for " << result.size() << " classes to " << out << "\n";
    }
    return 0;
}

int run_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& repo_path, const std::string& data_path, std::optional<int> way,
             std::optional<int> shot, std::optional<int> episodes, bool no_calibration,
             const std::string& out_dir) {
    auto cfg = c2fs::RunConfig::from_file(config_path);
    if (way) cfg.way = *way;
    if (shot) cfg.shot = *shot;
    if (episodes) cfg.episodes = *episodes;
    if (!out_dir.empty()) echo_config(cfg, out_dir);

    auto test_set = c2fs::load_dataset(data_path);
    auto model = load_model(cfg, checkpoint);
    auto eps = c2fs::sample_episodes(test_set, cfg.way, cfg.shot, cfg.queries_per_class,
                                     cfg.episodes, cfg.eval_seed);

    c2fs::EvalOptions opts;
    opts.calibrate = !no_calibration;
    opts.calib = cfg.calibration_config();
    std::optional<c2fs::FeatureRepository> repo;
    if (opts.calibrate) {
        if (repo_path.empty())
            throw c2fs::ConfigError("eval: --repo is required unless --no-calibration is set");
        repo = c2fs::FeatureRepository::load(repo_path);
    }
    auto report = c2fs::evaluate(model, test_set, eps, repo ? &*repo : nullptr, opts);

    json doc = report_to_json(report);
    doc["way"] = eps.front().way;
    doc["shot"] = cfg.shot;
    doc["calibration"] = opts.calibrate;
    std::cout << doc.dump(2) << "\n";
    std::cout << std::fixed << std::setprecision(2) << "accuracy " << 100 * report.mean_accuracy
              << " +/- " << 100 * report.ci95_halfwidth << " over " << report.episode_count
              << " episodes\n";
    if (!out_dir.empty()) write_text(out_dir + "/eval.json", doc.dump(2) + "\n");
    return 0;
}

int run_probe(const std::string& config_path, const std::string& checkpoint,
              const std::string& data_path, const std::string& test_data_path,
              const std::string& out_dir) {
    auto cfg = c2fs::RunConfig::from_file(config_path);
    if (!out_dir.empty()) echo_config(cfg, out_dir);
    auto model = load_model(cfg, checkpoint);

    c2fs::Dataset train_set, test_set;
    if (test_data_path.empty()) {
        // Deterministic 70/30 split per fine class.
        auto full = c2fs::load_dataset(data_path);
        train_set.hierarchy = test_set.hierarchy = full.hierarchy;
        train_set.input_shape = test_set.input_shape = full.input_shape;
        c2fs::Rng rng(c2fs::derive_seed(cfg.seed, 0x9B0BE));
        for (int f = 0; f < full.hierarchy.fine_count(); ++f) {
            auto idx = full.indices_of_fine(f);
            rng.shuffle(idx);
            const std::size_t cut = idx.size() * 7 / 10;
            for (std::size_t i = 0; i < idx.size(); ++i)
                (i < cut ? train_set : test_set).items.push_back(full.items[idx[i]]);
        }
    } else {
        train_set = c2fs::load_dataset(data_path);
        test_set = c2fs::load_dataset(test_data_path);
    }

    auto report = c2fs::layer_probe(model, train_set, test_set);
    json doc{{"stage1", report.accuracy[0]},
             {"stage2", report.accuracy[1]},
             {"stage3", report.accuracy[2]},
             {"stage4", report.accuracy[3]},
             {"embedding", report.accuracy[4]}};
    std::cout << doc.dump(2) << "\n";
    for (int l = 0; l < 4; ++l)
        std::cout << "stage" << l + 1 << " fine accuracy: " << report.accuracy[static_cast<std::size_t>(l)]
                  << "\n";
    std::cout << "embedding fine accuracy: " << report.accuracy[4] << "\n";
    if (!out_dir.empty()) write_text(out_dir + "/probe.json", doc.dump(2) + "\n");
    return 0;
}

std::vector<c2fs::AblationRow> load_grid(const std::string& grid) {
    if (grid == "table3") return c2fs::table3_rows();
    if (grid == "table4") return c2fs::coarse_source_rows();
    if (grid == "fig6n") return c2fs::n_sweep_rows({0, 25, 50, 100, 150});
    if (grid == "fig6k") return c2fs::k_sweep_rows({1, 5, 10, 20});

    std::ifstream in(grid);
    if (!in) throw c2fs::Error("grid is neither a preset (table3, table4, fig6n, fig6k) nor a readable file: " + grid);
    json doc = json::parse(in);
    std::vector<c2fs::AblationRow> rows;
    for (const auto& r : doc.at("rows")) {
        c2fs::AblationRow row;
        row.name = r.at("name").get<std::string>();
        row.rec = r.value("rec", false);
        row.align = r.value("align", false);
        row.cd = r.value("cd", false);
        row.cont = r.value("cont", true);
        const std::string source = r.value("coarse_source", "knn");
        if (source == "knn")
            row.source = c2fs::CoarseSource::KnnVote;
        else if (source == "true")
            row.source = c2fs::CoarseSource::TrueLabel;
        else if (source == "all")
            row.source = c2fs::CoarseSource::Unrestricted;
        else
            throw c2fs::ConfigError("grid row '" + row.name + "': bad coarse_source");
        row.n_override = r.value("n", -1);
        row.k_override = r.value("k", -1);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw c2fs::ConfigError("grid has no rows");
    return rows;
}

int run_ablate(const std::string& config_path, const std::string& grid,
               const std::string& out_dir) {
    auto cfg = c2fs::RunConfig::from_file(config_path);
    if (!out_dir.empty()) echo_config(cfg, out_dir);
    auto rows = load_grid(grid);
    auto results = c2fs::run_ablation(cfg.benchmark_config(), rows);

    json table = json::array();
    std::size_t name_width = 4;
    for (const auto& r : results) name_width = std::max(name_width, r.row.name.size());
    std::cout << std::left << std::setw(static_cast<int>(name_width + 2)) << "row"
              << std::right << std::setw(10) << "acc%" << std::setw(10) << "ci95%" << "\n";
    for (const auto& r : results) {
        if (!r.warning.empty()) std::cerr << "warning: " << r.row.name << ": " << r.warning << "\n";
        std::cout << std::left << std::setw(static_cast<int>(name_width + 2)) << r.row.name
                  << std::right << std::fixed << std::setprecision(2) << std::setw(10)
                  << 100 * r.report.mean_accuracy << std::setw(10)
                  << 100 * r.report.ci95_halfwidth << "\n";
        json row = report_to_json(r.report);
        row["name"] = r.row.name;
        if (!r.warning.empty()) row["warning"] = r.warning;
        table.push_back(row);
    }
    if (!out_dir.empty()) write_text(out_dir + "/ablation.json", table.dump(2) + "\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coarse-to-fine few-shot pipeline"};
    app.require_subcommand(1);

    // data
    auto* data = app.add_subcommand("data", "dataset generation and validation");
    data->require_subcommand(1);
    std::string synth_config, synth_out, synth_test_out;
    auto* synth = data->add_subcommand("synth", "generate a synthetic hierarchical dataset");
    synth->add_option("--config", synth_config, "run config file")->required();
    synth->add_option("--out", synth_out, "output dataset file (training split)")->required();
    synth->add_option("--test-out", synth_test_out,
                      "optional paired test split (same latent geometry)");
    std::string validate_path;
    auto* validate = data->add_subcommand("validate", "validate a dataset file");
    validate->add_option("path", validate_path, "dataset file")->required();

    // train
    std::string train_config, train_out_dir, train_data;
    auto* train_cmd = app.add_subcommand("train", "train the embedding model");
    train_cmd->add_option("--config", train_config, "run config file")->required();
    train_cmd->add_option("--out-dir", train_out_dir, "run directory")->required();
    train_cmd->add_option("--data", train_data, "training dataset (defaults to config synth)");

    // extract
    std::string ex_config, ex_ckpt, ex_data, ex_out;
    auto* extract = app.add_subcommand("extract", "build the feature repository");
    extract->add_option("--config", ex_config, "run config file")->required();
    extract->add_option("--checkpoint", ex_ckpt, "model checkpoint")->required();
    extract->add_option("--data", ex_data, "coarsely labeled dataset")->required();
    extract->add_option("--out", ex_out, "repository output path")->required();

    // calibrate
    std::string cal_repo, cal_support, cal_out;
    int cal_k = 10, cal_m = 20, cal_n = 100;
    bool cal_true_coarse = false;
    auto* calibrate = app.add_subcommand("calibrate", "calibrate prototypes from a repository");
    calibrate->add_option("--repo", cal_repo, "repository file")->required();
    calibrate->add_option("--support", cal_support, "support JSON file")->required();
    calibrate->add_option("--k", cal_k, "kNN votes for coarse assignment");
    calibrate->add_option("--m", cal_m, "neighbours per round");
    calibrate->add_option("--n", cal_n, "additional support size");
    calibrate->add_flag("--true-coarse", cal_true_coarse, "use annotated coarse labels");
    calibrate->add_option("--out", cal_out, "output JSON (stdout if omitted)");

    // eval
    std::string ev_config, ev_ckpt, ev_repo, ev_data, ev_out_dir;
    std::optional<int> ev_way, ev_shot, ev_episodes;
    bool ev_nocal = false;
    auto* eval_cmd = app.add_subcommand("eval", "episodic few-shot evaluation");
    eval_cmd->add_option("--config", ev_config, "run config file")->required();
    eval_cmd->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--repo", ev_repo, "feature repository");
    eval_cmd->add_option("--data", ev_data, "test dataset with fine labels")->required();
    eval_cmd->add_option("--way", ev_way, "episode way (-1: all-way)");
    eval_cmd->add_option("--shot", ev_shot, "support shots per class");
    eval_cmd->add_option("--episodes", ev_episodes, "episode count");
    eval_cmd->add_flag("--no-calibration", ev_nocal, "disable classifier debiasing");
    eval_cmd->add_option("--out-dir", ev_out_dir, "run directory for artifacts");

    // probe
    std::string pr_config, pr_ckpt, pr_data, pr_test, pr_out_dir;
    auto* probe = app.add_subcommand("probe", "per-layer fine-grained linear probe");
    probe->add_option("--config", pr_config, "run config file")->required();
    probe->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    probe->add_option("--data", pr_data, "probe dataset with fine labels")->required();
    probe->add_option("--test-data", pr_test, "held-out probe set (default: 70/30 split)");
    probe->add_option("--out-dir", pr_out_dir, "run directory for artifacts");

    // ablate
    std::string ab_config, ab_grid, ab_out_dir;
    auto* ablate = app.add_subcommand("ablate", "paired ablation grid");
    ablate->add_option("--config", ab_config, "run config file")->required();
    ablate->add_option("--grid", ab_grid, "grid JSON or preset (table3, table4, fig6n, fig6k)")
        ->required();
    ablate->add_option("--out-dir", ab_out_dir, "run directory for artifacts");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_data_synth(synth_config, synth_out, synth_test_out);
        if (validate->parsed()) return run_data_validate(validate_path);
        if (train_cmd->parsed()) return run_train(train_config, train_out_dir, train_data);
        if (extract->parsed()) return run_extract(ex_config, ex_ckpt, ex_data, ex_out);
        if (calibrate->parsed())
            return run_calibrate(cal_repo, cal_support, cal_k, cal_m, cal_n, cal_true_coarse,
                                 cal_out);
        if (eval_cmd->parsed())
            return run_eval(ev_config, ev_ckpt, ev_repo, ev_data, ev_way, ev_shot, ev_episodes,
                            ev_nocal, ev_out_dir);
        if (probe->parsed()) return run_probe(pr_config, pr_ckpt, pr_data, pr_test, pr_out_dir);
        if (ablate->parsed()) return run_ablate(ab_config, ab_grid, ab_out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
