// Command-line front end: train / eval / predict / analyze-prior /
// selftest / make-synthetic. Every run-config key is available as a flag;
// precedence is flag > environment (PDFNET_<KEY>) > --config file > default.

#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "pdfnet/pdfnet.hpp"

namespace {

struct ConfigCli {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

void add_config_flags(CLI::App* cmd, ConfigCli& cli) {
    cmd->add_option("--config", cli.config_path, "key=value config file");
    for (const auto& field : pdfnet::detail::config_fields()) {
        const std::string name = field.name;
        cmd->add_option_function<std::string>(
            "--" + name, [&cli, name](const std::string& v) { cli.overrides[name] = v; },
            "config key " + name);
    }
}

pdfnet::RunConfig resolve_config(const ConfigCli& cli) {
    pdfnet::RunConfig cfg;
    if (!cli.config_path.empty()) pdfnet::load_config_file(cfg, cli.config_path);
    pdfnet::apply_env_overrides(cfg);
    for (const auto& [key, value] : cli.overrides) {
        pdfnet::set_config_value(cfg, key, value);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depth-prior segmentation toolkit"};
    app.require_subcommand(1);

    ConfigCli train_cli, eval_cli, predict_cli, prior_cli;
    std::string image_path, depth_path;
    bool dump_terms = false;

    std::string synth_out, synth_bg = "gradient";
    int64_t synth_n = 4, synth_res_h = 256, synth_res_w = 0;
    double synth_sigma = 0.02;
    uint64_t synth_seed = 42;

    auto* train = app.add_subcommand("train", "train a model");
    add_config_flags(train, train_cli);

    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
    add_config_flags(eval, eval_cli);

    auto* predict = app.add_subcommand("predict", "run one image through a checkpoint");
    add_config_flags(predict, predict_cli);
    predict->add_option("--image", image_path, "input RGB PNG")->required();
    predict->add_option("--depth", depth_path, "input depth PNG")->required();

    auto* prior = app.add_subcommand("analyze-prior", "depth-variance statistics of a dataset");
    add_config_flags(prior, prior_cli);
    prior->add_flag("--dump-terms", dump_terms, "also write per-sample loss-term maps");

    auto* selftest = app.add_subcommand("selftest", "fast invariant checks");
    (void)selftest;

    auto* synth = app.add_subcommand("make-synthetic", "generate a synthetic dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("-n,--count", synth_n, "number of samples");
    synth->add_option("--resolution", synth_res_h, "sample height (and width unless --width)");
    synth->add_option("--width", synth_res_w, "sample width");
    synth->add_option("--fg-depth-sigma", synth_sigma, "foreground depth noise sigma");
    synth->add_option("--bg-mode", synth_bg, "background: gradient | noise | textured");
    synth->add_option("--seed", synth_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            auto cfg = resolve_config(train_cli);
            auto summary = pdfnet::cmd_train(cfg);
            nlohmann::json j{{"epochs_run", summary.epochs_run},
                             {"steps", summary.step_numbers.size()},
                             {"last_checkpoint", summary.last_checkpoint.string()}};
            if (!summary.best_checkpoint.empty()) {
                j["best_checkpoint"] = summary.best_checkpoint.string();
            }
            std::cout << j.dump(2) << '\n';
            return 0;
        }
        if (eval->parsed()) {
            auto cfg = resolve_config(eval_cli);
            auto report = pdfnet::cmd_eval(cfg);
            std::cout << pdfnet::eval_report_json(report)["aggregate"].dump(2) << '\n';
            if (!report.complete()) {
                std::cerr << "error: " << report.unpaired_pred.size() + report.unpaired_gt.size()
                          << " unpaired files (see metrics.json)\n";
                return 1;
            }
            return 0;
        }
        if (predict->parsed()) {
            auto cfg = resolve_config(predict_cli);
            auto res = pdfnet::cmd_predict(cfg, image_path, depth_path);
            nlohmann::json j{{"mask", res.mask_path.string()},
                             {"depth", res.depth_path.string()},
                             {"load_ms", res.load_ms},
                             {"network_ms", res.network_ms}};
            std::cout << j.dump(2) << '\n';
            return 0;
        }
        if (prior->parsed()) {
            auto cfg = resolve_config(prior_cli);
            auto report = pdfnet::cmd_analyze_prior(cfg, dump_terms);
            auto num = [](double v) -> nlohmann::json {
                return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
            };
            nlohmann::json j{{"samples", report.rows.size()},
                             {"var_fg", num(report.mean_var_fg)},
                             {"var_bg", num(report.mean_var_bg)},
                             {"var_all", num(report.mean_var_all)},
                             {"fraction_var_fg_lt_bg", num(report.fraction_fg_lt_bg)}};
            std::cout << j.dump(2) << '\n';
            return 0;
        }
        if (selftest->parsed()) {
            return pdfnet::print_selftest(std::cout) ? 0 : 1;
        }
        if (synth->parsed()) {
            if (synth_res_w == 0) synth_res_w = synth_res_h;
            pdfnet::make_synthetic_dataset(synth_out, synth_n, {synth_res_h, synth_res_w},
                                           synth_sigma, pdfnet::parse_bg_mode(synth_bg),
                                           synth_seed);
            std::cout << "wrote " << synth_n << " samples to " << synth_out << '\n';
            return 0;
        }
    } catch (const pdfnet::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
