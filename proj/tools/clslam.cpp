// clslam: render datasets, run continual-SLAM experiments, score trajectories.
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "clslam/error.hpp"
#include "clslam/harness.hpp"
#include "clslam/metrics.hpp"

using namespace clslam;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string methods;
    std::string loops;
};

ExperimentConfig load(const Overrides& o) {
    ExperimentConfig cfg = load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output = o.out;
    if (!o.methods.empty()) {
        cfg.methods.clear();
        std::stringstream ss(o.methods);
        std::string m;
        while (std::getline(ss, m, ',')) cfg.methods.push_back(parse_adaptation_mode(m));
    }
    if (o.loops == "on") cfg.loops.enabled = true;
    else if (o.loops == "off") cfg.loops.enabled = false;
    else if (!o.loops.empty()) throw Error(ErrorKind::ConfigError, "--loops expects on|off");
    cfg.validate();
    return cfg;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::MissingFile, path);
    return is;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual SLAM workbench"};
    app.require_subcommand(1);

    Overrides gen_o, run_o;
    auto* gen = app.add_subcommand("gen", "render the datasets of a config");
    gen->add_option("--config", gen_o.config, "config file")->required();
    gen->add_option("--seed", gen_o.seed, "master seed (overrides the config)");
    gen->add_option("--out", gen_o.out, "output directory")->required();

    auto* run = app.add_subcommand("run", "run an experiment and write report.{json,csv,txt}");
    run->add_option("--config", run_o.config, "config file")->required();
    run->add_option("--seed", run_o.seed, "master seed (overrides the config)");
    run->add_option("--out", run_o.out, "report directory (overrides the config)");
    run->add_option("--methods", run_o.methods, "comma list: fixed,expert_only,general_only,cl_slam,offline");
    run->add_option("--loops", run_o.loops, "loop closure on|off");
    bool quiet = false;
    run->add_flag("--quiet", quiet, "do not print the text table");

    std::string gt_path, est_path, times_path, lengths;
    bool median = false;
    auto* eval = app.add_subcommand("eval", "segment errors of a KITTI-format trajectory against ground truth");
    eval->add_option("--gt", gt_path, "ground-truth poses")->required();
    eval->add_option("--est", est_path, "estimated poses")->required();
    eval->add_option("--times", times_path, "timestamps, one per line");
    eval->add_option("--lengths", lengths, "comma list of segment lengths in meters");
    eval->add_flag("--median-scaling", median, "rescale the estimate by the median length ratio");

    std::string table_in, table_out;
    auto* table = app.add_subcommand("table", "re-emit the reports from a report.json");
    table->add_option("--in", table_in, "report.json")->required();
    table->add_option("--out", table_out, "directory for regenerated reports");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            const ExperimentConfig cfg = load(gen_o);
            generate_datasets(cfg, gen_o.out);
            std::cout << "wrote datasets to " << gen_o.out << "\n";
        } else if (*run) {
            const ExperimentConfig cfg = load(run_o);
            const ReportTable t = run_experiment(cfg);
            emit_report(t, cfg.output);
            if (!quiet) std::cout << report_text(t);
            std::cout << "reports in " << cfg.output.string() << " (" << t.seconds << " s)\n";
        } else if (*eval) {
            auto gs = open_in(gt_path), es = open_in(est_path);
            std::optional<std::ifstream> ts;
            if (!times_path.empty()) ts = open_in(times_path);
            const Trajectory gt = read_kitti_trajectory(gs, ts ? &*ts : nullptr);
            if (ts) {
                ts->clear();
                ts->seekg(0);
            }
            const Trajectory est = read_kitti_trajectory(es, ts ? &*ts : nullptr);
            SegmentOptions opt;
            opt.median_scaling = median;
            if (!lengths.empty()) {
                opt.lengths.clear();
                std::stringstream ss(lengths);
                std::string l;
                while (std::getline(ss, l, ',')) {
                    try {
                        opt.lengths.push_back(std::stod(l));
                    } catch (const std::exception&) {
                        throw Error(ErrorKind::ConfigError, "bad --lengths entry '" + l + "'");
                    }
                }
            }
            const SegmentErrors e = relative_segment_errors(gt, est, opt);
            const BaseMetrics b = remap_errors(e);
            nlohmann::json j{{"t_err", e.t_err}, {"r_err", e.r_err}, {"segments", e.segments},
                             {"t_hat", b.trans}, {"r_hat", b.rot}};
            std::cout << j.dump(2) << "\n";
        } else if (*table) {
            auto is = open_in(table_in);
            nlohmann::json j;
            try {
                is >> j;
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::ParseError, e.what());
            }
            const ReportTable t = report_from_json(j);
            if (!table_out.empty()) emit_report(t, table_out);
            std::cout << report_text(t);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::ConfigError ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
