#include "vgtree/debias.hpp"
#include "vgtree/errors.hpp"
#include "vgtree/harness.hpp"
#include "vgtree/synthetic_world.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace vgtree;
using json = nlohmann::ordered_json;

namespace {

struct Overrides {
    std::string grounding;
    std::string expansion;
    std::string backend;
    std::size_t max_depth = 0;
    std::size_t concurrency = 0;
    std::size_t prover_frames = 0;
    std::size_t window = 0;
    std::size_t frames_per_video = 0;
    std::string cache_dir;
    std::string caption_dir;
    std::string frames_root;
    std::string intervals;
    double noise_epsilon = -1.0;
    std::uint64_t noise_seed = 0;
    bool noise_seed_set = false;
    bool timing = false;
    double failure_threshold = -1.0;
};

void add_run_flags(CLI::App* cmd, std::string& config_path, Overrides& o)
{
    cmd->add_option("-c,--config", config_path, "INI config file");
    cmd->add_option("--grounding", o.grounding, "grounded | full | gt");
    cmd->add_option("--expansion", o.expansion, "dynamic | static");
    cmd->add_option("--backend", o.backend, "backend for every role: oracle | remote | echo");
    cmd->add_option("--max-depth", o.max_depth);
    cmd->add_option("--concurrency", o.concurrency);
    cmd->add_option("--prover-frames", o.prover_frames);
    cmd->add_option("--window", o.window, "look-around window in frames");
    cmd->add_option("--frames-per-video", o.frames_per_video);
    cmd->add_option("--cache-dir", o.cache_dir);
    cmd->add_option("--caption-dir", o.caption_dir);
    cmd->add_option("--frames-root", o.frames_root);
    cmd->add_option("--intervals", o.intervals, "JSON {task_id: [start_s, end_s]}");
    cmd->add_option("--noise-epsilon", o.noise_epsilon, "oracle prover jitter");
    cmd->add_option("--noise-seed", o.noise_seed)->each([&](const std::string&) { o.noise_seed_set = true; });
    cmd->add_flag("--timing", o.timing, "include wall time in the report");
    cmd->add_option("--failure-threshold", o.failure_threshold);
}

RunConfig make_config(const std::string& path, const Overrides& o)
{
    RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
    if (!o.grounding.empty()) {
        auto m = grounding_mode_from_string(o.grounding);
        if (!m)
            throw ConfigError("--grounding must be grounded, full or gt");
        c.grounding = *m;
    }
    if (!o.expansion.empty()) {
        if (o.expansion != "dynamic" && o.expansion != "static")
            throw ConfigError("--expansion must be dynamic or static");
        c.expansion = o.expansion == "dynamic" ? ExpansionMode::Dynamic : ExpansionMode::Static;
    }
    auto each_backend = [&](auto fn) {
        fn(c.default_backend);
        for (auto& [_, b] : c.roles)
            fn(b);
    };
    if (!o.backend.empty())
        each_backend([&](BackendConfig& b) { b.backend = o.backend; });
    if (o.noise_epsilon >= 0.0)
        each_backend([&](BackendConfig& b) { b.noise_epsilon = o.noise_epsilon; });
    if (o.noise_seed_set)
        each_backend([&](BackendConfig& b) { b.noise_seed = o.noise_seed; });
    if (o.max_depth)
        c.max_depth = o.max_depth;
    if (o.concurrency)
        c.concurrency = o.concurrency;
    if (o.prover_frames)
        c.prover_frame_count = o.prover_frames;
    if (o.window)
        c.look_around_window = o.window;
    if (o.frames_per_video)
        c.frames_per_video = o.frames_per_video;
    if (!o.cache_dir.empty())
        c.cache_dir = o.cache_dir;
    if (!o.caption_dir.empty())
        c.caption_dir = o.caption_dir;
    if (!o.frames_root.empty())
        c.frames_root = o.frames_root;
    if (!o.intervals.empty())
        c.intervals_path = o.intervals;
    if (o.timing)
        c.report_timing = true;
    if (o.failure_threshold >= 0.0)
        c.failure_threshold = o.failure_threshold;
    c.validate();
    return c;
}

void write_or_print(const std::string& path, const std::string& content)
{
    if (path.empty() || path == "-")
        std::cout << content;
    else
        write_text_file(path, content);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Grounded entailment-tree video QA: evaluation, de-biasing and synthetic data"};
    app.require_subcommand(1);

    // eval
    std::string config_path;
    Overrides ov;
    std::string dataset_path;
    std::string report_path;
    std::string markdown_path;
    std::string trace_dir;
    auto* eval = app.add_subcommand("eval", "evaluate a dataset");
    eval->add_option("-d,--dataset", dataset_path, "JSON lines or NExT-QA CSV")->required();
    eval->add_option("-o,--report", report_path, "report JSON path");
    eval->add_option("--markdown", markdown_path, "markdown table path (default stdout)");
    eval->add_option("--trace-dir", trace_dir, "write per-task traces here");
    add_run_flags(eval, config_path, ov);

    // debias
    std::string debias_out;
    int max_attempts = 3;
    std::string dataset_label = "video QA";
    auto* debias = app.add_subcommand("debias", "rewrite distractors and validate them");
    debias->add_option("-d,--dataset", dataset_path)->required();
    debias->add_option("-o,--out", debias_out, "rewritten dataset path")->required();
    debias->add_option("--max-attempts", max_attempts);
    debias->add_option("--dataset-name", dataset_label, "dataset name used in the prompt");
    add_run_flags(debias, config_path, ov);

    // probe-bias
    std::vector<std::string> probe_paths;
    auto* probe = app.add_subcommand("probe-bias", "blind-probe datasets without video");
    probe->add_option("datasets", probe_paths, "one or two datasets (original, rewritten)")->required()->expected(1, 2);
    add_run_flags(probe, config_path, ov);

    // synth gen
    auto* synth = app.add_subcommand("synth", "synthetic worlds and tasks");
    synth->require_subcommand(1);
    std::uint64_t seed = 1;
    std::size_t count = 200;
    bool adversarial = false;
    bool bias = false;
    std::string relation;
    std::string synth_out;
    auto* gen = synth->add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--seed", seed);
    gen->add_option("-n,--count", count);
    gen->add_flag("--adversarial", adversarial, "distractors are real events in the opposite window");
    gen->add_flag("--bias", bias, "lexically biased suite for blind probing");
    gen->add_option("--relation", relation, "before | after | around (default: all)");
    gen->add_option("-o,--out", synth_out, "output path (default stdout)");

    // trace show
    auto* trace = app.add_subcommand("trace", "inspect trace files");
    trace->require_subcommand(1);
    std::string trace_path;
    auto* show = trace->add_subcommand("show", "print a trace as a tree");
    show->add_option("file", trace_path)->required();

    // compare
    std::string report_a;
    std::string report_b;
    auto* compare = app.add_subcommand("compare", "accuracy and call deltas between two reports");
    compare->add_option("a", report_a)->required();
    compare->add_option("b", report_b)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::ConfigError);
    }

    try {
        if (*eval) {
            auto config = make_config(config_path, ov);
            auto dataset = load_dataset(dataset_path);
            auto hub = build_hub(config);
            EvalOptions opts;
            if (!trace_dir.empty())
                opts.trace_dir = trace_dir;
            opts.keep_results = false;
            auto run = run_eval(dataset, config, *hub, opts);
            if (!report_path.empty())
                write_text_file(report_path, report_to_json(run.report).dump(2) + "\n");
            write_or_print(markdown_path, render_report_markdown(run.report));
            std::cerr << "backend calls: " << run.backend_calls << ", cache hits: " << run.cache_hits << "\n";
            return static_cast<int>(exit_code_for(run.report, config.failure_threshold));
        }
        if (*debias) {
            auto config = make_config(config_path, ov);
            auto dataset = load_dataset(dataset_path);
            auto hub = build_hub(config);
            RewriteOptions ro;
            ro.max_attempts = max_attempts;
            ro.dataset_name = dataset_label;
            auto out = rewrite_dataset(dataset, *hub, ro);
            save_dataset(out.dataset, debias_out);
            auto audit = audit_rewrites(dataset, out.dataset);
            std::cout << "rewritten: " << out.accepted.size() << ", failed: " << out.failed_ids.size()
                      << ", calls: " << out.calls << ", audit violations: " << audit.size() << "\n";
            for (const auto& id : out.failed_ids)
                std::cout << "failed: " << id << "\n";
            if (!audit.empty())
                return static_cast<int>(ExitCode::PartialFailure);
            if (!dataset.tasks.empty() && out.failed_ids.size() == dataset.tasks.size())
                return static_cast<int>(ExitCode::AllFailed);
            return 0;
        }
        if (*probe) {
            auto config = make_config(config_path, ov);
            auto hub = build_hub(config);
            json doc = json::array();
            std::vector<double> acc;
            for (const auto& p : probe_paths) {
                auto ds = load_dataset(p);
                auto report = bias_report(ds, probe_dataset(ds, *hub));
                acc.push_back(report.blind_accuracy);
                doc.push_back(bias_report_to_json(report));
            }
            json out = {{"reports", doc}};
            if (acc.size() == 2)
                out["blind_probe_delta"] = acc[0] - acc[1];
            std::cout << out.dump(2) << "\n";
            return 0;
        }
        if (*gen) {
            Dataset ds;
            if (bias) {
                ds = generate_bias_suite(seed, count);
            } else {
                SuiteOptions so;
                so.num_tasks = count;
                so.adversarial = adversarial;
                if (!relation.empty()) {
                    auto r = relation_from_string(relation);
                    if (!r)
                        throw ConfigError("--relation must be before, after or around");
                    so.relations = {*r};
                }
                ds = generate_suite(seed, so);
            }
            write_or_print(synth_out, serialize_dataset(ds));
            return 0;
        }
        if (*show) {
            std::cout << render_trace_text(json::parse(read_text_file(trace_path)));
            return 0;
        }
        if (*compare) {
            auto a = report_from_json(json::parse(read_text_file(report_a)));
            auto b = report_from_json(json::parse(read_text_file(report_b)));
            std::cout << render_comparison_markdown(compare_runs(a, b));
            return 0;
        }
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (const auto& p : e.problems())
            std::cerr << "  " << p << "\n";
        return static_cast<int>(ExitCode::ConfigError);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::ConfigError);
    }
    return 0;
}
