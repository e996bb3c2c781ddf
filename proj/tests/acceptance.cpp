// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails.

#include "vgtree/debias.hpp"
#include "vgtree/errors.hpp"
#include "vgtree/harness.hpp"
#include "vgtree/scripted_backend.hpp"
#include "vgtree/synthetic_world.hpp"
#include "vgtree/tree_engine.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace vgtree;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const char* id, const std::function<Outcome()>& check)
{
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << id << (o.pass ? " PASS " : " FAIL ") << o.detail << "\n";
    failures += !o.pass;
}

std::string fmt(double v, int prec = 4)
{
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(prec);
    o << v;
    return o.str();
}

/// Count nodes violating the score invariants.
std::size_t invariant_violations(const EntailmentForest& f, std::size_t& nodes)
{
    std::size_t bad = 0;
    for (const auto& [id, n] : f.nodes) {
        ++nodes;
        if (n.status == NodeStatus::Internal) {
            if (n.children.size() != 2 || !n.scores.proof) {
                ++bad;
                continue;
            }
            double product = f.node(n.children[0]).scores.final * f.node(n.children[1]).scores.final;
            if (*n.scores.proof != product || n.scores.final != std::max(n.scores.direct, *n.scores.proof))
                ++bad;
        } else if (!n.children.empty() || n.scores.final != n.scores.direct) {
            ++bad;
        }
    }
    return bad;
}

RunConfig base_config()
{
    RunConfig c;
    c.retry.base_delay = std::chrono::milliseconds(0);
    return c;
}

Dataset suite(std::uint64_t seed, std::size_t n, bool adversarial)
{
    SuiteOptions so;
    so.num_tasks = n;
    so.adversarial = adversarial;
    return generate_suite(seed, so);
}

// shared between AC-3 and the runs that feed it
std::vector<EntailmentForest> ac2_forests;
std::vector<EntailmentForest> ac5_forests;
std::vector<EntailmentForest> noisy_forests;

Outcome ac1()
{
    auto start = Clock::now();
    auto backend = std::make_shared<ScriptedBackend>();
    backend->set_declarative("picks it up", "the boy picks up the balloon");
    backend->set_declarative("lets it go", "the boy lets go of the balloon");
    backend->set_score("the boy picks up the balloon", 0.8);
    backend->set_decomposition("the boy picks up the balloon", "the boy reaches for the balloon",
                               "the balloon rises from the floor");
    backend->set_score("the boy reaches for the balloon", 0.9);
    backend->set_score("the balloon rises from the floor", 0.7);
    backend->set_score("the boy lets go of the balloon", 0.2);
    backend->set_decomposition("the boy lets go of the balloon", "the boy holds the balloon", "the balloon flies");
    backend->set_score("the boy holds the balloon", 0.3);
    backend->set_score("the balloon flies", 0.1);
    auto hub = testing::make_hub(backend);

    auto task = make_task("fig", "scripted", "What does the boy do with the balloon?", {"picks it up", "lets it go"}, 0);
    VideoContext video;
    for (std::size_t i = 0; i < 8; ++i)
        video.frames.push_back({i, static_cast<double>(i), "frame" + std::to_string(i)});
    EngineConfig cfg;
    cfg.grounding = GroundingMode::FullVideo;
    auto result = evaluate_task(task, video, *hub, cfg);
    double elapsed = seconds_since(start);

    const auto& n = result.forest.node(result.forest.roots.at(0));
    bool ok = !result.forest.failed && n.status == NodeStatus::LeafPruned && n.pruned &&
              n.pruned->proof_estimate && *n.pruned->proof_estimate == 0.9 * 0.7 && n.scores.final == 0.8 &&
              n.children.empty() && elapsed < 1.0;
    std::string est = n.pruned && n.pruned->proof_estimate ? fmt(*n.pruned->proof_estimate) : "none";
    return {ok, "estimate=" + est + " direct=" + fmt(n.scores.direct) + " final=" + fmt(n.scores.final) +
                    " status=" + std::string(to_string(n.status)) + " time=" + fmt(elapsed, 3) + "s"};
}

Outcome ac2()
{
    auto start = Clock::now();
    std::mt19937_64 rng(20240917);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        auto t = oracle::random_tree(rng, 1, 5);
        EntailmentForest f;
        f.task_id = "tree" + std::to_string(i);
        f.roots = {"r"};
        oracle::load(f, *t, "r", 1);
        backtrace(f);
        worst = std::max(worst, std::abs(f.node("r").scores.final - oracle::final_score(*t)));
        ac2_forests.push_back(std::move(f));
    }
    double elapsed = seconds_since(start);
    std::ostringstream d;
    d << "trees=1000 max_abs_err=" << worst << " time=" << fmt(elapsed, 3) << "s";
    return {worst <= 1e-12 && elapsed < 5.0, d.str()};
}

Outcome ac5()
{
    auto ds = suite(2024, 200, false);
    auto config = base_config();
    auto start = Clock::now();
    auto hub = build_hub(config);
    auto first = run_eval(ds, config, *hub);
    double elapsed = seconds_since(start);
    auto again_hub = build_hub(config);
    auto second = run_eval(ds, config, *again_hub);
    bool deterministic = report_to_json(first.report).dump() == report_to_json(second.report).dump();
    for (const auto& r : first.results)
        ac5_forests.push_back(r.forest);
    const auto& o = first.report.overall;
    bool ok = ds.tasks.size() >= 200 && first.report.failed.empty() && o.accuracy >= 0.95 && deterministic &&
              elapsed < 30.0;
    return {ok, "tasks=" + std::to_string(ds.tasks.size()) + " accuracy=" + fmt(o.accuracy) +
                    " failed=" + std::to_string(first.report.failed.size()) +
                    " deterministic=" + (deterministic ? "yes" : "no") + " time=" + fmt(elapsed, 3) + "s"};
}

Outcome ac4()
{
    auto ds = suite(99, 60, false);
    auto noisy = base_config();
    noisy.default_backend.noise_epsilon = 0.2;
    noisy.default_backend.noise_seed = 7;
    auto stat = noisy;
    stat.expansion = ExpansionMode::Static;
    auto hub = build_hub(noisy);
    auto d = run_eval(ds, noisy, *hub);
    auto s = run_eval(ds, stat, *hub);

    bool exact15 = true;
    for (const auto& r : s.results)
        for (auto n : r.forest.decompositions_per_root)
            exact15 = exact15 && n == 15;
    bool never_more = true;
    for (std::size_t i = 0; i < ds.tasks.size(); ++i)
        never_more = never_more && d.report.rows[i].decompositions <= s.report.rows[i].decompositions;
    for (const auto& r : d.results)
        noisy_forests.push_back(r.forest);

    double per_root_static = s.report.decompositions_avg / 5.0;
    double per_root_dynamic = d.report.decompositions_avg / 5.0;
    bool ok = exact15 && never_more && d.report.decompositions_avg < s.report.decompositions_avg &&
              s.report.failed.empty() && d.report.failed.empty();
    return {ok, "static_per_root=" + fmt(per_root_static, 2) + " dynamic_per_root=" + fmt(per_root_dynamic, 2) +
                    " static_exactly_15=" + (exact15 ? "yes" : "no") +
                    " dynamic_never_more=" + (never_more ? "yes" : "no")};
}

Outcome ac3()
{
    std::size_t nodes = 0;
    std::size_t bad = 0;
    for (const auto* set : {&ac2_forests, &ac5_forests, &noisy_forests})
        for (const auto& f : *set)
            bad += invariant_violations(f, nodes);
    bool covered = !ac2_forests.empty() && !ac5_forests.empty();
    return {covered && bad == 0, "nodes=" + std::to_string(nodes) + " violations=" + std::to_string(bad)};
}

Outcome ac6()
{
    auto ds = suite(606, 200, true);
    auto grounded = base_config();
    auto full = base_config();
    full.grounding = GroundingMode::FullVideo;
    auto hub = build_hub(grounded);
    auto g = run_eval(ds, grounded, *hub).report.overall.accuracy;
    auto f = run_eval(ds, full, *hub).report.overall.accuracy;
    double gap = (g - f) * 100.0;
    return {ds.tasks.size() >= 200 && gap >= 10.0,
            "tasks=" + std::to_string(ds.tasks.size()) + " grounded=" + fmt(g) + " full=" + fmt(f) +
                " gap_pp=" + fmt(gap, 1)};
}

Outcome ac7()
{
    using D = NavigationDirective;
    auto start = Clock::now();
    std::size_t cases = 0;
    std::size_t bad = 0;
    const std::size_t window = 8;
    for (std::size_t len = 1; len <= 64; ++len)
        for (std::size_t a = 0; a < len; ++a)
            for (auto d : {D::LookAhead, D::LookBehind, D::LookAround}) {
                ++cases;
                auto m = ground_moment(a, d, len, window);
                auto ref = oracle::interval(a, d, len, window);
                bool ok = m.start_index == ref.start && m.end_index == ref.end && m.start_index <= a &&
                          a <= m.end_index && m.end_index < len && m.anchor_index == a && m.directive == d;
                if (d == D::LookBehind)
                    ok = ok && m.start_index == a && m.end_index == len - 1;
                if (d == D::LookAhead)
                    ok = ok && m.start_index == 0 && m.end_index == a;
                if (d == D::LookAround)
                    ok = ok && m.length() == std::min(len, window);
                bad += !ok;
            }
    double elapsed = seconds_since(start);
    return {bad == 0 && elapsed < 1.0, "cases=" + std::to_string(cases) + " violations=" + std::to_string(bad) +
                                           " time=" + fmt(elapsed, 3) + "s"};
}

Outcome ac8()
{
    auto start = Clock::now();
    auto ds = generate_bias_suite(808, 100);
    auto hub = testing::make_hub(std::make_shared<OracleBackend>());
    auto out = rewrite_dataset(ds, *hub);
    std::size_t pass = 0;
    for (const auto& r : out.accepted)
        pass += validate_rewrite(r.original, r.rewritten).empty();
    auto audit = audit_rewrites(ds, out.dataset);

    auto echo_hub = testing::make_hub(std::make_shared<OracleBackend>());
    echo_hub->set_backend(ProviderRole::Rewriter, std::make_shared<EchoRewriter>());
    auto echoed = rewrite_dataset(ds, *echo_hub);

    auto before = bias_report(ds, probe_dataset(ds, *hub));
    auto after = bias_report(out.dataset, probe_dataset(out.dataset, *hub));
    double delta = before.blind_accuracy - after.blind_accuracy;
    double elapsed = seconds_since(start);

    bool ok = !out.accepted.empty() && pass == out.accepted.size() && audit.empty() && echoed.accepted.empty() &&
              echoed.failed_ids.size() == ds.tasks.size() && delta > 0.0 && elapsed < 10.0;
    return {ok, "accepted=" + std::to_string(out.accepted.size()) + " audit_pass=" + std::to_string(pass) +
                    " echo_rejected=" + std::to_string(echoed.failed_ids.size()) + "/" +
                    std::to_string(ds.tasks.size()) + " blind_original=" + fmt(before.blind_accuracy) +
                    " blind_rewritten=" + fmt(after.blind_accuracy) + " delta=" + fmt(delta) +
                    " time=" + fmt(elapsed, 3) + "s"};
}

Outcome ac9()
{
    testing::TempDir dir;
    auto ds = suite(909, 40, true);
    auto config = base_config();
    config.cache_dir = (dir / "cache").string();
    config.default_backend.noise_epsilon = 0.1;
    auto cold_hub = build_hub(config);
    auto cold = run_eval(ds, config, *cold_hub);
    auto warm_hub = build_hub(config);
    auto warm = run_eval(ds, config, *warm_hub);
    auto a = report_to_json(cold.report).dump(2);
    auto b = report_to_json(warm.report).dump(2);
    bool ok = cold.backend_calls > 0 && warm.backend_calls == 0 && a == b;
    return {ok, "cold_calls=" + std::to_string(cold.backend_calls) + " warm_calls=" +
                    std::to_string(warm.backend_calls) + " identical=" + (a == b ? "yes" : "no")};
}

Outcome ac10()
{
    std::mt19937_64 rng(1010);
    std::uniform_real_distribution<double> logit(-20.0, 20.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double lt = logit(rng);
        double lf = logit(rng);
        double pt = std::exp(lt) / (std::exp(lt) + std::exp(lf));
        ModelResponse r{"", TokenDistribution{{"True", pt}, {"False", 1.0 - pt}}};
        ModelResponse swapped{"", TokenDistribution{{"True", 1.0 - pt}, {"False", pt}}};
        double s = score_binary(r, "True", "False", false).value;
        double t = score_binary(swapped, "True", "False", false).value;
        worst = std::max(worst, std::abs(s + t - 1.0));
    }
    double p = std::exp(2.0) / (std::exp(2.0) + std::exp(0.0));
    double spot = score_binary(ModelResponse{"", TokenDistribution{{"True", p}, {"False", 1.0 - p}}}, "True", "False",
                               false)
                      .value;
    std::ostringstream d;
    d << "symmetry_max_err=" << worst << " logits(2,0)=" << fmt(spot, 6);
    return {worst <= 1e-12 && std::abs(spot - 0.8808) <= 1e-4, d.str()};
}

} // namespace

int main()
{
    // AC-3 reads the forests collected by AC-2, AC-4 and AC-5
    report("AC-1", ac1);
    report("AC-2", ac2);
    // run the producers before AC-3 but keep the printed order
    auto run = [](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };
    auto o4 = run(ac4);
    auto o5 = run(ac5);
    report("AC-3", ac3);
    report("AC-4", [&] { return o4; });
    report("AC-5", [&] { return o5; });
    report("AC-6", ac6);
    report("AC-7", ac7);
    report("AC-8", ac8);
    report("AC-9", ac9);
    report("AC-10", ac10);
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << "\n";
    return failures == 0 ? 0 : 1;
}
