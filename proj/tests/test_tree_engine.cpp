#include "vgtree/errors.hpp"
#include "vgtree/scripted_backend.hpp"
#include "vgtree/synthetic_world.hpp"
#include "vgtree/tree_engine.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace vgtree;

namespace {

EntailmentForest single_root(const oracle::Tree& t)
{
    EntailmentForest f;
    f.task_id = "t";
    f.roots = {"n0"};
    oracle::load(f, t, "n0", 1);
    return f;
}

EntailmentForest roots_with_finals(const std::vector<double>& finals)
{
    EntailmentForest f;
    for (std::size_t i = 0; i < finals.size(); ++i) {
        EntailmentNode n;
        n.id = "n" + std::to_string(i);
        n.scores.direct = finals[i];
        n.scores.final = finals[i];
        f.roots.push_back(n.id);
        f.nodes[n.id] = n;
    }
    return f;
}

VideoContext still_video(std::size_t len)
{
    VideoContext v;
    for (std::size_t i = 0; i < len; ++i)
        v.frames.push_back({i, static_cast<double>(i), "frame" + std::to_string(i)});
    return v;
}

EngineConfig full_video_config(ExpansionMode mode = ExpansionMode::Dynamic)
{
    EngineConfig c;
    c.grounding = GroundingMode::FullVideo;
    c.tree.mode = mode;
    return c;
}

void check_invariants(const EntailmentForest& f)
{
    for (const auto& [id, n] : f.nodes) {
        if (n.status == NodeStatus::Internal) {
            REQUIRE(n.children.size() == 2);
            REQUIRE(n.scores.proof.has_value());
            CHECK(*n.scores.proof == f.node(n.children[0]).scores.final * f.node(n.children[1]).scores.final);
            CHECK(n.scores.final == std::max(n.scores.direct, *n.scores.proof));
        } else {
            CHECK(n.children.empty());
            CHECK(n.scores.final == n.scores.direct);
        }
    }
}

} // namespace

TEST_CASE("backtrace: leaf final equals direct")
{
    oracle::Tree t;
    t.direct = 0.4;
    auto f = single_root(t);
    backtrace(f);
    CHECK(f.node("n0").scores.final == 0.4);
}

TEST_CASE("backtrace: internal node takes max of direct and child product")
{
    oracle::Tree t;
    t.direct = 0.5;
    t.kids.push_back(std::make_unique<oracle::Tree>());
    t.kids.push_back(std::make_unique<oracle::Tree>());
    t.kids[0]->direct = 0.9;
    t.kids[1]->direct = 0.8;
    auto f = single_root(t);
    backtrace(f);
    CHECK(f.node("n0").scores.final == doctest::Approx(0.72).epsilon(1e-15));
    CHECK(*f.node("n0").scores.proof == 0.9 * 0.8);
}

TEST_CASE("backtrace agrees with the recursive reference on random trees")
{
    std::mt19937_64 rng(20240601);
    for (int i = 0; i < 300; ++i) {
        auto t = oracle::random_tree(rng, 1, 5);
        auto f = single_root(*t);
        backtrace(f);
        CHECK(std::abs(f.node("n0").scores.final - oracle::final_score(*t)) <= 1e-12);
        check_invariants(f);
        backtrace(f);
        CHECK(std::abs(f.node("n0").scores.final - oracle::final_score(*t)) <= 1e-12);
    }
}

TEST_CASE("backtrace rejects a node with one child")
{
    oracle::Tree t;
    t.direct = 0.3;
    t.kids.push_back(std::make_unique<oracle::Tree>());
    t.kids.push_back(std::make_unique<oracle::Tree>());
    auto f = single_root(t);
    f.node("n0").children.pop_back();
    CHECK_THROWS_AS(backtrace(f), StructuralError);

    auto g = single_root(t);
    g.node("n0").status = NodeStatus::LeafPruned;
    CHECK_THROWS_AS(backtrace(g), StructuralError);
}

TEST_CASE("select_answer: argmax with lowest index on ties")
{
    CHECK(select_answer(roots_with_finals({0.2, 0.9, 0.4})) == 1);
    CHECK(select_answer(roots_with_finals({0.7, 0.7})) == 0);
    CHECK(select_answer(roots_with_finals({0.1, 0.3, 0.3})) == 1);
    CHECK_THROWS_AS(select_answer(EntailmentForest{}), EmptyForest);
}

TEST_CASE("select_answer is invariant under increasing transforms")
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(2 + trial % 6);
        for (auto& v : s)
            v = std::round(u(rng) * 8) / 8; // coarse grid to force ties
        auto base = select_answer(roots_with_finals(s));
        std::vector<double> a, b;
        for (double v : s) {
            a.push_back(std::exp(3 * v));
            b.push_back(v * v * v + 2 * v);
        }
        CHECK(select_answer(roots_with_finals(a)) == base);
        CHECK(select_answer(roots_with_finals(b)) == base);
    }
}

TEST_CASE("parse_decomposition accepts common layouts")
{
    auto p = parse_decomposition("1. the boy runs\n2. the girl waves", "the boy runs and the girl waves");
    REQUIRE(p);
    CHECK(p->first == "the boy runs");
    CHECK(p->second == "the girl waves");

    auto j = parse_decomposition(R"(["a cat sits", "a dog barks"])", "x");
    REQUIRE(j);
    CHECK(j->second == "a dog barks");

    auto labelled = parse_decomposition("Here you go:\nSub-statement 1: the boy runs\nSub-statement 2: the girl waves", "x");
    REQUIRE(labelled);
    CHECK(labelled->first == "the boy runs");

    auto plain = parse_decomposition("the boy runs\nthe girl waves", "x");
    REQUIRE(plain);
}

TEST_CASE("parse_decomposition rejects unusable completions")
{
    CHECK_FALSE(parse_decomposition("only one line", "x"));
    CHECK_FALSE(parse_decomposition("1. a b\n2. a b", "x"));
    CHECK_FALSE(parse_decomposition("1. the parent\n2. other", "The parent."));
    CHECK_FALSE(parse_decomposition("1. a\n2. b\n3. c", "x"));
    CHECK_FALSE(parse_decomposition("", "x"));
}

TEST_CASE("decompose refuses statements at max depth and retries malformed output")
{
    auto backend = std::make_shared<testing::LambdaBackend>([](const ModelRequest&, int call) {
        return ModelResponse{call < 2 ? "I cannot do that." : "1. left part\n2. right part", std::nullopt};
    });
    auto hub = testing::make_hub(backend);
    Transcript tr;
    ProviderSession s(*hub, tr);

    Statement st{"a statement", 5, {}};
    CHECK_THROWS_AS(decompose(st, s, 5), PreconditionError);

    st.depth = 2;
    auto [a, b] = decompose(st, s, 5, 2);
    CHECK(a.text == "left part");
    CHECK(b.depth == 3);
    CHECK(tr.size() == 3);
    CHECK(tr.entries()[0].flags == std::vector<std::string>{"malformed_decomposition"});

    Transcript tr2;
    ProviderSession s2(*hub, tr2);
    auto never = std::make_shared<testing::LambdaBackend>(
        [](const ModelRequest&, int) { return ModelResponse{"nope", std::nullopt}; });
    auto hub2 = testing::make_hub(never);
    ProviderSession s3(*hub2, tr2);
    CHECK_THROWS_AS(decompose(st, s3, 5, 1), MalformedCompletion);
    CHECK(tr2.size() == 2);
}

TEST_CASE("worked pruning example: children 0.9 and 0.7 under a 0.8 parent")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->set_declarative("opt A", "the boy picks up the balloon");
    backend->set_declarative("opt B", "the boy drops the balloon");
    backend->set_score("the boy picks up the balloon", 0.8);
    backend->set_decomposition("the boy picks up the balloon", "the boy reaches for the balloon",
                               "the balloon leaves the floor");
    backend->set_score("the boy reaches for the balloon", 0.9);
    backend->set_score("the balloon leaves the floor", 0.7);
    backend->set_score("the boy drops the balloon", 0.3);
    backend->set_decomposition("the boy drops the balloon", "the boy holds the balloon", "the balloon falls");
    backend->set_score("the boy holds the balloon", 0.6);
    backend->set_score("the balloon falls", 0.2);
    auto hub = testing::make_hub(backend);

    auto task = make_task("fig", "video", "What does the boy do?", {"opt A", "opt B"}, 0);
    auto result = evaluate_task(task, still_video(8), *hub, full_video_config());
    const auto& f = result.forest;
    REQUIRE_FALSE(f.failed);

    const auto& left = f.node("n0");
    CHECK(left.status == NodeStatus::LeafPruned);
    CHECK(left.scores.final == 0.8);
    REQUIRE(left.pruned);
    CHECK(left.pruned->reason == PrunedRecord::Reason::Pruned);
    CHECK(*left.pruned->proof_estimate == doctest::Approx(0.63).epsilon(1e-12));
    CHECK(left.children.empty());
    CHECK(f.nodes.size() == 2);
    CHECK(f.selected_index == 0);

    auto events = prune_events(f);
    REQUIRE(events.size() == 2);
    CHECK(events[0].node_id == "n0");
    CHECK(events[0].direct == 0.8);
    CHECK(f.decompositions_per_root == std::vector<std::size_t>{1, 1});
}

TEST_CASE("static expansion performs 2^(d-1)-1 decompositions per root")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->set_default_score(0.6);
    auto hub = testing::make_hub(backend);
    auto task = make_task("s", "video", "q?", {"a", "b", "c"}, 1);
    for (std::size_t d = 1; d <= 5; ++d) {
        auto cfg = full_video_config(ExpansionMode::Static);
        cfg.tree.max_depth = d;
        auto r = evaluate_task(task, still_video(4), *hub, cfg);
        std::size_t expected = (std::size_t{1} << (d - 1)) - 1;
        for (auto n : r.forest.decompositions_per_root)
            CHECK(n == expected);
        CHECK(r.forest.nodes.size() == 3 * ((std::size_t{1} << d) - 1));
        check_invariants(r.forest);

        auto dyn = full_video_config(ExpansionMode::Dynamic);
        dyn.tree.max_depth = d;
        auto rd = evaluate_task(task, still_video(4), *hub, dyn);
        // 0.6 * 0.6 < 0.6: every first decomposition is pruned
        for (auto n : rd.forest.decompositions_per_root)
            CHECK(n == (d > 1 ? 1u : 0u));
    }
}

TEST_CASE("provider failure during decomposition degrades the node")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->set_default_score(0.9);
    backend->fail_template("decompose");
    auto hub = testing::make_hub(backend);
    auto task = make_task("f", "video", "q?", {"a", "b"}, 0);
    auto r = evaluate_task(task, still_video(4), *hub, full_video_config());
    REQUIRE_FALSE(r.forest.failed);
    const auto& n = r.forest.node("n0");
    CHECK(n.status == NodeStatus::LeafPruned);
    REQUIRE(n.pruned);
    CHECK(n.pruned->reason == PrunedRecord::Reason::Failed);
    CHECK_FALSE(n.pruned->error.empty());
    CHECK(n.scores.final == 0.9);
    CHECK(prune_events(r.forest).empty());
}

TEST_CASE("provider failure on a root score fails the task without throwing")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->fail_template("prove");
    auto hub = testing::make_hub(backend);
    auto task = make_task("f", "video", "q?", {"a", "b"}, 0);
    auto r = evaluate_task(task, still_video(4), *hub, full_video_config());
    CHECK(r.forest.failed);
    CHECK_FALSE(r.forest.error.empty());
    CHECK(r.forest.call_counts.at("Prover") == 1);
}

TEST_CASE("single-option task selects index 0")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->set_default_score(0.1);
    auto hub = testing::make_hub(backend);
    auto task = make_task("one", "video", "q?", {"only"}, 0);
    auto r = evaluate_task(task, still_video(3), *hub, full_video_config());
    REQUIRE_FALSE(r.forest.failed);
    CHECK(r.forest.selected_index == 0);
    CHECK(r.forest.roots.size() == 1);
}

TEST_CASE("evaluate_task on an oracle world selects the ground truth")
{
    SuiteOptions so;
    so.num_tasks = 30;
    auto ds = generate_suite(11, so);
    auto hub = testing::make_hub(std::make_shared<OracleBackend>());
    EngineConfig cfg;
    for (const auto& t : ds.tasks) {
        auto ref = parse_synthetic_ref(t.video_ref);
        VideoContext v;
        v.frames = synthetic_frames(generate_world(ref->seed, WorldParams::standard(ref->num_frames, ref->num_events)));
        auto r = evaluate_task(t, v, *hub, cfg);
        REQUIRE_FALSE(r.forest.failed);
        CHECK(r.forest.selected_index == *t.ground_truth_index);
        check_invariants(r.forest);
    }
}

TEST_CASE("evaluate_task is deterministic and traces round-trip")
{
    SuiteOptions so;
    so.num_tasks = 5;
    auto ds = generate_suite(3, so);
    OracleOptions noisy;
    noisy.noise_epsilon = 0.2;
    auto hub = testing::make_hub(std::make_shared<OracleBackend>(noisy));
    for (const auto& t : ds.tasks) {
        auto ref = parse_synthetic_ref(t.video_ref);
        VideoContext v;
        v.frames = synthetic_frames(generate_world(ref->seed, WorldParams::standard(ref->num_frames, ref->num_events)));
        auto a = evaluate_task(t, v, *hub, EngineConfig{});
        auto b = evaluate_task(t, v, *hub, EngineConfig{});
        CHECK(forest_to_json(a.forest).dump() == forest_to_json(b.forest).dump());
        CHECK(a.transcript.to_json().dump() == b.transcript.to_json().dump());

        auto doc = forest_to_json(a.forest);
        auto back = forest_from_json(doc);
        CHECK(forest_to_json(back).dump() == doc.dump());
        backtrace(back);
        CHECK(forest_to_json(back).dump() == doc.dump());
    }
}

TEST_CASE("allowing deeper expansion never lowers a root's final score")
{
    SuiteOptions so;
    so.num_tasks = 12;
    auto ds = generate_suite(5, so);
    OracleOptions noisy;
    noisy.noise_epsilon = 0.3;
    auto hub = testing::make_hub(std::make_shared<OracleBackend>(noisy));
    for (const auto& t : ds.tasks) {
        auto ref = parse_synthetic_ref(t.video_ref);
        VideoContext v;
        v.frames = synthetic_frames(generate_world(ref->seed, WorldParams::standard(ref->num_frames, ref->num_events)));
        std::vector<double> prev;
        for (std::size_t d = 1; d <= 5; ++d) {
            EngineConfig cfg;
            cfg.tree.max_depth = d;
            auto r = evaluate_task(t, v, *hub, cfg);
            std::vector<double> now;
            for (const auto& id : r.forest.roots)
                now.push_back(r.forest.node(id).scores.final);
            for (std::size_t i = 0; i < prev.size(); ++i)
                CHECK(now[i] >= prev[i]);
            prev = now;
        }
    }
}

TEST_CASE("moment_from_interval covers the frames inside the interval")
{
    auto v = still_video(24);
    auto m = moment_from_interval(v.frames, 3.5, 9.0);
    CHECK(m.start_index == 4);
    CHECK(m.end_index == 9);
    CHECK(m.source == MomentSource::External);
    auto swapped = moment_from_interval(v.frames, 9.0, 3.5);
    CHECK(swapped == m);
}

TEST_CASE("grounding mode names")
{
    CHECK(grounding_mode_from_string("full") == GroundingMode::FullVideo);
    CHECK(grounding_mode_from_string("GT") == GroundingMode::GroundTruthIntervals);
    CHECK(grounding_mode_from_string("grounded") == GroundingMode::Grounded);
    CHECK_FALSE(grounding_mode_from_string("sideways"));
}
