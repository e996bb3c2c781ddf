#include "vgtree/errors.hpp"
#include "vgtree/synthetic_world.hpp"
#include "vgtree/text.hpp"

#include "support.hpp"

#include <doctest.h>

#include <regex>
#include <set>

using namespace vgtree;

namespace {

const Event* event_for(const WorldSpec& w, const std::string& text)
{
    static const std::regex re(R"(^the (\w+) (\w+) the (\w+)$)");
    std::smatch m;
    if (!std::regex_match(text, m, re))
        return nullptr;
    return w.find(m[1].str(), m[2].str(), m[3].str());
}

bool on_side(Relation r, std::size_t anchor, std::size_t frame, std::size_t len, std::size_t window)
{
    switch (r) {
    case Relation::After:
        return frame > anchor;
    case Relation::Before:
        return frame < anchor;
    case Relation::Around: {
        // window of `window` frames around the anchor, kept inside the video
        std::size_t half = window / 2;
        std::size_t start = anchor >= half ? anchor - half : 0;
        if (len > window && start + window > len)
            start = len - window;
        std::size_t end = len <= window ? len - 1 : start + window - 1;
        if (len <= window)
            start = 0;
        return frame >= start && frame <= end;
    }
    }
    return false;
}

std::size_t word_overlap(const std::string& question, const std::string& option)
{
    static const std::set<std::string> stop{"the", "a", "an", "what", "does", "do", "with", "of", "to", "is"};
    std::set<std::string> q;
    for (const auto& w : text::split_words(text::normalize(question)))
        if (!stop.contains(w))
            q.insert(w);
    std::set<std::string> o;
    for (const auto& w : text::split_words(text::normalize(option)))
        if (q.contains(w))
            o.insert(w);
    return o.size();
}

} // namespace

TEST_CASE("worlds are deterministic and well formed")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto w = generate_world(seed);
        CHECK(w == generate_world(seed));
        CHECK(w.num_frames == 24);
        REQUIRE(w.events.size() == 6);
        std::set<std::string> texts;
        for (std::size_t i = 0; i < w.events.size(); ++i) {
            const auto& e = w.events[i];
            CHECK(e.frame < w.num_frames);
            if (i)
                CHECK(e.frame > w.events[i - 1].frame);
            CHECK(texts.insert(e.text()).second);
            CHECK(w.event_at(e.frame) == &e);
            CHECK(w.describe(e.frame) == e.text());
            CHECK(e.text() == "the " + e.actor + " " + e.action + " the " + e.object);
        }
        for (std::size_t f = 0; f < w.num_frames; ++f)
            if (!w.event_at(f))
                CHECK(w.describe(f) == kStillScene);
    }
    CHECK_FALSE(generate_world(1) == generate_world(2));
    CHECK_THROWS_AS(generate_world(1, WorldParams::standard(3, 4)), PreconditionError);
    auto empty = WorldParams::standard();
    empty.actors.clear();
    CHECK_THROWS_AS(generate_world(1, empty), PreconditionError);
}

TEST_CASE("world JSON round-trip and validation")
{
    auto w = generate_world(77);
    auto doc = world_to_json(w);
    CHECK(world_from_json(doc) == w);

    auto bad = doc;
    bad["events"][0]["frame"] = 999;
    CHECK_THROWS_AS(world_from_json(bad), SchemaError);
    bad = doc;
    bad["events"][1]["frame"] = bad["events"][0]["frame"];
    CHECK_THROWS_AS(world_from_json(bad), SchemaError);
}

TEST_CASE("synthetic references")
{
    auto w = generate_world(123, WorldParams::standard(30, 5));
    auto ref = synthetic_video_ref(w);
    CHECK(ref == "synth:123:30:5");
    auto p = parse_synthetic_ref(ref + "#7");
    REQUIRE(p);
    CHECK(p->seed == 123);
    CHECK(p->num_frames == 30);
    CHECK(p->num_events == 5);
    CHECK(p->frame == 7);
    CHECK_FALSE(parse_synthetic_ref("video_42"));
    CHECK_FALSE(parse_synthetic_ref("synth:1:x:3"));

    auto frames = synthetic_frames(w, 2.0);
    REQUIRE(frames.size() == 30);
    CHECK(frames[4].index == 4);
    CHECK(frames[4].timestamp_s == 2.0);
    CHECK(frames[4].uri == ref + "#4");
}

TEST_CASE("generated tasks answer correctly by construction")
{
    for (bool adversarial : {false, true})
        for (auto rel : {Relation::After, Relation::Before, Relation::Around})
            for (std::uint64_t seed = 0; seed < 40; ++seed) {
                auto w = generate_world(seed * 7 + 1);
                QATask t;
                try {
                    t = generate_task(w, rel, adversarial, seed);
                } catch (const Ungeneratable&) {
                    continue;
                }
                CHECK(validate_task(t).empty());
                REQUIRE(t.ground_truth_index);
                CHECK(t.arity() == 5);
                auto anchor = t.extras.at("anchor_frame").get<std::size_t>();
                const auto* a = w.event_at(anchor);
                REQUIRE(a);
                CHECK(t.question.find(a->text()) != std::string::npos);

                const auto* gt = event_for(w, t.option_text(*t.ground_truth_index));
                REQUIRE(gt);
                CHECK(gt->frame == t.extras.at("answer_frame").get<std::size_t>());
                CHECK(on_side(rel, anchor, gt->frame, w.num_frames, 8));
                CHECK(gt != a);

                std::size_t real_distractors = 0;
                for (std::size_t i = 0; i < t.arity(); ++i) {
                    if (i == *t.ground_truth_index)
                        continue;
                    const auto* e = event_for(w, t.option_text(i));
                    if (!e)
                        continue;
                    ++real_distractors;
                    CHECK(adversarial);
                    CHECK_FALSE(on_side(rel, anchor, e->frame, w.num_frames, 8));
                }
                if (adversarial)
                    CHECK(real_distractors >= 1);

                auto iv = t.extras.at("gt_interval");
                CHECK(iv[0].get<double>() <= static_cast<double>(gt->frame));
                CHECK(iv[1].get<double>() >= static_cast<double>(gt->frame));
                CHECK(iv[0].get<double>() <= static_cast<double>(anchor));
                CHECK(iv[1].get<double>() >= static_cast<double>(anchor));
            }
}

TEST_CASE("ungeneratable worlds are reported")
{
    WorldSpec w;
    w.seed = 5;
    w.num_frames = 10;
    w.actors = {"boy"};
    w.actions = {"lifts"};
    w.objects = {"ball"};
    w.events = {{3, "boy", "lifts", "ball"}};
    CHECK_THROWS_AS(generate_task(w, Relation::After, false, 1), Ungeneratable);
}

TEST_CASE("suites are seeded, sized and unique")
{
    SuiteOptions so;
    so.num_tasks = 60;
    auto a = generate_suite(5, so);
    auto b = generate_suite(5, so);
    CHECK(serialize_dataset(a) == serialize_dataset(b));
    CHECK(a.tasks.size() == 60);
    CHECK(a.name == "synthetic-5");
    std::set<std::string> ids;
    std::map<std::string, int> rels;
    for (const auto& t : a.tasks) {
        CHECK(ids.insert(t.id).second);
        CHECK(validate_task(t).empty());
        ++rels[t.extras.at("relation").get<std::string>()];
    }
    CHECK(rels.size() == 3);
    CHECK(serialize_dataset(generate_suite(6, so)) != serialize_dataset(a));

    so.adversarial = true;
    so.relations = {Relation::Before};
    auto adv = generate_suite(5, so);
    CHECK(adv.name == "synthetic-adversarial-5");
    for (const auto& t : adv.tasks)
        CHECK(t.extras.at("relation") == "before");
}

TEST_CASE("oracle prover truth table")
{
    OracleBackend o;
    auto w = generate_world(3);
    const auto& e0 = w.events[0];
    const auto& e1 = w.events[1];
    CHECK(o.prove(e0.text(), w, 0, w.num_frames - 1) == 1.0);
    CHECK(o.prove(e0.text(), w, e0.frame, e0.frame) == 1.0);
    CHECK(o.prove(e0.text(), w, e0.frame + 1, w.num_frames - 1) == 0.0);
    CHECK(o.prove(e1.text() + " after " + e0.text(), w, e0.frame, w.num_frames - 1) == 1.0);
    CHECK(o.prove(e1.text() + " after " + e0.text(), w, e1.frame, w.num_frames - 1) == 0.0);
    CHECK(o.prove("the scene is still", w, 0, 23) == 0.0);
    CHECK(o.prove(e0.text() + " (evidence 1.2)", w, 0, 23) == 1.0);

    std::string fake = "the " + e0.actor + " " + e0.action + " the " + e0.object + "x";
    CHECK(o.prove(fake, w, 0, 23) == 0.0);
}

TEST_CASE("noisy oracle stays within epsilon and is seeded")
{
    OracleOptions opts;
    opts.noise_epsilon = 0.2;
    opts.noise_seed = 4;
    OracleBackend o(opts);
    OracleOptions other = opts;
    other.noise_seed = 5;
    OracleBackend o2(other);
    auto w = generate_world(8);
    bool any_diff = false;
    for (const auto& e : w.events) {
        for (std::size_t s = 0; s < 24; s += 3) {
            double v = o.prove(e.text(), w, s, 23);
            bool truth = e.frame >= s;
            if (truth)
                CHECK(v >= 0.8);
            else
                CHECK(v <= 0.2);
            CHECK(v == o.prove(e.text(), w, s, 23));
            any_diff = any_diff || v != o2.prove(e.text(), w, s, 23);
        }
    }
    CHECK(any_diff);
    CHECK(o.model_id() != OracleBackend().model_id());
}

TEST_CASE("oracle decomposition rules")
{
    auto [a, b] = OracleBackend::decompose("the boy lifts the box after the girl opens the door");
    CHECK(a == "the boy lifts the box");
    CHECK(b == "the girl opens the door");
    auto [c, d] = OracleBackend::decompose("the boy lifts the box");
    CHECK(c == "the boy lifts the box (evidence 1)");
    CHECK(d == "the boy lifts the box (evidence 2)");
    auto [e, f] = OracleBackend::decompose(c);
    CHECK(e == "the boy lifts the box (evidence 1.1)");
    CHECK(f == "the boy lifts the box (evidence 1.2)");
    auto [g, h] = OracleBackend::decompose("the dog holds the cup around the time the cat kicks the ball");
    CHECK(g == "the dog holds the cup");
    CHECK(h == "the cat kicks the ball");
}

TEST_CASE("oracle text rules")
{
    CHECK(OracleBackend::fact("What happens after the boy lifts the balloon?") == "the boy lifts the balloon");
    CHECK(OracleBackend::navigate("What happens after the boy lifts the balloon?") == "look behind");
    CHECK(OracleBackend::navigate("What happens before the boy lifts the balloon?") == "look ahead");
    CHECK(OracleBackend::navigate("What happens around the time the boy lifts the balloon?") == "look around");
    CHECK(OracleBackend::declarative("What happens before the dog kicks the ball?", "the cat opens the door") ==
          "the cat opens the door before the dog kicks the ball");
    CHECK(OracleBackend::triplets("the boy lifts the balloon") == "(boy, lifts, balloon)");
}

TEST_CASE("oracle generate dispatches on the template")
{
    auto w = generate_world(2);
    OracleBackend o;
    ModelRequest r;
    r.template_name = "caption";
    r.attachments = {synthetic_video_ref(w) + "#" + std::to_string(w.events[2].frame)};
    CHECK(o.generate(r).text == w.events[2].text());

    r.template_name = "prove";
    r.want_logprobs = true;
    r.args = {{"statement", w.events[2].text()}, {"moment_start", "0"}, {"moment_end", "23"}};
    auto resp = o.generate(r);
    REQUIRE(resp.first_token);
    CHECK(resp.first_token->at("True") == 1.0);
    CHECK(resp.text == "True");

    r.template_name = "sing";
    CHECK_THROWS_AS(o.generate(r), MalformedResponse);
    r.template_name = "caption";
    r.attachments = {"plain.png"};
    CHECK_THROWS_AS(o.generate(r), MalformedResponse);

    auto custom = generate_world(2);
    custom.events.pop_back();
    o.add_world("my-video", custom);
    CHECK(o.world_for("my-video#3")->events.size() == custom.events.size());
}

TEST_CASE("bias suite is lexically guessable by construction")
{
    auto ds = generate_bias_suite(13, 100);
    REQUIRE(ds.tasks.size() == 100);
    for (const auto& t : ds.tasks) {
        CHECK(validate_task(t).empty());
        CHECK(t.question_type == QuestionType::Action);
        std::vector<std::string> opts;
        for (const auto& o : t.options)
            opts.push_back(o.text);
        auto gt = *t.ground_truth_index;
        for (std::size_t i = 0; i < opts.size(); ++i)
            if (i != gt)
                CHECK(word_overlap(t.question, opts[i]) < word_overlap(t.question, opts[gt]));
        CHECK(OracleBackend::lexical_guess(t.question, opts) == gt);
    }
}

TEST_CASE("lexical_guess breaks ties by question hash, deterministically")
{
    std::vector<std::string> opts{"red", "blue", "green"};
    auto g = OracleBackend::lexical_guess("pick a colour", opts);
    CHECK(g < 3);
    CHECK(OracleBackend::lexical_guess("pick a colour", opts) == g);
    CHECK_THROWS_AS(OracleBackend::lexical_guess("q", {}), PreconditionError);
}

TEST_CASE("oracle rewrite keeps the answer out and changes every distractor")
{
    auto ds = generate_bias_suite(21, 30);
    for (const auto& t : ds.tasks) {
        std::vector<std::string> opts;
        for (const auto& o : t.options)
            opts.push_back(o.text);
        const auto& answer = opts[*t.ground_truth_index];
        auto fresh = OracleBackend::rewrite(t.question, answer, opts, opts.size() - 1);
        REQUIRE(fresh.size() == opts.size() - 1);
        std::set<std::string> uniq(fresh.begin(), fresh.end());
        CHECK(uniq.size() == fresh.size());
        for (const auto& f : fresh) {
            CHECK(f != answer);
            CHECK(std::find(opts.begin(), opts.end(), f) == opts.end());
            CHECK(word_overlap(t.question, f) == word_overlap(t.question, answer));
        }
    }
}

TEST_CASE("option line rendering round-trips")
{
    std::vector<std::string> opts{"the boy runs", "(weird) text", "c"};
    auto block = render_option_lines(opts);
    CHECK(block.rfind("A. the boy runs", 0) == 0);
    CHECK(parse_option_lines(block) == opts);
    CHECK(parse_option_lines("(B) two\nC) three") == std::vector<std::string>{"two", "three"});
}

TEST_CASE("echo rewriter returns the current distractors")
{
    EchoRewriter echo;
    ModelRequest r;
    r.template_name = "rewrite";
    r.args = {{"options", render_option_lines({"x", "y", "z"})}, {"answer", "y"}};
    CHECK(echo.generate(r).text == "x\nz");
}
