#include "vgtree/synthetic_world.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/hashing.hpp"
#include "vgtree/text.hpp"

#include <algorithm>
#include <charconv>
#include <random>
#include <regex>
#include <set>

namespace vgtree {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kActors{"boy", "girl", "man", "woman", "dog", "cat", "baby", "chef"};
const std::vector<std::string> kActions{"lifts", "opens", "throws", "kicks", "holds", "pushes", "drops", "carries"};
const std::vector<std::string> kObjects{"balloon", "door", "ball", "box", "cup", "chair", "book", "hoop"};

const std::set<std::string> kStopwords{"the", "a", "an", "what", "does", "do", "did", "with", "is", "of", "to", "in"};

// Portable bounded draw; std distributions differ between standard libraries.
std::size_t draw(std::mt19937_64& rng, std::size_t n)
{
    return static_cast<std::size_t>(rng() % n);
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng)
{
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[draw(rng, i)]);
}

std::uint64_t hash64(std::string_view s)
{
    auto hex = sha256_hex(s).substr(0, 16);
    std::uint64_t v = 0;
    std::from_chars(hex.data(), hex.data() + hex.size(), v, 16);
    return v;
}

template <class T>
std::optional<T> to_number(std::string_view s)
{
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        return std::nullopt;
    return v;
}

std::string strip_question(std::string_view q)
{
    auto s = text::trim(q);
    while (!s.empty() && (s.back() == '?' || s.back() == '.'))
        s.pop_back();
    return text::trim(s);
}

const std::string* arg(const ModelRequest& r, std::string_view key)
{
    auto it = r.args.find(key);
    return it == r.args.end() ? nullptr : &it->second;
}

std::string require_arg(const ModelRequest& r, std::string_view key)
{
    if (auto* v = arg(r, key))
        return *v;
    throw MalformedResponse("oracle request for '" + r.template_name + "' lacks '" + std::string(key) + "'");
}

Event random_non_event(const WorldSpec& w, std::mt19937_64& rng, const std::set<std::string>& taken)
{
    for (int guard = 0; guard < 10000; ++guard) {
        Event e{0, w.actors[draw(rng, w.actors.size())], w.actions[draw(rng, w.actions.size())],
                w.objects[draw(rng, w.objects.size())]};
        if (!w.find(e.actor, e.action, e.object) && !taken.contains(e.text()))
            return e;
    }
    throw Ungeneratable("vocabulary too small for distinct non-events");
}

const char* connector(Relation r)
{
    switch (r) {
    case Relation::Before:
        return "before";
    case Relation::After:
        return "after";
    case Relation::Around:
        return "around the time";
    }
    return "after";
}

} // namespace

std::string Event::text() const
{
    return "the " + actor + " " + action + " the " + object;
}

WorldParams WorldParams::standard(std::size_t num_frames, std::size_t num_events)
{
    WorldParams p;
    p.num_frames = num_frames;
    p.num_events = num_events;
    p.actors = kActors;
    p.actions = kActions;
    p.objects = kObjects;
    return p;
}

const Event* WorldSpec::event_at(std::size_t frame) const
{
    for (const auto& e : events)
        if (e.frame == frame)
            return &e;
    return nullptr;
}

const Event* WorldSpec::find(const std::string& actor, const std::string& action, const std::string& object) const
{
    for (const auto& e : events)
        if (e.actor == actor && e.action == action && e.object == object)
            return &e;
    return nullptr;
}

std::string WorldSpec::describe(std::size_t frame) const
{
    if (const auto* e = event_at(frame))
        return e->text();
    return kStillScene;
}

WorldSpec generate_world(std::uint64_t seed, const WorldParams& params)
{
    if (params.actors.empty() || params.actions.empty() || params.objects.empty())
        throw PreconditionError("world vocabularies must be non-empty");
    if (params.num_events < 3 || params.num_events > params.num_frames)
        throw PreconditionError("need 3 <= num_events <= num_frames");
    if (params.num_events > params.actors.size() * params.actions.size() * params.objects.size())
        throw PreconditionError("vocabulary too small for distinct events");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> frames(params.num_frames);
    for (std::size_t i = 0; i < frames.size(); ++i)
        frames[i] = i;
    shuffle(frames, rng);
    frames.resize(params.num_events);
    std::sort(frames.begin(), frames.end());

    WorldSpec w;
    w.seed = seed;
    w.num_frames = params.num_frames;
    w.actors = params.actors;
    w.actions = params.actions;
    w.objects = params.objects;
    for (auto f : frames) {
        Event e;
        do {
            e = Event{f, params.actors[draw(rng, params.actors.size())], params.actions[draw(rng, params.actions.size())],
                      params.objects[draw(rng, params.objects.size())]};
        } while (w.find(e.actor, e.action, e.object));
        w.events.push_back(std::move(e));
    }
    return w;
}

json world_to_json(const WorldSpec& w)
{
    json doc;
    doc["seed"] = w.seed;
    doc["num_frames"] = w.num_frames;
    json evs = json::array();
    for (const auto& e : w.events)
        evs.push_back({{"frame", e.frame}, {"actor", e.actor}, {"action", e.action}, {"object", e.object}});
    doc["events"] = std::move(evs);
    doc["actors"] = w.actors;
    doc["actions"] = w.actions;
    doc["objects"] = w.objects;
    return doc;
}

WorldSpec world_from_json(const json& doc)
{
    WorldSpec w;
    try {
        w.seed = doc.at("seed").get<std::uint64_t>();
        w.num_frames = doc.at("num_frames").get<std::size_t>();
        for (const auto& e : doc.at("events"))
            w.events.push_back({e.at("frame").get<std::size_t>(), e.at("actor").get<std::string>(),
                                e.at("action").get<std::string>(), e.at("object").get<std::string>()});
        w.actors = doc.value("actors", kActors);
        w.actions = doc.value("actions", kActions);
        w.objects = doc.value("objects", kObjects);
    } catch (const json::exception& e) {
        throw SchemaError({std::string("world: ") + e.what()});
    }
    std::vector<std::string> problems;
    std::set<std::size_t> seen;
    for (const auto& e : w.events) {
        if (e.frame >= w.num_frames)
            problems.push_back("event frame " + std::to_string(e.frame) + " outside the video");
        if (!seen.insert(e.frame).second)
            problems.push_back("two events at frame " + std::to_string(e.frame));
    }
    if (!std::is_sorted(w.events.begin(), w.events.end(),
                        [](const Event& a, const Event& b) { return a.frame < b.frame; }))
        problems.push_back("events out of order");
    if (!problems.empty())
        throw SchemaError(problems);
    return w;
}

std::string synthetic_video_ref(const WorldSpec& w)
{
    return "synth:" + std::to_string(w.seed) + ":" + std::to_string(w.num_frames) + ":" +
           std::to_string(w.events.size());
}

std::optional<SyntheticRef> parse_synthetic_ref(std::string_view ref)
{
    if (!ref.starts_with("synth:"))
        return std::nullopt;
    ref.remove_prefix(6);
    SyntheticRef out;
    if (auto hash = ref.find('#'); hash != std::string_view::npos) {
        auto f = to_number<std::size_t>(ref.substr(hash + 1));
        if (!f)
            return std::nullopt;
        out.frame = *f;
        ref = ref.substr(0, hash);
    }
    auto c1 = ref.find(':');
    auto c2 = c1 == std::string_view::npos ? c1 : ref.find(':', c1 + 1);
    if (c2 == std::string_view::npos)
        return std::nullopt;
    auto seed = to_number<std::uint64_t>(ref.substr(0, c1));
    auto frames = to_number<std::size_t>(ref.substr(c1 + 1, c2 - c1 - 1));
    auto events = to_number<std::size_t>(ref.substr(c2 + 1));
    if (!seed || !frames || !events)
        return std::nullopt;
    out.seed = *seed;
    out.num_frames = *frames;
    out.num_events = *events;
    return out;
}

std::vector<FrameRef> synthetic_frames(const WorldSpec& w, double fps)
{
    auto ref = synthetic_video_ref(w);
    std::vector<FrameRef> out;
    out.reserve(w.num_frames);
    for (std::size_t i = 0; i < w.num_frames; ++i)
        out.push_back({i, static_cast<double>(i) / fps, ref + "#" + std::to_string(i)});
    return out;
}

std::string_view to_string(Relation r)
{
    switch (r) {
    case Relation::Before:
        return "before";
    case Relation::After:
        return "after";
    case Relation::Around:
        return "around";
    }
    return "after";
}

std::optional<Relation> relation_from_string(std::string_view s)
{
    auto n = text::to_lower(s);
    if (n == "before")
        return Relation::Before;
    if (n == "after")
        return Relation::After;
    if (n == "around")
        return Relation::Around;
    return std::nullopt;
}

QATask generate_task(const WorldSpec& world, Relation relation, bool adversarial, std::uint64_t seed,
                     const TaskGenOptions& opts)
{
    if (opts.num_options < 2)
        throw PreconditionError("synthetic tasks need at least two options");
    std::mt19937_64 rng(seed);

    struct Candidate {
        const Event* anchor;
        std::vector<const Event*> correct;
        std::vector<const Event*> opposite;
        GroundedMoment window;
    };
    std::vector<Candidate> eligible;
    for (const auto& a : world.events) {
        Candidate c{&a, {}, {}, {}};
        c.window = ground_moment(a.frame, NavigationDirective::LookAround, world.num_frames, opts.around_window);
        for (const auto& e : world.events) {
            if (&e == &a)
                continue;
            bool inside = false;
            switch (relation) {
            case Relation::After:
                inside = e.frame > a.frame;
                break;
            case Relation::Before:
                inside = e.frame < a.frame;
                break;
            case Relation::Around:
                inside = c.window.contains(e.frame);
                break;
            }
            (inside ? c.correct : c.opposite).push_back(&e);
        }
        if (!c.correct.empty() && (!adversarial || !c.opposite.empty()))
            eligible.push_back(std::move(c));
    }
    if (eligible.empty())
        throw Ungeneratable("world " + std::to_string(world.seed) + " has no anchor for a " +
                            std::string(to_string(relation)) + " question");

    const auto& pick = eligible[draw(rng, eligible.size())];
    const Event* answer = pick.correct[draw(rng, pick.correct.size())];

    std::vector<std::string> distractors;
    std::set<std::string> taken{answer->text(), pick.anchor->text()};
    if (adversarial) {
        auto opp = pick.opposite;
        shuffle(opp, rng);
        for (const auto* e : opp) {
            if (distractors.size() + 1 >= opts.num_options)
                break;
            distractors.push_back(e->text());
            taken.insert(e->text());
        }
    }
    while (distractors.size() + 1 < opts.num_options) {
        auto e = random_non_event(world, rng, taken);
        taken.insert(e.text());
        distractors.push_back(e.text());
    }

    std::size_t gt = draw(rng, opts.num_options);
    std::vector<std::string> options;
    for (std::size_t i = 0, d = 0; i < opts.num_options; ++i)
        options.push_back(i == gt ? answer->text() : distractors[d++]);

    auto question = "What happens " + std::string(connector(relation)) + " " + pick.anchor->text() + "?";
    auto id = "w" + std::to_string(world.seed) + "-" + std::string(to_string(relation)) + "-" + std::to_string(seed);
    auto task = make_task(id, synthetic_video_ref(world), question, options, gt,
                          relation == Relation::Around ? QuestionType::Causal : QuestionType::Temporal);

    GroundedMoment truth;
    switch (relation) {
    case Relation::After:
        truth = ground_moment(pick.anchor->frame, NavigationDirective::LookBehind, world.num_frames, opts.around_window);
        break;
    case Relation::Before:
        truth = ground_moment(pick.anchor->frame, NavigationDirective::LookAhead, world.num_frames, opts.around_window);
        break;
    case Relation::Around:
        truth = pick.window;
        break;
    }
    task.extras["relation"] = std::string(to_string(relation));
    task.extras["adversarial"] = adversarial;
    task.extras["anchor_frame"] = pick.anchor->frame;
    task.extras["answer_frame"] = answer->frame;
    // frames are 1 fps, so indices double as seconds
    task.extras["gt_interval"] = {static_cast<double>(truth.start_index), static_cast<double>(truth.end_index)};
    return task;
}

Dataset generate_suite(std::uint64_t seed, const SuiteOptions& opts)
{
    static const std::vector<Relation> all{Relation::After, Relation::Before, Relation::Around};
    const auto& relations = opts.relations.empty() ? all : opts.relations;

    Dataset ds;
    ds.name = std::string(opts.adversarial ? "synthetic-adversarial-" : "synthetic-") + std::to_string(seed);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < opts.num_tasks; ++i) {
        auto rel = relations[i % relations.size()];
        bool made = false;
        for (std::size_t attempt = 0; attempt <= opts.max_resamples && !made; ++attempt) {
            auto world_seed = rng() % 1000000007ULL;
            auto task_seed = rng();
            try {
                auto world = generate_world(world_seed, opts.world);
                auto task = generate_task(world, rel, opts.adversarial, task_seed, opts.task);
                task.id = "syn" + std::to_string(seed) + "-" + std::to_string(i);
                task.extras["resamples"] = attempt;
                ds.tasks.push_back(std::move(task));
                made = true;
            } catch (const Ungeneratable&) {
            }
        }
        if (!made)
            throw Ungeneratable("no generatable task after " + std::to_string(opts.max_resamples) + " resamples");
    }
    return ds;
}

Dataset generate_bias_suite(std::uint64_t seed, std::size_t num_tasks, std::size_t num_options)
{
    if (num_options < 2 || num_options > kActors.size())
        throw PreconditionError("bias suite option count out of range");
    Dataset ds;
    ds.name = "synthetic-bias-" + std::to_string(seed);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < num_tasks; ++i) {
        auto actors = kActors;
        auto objects = kObjects;
        shuffle(actors, rng);
        shuffle(objects, rng);
        const auto& actor = actors[0];
        const auto& object = objects[0];
        auto action = kActions[draw(rng, kActions.size())];

        std::vector<std::string> distractors;
        for (std::size_t d = 1; d < num_options; ++d)
            distractors.push_back("the " + actors[d] + " " + kActions[draw(rng, kActions.size())] + " the " +
                                  objects[d]);
        std::size_t gt = draw(rng, num_options);
        std::vector<std::string> options;
        for (std::size_t k = 0, d = 0; k < num_options; ++k)
            options.push_back(k == gt ? "the " + actor + " " + action + " the " + object : distractors[d++]);

        auto world_seed = rng() % 1000000007ULL;
        auto task = make_task("bias" + std::to_string(seed) + "-" + std::to_string(i),
                              "synth:" + std::to_string(world_seed) + ":24:6",
                              "What does the " + actor + " do with the " + object + "?", options, gt,
                              QuestionType::Action);
        ds.tasks.push_back(std::move(task));
    }
    return ds;
}

// -- oracle ------------------------------------------------------------------

OracleBackend::OracleBackend(OracleOptions opts) : opts_(opts) {}

void OracleBackend::add_world(const std::string& video_ref, WorldSpec world)
{
    std::lock_guard lock(mu_);
    worlds_[video_ref] = std::make_shared<const WorldSpec>(std::move(world));
}

std::shared_ptr<const WorldSpec> OracleBackend::world_for(std::string_view ref) const
{
    auto base = ref.substr(0, ref.find('#'));
    std::lock_guard lock(mu_);
    if (auto it = worlds_.find(base); it != worlds_.end())
        return it->second;
    auto parsed = parse_synthetic_ref(base);
    if (!parsed)
        return nullptr;
    auto w = std::make_shared<const WorldSpec>(
        generate_world(parsed->seed, WorldParams::standard(parsed->num_frames, parsed->num_events)));
    worlds_.emplace(std::string(base), w);
    return w;
}

std::string OracleBackend::model_id() const
{
    if (opts_.noise_epsilon > 0.0)
        return "oracle-noisy-" + std::to_string(opts_.noise_epsilon) + "-" + std::to_string(opts_.noise_seed);
    return "oracle";
}

double OracleBackend::prove(std::string_view statement, const WorldSpec& world, std::size_t start,
                            std::size_t end) const
{
    static const std::regex kEvent(R"(\bthe (\w+) (\w+) the (\w+)\b)", std::regex::icase);
    auto s = text::to_lower(statement);
    bool any = false;
    bool holds = true;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), kEvent); it != std::sregex_iterator(); ++it) {
        any = true;
        const auto* e = world.find((*it)[1].str(), (*it)[2].str(), (*it)[3].str());
        if (!e || e->frame < start || e->frame > end)
            holds = false;
    }
    bool truth = any && holds;
    if (opts_.noise_epsilon <= 0.0)
        return truth ? 1.0 : 0.0;
    auto h = hash64(std::string(statement) + "|" + std::to_string(start) + "|" + std::to_string(end) + "|" +
                    std::to_string(opts_.noise_seed));
    double u = opts_.noise_epsilon * (static_cast<double>(h >> 11) / 9007199254740992.0);
    return truth ? 1.0 - u : u;
}

std::string OracleBackend::fact(std::string_view question)
{
    static const std::regex kDidAfter(R"(^what did (.+?) do (after|before|when|while) (.+)$)", std::regex::icase);
    static const std::regex kHappens(
        R"(^what (?:happens|happened|is happening|was happening) (?:after|before|around the time|when|while) (.+)$)",
        std::regex::icase);
    static const std::regex kWhyBe(R"(^why (is|are|was|were) (the \w+|\w+) (.+)$)", std::regex::icase);
    static const std::regex kWhyDo(R"(^why (?:did|does|do) (the \w+|\w+) (.+)$)", std::regex::icase);
    static const std::regex kPronoun(R"(^(he|she|they|it)\b)", std::regex::icase);

    auto q = strip_question(question);
    std::smatch m;
    if (std::regex_match(q, m, kDidAfter)) {
        auto clause = m[3].str();
        return std::regex_replace(clause, kPronoun, m[1].str());
    }
    if (std::regex_match(q, m, kHappens))
        return m[1].str();
    if (std::regex_match(q, m, kWhyBe))
        return m[2].str() + " " + m[1].str() + " " + m[3].str();
    if (std::regex_match(q, m, kWhyDo))
        return m[1].str() + " " + m[2].str();
    return q;
}

std::string OracleBackend::declarative(std::string_view question, std::string_view answer)
{
    static const std::regex kHappens(R"(^what (?:happens|happened) (after|before|around the time) (.+)$)",
                                     std::regex::icase);
    static const std::regex kDid(R"(^what did .+? do (after|before|when|while) .+$)", std::regex::icase);
    auto a = strip_question(answer);
    auto q = strip_question(question);
    std::smatch m;
    if (std::regex_match(q, m, kHappens))
        return a + " " + text::to_lower(m[1].str()) + " " + m[2].str();
    if (std::regex_match(q, m, kDid))
        return a + " " + text::to_lower(m[1].str()) + " " + fact(question);
    return a;
}

std::pair<std::string, std::string> OracleBackend::decompose(std::string_view statement)
{
    static const std::regex kEvidence(R"(^(.*) \(evidence ([0-9.]+)\)$)");
    auto s = text::trim(statement);
    std::smatch m;
    if (std::regex_match(s, m, kEvidence)) {
        auto base = m[1].str() + " (evidence " + m[2].str();
        return {base + ".1)", base + ".2)"};
    }
    for (std::string_view conn : {" around the time ", " after ", " before ", " and "}) {
        auto pos = s.find(conn);
        if (pos != std::string::npos && pos > 0 && pos + conn.size() < s.size())
            return {s.substr(0, pos), s.substr(pos + conn.size())};
    }
    return {s + " (evidence 1)", s + " (evidence 2)"};
}

std::string OracleBackend::triplets(std::string_view input)
{
    static const std::set<std::string> kDeterminers{"the", "a", "an"};
    std::vector<std::string> lines;
    auto clauses = text::to_lower(input);
    clauses = text::replace_all(clauses, ";", " and ");
    clauses = text::replace_all(clauses, ". ", " and ");
    std::size_t pos = 0;
    while (pos <= clauses.size()) {
        auto next = clauses.find(" and ", pos);
        auto clause = clauses.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        std::vector<std::string> words;
        for (const auto& w : text::split_words(text::normalize(clause)))
            if (!kDeterminers.contains(w))
                words.push_back(w);
        if (words.size() >= 2) {
            std::vector<std::string> rest(words.begin() + 2, words.end());
            lines.push_back("(" + words[0] + ", " + words[1] + ", " + text::join(rest, " ") + ")");
        }
        if (next == std::string::npos)
            break;
        pos = next + 5;
    }
    return lines.empty() ? "none" : text::join(lines, "\n");
}

std::string OracleBackend::navigate(std::string_view question)
{
    auto q = " " + text::normalize(question) + " ";
    if (q.find(" around the time ") != std::string::npos)
        return "look around";
    if (q.find(" after ") != std::string::npos)
        return "look behind";
    if (q.find(" before ") != std::string::npos)
        return "look ahead";
    return "look around";
}

std::string OracleBackend::retrieve(std::string_view fact_triplets, std::string_view frame_triplets)
{
    static const std::regex kTriplet(R"(\(([^()]*)\))");
    static const std::regex kFrame(R"(^\s*frame (\d+):(.*)$)", std::regex::icase);
    std::vector<std::string> wanted;
    std::string ft(fact_triplets);
    for (auto it = std::sregex_iterator(ft.begin(), ft.end(), kTriplet); it != std::sregex_iterator(); ++it)
        wanted.push_back(text::normalize((*it)[1].str()));

    std::optional<std::string> best;
    std::size_t best_score = 0;
    for (const auto& line : text::split_lines(frame_triplets)) {
        std::smatch m;
        if (!std::regex_match(line, m, kFrame))
            continue;
        auto body = m[2].str();
        std::size_t score = 0;
        for (auto it = std::sregex_iterator(body.begin(), body.end(), kTriplet); it != std::sregex_iterator(); ++it)
            score += std::count(wanted.begin(), wanted.end(), text::normalize((*it)[1].str()));
        if (!best || score > best_score) {
            best = m[1].str();
            best_score = score;
        }
    }
    return best ? "frame " + *best : "none";
}

std::size_t OracleBackend::lexical_guess(std::string_view question, const std::vector<std::string>& options)
{
    if (options.empty())
        throw PreconditionError("lexical_guess needs options");
    std::set<std::string> qwords;
    for (const auto& w : text::split_words(text::normalize(question)))
        if (!kStopwords.contains(w))
            qwords.insert(w);
    std::vector<std::size_t> tied;
    std::size_t best = 0;
    for (std::size_t i = 0; i < options.size(); ++i) {
        std::set<std::string> seen;
        std::size_t overlap = 0;
        for (const auto& w : text::split_words(text::normalize(options[i])))
            if (qwords.contains(w) && seen.insert(w).second)
                ++overlap;
        if (tied.empty() || overlap > best) {
            tied = {i};
            best = overlap;
        } else if (overlap == best) {
            tied.push_back(i);
        }
    }
    return tied[hash64(question) % tied.size()];
}

std::vector<std::string> OracleBackend::rewrite(std::string_view question, std::string_view answer,
                                                const std::vector<std::string>& options, std::size_t count)
{
    std::set<std::string> qwords;
    for (const auto& w : text::split_words(text::normalize(question)))
        qwords.insert(w);
    auto words = text::split_words(text::trim(answer));
    std::set<std::string> used;
    for (const auto& o : options)
        used.insert(text::normalize(o));
    used.insert(text::normalize(answer));

    std::vector<std::size_t> swap_at;
    for (std::size_t i = 0; i < words.size(); ++i)
        if (!qwords.contains(text::normalize(words[i])))
            swap_at.push_back(i);

    std::vector<std::string> out;
    for (std::size_t k = 0; out.size() < count && k < kActions.size() * 4; ++k) {
        const auto& action = kActions[k % kActions.size()];
        std::string candidate;
        if (swap_at.empty() || k >= kActions.size()) {
            candidate = text::trim(answer) + " and " + kActions[k % kActions.size()] + " it";
            if (k >= kActions.size() * 2)
                candidate += " again";
        } else {
            auto w = words;
            for (auto i : swap_at)
                w[i] = action;
            candidate = text::join(w, " ");
        }
        if (used.insert(text::normalize(candidate)).second)
            out.push_back(candidate);
    }
    return out;
}

ModelResponse OracleBackend::generate(const ModelRequest& r)
{
    const auto& t = r.template_name;
    ModelResponse resp;
    if (t == "declarative") {
        resp.text = declarative(require_arg(r, "question"), require_arg(r, "answer"));
    } else if (t == "decompose") {
        auto [a, b] = decompose(require_arg(r, "statement"));
        resp.text = "1. " + a + "\n2. " + b;
    } else if (t == "fact") {
        resp.text = fact(require_arg(r, "question"));
    } else if (t == "caption") {
        if (r.attachments.empty())
            throw MalformedResponse("oracle captioner needs a frame attachment");
        auto ref = parse_synthetic_ref(r.attachments.front());
        auto world = world_for(r.attachments.front());
        if (!ref || !ref->frame || !world)
            throw MalformedResponse("not a synthetic frame: " + r.attachments.front());
        resp.text = world->describe(*ref->frame);
    } else if (t == "triplets") {
        resp.text = triplets(require_arg(r, "text"));
    } else if (t == "retrieve") {
        resp.text = retrieve(require_arg(r, "fact_triplets"), require_arg(r, "frame_triplets"));
    } else if (t == "navigate") {
        resp.text = navigate(require_arg(r, "question"));
    } else if (t == "prove") {
        if (r.attachments.empty())
            throw MalformedResponse("oracle prover needs frame attachments");
        auto world = world_for(r.attachments.front());
        if (!world)
            throw MalformedResponse("not a synthetic frame: " + r.attachments.front());
        auto start = to_number<std::size_t>(require_arg(r, "moment_start"));
        auto end = to_number<std::size_t>(require_arg(r, "moment_end"));
        if (!start || !end)
            throw MalformedResponse("oracle prover got a non-numeric moment");
        double s = prove(require_arg(r, "statement"), *world, *start, *end);
        resp.text = s >= 0.5 ? "True" : "False";
        if (opts_.logprobs && r.want_logprobs)
            resp.first_token = TokenDistribution{{"True", s}, {"False", 1.0 - s}};
    } else if (t == "rewrite") {
        auto opts = parse_option_lines(require_arg(r, "options"));
        auto n = to_number<std::size_t>(require_arg(r, "distractor_count")).value_or(opts.empty() ? 0 : opts.size() - 1);
        resp.text = text::join(rewrite(require_arg(r, "question"), require_arg(r, "answer"), opts, n), "\n");
    } else if (t == "blind_probe") {
        auto opts = parse_option_lines(require_arg(r, "options"));
        if (opts.empty())
            throw MalformedResponse("blind probe without options");
        resp.text = std::string(1, static_cast<char>('A' + lexical_guess(require_arg(r, "question"), opts)));
    } else {
        throw MalformedResponse("oracle has no rule for template '" + t + "'");
    }
    return resp;
}

ModelResponse EchoRewriter::generate(const ModelRequest& r)
{
    auto opts = parse_option_lines(require_arg(r, "options"));
    auto answer = text::normalize(require_arg(r, "answer"));
    std::vector<std::string> keep;
    for (const auto& o : opts)
        if (text::normalize(o) != answer)
            keep.push_back(o);
    return {text::join(keep, "\n"), std::nullopt};
}

std::vector<std::string> parse_option_lines(std::string_view block)
{
    static const std::regex kLine(R"(^\s*\(?([A-Za-z])[.):]\s*(.*)$)");
    std::vector<std::string> out;
    for (const auto& line : text::split_lines(block)) {
        std::smatch m;
        if (std::regex_match(line, m, kLine))
            out.push_back(text::trim(m[2].str()));
    }
    return out;
}

std::string render_option_lines(const std::vector<std::string>& options)
{
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < options.size(); ++i)
        lines.push_back(std::string(1, static_cast<char>('A' + i)) + ". " + options[i]);
    return text::join(lines, "\n");
}

} // namespace vgtree
