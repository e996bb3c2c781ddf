#include "vgtree/grounding.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/hashing.hpp"
#include "vgtree/text.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

namespace vgtree {

using json = nlohmann::ordered_json;

namespace {

std::string strip_quotes(std::string s)
{
    s = text::trim(s);
    while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        s = text::trim(std::string_view(s).substr(1, s.size() - 2));
    return s;
}

// First non-empty line, minus list markers, labels like "Fact:", quotes and
// a trailing period.
std::string first_clause(std::string_view completion, std::string_view label)
{
    for (const auto& raw : text::split_lines(completion)) {
        auto line = text::strip_enumerator(raw);
        if (line.empty())
            continue;
        if (text::starts_with_ci(line, label))
            line = text::trim(std::string_view(line).substr(label.size()));
        line = strip_quotes(line);
        while (!line.empty() && (line.back() == '.' || line.back() == '"'))
            line.pop_back();
        return text::trim(line);
    }
    return {};
}

std::string render_prior_captions(const std::vector<CaptionedFrame>& prior)
{
    if (prior.empty())
        return "(none)";
    std::vector<std::string> lines;
    lines.reserve(prior.size());
    for (const auto& f : prior)
        lines.push_back("[frame " + std::to_string(f.frame_index) + "] " +
                        (f.sentinel ? std::string("(no caption)") : f.caption));
    return text::join(lines, "\n");
}

std::optional<std::size_t> first_integer(std::string_view s)
{
    static const std::regex kNumber(R"((\d+))");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(s.begin(), s.end(), m, kNumber))
        return std::nullopt;
    try {
        return static_cast<std::size_t>(std::stoull(m[1].str()));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::set<std::string> word_set(std::string_view s)
{
    auto words = text::split_words(text::normalize(s));
    return {words.begin(), words.end()};
}

bool phrase_in(const std::set<std::string>& words, std::string_view phrase)
{
    auto parts = text::split_words(text::normalize(phrase));
    if (parts.empty())
        return false;
    return std::all_of(parts.begin(), parts.end(), [&](const auto& w) { return words.contains(w); });
}

std::string sanitize_file_component(std::string_view s)
{
    std::string out;
    for (char c : s) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                  c == '_' || c == '.';
        out.push_back(ok ? c : '_');
    }
    return out;
}

} // namespace

std::string_view to_string(NavigationDirective d)
{
    switch (d) {
    case NavigationDirective::LookAhead:
        return "look ahead";
    case NavigationDirective::LookBehind:
        return "look behind";
    case NavigationDirective::LookAround:
        return "look around";
    }
    return "look around";
}

std::optional<NavigationDirective> directive_from_string(std::string_view s)
{
    auto n = text::normalize(s);
    // earliest mention wins so "look behind, not look ahead" reads as behind
    std::size_t best = std::string::npos;
    std::optional<NavigationDirective> out;
    auto consider = [&](std::string_view word, NavigationDirective d) {
        auto pos = n.find(word);
        if (pos != std::string::npos && pos < best) {
            best = pos;
            out = d;
        }
    };
    consider("ahead", NavigationDirective::LookAhead);
    consider("behind", NavigationDirective::LookBehind);
    consider("around", NavigationDirective::LookAround);
    return out;
}

std::string_view to_string(MomentSource s)
{
    switch (s) {
    case MomentSource::Navigated:
        return "navigated";
    case MomentSource::FullVideo:
        return "full_video";
    case MomentSource::External:
        return "external";
    }
    return "navigated";
}

GroundedMoment ground_moment(std::size_t anchor, NavigationDirective directive, std::size_t video_len,
                             std::size_t window)
{
    if (video_len == 0 || anchor >= video_len)
        throw PreconditionError("anchor " + std::to_string(anchor) + " outside video of length " +
                                std::to_string(video_len));
    if (window == 0)
        throw PreconditionError("look-around window must be at least one frame");

    GroundedMoment m;
    m.anchor_index = anchor;
    m.directive = directive;
    m.video_len = video_len;
    switch (directive) {
    case NavigationDirective::LookBehind:
        m.start_index = anchor;
        m.end_index = video_len - 1;
        break;
    case NavigationDirective::LookAhead:
        m.start_index = 0;
        m.end_index = anchor;
        break;
    case NavigationDirective::LookAround:
        if (video_len <= window) {
            m.start_index = 0;
            m.end_index = video_len - 1;
        } else {
            std::size_t half = window / 2;
            std::size_t start = anchor > half ? anchor - half : 0;
            if (start + window > video_len)
                start = video_len - window;
            m.start_index = start;
            m.end_index = start + window - 1;
        }
        break;
    }
    return m;
}

GroundedMoment full_video_moment(std::size_t video_len)
{
    if (video_len == 0)
        throw PreconditionError("empty video");
    GroundedMoment m;
    m.anchor_index = 0;
    m.directive = NavigationDirective::LookBehind;
    m.start_index = 0;
    m.end_index = video_len - 1;
    m.video_len = video_len;
    m.source = MomentSource::FullVideo;
    return m;
}

std::vector<std::size_t> resample_frames(const GroundedMoment& moment, std::size_t k)
{
    if (k == 0)
        throw PreconditionError("resample needs k >= 1");
    std::vector<std::size_t> out;
    out.reserve(k);
    const std::size_t span = moment.end_index - moment.start_index;
    if (k == 1) {
        out.push_back(moment.start_index + span / 2);
        return out;
    }
    for (std::size_t i = 0; i < k; ++i)
        out.push_back(moment.start_index + (i * span + (k - 1) / 2) / (k - 1));
    return out;
}

std::optional<std::vector<SemanticTriplet>> parse_triplet_lines(std::string_view completion)
{
    std::vector<SemanticTriplet> out;
    bool saw_none = false;
    for (const auto& raw : text::split_lines(completion)) {
        auto line = text::strip_enumerator(raw);
        if (line.empty())
            continue;
        if (text::normalize(line) == "none") {
            saw_none = true;
            continue;
        }
        auto open = line.find('(');
        auto close = line.rfind(')');
        std::string body = (open != std::string::npos && close != std::string::npos && close > open)
                               ? line.substr(open + 1, close - open - 1)
                               : line;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        for (;;) {
            auto comma = body.find(',', pos);
            fields.push_back(strip_quotes(body.substr(pos, comma == std::string::npos ? std::string::npos
                                                                                       : comma - pos)));
            if (comma == std::string::npos)
                break;
            pos = comma + 1;
        }
        if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
            continue;
        out.push_back({fields[0], fields[1], fields.size() == 3 ? fields[2] : std::string()});
    }
    if (out.empty() && !saw_none)
        return std::nullopt;
    return out;
}

std::string format_triplets(const std::vector<SemanticTriplet>& triplets)
{
    std::vector<std::string> parts;
    parts.reserve(triplets.size());
    for (const auto& t : triplets)
        parts.push_back("(" + t.subject + ", " + t.predicate + ", " + t.object + ")");
    return text::join(parts, "; ");
}

std::vector<SemanticTriplet> parse_triplets(std::string_view input, ProviderSession& llm)
{
    if (text::trim(input).empty())
        throw PreconditionError("parse_triplets needs non-empty text");
    auto completion = llm.complete("triplets", {{"text", std::string(input)}});
    auto parsed = parse_triplet_lines(completion);
    if (!parsed) {
        llm.transcript().flag_last("triplets_malformed");
        return {};
    }
    return *parsed;
}

FactStatement extract_fact(std::string_view question, ProviderSession& llm)
{
    if (text::trim(question).empty())
        throw PreconditionError("extract_fact needs a non-empty question");
    FactStatement fact;
    fact.text = first_clause(llm.complete("fact", {{"question", std::string(question)}}), "fact:");
    if (fact.text.empty()) {
        llm.transcript().flag_last("empty_fact_used_question");
        fact.text = text::trim(question);
        fact.from_question_fallback = true;
    }
    try {
        fact.triplets = parse_triplets(fact.text, llm);
    } catch (const ProviderError&) {
        fact.triplets.clear();
    }
    return fact;
}

std::vector<CaptionedFrame> caption_frames(const std::vector<FrameRef>& frames, const FactStatement& fact,
                                           ProviderSession& captioner)
{
    if (frames.empty())
        throw PreconditionError("caption_frames needs at least one frame");
    std::vector<CaptionedFrame> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        CaptionedFrame cf;
        cf.frame_index = f.index;
        cf.timestamp_s = f.timestamp_s;
        PromptArgs args{
            {"fact", fact.text},
            {"prior_captions", render_prior_captions(out)},
            {"frame_index", std::to_string(f.index)},
        };
        try {
            cf.caption = first_clause(captioner.complete("caption", args, {f.uri}), "caption:");
        } catch (const ProviderError&) {
            cf.caption.clear();
        }
        if (cf.caption.empty()) {
            cf.sentinel = true;
            captioner.transcript().flag_last("caption_failed");
        }
        out.push_back(std::move(cf));
    }
    return out;
}

std::size_t triplet_overlap(const CaptionedFrame& frame, const FactStatement& fact)
{
    if (frame.sentinel)
        return 0;
    std::size_t score = 0;
    if (!frame.triplets.empty() && !fact.triplets.empty()) {
        for (const auto& ft : fact.triplets) {
            std::size_t best = 0;
            for (const auto& t : frame.triplets) {
                std::size_t s = 0;
                auto eq = [](const std::string& a, const std::string& b) {
                    auto na = text::normalize(a);
                    return !na.empty() && na == text::normalize(b);
                };
                s += eq(ft.subject, t.subject);
                s += eq(ft.predicate, t.predicate);
                s += eq(ft.object, t.object);
                best = std::max(best, s);
            }
            score += best;
        }
        return score;
    }
    auto words = word_set(frame.caption);
    if (fact.triplets.empty()) {
        for (const auto& w : word_set(fact.text))
            score += words.contains(w);
        return score;
    }
    for (const auto& ft : fact.triplets)
        score += phrase_in(words, ft.subject) + phrase_in(words, ft.predicate) + phrase_in(words, ft.object);
    return score;
}

AnchorResult retrieve_anchor(const std::vector<CaptionedFrame>& captions, const FactStatement& fact,
                             ProviderSession& llm)
{
    std::vector<const CaptionedFrame*> candidates;
    for (const auto& c : captions)
        if (!c.sentinel)
            candidates.push_back(&c);
    if (candidates.empty())
        throw GroundingError("no captioned frame to retrieve an anchor from");
    if (candidates.size() == 1)
        return {candidates.front()->frame_index, false};

    std::vector<std::string> lines;
    for (const auto* c : candidates) {
        auto body = c->triplets.empty() ? c->caption : format_triplets(c->triplets);
        lines.push_back("frame " + std::to_string(c->frame_index) + ": " + body);
    }
    PromptArgs args{
        {"fact_triplets", fact.triplets.empty() ? fact.text : format_triplets(fact.triplets)},
        {"frame_triplets", text::join(lines, "\n")},
        {"frame_count", std::to_string(captions.size())},
    };

    for (int attempt = 0; attempt < 2; ++attempt) {
        CallOptions opts;
        opts.attempt = attempt;
        std::string completion;
        try {
            completion = llm.complete("retrieve", args, {}, opts);
        } catch (const ProviderError&) {
            break;
        }
        if (auto id = first_integer(completion)) {
            auto it = std::find_if(candidates.begin(), candidates.end(),
                                   [&](const CaptionedFrame* c) { return c->frame_index == *id; });
            if (it != candidates.end())
                return {*id, false};
        }
        llm.transcript().flag_last("invalid_frame_id");
    }

    const CaptionedFrame* best = candidates.front();
    std::size_t best_score = triplet_overlap(*best, fact);
    for (const auto* c : candidates) {
        auto s = triplet_overlap(*c, fact);
        if (s > best_score) {
            best = c;
            best_score = s;
        }
    }
    return {best->frame_index, true};
}

NavigationResult navigate(std::string_view question, QuestionType type, ProviderSession& llm)
{
    if (text::trim(question).empty())
        throw PreconditionError("navigate needs a non-empty question");
    PromptArgs args{{"question", std::string(question)}, {"question_type", std::string(to_string(type))}};
    std::string completion;
    try {
        completion = llm.complete("navigate", args);
    } catch (const MalformedResponse&) {
    }
    if (auto d = directive_from_string(completion))
        return {*d, false};
    llm.transcript().flag_last("navigation_defaulted");
    return {NavigationDirective::LookAround, true};
}

void annotate_triplets(std::vector<CaptionedFrame>& frames, ProviderSession& llm)
{
    for (auto& f : frames) {
        if (f.sentinel)
            continue;
        try {
            f.triplets = parse_triplets(f.caption, llm);
        } catch (const ProviderError&) {
            f.triplets.clear();
        }
        f.triplets_failed = f.triplets.empty();
    }
}

GroundingOutcome ground_question(const QATask& task, const std::vector<FrameRef>& frames,
                                 ProviderSession& session, const GroundingOptions& opts,
                                 const CaptionStore* store)
{
    if (frames.empty())
        throw GroundingError("video '" + task.video_ref + "' has no frames");
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (frames[i].index != i)
            throw PreconditionError("frame list must be indexed 0..n-1 in order");

    GroundingOutcome g;
    g.fact = extract_fact(task.question, session);

    std::optional<std::vector<CaptionedFrame>> cached;
    if (store)
        cached = store->load(task.video_ref, g.fact.text);
    if (cached && cached->size() == frames.size()) {
        g.captions = std::move(*cached);
    } else {
        g.captions = caption_frames(frames, g.fact, session);
        annotate_triplets(g.captions, session);
        if (store)
            store->save(task.video_ref, g.fact.text, g.captions);
    }

    g.anchor = retrieve_anchor(g.captions, g.fact, session);
    g.navigation = navigate(task.question, task.question_type, session);
    g.moment = ground_moment(g.anchor.frame_index, g.navigation.directive, frames.size(),
                             opts.look_around_window);
    return g;
}

json grounding_to_json(const GroundingOutcome& g)
{
    json j;
    j["fact"] = g.fact.text;
    j["fact_triplets"] = format_triplets(g.fact.triplets);
    j["anchor_index"] = g.anchor.frame_index;
    j["anchor_fallback"] = g.anchor.used_fallback;
    j["directive"] = std::string(to_string(g.navigation.directive));
    j["directive_defaulted"] = g.navigation.defaulted;
    j["moment"] = {g.moment.start_index, g.moment.end_index};
    j["video_len"] = g.moment.video_len;
    return j;
}

// -- caption files --------------------------------------------------------------

json captions_to_json(const std::string& video_ref, std::string_view fact_hash,
                      const std::vector<CaptionedFrame>& frames)
{
    json doc;
    doc["video_ref"] = video_ref;
    doc["fact_hash"] = std::string(fact_hash);
    json arr = json::array();
    for (const auto& f : frames) {
        json jf;
        jf["index"] = f.frame_index;
        jf["timestamp_s"] = f.timestamp_s;
        jf["caption"] = f.caption;
        json trips = json::array();
        for (const auto& t : f.triplets)
            trips.push_back({{"subject", t.subject}, {"predicate", t.predicate}, {"object", t.object}});
        jf["triplets"] = std::move(trips);
        if (f.triplets_failed)
            jf["triplets_failed"] = true;
        arr.push_back(std::move(jf));
    }
    doc["frames"] = std::move(arr);
    return doc;
}

std::vector<CaptionedFrame> captions_from_json(const json& doc)
{
    std::vector<CaptionedFrame> out;
    try {
        for (const auto& jf : doc.at("frames")) {
            CaptionedFrame f;
            f.frame_index = jf.at("index").get<std::size_t>();
            f.timestamp_s = jf.value("timestamp_s", 0.0);
            f.caption = jf.at("caption").get<std::string>();
            f.sentinel = text::trim(f.caption).empty();
            if (jf.contains("triplets"))
                for (const auto& t : jf["triplets"])
                    f.triplets.push_back({t.at("subject").get<std::string>(), t.at("predicate").get<std::string>(),
                                          t.value("object", std::string())});
            f.triplets_failed = jf.value("triplets_failed", false);
            if (!out.empty() && f.frame_index <= out.back().frame_index)
                throw IoError("caption file frame indices must be strictly increasing");
            out.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed caption file: ") + e.what());
    }
    return out;
}

CaptionStore::CaptionStore(std::filesystem::path dir) : dir_(std::move(dir))
{
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec)
        throw IoError("cannot create caption directory " + dir_.string());
}

std::string CaptionStore::fact_hash(std::string_view fact_text)
{
    return sha256_hex(fact_text).substr(0, 16);
}

std::filesystem::path CaptionStore::path_for(const std::string& video_ref, const std::string& hash) const
{
    auto base = sanitize_file_component(video_ref);
    return dir_ / (hash.empty() ? base + ".json" : base + "." + hash + ".json");
}

std::optional<std::vector<CaptionedFrame>> CaptionStore::load(const std::string& video_ref,
                                                              std::string_view fact_text) const
{
    for (const auto& path : {path_for(video_ref, fact_hash(fact_text)), path_for(video_ref, "")}) {
        std::ifstream in(path);
        if (!in)
            continue;
        try {
            auto doc = json::parse(in);
            auto frames = captions_from_json(doc);
            if (!frames.empty())
                return frames;
        } catch (const std::exception&) {
            // unreadable files are treated as absent and regenerated
        }
    }
    return std::nullopt;
}

void CaptionStore::save(const std::string& video_ref, std::string_view fact_text,
                        const std::vector<CaptionedFrame>& frames) const
{
    auto hash = fact_hash(fact_text);
    auto path = path_for(video_ref, hash);
    // concurrent tasks may caption the same video; publish by rename
    auto tmp = path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out << captions_to_json(video_ref, hash, frames).dump(2) << '\n';
        if (!out)
            throw IoError("cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot publish " + path.string() + ": " + ec.message());
}

} // namespace vgtree
