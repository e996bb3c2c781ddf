#include "vgtree/providers.hpp"

// Built-in prompt set, version v1. Each entry is data: edit wording here
// (or overlay a JSON file) without touching the callers.

namespace vgtree {

namespace {

struct Builtin {
    const char* name;
    ProviderRole role;
    const char* text;
};

const Builtin kBuiltins[] = {
    {"declarative", ProviderRole::Decomposer,
     R"(Convert the question and one of its candidate answers into a single declarative statement that keeps the meaning of the question-answer pair.
Do not add information that is not in the question or the answer.

Question: {question}
Answer: {answer}

Reply with the statement only, on one line.)"},

    {"decompose", ProviderRole::Decomposer,
     R"(Break the statement below into exactly two simpler sub-statements. The statement must be true if and only if both sub-statements are true.
Each sub-statement must be a complete declarative sentence that can be checked against a video.

Statement: {statement}

Reply with two lines in this format:
1. <first sub-statement>
2. <second sub-statement>)"},

    {"fact", ProviderRole::FactExtractor,
     R"(The question below asks about a video. Extract the fact the question takes for granted, i.e. the event it refers to, as a declarative clause.
Drop the question word and any temporal operator such as "what happened before" or "after".
Example: "What did the girl do after she opened the door?" -> "the girl opened the door"

Question: {question}

Reply with the fact only.)"},

    {"caption", ProviderRole::Captioner,
     R"(You are describing frame {frame_index} of a video.
Known fact about the video: {fact}
Descriptions of the previous frames:
{prior_captions}

Describe what happens in the current frame in one sentence. Focus on the people, objects and actions related to the known fact.)"},

    {"triplets", ProviderRole::TripletParser,
     R"(Extract the structured semantics of the text as (subject, predicate, object) triplets. Use an empty object for intransitive actions.

Text: {text}

Reply with one triplet per line in the form (subject, predicate, object).)"},

    {"retrieve", ProviderRole::Retriever,
     R"(Find the video frame that best matches the query fact. Each frame is described by its triplets.

Query fact triplets:
{fact_triplets}

Frames ({frame_count} in total):
{frame_triplets}

Reply with the matching frame id only, e.g. "frame 3".)"},

    {"navigate", ProviderRole::Navigator,
     R"(A question about a video refers to an anchor event. Decide where the evidence for the answer is relative to that event.
- look behind: the answer happens after the anchor event
- look ahead: the answer happens before the anchor event
- look around: the answer is near the anchor event (causes, descriptions, manner)

Question: {question}

Reply with one of: look ahead, look behind, look around.)"},

    {"prove", ProviderRole::Prover,
     R"(Watch the video clip (frames {moment_start}-{moment_end} of {video_len}) and decide whether the statement is true.

Statement: {statement}

Answer with True or False.)"},

    {"rewrite", ProviderRole::Rewriter,
     R"(You are improving a multiple-choice question from the {dataset} video QA benchmark.
The correct answer can currently be guessed from the text alone. Rewrite the {distractor_count} wrong answers so that each is a commonsense, plausible answer to the question, as plausible as the correct answer, while still being wrong.
Keep the question and the correct answer exactly as they are. Do not repeat the old wrong answers.

Question: {question}
Correct answer: {answer}
Current options:
{options}

Reply with the new wrong answers, one per line.)"},

    {"blind_probe", ProviderRole::Prover,
     R"(Answer the multiple-choice question. No video is available; choose the most likely option.

Question: {question}
Options:
{options}

Reply with the option letter only.)"},
};

} // namespace

TemplateRegistry TemplateRegistry::defaults()
{
    TemplateRegistry reg;
    for (const auto& b : kBuiltins)
        reg.add({b.name, b.role, b.text, "v1"});
    return reg;
}

} // namespace vgtree
