#include "vgtree/prover.hpp"

#include "vgtree/errors.hpp"

#include <algorithm>

namespace vgtree {

std::string_view to_string(ProverKind k)
{
    return k == ProverKind::Video ? "video" : "image";
}

ProofResult prove(std::string_view statement, const GroundedMoment& moment, const std::vector<FrameRef>& frames,
                  ProverKind kind, std::size_t frame_count, ProviderSession& prover)
{
    if (moment.video_len == 0 || moment.end_index >= moment.video_len || moment.start_index > moment.end_index)
        throw PreconditionError("prove called with an invalid moment");
    if (frames.size() < moment.video_len)
        throw PreconditionError("frame list shorter than the moment's video");

    PromptArgs args{
        {"statement", std::string(statement)},
        {"moment_start", std::to_string(moment.start_index)},
        {"moment_end", std::to_string(moment.end_index)},
        {"video_len", std::to_string(moment.video_len)},
    };
    auto picks = resample_frames(moment, frame_count);

    ProofResult out;
    if (kind == ProverKind::Video) {
        std::vector<std::string> attachments;
        attachments.reserve(picks.size());
        for (auto i : picks)
            attachments.push_back(frames[i].uri);
        auto s = prover.score_binary("prove", args, attachments);
        out.score = s.value;
        out.low_fidelity = s.low_fidelity;
        return out;
    }

    double sum = 0.0;
    std::size_t ok = 0;
    for (auto i : picks) {
        try {
            auto s = prover.score_binary("prove", args, {frames[i].uri});
            sum += s.value;
            out.low_fidelity = out.low_fidelity || s.low_fidelity;
            ++ok;
        } catch (const ProviderError&) {
            ++out.failed_frames;
        }
    }
    if (ok == 0)
        throw ProviderError("image prover failed on every frame");
    if (out.failed_frames > 0)
        prover.transcript().flag_last("partial_image_proof");
    out.score = std::clamp(sum / static_cast<double>(ok), 0.0, 1.0);
    return out;
}

} // namespace vgtree
