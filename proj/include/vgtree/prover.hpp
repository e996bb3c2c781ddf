#pragma once

#include "vgtree/grounding.hpp"
#include "vgtree/providers.hpp"

#include <cstddef>
#include <string_view>
#include <vector>

namespace vgtree {

/// Video provers take all resampled frames in one request; image provers
/// score each frame alone and average.
enum class ProverKind { Video, Image };

std::string_view to_string(ProverKind k);

struct ProofResult {
    double score = 0.0;
    /// Frames (image prover) whose call failed and were left out of the mean.
    std::size_t failed_frames = 0;
    bool low_fidelity = false;
};

/// Direct score of `statement` on the grounded moment: `frame_count` frames
/// are resampled from the moment and shown to the prover. Throws
/// ProviderError when no frame could be scored.
ProofResult prove(std::string_view statement, const GroundedMoment& moment, const std::vector<FrameRef>& frames,
                  ProverKind kind, std::size_t frame_count, ProviderSession& prover);

} // namespace vgtree
